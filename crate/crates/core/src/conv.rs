//! 2-D convolution with stride, asymmetric padding, dilation and groups.
//!
//! `conv2d` is the direct-loop reference; `conv2d_im2col` lowers to a
//! matrix product and must agree with it. Weights are laid out as
//! `[out_channels, in_channels / groups, kernel_h, kernel_w]`.

use crate::error::{Result, TensorError};
use crate::tensor::{Dims, Matrix, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Output size equals input size at stride 1; the odd pixel of an
    /// even-extent kernel goes to the bottom/right.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        let th = dilation.0 * (kernel.0 - 1);
        let tw = dilation.1 * (kernel.1 - 1);
        Self {
            top: th / 2,
            bottom: th - th / 2,
            left: tw / 2,
            right: tw - tw / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            padding: Padding::default(),
            dilation: (1, 1),
            groups: 1,
        }
    }

    /// Stride-1 convolution whose output keeps the input's spatial size.
    pub fn same(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        Self::new(in_channels, out_channels, kernel).with_same_padding()
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, (1, 1))
    }

    /// Same-padded depthwise convolution (`groups == channels`).
    pub fn depthwise(channels: usize, kernel: (usize, usize)) -> Self {
        Self::new(channels, channels, kernel)
            .with_groups(channels)
            .with_same_padding()
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Padding is left untouched; follow with `with_same_padding` if needed.
    pub fn with_dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_same_padding(mut self) -> Self {
        self.padding = Padding::same(self.kernel, self.dilation);
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn fan_in(&self) -> usize {
        self.in_per_group() * self.kernel.0 * self.kernel.1
    }

    pub fn weight_dims(&self) -> Dims {
        [
            self.out_channels,
            self.in_per_group(),
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.dilation.0,
            self.dilation.1,
            self.groups,
        ];
        if positive.contains(&0) {
            return Err(TensorError::Config(format!(
                "convolution sizes must all be >= 1: {self:?}"
            )));
        }
        if !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(TensorError::Config(format!(
                "groups ({}) must divide in_channels ({}) and out_channels ({})",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    /// Output `(height, width)` for an input of the given spatial size.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_extent(
            h,
            self.padding.top + self.padding.bottom,
            self.kernel.0,
            self.dilation.0,
            self.stride.0,
        )
        .ok_or(TensorError::mismatch(
            "conv2d",
            "height",
            self.dilation.0 * (self.kernel.0 - 1) + 1,
            h + self.padding.top + self.padding.bottom,
        ))?;
        let ow = out_extent(
            w,
            self.padding.left + self.padding.right,
            self.kernel.1,
            self.dilation.1,
            self.stride.1,
        )
        .ok_or(TensorError::mismatch(
            "conv2d",
            "width",
            self.dilation.1 * (self.kernel.1 - 1) + 1,
            w + self.padding.left + self.padding.right,
        ))?;
        Ok((oh, ow))
    }

    fn check_operands<T: Scalar>(
        &self,
        x: Dims,
        weight: &Tensor<T>,
        bias: &[T],
    ) -> Result<(usize, usize)> {
        self.validate()?;
        if x[1] != self.in_channels {
            return Err(TensorError::mismatch(
                "conv2d",
                "channel",
                self.in_channels,
                x[1],
            ));
        }
        let wd = self.weight_dims();
        let names = [
            "weight out-channel",
            "weight in-channel",
            "kernel height",
            "kernel width",
        ];
        for i in 0..4 {
            if weight.dims()[i] != wd[i] {
                return Err(TensorError::mismatch(
                    "conv2d",
                    names[i],
                    wd[i],
                    weight.dims()[i],
                ));
            }
        }
        if !bias.is_empty() && bias.len() != self.out_channels {
            return Err(TensorError::mismatch(
                "conv2d",
                "bias",
                self.out_channels,
                bias.len(),
            ));
        }
        self.output_hw(x[2], x[3])
    }
}

fn out_extent(n: usize, pad: usize, k: usize, dil: usize, stride: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    let padded = n + pad;
    (padded >= span).then(|| (padded - span) / stride + 1)
}

/// Output indices `o` in `[lo, hi)` whose input coordinate
/// `o * stride + offset - pad` lands inside `[0, n)`.
#[inline]
fn valid_range(n: usize, out: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if n + pad > offset {
        ((n + pad - offset - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Geometry {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

/// Direct-loop convolution. `bias` may be empty.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (oh, ow) = spec.check_operands(x.dims(), weight, bias)?;
    let geo = Geometry {
        h: x.height(),
        w: x.width(),
        oh,
        ow,
    };
    let mut out = Tensor::zeros([x.batch(), spec.out_channels, oh, ow]);
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let (kh, kw) = spec.kernel;
    for b in 0..x.batch() {
        for oc in 0..spec.out_channels {
            let g = oc / opg;
            let oplane = out.plane_mut(b, oc);
            if let Some(&bv) = bias.get(oc) {
                oplane.iter_mut().for_each(|v| *v = bv);
            }
            for icg in 0..ipg {
                let iplane = x.plane(b, g * ipg + icg);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight.get([oc, icg, ky, kx]);
                        if wv == T::zero() {
                            continue;
                        }
                        accumulate_tap(oplane, iplane, wv, ky, kx, spec, &geo);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn accumulate_tap<T: Scalar>(
    oplane: &mut [T],
    iplane: &[T],
    wv: T,
    ky: usize,
    kx: usize,
    spec: &ConvSpec,
    geo: &Geometry,
) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (y0, y1) = valid_range(geo.h, geo.oh, sh, ky * dh, spec.padding.top);
    let (x0, x1) = valid_range(geo.w, geo.ow, sw, kx * dw, spec.padding.left);
    if x0 >= x1 {
        return;
    }
    for oy in y0..y1 {
        let iy = oy * sh + ky * dh - spec.padding.top;
        let orow = &mut oplane[oy * geo.ow + x0..oy * geo.ow + x1];
        let ix0 = x0 * sw + kx * dw - spec.padding.left;
        let irow = &iplane[iy * geo.w..(iy + 1) * geo.w];
        if sw == 1 {
            for (o, &i) in orow.iter_mut().zip(&irow[ix0..ix0 + (x1 - x0)]) {
                *o += wv * i;
            }
        } else {
            for (j, o) in orow.iter_mut().enumerate() {
                *o += wv * irow[ix0 + j * sw];
            }
        }
    }
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

/// Vector-Jacobian product of [`conv2d`] for upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (oh, ow) = spec.check_operands(x.dims(), weight, bias)?;
    crate::tensor::check_same_dims(
        [x.batch(), spec.out_channels, oh, ow],
        grad_out.dims(),
        "conv2d_backward",
    )?;
    let (h, w) = (x.height(), x.width());
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let (kh, kw) = spec.kernel;
    let mut gx = x.zeros_like();
    let mut gw = weight.zeros_like();
    let mut gb = vec![
        T::zero();
        if bias.is_empty() {
            0
        } else {
            spec.out_channels
        }
    ];
    for b in 0..x.batch() {
        for oc in 0..spec.out_channels {
            let g = oc / opg;
            let gplane = grad_out.plane(b, oc);
            if let Some(slot) = gb.get_mut(oc) {
                *slot += gplane.iter().copied().sum::<T>();
            }
            for icg in 0..ipg {
                let ic = g * ipg + icg;
                let iplane = x.plane(b, ic);
                for ky in 0..kh {
                    let (y0, y1) = valid_range(h, oh, sh, ky * dh, spec.padding.top);
                    for kx in 0..kw {
                        let (x0, x1) = valid_range(w, ow, sw, kx * dw, spec.padding.left);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = weight.get([oc, icg, ky, kx]);
                        let mut acc = T::zero();
                        let gxplane = gx.plane_mut(b, ic);
                        for oy in y0..y1 {
                            let iy = oy * sh + ky * dh - spec.padding.top;
                            let grow = &gplane[oy * ow + x0..oy * ow + x1];
                            let ix0 = x0 * sw + kx * dw - spec.padding.left;
                            for (j, &gv) in grow.iter().enumerate() {
                                let ix = iy * w + ix0 + j * sw;
                                acc += gv * iplane[ix];
                                gxplane[ix] += gv * wv;
                            }
                        }
                        let o = gw.offset([oc, icg, ky, kx]);
                        gw.data_mut()[o] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// Convolution lowered to `weights · im2col(x)` per batch item and group.
pub fn conv2d_im2col<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (oh, ow) = spec.check_operands(x.dims(), weight, bias)?;
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let (kh, kw) = spec.kernel;
    let k = ipg * kh * kw;
    let mut out = Tensor::zeros([x.batch(), spec.out_channels, oh, ow]);
    for b in 0..x.batch() {
        for g in 0..spec.groups {
            let cols = im2col(x, b, g * ipg, ipg, spec, oh, ow);
            let wmat = Matrix::from_vec(
                opg,
                k,
                weight.data()[g * opg * k..(g + 1) * opg * k].to_vec(),
            )?;
            let prod = wmat.matmul(&cols)?;
            for o in 0..opg {
                let oc = g * opg + o;
                let bv = bias.get(oc).copied().unwrap_or_else(T::zero);
                for (dst, &v) in out.plane_mut(b, oc).iter_mut().zip(prod.row(o)) {
                    *dst = v + bv;
                }
            }
        }
    }
    Ok(out)
}

/// Column matrix of shape `(channels·kh·kw) × (oh·ow)`; padded taps are zero.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    b: usize,
    c0: usize,
    channels: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
) -> Matrix<T> {
    let (kh, kw) = spec.kernel;
    let (h, w) = (x.height() as isize, x.width() as isize);
    let mut cols = Matrix::zeros(channels * kh * kw, oh * ow);
    for c in 0..channels {
        let plane = x.plane(b, c0 + c);
        for ky in 0..kh {
            for kx in 0..kw {
                let row = cols.row_mut((c * kh + ky) * kw + kx);
                for oy in 0..oh {
                    let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize
                        - spec.padding.top as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize
                            - spec.padding.left as isize;
                        if ix >= 0 && ix < w {
                            row[oy * ow + ox] = plane[(iy * w + ix) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}
