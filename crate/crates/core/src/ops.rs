//! Elementwise math, linear maps, softmax, pooling and layout helpers,
//! each paired with a hand-written vector-Jacobian product.

use crate::error::{Result, TensorError};
use crate::tensor::{check_same_dims, Dims, Matrix, Tensor};
use crate::Scalar;

/// `x · weight + bias`, row-wise. `bias` may be empty.
pub fn linear<T: Scalar>(x: &Matrix<T>, weight: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>> {
    if !bias.is_empty() && bias.len() != weight.cols() {
        return Err(TensorError::mismatch(
            "linear",
            "bias",
            weight.cols(),
            bias.len(),
        ));
    }
    let mut out = x.matmul(weight)?;
    if !bias.is_empty() {
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T> {
    pub input: Matrix<T>,
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    weight: &Matrix<T>,
    bias: &[T],
    grad_out: &Matrix<T>,
) -> Result<LinearGrads<T>> {
    let gw = x.t_matmul(grad_out)?;
    let gx = grad_out.matmul_t(weight)?;
    let gb = if bias.is_empty() {
        Vec::new()
    } else {
        (0..grad_out.cols())
            .map(|c| (0..grad_out.rows()).map(|r| grad_out.get(r, c)).sum())
            .collect()
    };
    Ok(LinearGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// Pixels per block when moving between planes and token rows, so one
/// block of token rows stays in cache while every channel is visited.
const TRANSPOSE_TILE: usize = 32;

/// Flattens `(N, C, H, W)` into `N·H·W` tokens of `C` features, token
/// index `(b·H + y)·W + x`.
pub fn to_tokens<T: Scalar>(x: &Tensor<T>) -> Matrix<T> {
    let [n, c, h, w] = x.dims();
    let p = h * w;
    let mut m = Matrix::zeros(n * p, c);
    let out = m.data_mut();
    for b in 0..n {
        for start in (0..p).step_by(TRANSPOSE_TILE) {
            let end = (start + TRANSPOSE_TILE).min(p);
            for ch in 0..c {
                for (i, &v) in x.plane(b, ch)[start..end].iter().enumerate() {
                    out[(b * p + start + i) * c + ch] = v;
                }
            }
        }
    }
    m
}

/// Inverse of [`to_tokens`].
pub fn from_tokens<T: Scalar>(m: &Matrix<T>, dims: Dims) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims;
    let p = h * w;
    if m.rows() != n * p {
        return Err(TensorError::mismatch(
            "from_tokens",
            "token",
            n * p,
            m.rows(),
        ));
    }
    if m.cols() != c {
        return Err(TensorError::mismatch("from_tokens", "channel", c, m.cols()));
    }
    let mut t = Tensor::zeros(dims);
    let src = m.data();
    for b in 0..n {
        for start in (0..p).step_by(TRANSPOSE_TILE) {
            let end = (start + TRANSPOSE_TILE).min(p);
            for ch in 0..c {
                for (i, v) in t.plane_mut(b, ch)[start..end].iter_mut().enumerate() {
                    *v = src[(b * p + start + i) * c + ch];
                }
            }
        }
    }
    Ok(t)
}

/// Per-pixel linear map over the channel axis.
pub fn channel_linear<T: Scalar>(
    x: &Tensor<T>,
    weight: &Matrix<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    if weight.rows() != x.channels() {
        return Err(TensorError::mismatch(
            "channel_linear",
            "channel",
            weight.rows(),
            x.channels(),
        ));
    }
    let y = linear(&to_tokens(x), weight, bias)?;
    from_tokens(&y, [x.batch(), weight.cols(), x.height(), x.width()])
}

pub fn channel_linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Matrix<T>,
    bias: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Matrix<T>, Vec<T>)> {
    let g = linear_backward(&to_tokens(x), weight, bias, &to_tokens(grad_out))?;
    Ok((from_tokens(&g.input, x.dims())?, g.weight, g.bias))
}

fn axis_geometry(dims: Dims, axis: usize) -> Result<(usize, usize, usize)> {
    if axis > 3 {
        return Err(TensorError::Config(format!(
            "softmax axis {axis} out of range 0..4"
        )));
    }
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    Ok((outer, dims[axis], inner))
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_geometry(x.dims(), axis)?;
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let m = (0..len)
                .map(|k| data[idx(k)])
                .fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..len {
                let e = (data[idx(k)] - m).exp();
                data[idx(k)] = e;
                z += e;
            }
            for k in 0..len {
                data[idx(k)] /= z;
            }
        }
    }
    Ok(out)
}

/// VJP of softmax given its output `y`.
pub fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    y.same_dims(grad_out, "softmax_backward")?;
    let (outer, len, inner) = axis_geometry(y.dims(), axis)?;
    let mut gx = y.zeros_like();
    let (yd, gd) = (y.data(), grad_out.data());
    let out = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| yd[idx(k)] * gd[idx(k)]).sum();
            for k in 0..len {
                out[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
            }
        }
    }
    Ok(gx)
}

/// Pointwise nonlinearities. `Silu` is also known as Swish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Exact (erf-based) GELU.
    Gelu,
    Silu,
    Sigmoid,
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Branch on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    #[inline]
    pub fn eval<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Gelu => T::lit(0.5) * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf()),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Gelu => {
                let cdf = T::lit(0.5) * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
                let pdf = (-T::lit(0.5) * x * x).exp() / (T::PI() + T::PI()).sqrt();
                cdf + x * pdf
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
        }
    }
}

pub fn activation<T: Scalar>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| kind.eval(v))
}

/// VJP of [`activation`], evaluated at the pre-activation input `x`.
pub fn activation_backward<T: Scalar>(
    kind: Activation,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    x.zip_map(grad_out, "activation_backward", |v, g| {
        g * kind.derivative(v)
    })
}

/// Per (batch, channel) mean over the spatial plane; output is `N×C×1×1`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, ..] = x.dims();
    let inv = T::one() / T::lit(x.plane_len() as f64);
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for b in 0..n {
        for ch in 0..c {
            let s: T = x.plane(b, ch).iter().copied().sum();
            out.set([b, ch, 0, 0], s * inv);
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_dims: Dims,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_same_dims(
        [input_dims[0], input_dims[1], 1, 1],
        grad_out.dims(),
        "gap_backward",
    )?;
    let inv = T::one() / T::lit((input_dims[2] * input_dims[3]) as f64);
    let mut gx = Tensor::zeros(input_dims);
    for b in 0..input_dims[0] {
        for c in 0..input_dims[1] {
            let g = grad_out.get([b, c, 0, 0]) * inv;
            gx.plane_mut(b, c).iter_mut().for_each(|v| *v = g);
        }
    }
    Ok(gx)
}

/// Multiplies each `(b, c)` plane of `x` by `gate[b, c, 0, 0]`.
pub fn channel_gate<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_dims([x.batch(), x.channels(), 1, 1], gate.dims(), "channel_gate")?;
    let mut out = x.clone();
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            let g = gate.get([b, c, 0, 0]);
            out.plane_mut(b, c).iter_mut().for_each(|v| *v *= g);
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_gate)`.
pub fn channel_gate_backward<T: Scalar>(
    x: &Tensor<T>,
    gate: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    x.same_dims(grad_out, "channel_gate_backward")?;
    let gx = channel_gate(grad_out, gate)?;
    let mut gg = gate.zeros_like();
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            let s: T = x
                .plane(b, c)
                .iter()
                .zip(grad_out.plane(b, c))
                .map(|(&a, &g)| a * g)
                .sum();
            gg.set([b, c, 0, 0], s);
        }
    }
    Ok((gx, gg))
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.dims();
    check_same_dims([n, b.channels(), h, w], b.dims(), "concat_channels")?;
    let cb = b.channels();
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for bi in 0..n {
        for c in 0..ca {
            out.plane_mut(bi, c).copy_from_slice(a.plane(bi, c));
        }
        for c in 0..cb {
            out.plane_mut(bi, ca + c).copy_from_slice(b.plane(bi, c));
        }
    }
    Ok(out)
}

/// Splits channels `[0, at)` and `[at, C)`.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = x.dims();
    if at == 0 || at >= c {
        return Err(TensorError::Config(format!(
            "cannot split {c} channels at {at}"
        )));
    }
    let mut a = Tensor::zeros([n, at, h, w]);
    let mut b = Tensor::zeros([n, c - at, h, w]);
    for bi in 0..n {
        for ch in 0..at {
            a.plane_mut(bi, ch).copy_from_slice(x.plane(bi, ch));
        }
        for ch in at..c {
            b.plane_mut(bi, ch - at).copy_from_slice(x.plane(bi, ch));
        }
    }
    Ok((a, b))
}

/// Source index pair and blend weight for half-pixel bilinear sampling.
fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of every plane to `oh × ow` (half-pixel centres,
/// edge-clamped). Resampling to the same size is the identity.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    if oh == 0 || ow == 0 {
        return Err(TensorError::InvalidDims {
            dims: vec![oh, ow],
            reason: "resize target must be non-empty".into(),
        });
    }
    let [n, c, h, w] = x.dims();
    let ys = bilinear_taps(oh, h);
    let xs = bilinear_taps(ow, w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let fy = T::lit(fy);
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let fx = T::lit(fx);
                    let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`resize_bilinear`]: scatters `grad_out` back onto `input_dims`.
pub fn resize_bilinear_backward<T: Scalar>(
    input_dims: Dims,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_dims;
    let [gn, gc, oh, ow] = grad_out.dims();
    check_same_dims([n, c, oh, ow], [gn, gc, oh, ow], "resize_backward")?;
    let ys = bilinear_taps(oh, h);
    let xs = bilinear_taps(ow, w);
    let mut gx = Tensor::zeros(input_dims);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.plane(b, ch);
            let dst = gx.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let fy = T::lit(fy);
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let fx = T::lit(fx);
                    let gv = g[oy * ow + ox];
                    dst[y0 * w + x0] += gv * (T::one() - fy) * (T::one() - fx);
                    dst[y0 * w + x1] += gv * (T::one() - fy) * fx;
                    dst[y1 * w + x0] += gv * fy * (T::one() - fx);
                    dst[y1 * w + x1] += gv * fy * fx;
                }
            }
        }
    }
    Ok(gx)
}
