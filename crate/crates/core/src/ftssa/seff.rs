//! Spectral enhanced feed-forward: two depthwise-refined branches, each
//! reweighted in the frequency domain, merged through a SiLU gate.

use num_complex::Complex;

use crate::conv::ConvSpec;
use crate::error::{Result, TensorError};
use crate::fft::{fft2, fft2_real_backward, ifft2, ifft2_real_backward};
use crate::ops::{
    activation, activation_backward, concat_channels, resize_bilinear, resize_bilinear_backward,
    split_channels, Activation,
};
use crate::params::{join, leaf, leaf_mut, Conv, Init, ParamMut, ParamRef, ParamSet};
use crate::tensor::{ComplexTensor, Tensor};
use crate::Scalar;

pub const SEFF_BASE_RESOLUTION: usize = 8;

/// Learnable complex weight map stored at a base resolution as separate
/// real and imaginary planes of dims `(1, C, base, base)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqWeight<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Scalar> FreqWeight<T> {
    /// All-pass map (`1 + 0i`).
    pub fn all_pass(channels: usize, base: usize) -> Self {
        Self {
            re: Tensor::ones([1, channels, base, base]),
            im: Tensor::zeros([1, channels, base, base]),
        }
    }

    pub fn to_complex(&self) -> Result<ComplexTensor<T>> {
        ComplexTensor::from_parts(&self.re, &self.im)
    }

    /// Bilinearly resampled to `h × w`, real and imaginary parts
    /// independently.
    pub fn resampled(&self, h: usize, w: usize) -> Result<ComplexTensor<T>> {
        ComplexTensor::from_parts(
            &resize_bilinear(&self.re, h, w)?,
            &resize_bilinear(&self.im, h, w)?,
        )
    }
}

impl<T: Scalar> ParamSet<T> for FreqWeight<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        leaf(
            f,
            prefix,
            "re",
            &self.re.dims(),
            Init::Constant(1.0),
            self.re.data(),
        );
        leaf(
            f,
            prefix,
            "im",
            &self.im.dims(),
            Init::Constant(0.0),
            self.im.data(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let dims = self.re.dims();
        leaf_mut(
            f,
            prefix,
            "re",
            &dims,
            Init::Constant(1.0),
            self.re.data_mut(),
        );
        leaf_mut(
            f,
            prefix,
            "im",
            &dims,
            Init::Constant(0.0),
            self.im.data_mut(),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeffParams<T> {
    /// 1×1, `C → 2C`.
    pub split: Conv<T>,
    /// Depthwise 3×3.
    pub branch1: Conv<T>,
    /// Depthwise 3×3, dilation 2.
    pub branch2: Conv<T>,
    pub freq1: FreqWeight<T>,
    pub freq2: FreqWeight<T>,
    pub bias1: Vec<T>,
    pub bias2: Vec<T>,
    /// 1×1, `C → C`.
    pub merge: Conv<T>,
}

impl<T: Scalar> SeffParams<T> {
    /// Zero convolutions, all-pass frequency maps, zero biases.
    pub fn zeros(channels: usize, base: usize) -> Self {
        Self {
            split: Conv::zeros(ConvSpec::pointwise(channels, 2 * channels)),
            branch1: Conv::zeros(ConvSpec::depthwise(channels, (3, 3))),
            branch2: Conv::zeros(
                ConvSpec::depthwise(channels, (3, 3))
                    .with_dilation((2, 2))
                    .with_same_padding(),
            ),
            freq1: FreqWeight::all_pass(channels, base),
            freq2: FreqWeight::all_pass(channels, base),
            bias1: vec![T::zero(); channels],
            bias2: vec![T::zero(); channels],
            merge: Conv::zeros(ConvSpec::pointwise(channels, channels)),
        }
    }

    pub fn channels(&self) -> usize {
        self.merge.spec.out_channels
    }
}

impl<T: Scalar> ParamSet<T> for SeffParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.split.visit(&join(prefix, "split"), f);
        self.branch1.visit(&join(prefix, "branch1"), f);
        self.branch2.visit(&join(prefix, "branch2"), f);
        self.freq1.visit(&join(prefix, "freq1"), f);
        self.freq2.visit(&join(prefix, "freq2"), f);
        let c = [self.bias1.len()];
        leaf(f, prefix, "bias1", &c, Init::Constant(0.0), &self.bias1);
        leaf(f, prefix, "bias2", &c, Init::Constant(0.0), &self.bias2);
        self.merge.visit(&join(prefix, "merge"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.split.visit_mut(&join(prefix, "split"), f);
        self.branch1.visit_mut(&join(prefix, "branch1"), f);
        self.branch2.visit_mut(&join(prefix, "branch2"), f);
        self.freq1.visit_mut(&join(prefix, "freq1"), f);
        self.freq2.visit_mut(&join(prefix, "freq2"), f);
        let c = [self.bias1.len()];
        leaf_mut(f, prefix, "bias1", &c, Init::Constant(0.0), &mut self.bias1);
        leaf_mut(f, prefix, "bias2", &c, Init::Constant(0.0), &mut self.bias2);
        self.merge.visit_mut(&join(prefix, "merge"), f);
    }
}

/// `W ⊙ X + B`, with `W` shared across the batch and `B` added to the
/// real part of each channel.
fn reweight<T: Scalar>(
    spec: &ComplexTensor<T>,
    weight: &ComplexTensor<T>,
    bias: &[T],
) -> ComplexTensor<T> {
    let [n, c, h, w] = spec.dims();
    let plane = h * w;
    let mut out = spec.clone();
    for b in 0..n {
        for ch in 0..c {
            let wplane = &weight.data()[ch * plane..(ch + 1) * plane];
            let start = (b * c + ch) * plane;
            for (z, &wv) in out.data_mut()[start..start + plane].iter_mut().zip(wplane) {
                *z = wv * *z + Complex::new(bias[ch], T::zero());
            }
        }
    }
    out
}

struct Branch<T> {
    spectrum: ComplexTensor<T>,
    weight: ComplexTensor<T>,
    filtered: Tensor<T>,
}

struct SeffTrace<T> {
    halves: (Tensor<T>, Tensor<T>),
    b1: Branch<T>,
    b2: Branch<T>,
    gated: Tensor<T>,
}

fn branch<T: Scalar>(
    half: &Tensor<T>,
    conv: &Conv<T>,
    freq: &FreqWeight<T>,
    bias: &[T],
) -> Result<Branch<T>> {
    let refined = conv.forward(half)?;
    let spectrum = fft2(&refined);
    let weight = freq.resampled(half.height(), half.width())?;
    let filtered = ifft2(&reweight(&spectrum, &weight, bias));
    Ok(Branch {
        spectrum,
        weight,
        filtered,
    })
}

fn seff_trace<T: Scalar>(x: &Tensor<T>, p: &SeffParams<T>) -> Result<SeffTrace<T>> {
    let c = p.channels();
    if x.channels() != c {
        return Err(TensorError::mismatch("seff", "channel", c, x.channels()));
    }
    if p.bias1.len() != c || p.bias2.len() != c {
        return Err(TensorError::mismatch("seff", "bias", c, p.bias1.len()));
    }
    let halves = split_channels(&p.split.forward(x)?, c)?;
    let b1 = branch(&halves.0, &p.branch1, &p.freq1, &p.bias1)?;
    let b2 = branch(&halves.1, &p.branch2, &p.freq2, &p.bias2)?;
    let gated = activation(Activation::Silu, &b2.filtered).mul(&b1.filtered)?;
    Ok(SeffTrace {
        halves,
        b1,
        b2,
        gated,
    })
}

/// `merge(SiLU(F₂') ⊙ F₁')` where `Fᵢ' = Re ifft2(Wᵢ↑ ⊙ fft2(refineᵢ(splitᵢ(x))) + Bᵢ)`.
pub fn seff<T: Scalar>(x: &Tensor<T>, p: &SeffParams<T>) -> Result<Tensor<T>> {
    let tr = seff_trace(x, p)?;
    p.merge.forward(&tr.gated)
}

/// Backward through one branch; returns the gradient on the branch's
/// half of the split output.
fn branch_backward<T: Scalar>(
    half: &Tensor<T>,
    br: &Branch<T>,
    conv: &Conv<T>,
    freq: &FreqWeight<T>,
    g_filtered: &Tensor<T>,
) -> Result<(Tensor<T>, Conv<T>, FreqWeight<T>, Vec<T>)> {
    let [n, c, h, w] = br.spectrum.dims();
    let plane = h * w;
    let g_spec_out = ifft2_real_backward(g_filtered);
    let mut g_bias = vec![T::zero(); c];
    let mut g_weight = ComplexTensor::<T>::zeros([1, c, h, w]);
    let mut g_spec = ComplexTensor::<T>::zeros(br.spectrum.dims());
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            for i in 0..plane {
                let g = g_spec_out.data()[start + i];
                let wv = br.weight.data()[ch * plane + i];
                let xv = br.spectrum.data()[start + i];
                g_bias[ch] += g.re;
                g_spec.data_mut()[start + i] = wv.conj() * g;
                let acc = &mut g_weight.data_mut()[ch * plane + i];
                *acc = *acc + xv.conj() * g;
            }
        }
    }
    let g_refined = fft2_real_backward(&g_spec);
    let (g_half, g_conv) = conv.backward(half, &g_refined)?;
    let base = freq.re.dims();
    let g_freq = FreqWeight {
        re: resize_bilinear_backward(base, &g_weight.re())?,
        im: resize_bilinear_backward(base, &g_weight.im())?,
    };
    Ok((g_half, g_conv, g_freq, g_bias))
}

pub fn seff_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &SeffParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, SeffParams<T>)> {
    let tr = seff_trace(x, p)?;
    let (g_gated, g_merge) = p.merge.backward(&tr.gated, grad_out)?;
    let g_f1 = g_gated.mul(&activation(Activation::Silu, &tr.b2.filtered))?;
    let g_f2 = activation_backward(
        Activation::Silu,
        &tr.b2.filtered,
        &g_gated.mul(&tr.b1.filtered)?,
    )?;
    let (g_h1, g_b1, g_w1, g_bias1) =
        branch_backward(&tr.halves.0, &tr.b1, &p.branch1, &p.freq1, &g_f1)?;
    let (g_h2, g_b2, g_w2, g_bias2) =
        branch_backward(&tr.halves.1, &tr.b2, &p.branch2, &p.freq2, &g_f2)?;
    let (gx, g_split) = p.split.backward(x, &concat_channels(&g_h1, &g_h2)?)?;
    Ok((
        gx,
        SeffParams {
            split: g_split,
            branch1: g_b1,
            branch2: g_b2,
            freq1: g_w1,
            freq2: g_w2,
            bias1: g_bias1,
            bias2: g_bias2,
            merge: g_merge,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sigmoid;

    #[test]
    fn all_pass_setup_reduces_to_gated_split() {
        let c = 2;
        let mut p = SeffParams::<f64>::zeros(c, SEFF_BASE_RESOLUTION);
        p.split.weight = Tensor::from_fn(p.split.spec.weight_dims(), |[o, i, _, _]| {
            [[1.0, 0.5], [-0.25, 1.0], [0.75, -1.0], [0.5, 0.5]][o][i]
        });
        for conv in [&mut p.branch1, &mut p.branch2] {
            for ch in 0..c {
                conv.weight.set([ch, 0, 1, 1], 1.0);
            }
        }
        p.merge = Conv::identity_pointwise(c);
        let x = Tensor::from_fn([1, c, 5, 6], |[_, ch, h, w]| {
            ((ch * 30 + h * 6 + w) % 7) as f64 * 0.3 - 1.0
        });
        let (f1, f2) = split_channels(&p.split.forward(&x).unwrap(), c).unwrap();
        let want = f1.zip_map(&f2, "t", |a, b| a * b * sigmoid(b)).unwrap();
        let got = seff(&x, &p).unwrap();
        let d = got.max_abs_diff(&want).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn zero_input_zero_output() {
        let mut p = SeffParams::<f64>::zeros(3, 4);
        p.merge = Conv::identity_pointwise(3);
        p.split.weight = Tensor::full(p.split.spec.weight_dims(), 0.5);
        let y = seff(&Tensor::zeros([2, 3, 4, 5]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
