//! Pixel attention over the coarse and refined maps, and the final
//! weighted fusion it gates.

use crate::conv::{ConvSpec, Padding};
use crate::error::Result;
use crate::gdim::{reconcile, reconcile_backward, AggregateParams};
use crate::ops::{concat_channels, sigmoid, split_channels};
use crate::params::{join, leaf, leaf_mut, Conv, Init, ParamMut, ParamRef, ParamSet};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DpamParams<T> {
    /// 7×7, `2C → C`, padding 3.
    pub conv: Conv<T>,
}

impl<T: Scalar> DpamParams<T> {
    pub fn zeros(channels: usize) -> Self {
        Self {
            conv: Conv::zeros(
                ConvSpec::new(2 * channels, channels, (7, 7)).with_padding(Padding::uniform(3)),
            ),
        }
    }
}

impl<T: Scalar> ParamSet<T> for DpamParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }
}

/// `σ(conv7×7(concat(F_agg, F̂)))`. Elements lie in `(0, 1)` up to the
/// rounding of the logistic function at large logits.
pub fn dpam<T: Scalar>(
    f_agg: &Tensor<T>,
    f_hat: &Tensor<T>,
    p: &DpamParams<T>,
) -> Result<Tensor<T>> {
    f_agg.same_dims(f_hat, "dpam")?;
    let logits = p.conv.forward(&concat_channels(f_agg, f_hat)?)?;
    Ok(logits.map(sigmoid))
}

/// Returns `(grad_f_agg, grad_f_hat, grad_params)`.
pub fn dpam_backward<T: Scalar>(
    f_agg: &Tensor<T>,
    f_hat: &Tensor<T>,
    p: &DpamParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, DpamParams<T>)> {
    f_agg.same_dims(f_hat, "dpam_backward")?;
    let mix = concat_channels(f_agg, f_hat)?;
    let amap = p.conv.forward(&mix)?.map(sigmoid);
    let g_logits = amap.zip_map(grad_out, "dpam_backward", |s, g| g * s * (T::one() - s))?;
    let (g_mix, g_conv) = p.conv.backward(&mix, &g_logits)?;
    let (g_agg, g_hat) = split_channels(&g_mix, f_agg.channels())?;
    Ok((g_agg, g_hat, DpamParams { conv: g_conv }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights<T> {
    pub w_map: T,
    pub w_x1: T,
    pub w_x2: T,
}

impl<T: Scalar> Default for FusionWeights<T> {
    fn default() -> Self {
        Self {
            w_map: T::one(),
            w_x1: T::lit(0.5),
            w_x2: T::lit(0.5),
        }
    }
}

impl<T: Scalar> ParamSet<T> for FusionWeights<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        leaf(
            f,
            prefix,
            "w_map",
            &[],
            Init::Constant(1.0),
            std::slice::from_ref(&self.w_map),
        );
        leaf(
            f,
            prefix,
            "w_x1",
            &[],
            Init::Constant(0.5),
            std::slice::from_ref(&self.w_x1),
        );
        leaf(
            f,
            prefix,
            "w_x2",
            &[],
            Init::Constant(0.5),
            std::slice::from_ref(&self.w_x2),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        leaf_mut(
            f,
            prefix,
            "w_map",
            &[],
            Init::Constant(1.0),
            std::slice::from_mut(&mut self.w_map),
        );
        leaf_mut(
            f,
            prefix,
            "w_x1",
            &[],
            Init::Constant(0.5),
            std::slice::from_mut(&mut self.w_x1),
        );
        leaf_mut(
            f,
            prefix,
            "w_x2",
            &[],
            Init::Constant(0.5),
            std::slice::from_mut(&mut self.w_x2),
        );
    }
}

/// Elementwise fusion of already-reconciled operands:
/// `w_map · (a ⊙ F̂ + (1 − a) ⊙ (w_x1·x1 + w_x2·x2))`.
pub fn fuse_reconciled<T: Scalar>(
    amap: &Tensor<T>,
    f_hat: &Tensor<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    w: &FusionWeights<T>,
) -> Result<Tensor<T>> {
    for t in [f_hat, x1, x2] {
        amap.same_dims(t, "mgdfis_fuse")?;
    }
    let mut out = amap.clone();
    let it = out
        .data_mut()
        .iter_mut()
        .zip(f_hat.data())
        .zip(x1.data())
        .zip(x2.data());
    for (((o, &h), &a1), &a2) in it {
        let a = *o;
        let bg = w.w_x1 * a1 + w.w_x2 * a2;
        *o = w.w_map * (a * h + (T::one() - a) * bg);
    }
    Ok(out)
}

/// Gradients of [`fuse_reconciled`] in argument order.
pub fn fuse_reconciled_backward<T: Scalar>(
    amap: &Tensor<T>,
    f_hat: &Tensor<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    w: &FusionWeights<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>, FusionWeights<T>)> {
    for t in [f_hat, x1, x2, grad_out] {
        amap.same_dims(t, "mgdfis_fuse_backward")?;
    }
    let n = amap.len();
    let (mut ga, mut gh, mut g1, mut g2) = (
        amap.zeros_like(),
        amap.zeros_like(),
        amap.zeros_like(),
        amap.zeros_like(),
    );
    let mut gw = FusionWeights {
        w_map: T::zero(),
        w_x1: T::zero(),
        w_x2: T::zero(),
    };
    for i in 0..n {
        let (a, h, a1, a2, g) = (
            amap.data()[i],
            f_hat.data()[i],
            x1.data()[i],
            x2.data()[i],
            grad_out.data()[i],
        );
        let bg = w.w_x1 * a1 + w.w_x2 * a2;
        let gm = g * w.w_map;
        let g_bg = gm * (T::one() - a);
        ga.data_mut()[i] = gm * (h - bg);
        gh.data_mut()[i] = gm * a;
        g1.data_mut()[i] = g_bg * w.w_x1;
        g2.data_mut()[i] = g_bg * w.w_x2;
        gw.w_map += g * (a * h + (T::one() - a) * bg);
        gw.w_x1 += g_bg * a1;
        gw.w_x2 += g_bg * a2;
    }
    Ok((ga, gh, g1, g2, gw))
}

/// Final fusion. `x1` and `x2` are brought to `F̂`'s dims with the same
/// resampler and projection used by aggregation.
pub fn mgdfis_fuse<T: Scalar>(
    amap: &Tensor<T>,
    f_hat: &Tensor<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    w: &FusionWeights<T>,
    agg: &AggregateParams<T>,
) -> Result<Tensor<T>> {
    let x1r = reconcile(f_hat, x1, agg)?;
    let x2r = reconcile(f_hat, x2, agg)?;
    fuse_reconciled(amap, f_hat, &x1r, &x2r, w)
}

/// Gradients of [`mgdfis_fuse`].
#[derive(Debug, Clone)]
pub struct FuseGrads<T> {
    pub amap: Tensor<T>,
    pub f_hat: Tensor<T>,
    pub x1: Tensor<T>,
    pub x2: Tensor<T>,
    pub weights: FusionWeights<T>,
    pub agg: AggregateParams<T>,
}

pub fn mgdfis_fuse_backward<T: Scalar>(
    amap: &Tensor<T>,
    f_hat: &Tensor<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    w: &FusionWeights<T>,
    agg: &AggregateParams<T>,
    grad_out: &Tensor<T>,
) -> Result<FuseGrads<T>> {
    let x1r = reconcile(f_hat, x1, agg)?;
    let x2r = reconcile(f_hat, x2, agg)?;
    let (ga, gh, g1r, g2r, gw) = fuse_reconciled_backward(amap, f_hat, &x1r, &x2r, w, grad_out)?;
    let (g1, mut g_agg) = reconcile_backward(f_hat, x1, agg, &g1r)?;
    let (g2, g_agg2) = reconcile_backward(f_hat, x2, agg, &g2r)?;
    g_agg.accumulate(&g_agg2);
    Ok(FuseGrads {
        amap: ga,
        f_hat: gh,
        x1: g1,
        x2: g2,
        weights: gw,
        agg: g_agg,
    })
}
