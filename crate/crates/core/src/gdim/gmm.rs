//! Global mixing: channel groups are laid side by side along one spatial
//! axis so that a 3×3 convolution sees pixels that were far apart.

use crate::conv::ConvSpec;
use crate::error::{Result, TensorError};
use crate::ops::{activation, activation_backward, concat_channels, split_channels, Activation};
use crate::params::{join, leaf, leaf_mut, Conv, Init, ParamMut, ParamRef, ParamSet};
use crate::tensor::{Dims, Tensor};
use crate::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const DEFAULT_GROUPS: usize = 2;

/// Spatial axis along which the channel groups are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupAxis {
    /// Groups side by side: `(C/k) × H × (kW)`.
    Width,
    /// Groups stacked: `(C/k) × (kH) × W`.
    Height,
}

impl GroupAxis {
    pub fn grouped_dims(self, dims: Dims, k: usize) -> Dims {
        let [n, c, h, w] = dims;
        match self {
            GroupAxis::Width => [n, c / k, h, k * w],
            GroupAxis::Height => [n, c / k, k * h, w],
        }
    }

    /// Dims of the additive position embedding for a `C×H×W` input.
    pub fn pos_dims(self, c: usize, h: usize, w: usize, k: usize) -> Dims {
        match self {
            GroupAxis::Width => [1, c / k, 1, k * w],
            GroupAxis::Height => [1, c / k, k * h, 1],
        }
    }
}

/// Channel group `g` goes to spatial band `g` along `axis`.
pub fn regroup<T: Scalar>(x: &Tensor<T>, k: usize, axis: GroupAxis) -> Result<Tensor<T>> {
    check_groups(x.channels(), k)?;
    let [n, c, h, w] = x.dims();
    let cg = c / k;
    let mut out = Tensor::zeros(axis.grouped_dims(x.dims(), k));
    for b in 0..n {
        for g in 0..k {
            for ci in 0..cg {
                let src = x.plane(b, g * cg + ci);
                let dst = out.plane_mut(b, ci);
                for y in 0..h {
                    let row = &src[y * w..(y + 1) * w];
                    let start = match axis {
                        GroupAxis::Width => y * k * w + g * w,
                        GroupAxis::Height => (g * h + y) * w,
                    };
                    dst[start..start + w].copy_from_slice(row);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`regroup`].
pub fn restore<T: Scalar>(x: &Tensor<T>, k: usize, axis: GroupAxis) -> Result<Tensor<T>> {
    let [n, cg, gh, gw] = x.dims();
    let (h, w) = match axis {
        GroupAxis::Width => (gh, gw / k),
        GroupAxis::Height => (gh / k, gw),
    };
    if axis == GroupAxis::Width && gw % k != 0 {
        return Err(TensorError::mismatch("restore", "width", k * w, gw));
    }
    if axis == GroupAxis::Height && gh % k != 0 {
        return Err(TensorError::mismatch("restore", "height", k * h, gh));
    }
    let mut out = Tensor::zeros([n, cg * k, h, w]);
    for b in 0..n {
        for g in 0..k {
            for ci in 0..cg {
                let src = x.plane(b, ci);
                let dst = out.plane_mut(b, g * cg + ci);
                for y in 0..h {
                    let start = match axis {
                        GroupAxis::Width => y * k * w + g * w,
                        GroupAxis::Height => (g * h + y) * w,
                    };
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[start..start + w]);
                }
            }
        }
    }
    Ok(out)
}

fn check_groups(c: usize, k: usize) -> Result<()> {
    if k == 0 || !c.is_multiple_of(k) {
        return Err(TensorError::Config(format!(
            "gmm: channel count {c} is not divisible by group count {k}"
        )));
    }
    Ok(())
}

/// Inference-mode batch normalization with fixed running moments.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    /// Scale 1, shift 0, moments `(0, 1)`.
    pub fn new(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    fn inv_std(&self, c: usize) -> T {
        T::one() / (self.running_var[c] + T::lit(BN_EPS)).sqrt()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.channels() != self.scale.len() {
            return Err(TensorError::mismatch(
                "batch_norm",
                "channel",
                self.scale.len(),
                x.channels(),
            ));
        }
        let mut out = x.clone();
        for b in 0..x.batch() {
            for c in 0..x.channels() {
                let a = self.scale[c] * self.inv_std(c);
                let (m, s) = (self.running_mean[c], self.shift[c]);
                out.plane_mut(b, c)
                    .iter_mut()
                    .for_each(|v| *v = a * (*v - m) + s);
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        x.same_dims(grad_out, "batch_norm_backward")?;
        let mut gx = x.zeros_like();
        let c_len = self.scale.len();
        let mut gp = Self {
            scale: vec![T::zero(); c_len],
            shift: vec![T::zero(); c_len],
            running_mean: vec![T::zero(); c_len],
            running_var: vec![T::zero(); c_len],
        };
        let half = T::lit(0.5);
        for b in 0..x.batch() {
            for c in 0..x.channels() {
                let inv = self.inv_std(c);
                let a = self.scale[c] * inv;
                let m = self.running_mean[c];
                let (mut s_g, mut s_gx) = (T::zero(), T::zero());
                for ((gxv, &xv), &g) in gx
                    .plane_mut(b, c)
                    .iter_mut()
                    .zip(x.plane(b, c))
                    .zip(grad_out.plane(b, c))
                {
                    *gxv = a * g;
                    s_g += g;
                    s_gx += g * (xv - m);
                }
                gp.shift[c] += s_g;
                gp.scale[c] += s_gx * inv;
                gp.running_mean[c] -= a * s_g;
                gp.running_var[c] -= half * self.scale[c] * s_gx * inv * inv * inv;
            }
        }
        Ok((gx, gp))
    }
}

impl<T: Scalar> ParamSet<T> for BatchNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        let c = [self.scale.len()];
        leaf(f, prefix, "scale", &c, Init::Constant(1.0), &self.scale);
        leaf(f, prefix, "shift", &c, Init::Constant(0.0), &self.shift);
        leaf(
            f,
            prefix,
            "running_mean",
            &c,
            Init::Constant(0.0),
            &self.running_mean,
        );
        leaf(
            f,
            prefix,
            "running_var",
            &c,
            Init::Constant(1.0),
            &self.running_var,
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let c = [self.scale.len()];
        leaf_mut(f, prefix, "scale", &c, Init::Constant(1.0), &mut self.scale);
        leaf_mut(f, prefix, "shift", &c, Init::Constant(0.0), &mut self.shift);
        leaf_mut(
            f,
            prefix,
            "running_mean",
            &c,
            Init::Constant(0.0),
            &mut self.running_mean,
        );
        leaf_mut(
            f,
            prefix,
            "running_var",
            &c,
            Init::Constant(1.0),
            &mut self.running_var,
        );
    }
}

/// One mixing pass: regroup, add position, 3×3 conv, restore, BN, GELU,
/// then a 1×1 fuse over `concat(input, restored)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPass<T> {
    pub pos: Tensor<T>,
    /// 3×3 same, `C/k → C/k`.
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
    /// 1×1, `2C → C`.
    pub fuse: Conv<T>,
}

impl<T: Scalar> GmmPass<T> {
    pub fn zeros(axis: GroupAxis, c: usize, h: usize, w: usize, k: usize) -> Self {
        Self {
            pos: Tensor::zeros(axis.pos_dims(c, h, w, k)),
            conv: Conv::zeros(ConvSpec::same(c / k, c / k, (3, 3))),
            bn: BatchNorm::new(c),
            fuse: Conv::zeros(ConvSpec::pointwise(2 * c, c)),
        }
    }
}

impl<T: Scalar> ParamSet<T> for GmmPass<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        leaf(
            f,
            prefix,
            "pos",
            &self.pos.dims(),
            Init::Constant(0.0),
            self.pos.data(),
        );
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.fuse.visit(&join(prefix, "fuse"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let dims = self.pos.dims();
        leaf_mut(
            f,
            prefix,
            "pos",
            &dims,
            Init::Constant(0.0),
            self.pos.data_mut(),
        );
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams<T> {
    pub groups: usize,
    /// Width-axis pass, run first.
    pub col: GmmPass<T>,
    /// Height-axis pass over the column pass output.
    pub row: GmmPass<T>,
}

impl<T: Scalar> GmmParams<T> {
    /// Zero convolutions and position embeddings, identity BN, for
    /// inputs of `c × h × w`.
    pub fn zeros(c: usize, h: usize, w: usize, k: usize) -> Result<Self> {
        check_groups(c, k)?;
        Ok(Self {
            groups: k,
            col: GmmPass::zeros(GroupAxis::Width, c, h, w, k),
            row: GmmPass::zeros(GroupAxis::Height, c, h, w, k),
        })
    }
}

impl<T: Scalar> ParamSet<T> for GmmParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.col.visit(&join(prefix, "col"), f);
        self.row.visit(&join(prefix, "row"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.col.visit_mut(&join(prefix, "col"), f);
        self.row.visit_mut(&join(prefix, "row"), f);
    }
}

/// Index into the position plane for flat index `i` of a grouped plane.
#[inline]
fn pos_index(axis: GroupAxis, i: usize, w: usize) -> usize {
    match axis {
        GroupAxis::Width => i % w,
        GroupAxis::Height => i / w,
    }
}

fn add_pos<T: Scalar>(grouped: &mut Tensor<T>, pos: &Tensor<T>, axis: GroupAxis) -> Result<()> {
    let [_, c, h, w] = grouped.dims();
    let want = match axis {
        GroupAxis::Width => [1, c, 1, w],
        GroupAxis::Height => [1, c, h, 1],
    };
    crate::tensor::check_same_dims(want, pos.dims(), "gmm position embedding")?;
    for b in 0..grouped.batch() {
        for ch in 0..c {
            let pp = pos.plane(0, ch);
            for (i, v) in grouped.plane_mut(b, ch).iter_mut().enumerate() {
                *v += pp[pos_index(axis, i, w)];
            }
        }
    }
    Ok(())
}

fn pos_backward<T: Scalar>(g_grouped: &Tensor<T>, pos_dims: Dims, axis: GroupAxis) -> Tensor<T> {
    let w = g_grouped.width();
    let mut g = Tensor::zeros(pos_dims);
    for b in 0..g_grouped.batch() {
        for ch in 0..g_grouped.channels() {
            let gp = g.plane_mut(0, ch);
            for (i, &v) in g_grouped.plane(b, ch).iter().enumerate() {
                gp[pos_index(axis, i, w)] += v;
            }
        }
    }
    g
}

struct PassTrace<T> {
    grouped: Tensor<T>,
    restored: Tensor<T>,
    normed: Tensor<T>,
    cat: Tensor<T>,
}

fn pass_trace<T: Scalar>(
    u: &Tensor<T>,
    p: &GmmPass<T>,
    k: usize,
    axis: GroupAxis,
) -> Result<PassTrace<T>> {
    let mut grouped = regroup(u, k, axis)?;
    add_pos(&mut grouped, &p.pos, axis)?;
    let restored = restore(&p.conv.forward(&grouped)?, k, axis)?;
    let normed = p.bn.forward(&restored)?;
    let cat = concat_channels(u, &activation(Activation::Gelu, &normed))?;
    Ok(PassTrace {
        grouped,
        restored,
        normed,
        cat,
    })
}

fn pass_forward<T: Scalar>(
    u: &Tensor<T>,
    p: &GmmPass<T>,
    k: usize,
    axis: GroupAxis,
) -> Result<Tensor<T>> {
    p.fuse.forward(&pass_trace(u, p, k, axis)?.cat)
}

fn pass_backward<T: Scalar>(
    u: &Tensor<T>,
    p: &GmmPass<T>,
    k: usize,
    axis: GroupAxis,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, GmmPass<T>)> {
    let tr = pass_trace(u, p, k, axis)?;
    let (g_cat, g_fuse) = p.fuse.backward(&tr.cat, grad_out)?;
    let (mut gu, g_act) = split_channels(&g_cat, u.channels())?;
    let g_normed = activation_backward(Activation::Gelu, &tr.normed, &g_act)?;
    let (g_restored, g_bn) = p.bn.backward(&tr.restored, &g_normed)?;
    let g_conv_out = regroup(&g_restored, k, axis)?;
    let (g_grouped, g_conv) = p.conv.backward(&tr.grouped, &g_conv_out)?;
    gu.add_assign(&restore(&g_grouped, k, axis)?)?;
    Ok((
        gu,
        GmmPass {
            pos: pos_backward(&g_grouped, p.pos.dims(), axis),
            conv: g_conv,
            bn: g_bn,
            fuse: g_fuse,
        },
    ))
}

/// Column pass then row pass; output dims equal input dims.
pub fn gmm<T: Scalar>(x: &Tensor<T>, p: &GmmParams<T>) -> Result<Tensor<T>> {
    let fused = pass_forward(x, &p.col, p.groups, GroupAxis::Width)?;
    pass_forward(&fused, &p.row, p.groups, GroupAxis::Height)
}

pub fn gmm_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &GmmParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, GmmParams<T>)> {
    let fused = pass_forward(x, &p.col, p.groups, GroupAxis::Width)?;
    let (g_fused, g_row) = pass_backward(&fused, &p.row, p.groups, GroupAxis::Height, grad_out)?;
    let (gx, g_col) = pass_backward(x, &p.col, p.groups, GroupAxis::Width, &g_fused)?;
    Ok((
        gx,
        GmmParams {
            groups: p.groups,
            col: g_col,
            row: g_row,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims) -> Tensor<f64> {
        let mut i = 0.0;
        Tensor::from_fn(dims, |_| {
            i += 1.0;
            i
        })
    }

    #[test]
    fn regroup_layouts() {
        let x = ramp([1, 4, 2, 3]);
        let col = regroup(&x, 2, GroupAxis::Width).unwrap();
        assert_eq!(col.dims(), [1, 2, 2, 6]);
        // Row 0 of channel 0 is [ch0 row0 | ch2 row0].
        assert_eq!(&col.plane(0, 0)[..6], &[1.0, 2.0, 3.0, 13.0, 14.0, 15.0]);
        let row = regroup(&x, 2, GroupAxis::Height).unwrap();
        assert_eq!(row.dims(), [1, 2, 4, 3]);
        assert_eq!(row.get([0, 1, 2, 0]), x.get([0, 3, 0, 0]));
    }

    #[test]
    fn regroup_restore_round_trip() {
        let x = ramp([2, 8, 3, 5]);
        for k in [1, 2, 4] {
            for axis in [GroupAxis::Width, GroupAxis::Height] {
                let back = restore(&regroup(&x, k, axis).unwrap(), k, axis).unwrap();
                assert_eq!(back, x);
            }
        }
    }

    #[test]
    fn indivisible_groups_rejected() {
        let err = GmmParams::<f64>::zeros(6, 4, 4, 4).unwrap_err();
        assert!(err.is_contract_violation());
        assert!(regroup(&Tensor::<f64>::zeros([1, 3, 2, 2]), 2, GroupAxis::Width).is_err());
    }

    #[test]
    fn zero_weights_zero_output() {
        let p = GmmParams::<f64>::zeros(4, 6, 6, 2).unwrap();
        let y = gmm(&ramp([1, 4, 6, 6]), &p).unwrap();
        assert_eq!(y.dims(), [1, 4, 6, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
