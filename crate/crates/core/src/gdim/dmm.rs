//! Detail mixing: directional 4×6 / 6×4 convolutions added to the input,
//! then gated per channel by an FTSSA-refined squeeze-excitation branch.

use crate::conv::ConvSpec;
use crate::error::Result;
use crate::ftssa::{ftssa, ftssa_backward, FtssaParams, FtssaShape};
use crate::ops::{
    activation, activation_backward, channel_gate, channel_gate_backward, global_avg_pool,
    global_avg_pool_backward, Activation,
};
use crate::params::{join, Conv, Linear, ParamMut, ParamRef, ParamSet};
use crate::tensor::Tensor;
use crate::Scalar;

pub const DEFAULT_MLP_RATIO: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DmmParams<T> {
    /// 4×6 same, `C → C`.
    pub conv46: Conv<T>,
    /// 6×4 same, `C → C`.
    pub conv64: Conv<T>,
    pub ftssa: FtssaParams<T>,
    /// `C → C/r`.
    pub mlp1: Linear<T>,
    /// `C/r → C`.
    pub mlp2: Linear<T>,
}

impl<T: Scalar> DmmParams<T> {
    pub fn zeros(shape: FtssaShape, mlp_ratio: usize) -> Self {
        let c = shape.channels;
        let hidden = (c / mlp_ratio.max(1)).max(1);
        Self {
            conv46: Conv::zeros(ConvSpec::same(c, c, (4, 6))),
            conv64: Conv::zeros(ConvSpec::same(c, c, (6, 4))),
            ftssa: FtssaParams::zeros(shape),
            mlp1: Linear::zeros(c, hidden, true),
            mlp2: Linear::zeros(hidden, c, true),
        }
    }
}

impl<T: Scalar> ParamSet<T> for DmmParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.conv46.visit(&join(prefix, "conv46"), f);
        self.conv64.visit(&join(prefix, "conv64"), f);
        self.ftssa.visit(&join(prefix, "ftssa"), f);
        self.mlp1.visit(&join(prefix, "mlp1"), f);
        self.mlp2.visit(&join(prefix, "mlp2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.conv46.visit_mut(&join(prefix, "conv46"), f);
        self.conv64.visit_mut(&join(prefix, "conv64"), f);
        self.ftssa.visit_mut(&join(prefix, "ftssa"), f);
        self.mlp1.visit_mut(&join(prefix, "mlp1"), f);
        self.mlp2.visit_mut(&join(prefix, "mlp2"), f);
    }
}

/// Test hooks for the attention branch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DmmHooks {
    /// Feed `F_add` straight to the pooling step.
    pub bypass_ftssa: bool,
    /// Replace the whole gate with a constant.
    pub constant_gate: Option<f64>,
}

/// `F_add = f + conv46(f) + conv64(f)`.
pub fn dmm_directional<T: Scalar>(f: &Tensor<T>, p: &DmmParams<T>) -> Result<Tensor<T>> {
    let mut out = p.conv46.forward(f)?;
    out.add_assign(&p.conv64.forward(f)?)?;
    out.add_assign(f)?;
    Ok(out)
}

pub fn dmm_directional_backward<T: Scalar>(
    f: &Tensor<T>,
    p: &DmmParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, DmmParams<T>)> {
    let (g46, p46) = p.conv46.backward(f, grad_out)?;
    let (g64, p64) = p.conv64.backward(f, grad_out)?;
    let mut gf = grad_out.clone();
    gf.add_assign(&g46)?;
    gf.add_assign(&g64)?;
    let mut gp = p.zeros_like();
    gp.conv46 = p46;
    gp.conv64 = p64;
    Ok((gf, gp))
}

struct AttentionTrace<T> {
    refined: Tensor<T>,
    pooled: Tensor<T>,
    h1: Tensor<T>,
    a1: Tensor<T>,
    h2: Tensor<T>,
}

fn attention_trace<T: Scalar>(
    f_add: &Tensor<T>,
    p: &DmmParams<T>,
    hooks: &DmmHooks,
) -> Result<AttentionTrace<T>> {
    let refined = if hooks.bypass_ftssa {
        f_add.clone()
    } else {
        ftssa(f_add, &p.ftssa)?
    };
    let pooled = global_avg_pool(&refined);
    let h1 = p.mlp1.forward_channels(&pooled)?;
    let a1 = activation(Activation::Gelu, &h1);
    let h2 = p.mlp2.forward_channels(&a1)?;
    Ok(AttentionTrace {
        refined,
        pooled,
        h1,
        a1,
        h2,
    })
}

/// `Swish(MLP(GAP(FTSSA(F_add))))`, one value per (batch, channel).
pub fn dmm_attention<T: Scalar>(f_add: &Tensor<T>, p: &DmmParams<T>) -> Result<Tensor<T>> {
    dmm_attention_with(f_add, p, &DmmHooks::default())
}

pub fn dmm_attention_with<T: Scalar>(
    f_add: &Tensor<T>,
    p: &DmmParams<T>,
    hooks: &DmmHooks,
) -> Result<Tensor<T>> {
    if let Some(c) = hooks.constant_gate {
        return Ok(Tensor::full(
            [f_add.batch(), f_add.channels(), 1, 1],
            T::lit(c),
        ));
    }
    let tr = attention_trace(f_add, p, hooks)?;
    Ok(activation(Activation::Silu, &tr.h2))
}

pub fn dmm_attention_backward<T: Scalar>(
    f_add: &Tensor<T>,
    p: &DmmParams<T>,
    grad_gate: &Tensor<T>,
) -> Result<(Tensor<T>, DmmParams<T>)> {
    dmm_attention_backward_with(f_add, p, &DmmHooks::default(), grad_gate)
}

pub fn dmm_attention_backward_with<T: Scalar>(
    f_add: &Tensor<T>,
    p: &DmmParams<T>,
    hooks: &DmmHooks,
    grad_gate: &Tensor<T>,
) -> Result<(Tensor<T>, DmmParams<T>)> {
    let mut gp = p.zeros_like();
    if hooks.constant_gate.is_some() {
        return Ok((f_add.zeros_like(), gp));
    }
    let tr = attention_trace(f_add, p, hooks)?;
    let g_h2 = activation_backward(Activation::Silu, &tr.h2, grad_gate)?;
    let (g_a1, g_mlp2) = p.mlp2.backward_channels(&tr.a1, &g_h2)?;
    let g_h1 = activation_backward(Activation::Gelu, &tr.h1, &g_a1)?;
    let (g_pooled, g_mlp1) = p.mlp1.backward_channels(&tr.pooled, &g_h1)?;
    let g_refined = global_avg_pool_backward(tr.refined.dims(), &g_pooled)?;
    let g_f = if hooks.bypass_ftssa {
        g_refined
    } else {
        let (g_f, g_ftssa) = ftssa_backward(f_add, &p.ftssa, &g_refined)?;
        gp.ftssa = g_ftssa;
        g_f
    };
    gp.mlp1 = g_mlp1;
    gp.mlp2 = g_mlp2;
    Ok((g_f, gp))
}

/// `F_add · Att(F_add)`.
pub fn dmm<T: Scalar>(f: &Tensor<T>, p: &DmmParams<T>) -> Result<Tensor<T>> {
    dmm_with(f, p, &DmmHooks::default())
}

pub fn dmm_with<T: Scalar>(f: &Tensor<T>, p: &DmmParams<T>, hooks: &DmmHooks) -> Result<Tensor<T>> {
    let f_add = dmm_directional(f, p)?;
    let gate = dmm_attention_with(&f_add, p, hooks)?;
    channel_gate(&f_add, &gate)
}

pub fn dmm_backward<T: Scalar>(
    f: &Tensor<T>,
    p: &DmmParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, DmmParams<T>)> {
    dmm_backward_with(f, p, &DmmHooks::default(), grad_out)
}

pub fn dmm_backward_with<T: Scalar>(
    f: &Tensor<T>,
    p: &DmmParams<T>,
    hooks: &DmmHooks,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, DmmParams<T>)> {
    let f_add = dmm_directional(f, p)?;
    let gate = dmm_attention_with(&f_add, p, hooks)?;
    let (mut g_add, g_gate) = channel_gate_backward(&f_add, &gate, grad_out)?;
    let (g_add_att, mut gp) = dmm_attention_backward_with(&f_add, p, hooks, &g_gate)?;
    g_add.add_assign(&g_add_att)?;
    let (gf, g_dir) = dmm_directional_backward(f, p, &g_add)?;
    gp.conv46 = g_dir.conv46;
    gp.conv64 = g_dir.conv64;
    Ok((gf, gp))
}
