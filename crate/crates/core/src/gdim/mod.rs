//! Global-detail integration: aggregate two maps, mix globally with GMM,
//! refine details with DMM.

pub mod aggregate;
pub mod dmm;
pub mod gmm;

pub use aggregate::{
    aggregate, aggregate_backward, reconcile, reconcile_backward, AggregateParams,
};
pub use dmm::{
    dmm, dmm_attention, dmm_attention_backward, dmm_attention_backward_with, dmm_attention_with,
    dmm_backward, dmm_backward_with, dmm_directional, dmm_directional_backward, dmm_with, DmmHooks,
    DmmParams,
};
pub use gmm::{gmm, gmm_backward, regroup, restore, BatchNorm, GmmParams, GmmPass, GroupAxis};

use crate::error::Result;
use crate::params::{join, ParamMut, ParamRef, ParamSet};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GdimParams<T> {
    pub agg: AggregateParams<T>,
    pub gmm: GmmParams<T>,
    pub dmm: DmmParams<T>,
}

impl<T: Scalar> ParamSet<T> for GdimParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.agg.visit(&join(prefix, "agg"), f);
        self.gmm.visit(&join(prefix, "gmm"), f);
        self.dmm.visit(&join(prefix, "dmm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.agg.visit_mut(&join(prefix, "agg"), f);
        self.gmm.visit_mut(&join(prefix, "gmm"), f);
        self.dmm.visit_mut(&join(prefix, "dmm"), f);
    }
}

/// Intermediate maps of one GDIM evaluation.
#[derive(Debug, Clone)]
pub struct GdimTrace<T> {
    pub f_agg: Tensor<T>,
    pub f_gmm: Tensor<T>,
    pub f_hat: Tensor<T>,
}

pub fn gdim_trace<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &GdimParams<T>,
) -> Result<GdimTrace<T>> {
    let f_agg = aggregate(f1, f2, &p.agg)?;
    let f_gmm = gmm(&f_agg, &p.gmm)?;
    let f_hat = dmm(&f_gmm, &p.dmm)?;
    Ok(GdimTrace {
        f_agg,
        f_gmm,
        f_hat,
    })
}

/// `DMM(GMM(aggregate(f1, f2)))`.
pub fn gdim<T: Scalar>(f1: &Tensor<T>, f2: &Tensor<T>, p: &GdimParams<T>) -> Result<Tensor<T>> {
    Ok(gdim_trace(f1, f2, p)?.f_hat)
}

/// Backward through GDIM given the trace and optional extra gradient on
/// `F_agg` (used when downstream ops also read it).
pub fn gdim_backward_from<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &GdimParams<T>,
    tr: &GdimTrace<T>,
    grad_hat: &Tensor<T>,
    grad_agg_extra: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>, GdimParams<T>)> {
    let (g_gmm, g_dmm) = dmm_backward(&tr.f_gmm, &p.dmm, grad_hat)?;
    let (mut g_agg, g_gmm_p) = gmm_backward(&tr.f_agg, &p.gmm, &g_gmm)?;
    if let Some(extra) = grad_agg_extra {
        g_agg.add_assign(extra)?;
    }
    let (g1, g2, g_agg_p) = aggregate_backward(f1, f2, &p.agg, &g_agg)?;
    Ok((
        g1,
        g2,
        GdimParams {
            agg: g_agg_p,
            gmm: g_gmm_p,
            dmm: g_dmm,
        },
    ))
}

pub fn gdim_backward<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &GdimParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, GdimParams<T>)> {
    let tr = gdim_trace(f1, f2, p)?;
    gdim_backward_from(f1, f2, p, &tr, grad_out, None)
}
