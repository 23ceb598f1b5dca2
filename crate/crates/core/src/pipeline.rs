//! End-to-end fusion: aggregate → GMM → DMM → DPAM → weighted fusion.

use crate::dpam::{
    dpam, dpam_backward, mgdfis_fuse, mgdfis_fuse_backward, DpamParams, FusionWeights,
};
use crate::error::Result;
use crate::gdim::{gdim_backward_from, gdim_trace, GdimParams};
use crate::params::{join, ParamMut, ParamRef, ParamSet};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MgdfisParams<T> {
    pub gdim: GdimParams<T>,
    pub dpam: DpamParams<T>,
    pub fusion: FusionWeights<T>,
}

impl<T: Scalar> ParamSet<T> for MgdfisParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.gdim.visit(&join(prefix, "gdim"), f);
        self.dpam.visit(&join(prefix, "dpam"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.gdim.visit_mut(&join(prefix, "gdim"), f);
        self.dpam.visit_mut(&join(prefix, "dpam"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
    }
}

/// Every intermediate map of one evaluation.
#[derive(Debug, Clone)]
pub struct MgdfisTrace<T> {
    pub f_agg: Tensor<T>,
    pub f_gmm: Tensor<T>,
    pub f_hat: Tensor<T>,
    pub amap: Tensor<T>,
    pub out: Tensor<T>,
}

pub fn mgdfis_trace<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &MgdfisParams<T>,
) -> Result<MgdfisTrace<T>> {
    let g = gdim_trace(f1, f2, &p.gdim)?;
    let amap = dpam(&g.f_agg, &g.f_hat, &p.dpam)?;
    let out = mgdfis_fuse(&amap, &g.f_hat, f1, f2, &p.fusion, &p.gdim.agg)?;
    Ok(MgdfisTrace {
        f_agg: g.f_agg,
        f_gmm: g.f_gmm,
        f_hat: g.f_hat,
        amap,
        out,
    })
}

pub fn mgdfis<T: Scalar>(f1: &Tensor<T>, f2: &Tensor<T>, p: &MgdfisParams<T>) -> Result<Tensor<T>> {
    Ok(mgdfis_trace(f1, f2, p)?.out)
}

/// Returns `(grad_f1, grad_f2, grad_params)`.
pub fn mgdfis_backward<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &MgdfisParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, MgdfisParams<T>)> {
    let g = gdim_trace(f1, f2, &p.gdim)?;
    let amap = dpam(&g.f_agg, &g.f_hat, &p.dpam)?;
    let fg = mgdfis_fuse_backward(&amap, &g.f_hat, f1, f2, &p.fusion, &p.gdim.agg, grad_out)?;
    let (g_agg, g_hat_d, g_dpam) = dpam_backward(&g.f_agg, &g.f_hat, &p.dpam, &fg.amap)?;
    let mut g_hat = fg.f_hat;
    g_hat.add_assign(&g_hat_d)?;
    let (mut g1, mut g2, mut g_gdim) =
        gdim_backward_from(f1, f2, &p.gdim, &g, &g_hat, Some(&g_agg))?;
    g1.add_assign(&fg.x1)?;
    g2.add_assign(&fg.x2)?;
    g_gdim.agg.accumulate(&fg.agg);
    Ok((
        g1,
        g2,
        MgdfisParams {
            gdim: g_gdim,
            dpam: g_dpam,
            fusion: fg.weights,
        },
    ))
}
