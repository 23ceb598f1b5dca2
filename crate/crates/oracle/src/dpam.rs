//! Pixel attention, final fusion and the whole pipeline.

use mgdfis_core::dpam::{DpamParams, FusionWeights};
use mgdfis_core::gdim::AggregateParams;
use mgdfis_core::{MgdfisParams, Tensor};

use crate::gdim::{aggregate, dmm, gmm, reconcile};
use crate::naive::{concat_channels, conv2d, sigmoid};

pub fn dpam(f_agg: &Tensor<f64>, f_hat: &Tensor<f64>, p: &DpamParams<f64>) -> Tensor<f64> {
    let logits = conv2d(
        &concat_channels(f_agg, f_hat),
        &p.conv.weight,
        &p.conv.bias,
        &p.conv.spec,
    );
    Tensor::from_fn(logits.dims(), |i| sigmoid(logits.get(i)))
}

pub fn mgdfis_fuse(
    amap: &Tensor<f64>,
    f_hat: &Tensor<f64>,
    x1: &Tensor<f64>,
    x2: &Tensor<f64>,
    w: &FusionWeights<f64>,
    agg: &AggregateParams<f64>,
) -> Tensor<f64> {
    let (x1, x2) = (reconcile(f_hat, x1, agg), reconcile(f_hat, x2, agg));
    Tensor::from_fn(amap.dims(), |i| {
        let a = amap.get(i);
        w.w_map * (a * f_hat.get(i) + (1.0 - a) * (w.w_x1 * x1.get(i) + w.w_x2 * x2.get(i)))
    })
}

pub fn mgdfis(f1: &Tensor<f64>, f2: &Tensor<f64>, p: &MgdfisParams<f64>) -> Tensor<f64> {
    let f_agg = aggregate(f1, f2, &p.gdim.agg);
    let f_hat = dmm(&gmm(&f_agg, &p.gdim.gmm), &p.gdim.dmm);
    let amap = dpam(&f_agg, &f_hat, &p.dpam);
    mgdfis_fuse(&amap, &f_hat, f1, f2, &p.fusion, &p.gdim.agg)
}
