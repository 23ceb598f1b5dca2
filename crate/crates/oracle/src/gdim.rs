//! Straight-line GDIM: aggregation, the two-pass group mixing loop, and
//! the directional/gated detail branch.

use mgdfis_core::gdim::{AggregateParams, DmmParams, GdimParams, GmmParams, GmmPass};
use mgdfis_core::{Matrix, Tensor};

use crate::ftssa::ftssa;
use crate::naive::{
    add, concat_channels, conv2d, gelu, global_avg_pool, linear, resize_bilinear, silu,
};

pub fn reconcile(f1: &Tensor<f64>, f2: &Tensor<f64>, p: &AggregateParams<f64>) -> Tensor<f64> {
    if f1.dims() == f2.dims() {
        return f2.clone();
    }
    let proj = p.proj.as_ref().expect("projection required");
    let r = resize_bilinear(f2, f1.height(), f1.width());
    conv2d(&r, &proj.weight, &proj.bias, &proj.spec)
}

pub fn aggregate(f1: &Tensor<f64>, f2: &Tensor<f64>, p: &AggregateParams<f64>) -> Tensor<f64> {
    add(f1, &reconcile(f1, f2, p))
}

/// One iteration of the mixing loop. `wide` selects width-wise grouping
/// (`C/k × H × kW`), otherwise height-wise (`C/k × kH × W`).
fn mixing_step(f: &Tensor<f64>, p: &GmmPass<f64>, k: usize, wide: bool) -> Tensor<f64> {
    let [n, c, h, w] = f.dims();
    let cg = c / k;
    let (gh, gw) = if wide { (h, k * w) } else { (k * h, w) };
    // Concatenate channel groups along the chosen axis and add `pos`.
    let f_pos = Tensor::from_fn([n, cg, gh, gw], |[b, ci, y, x]| {
        let (g, sy, sx) = if wide {
            (x / w, y, x % w)
        } else {
            (y / h, y % h, x)
        };
        let pos = if wide {
            p.pos.get([0, ci, 0, x])
        } else {
            p.pos.get([0, ci, y, 0])
        };
        f.get([b, g * cg + ci, sy, sx]) + pos
    });
    let conv = conv2d(&f_pos, &p.conv.weight, &p.conv.bias, &p.conv.spec);
    // Undo the concatenation, then BN and GELU.
    let restored = Tensor::from_fn([n, c, h, w], |[b, ch, y, x]| {
        let (g, ci) = (ch / cg, ch % cg);
        let v = if wide {
            conv.get([b, ci, y, g * w + x])
        } else {
            conv.get([b, ci, g * h + y, x])
        };
        let bn = &p.bn;
        let normed = (v - bn.running_mean[ch]) / (bn.running_var[ch] + 1e-5).sqrt() * bn.scale[ch]
            + bn.shift[ch];
        gelu(normed)
    });
    let cat = concat_channels(f, &restored);
    conv2d(&cat, &p.fuse.weight, &p.fuse.bias, &p.fuse.spec)
}

/// Width-wise pass on the input, then height-wise on its output.
pub fn gmm(f_agg: &Tensor<f64>, p: &GmmParams<f64>) -> Tensor<f64> {
    let fused = mixing_step(f_agg, &p.col, p.groups, true);
    mixing_step(&fused, &p.row, p.groups, false)
}

pub fn dmm_directional(f: &Tensor<f64>, p: &DmmParams<f64>) -> Tensor<f64> {
    let a = conv2d(f, &p.conv46.weight, &p.conv46.bias, &p.conv46.spec);
    let b = conv2d(f, &p.conv64.weight, &p.conv64.bias, &p.conv64.spec);
    Tensor::from_fn(f.dims(), |i| f.get(i) + a.get(i) + b.get(i))
}

pub fn dmm_attention(f_add: &Tensor<f64>, p: &DmmParams<f64>) -> Tensor<f64> {
    let pooled = global_avg_pool(&ftssa(f_add, &p.ftssa));
    let [n, c, ..] = pooled.dims();
    let m = Matrix::from_fn(n, c, |b, ch| pooled.get([b, ch, 0, 0]));
    let hidden = linear(&m, &p.mlp1.weight, &p.mlp1.bias);
    let hidden = Matrix::from_fn(hidden.rows(), hidden.cols(), |i, j| gelu(hidden.get(i, j)));
    let logits = linear(&hidden, &p.mlp2.weight, &p.mlp2.bias);
    Tensor::from_fn([n, c, 1, 1], |[b, ch, _, _]| silu(logits.get(b, ch)))
}

pub fn dmm(f: &Tensor<f64>, p: &DmmParams<f64>) -> Tensor<f64> {
    let f_add = dmm_directional(f, p);
    let gate = dmm_attention(&f_add, p);
    Tensor::from_fn(f.dims(), |[b, c, y, x]| {
        f_add.get([b, c, y, x]) * gate.get([b, c, 0, 0])
    })
}

pub fn gdim(f1: &Tensor<f64>, f2: &Tensor<f64>, p: &GdimParams<f64>) -> Tensor<f64> {
    dmm(&gmm(&aggregate(f1, f2, &p.agg), &p.gmm), &p.dmm)
}
