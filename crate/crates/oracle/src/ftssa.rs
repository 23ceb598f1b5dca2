//! Straight-line FTSSA components.

use mgdfis_core::ftssa::{
    DaffParams, DyTParams, FtssaParams, MonaParams, NormAxis, PiMode, SeffParams, SerrParams,
    TssaParams,
};
use mgdfis_core::Tensor;

use crate::naive::{add, conv2d, dft2, gelu, idft2_real, pixel_linear, resize_bilinear, silu};

pub fn dyt(x: &Tensor<f64>, p: &DyTParams<f64>) -> Tensor<f64> {
    Tensor::from_fn(x.dims(), |i| {
        p.gamma[i[1]] * (p.alpha * x.get(i)).tanh() + p.beta[i[1]]
    })
}

/// Token-statistics attention written out step by step, with explicit
/// `[batch][head][token][d]` arrays.
pub fn tssa(x: &Tensor<f64>, p: &TssaParams<f64>) -> Tensor<f64> {
    let [nb, c, h, w] = x.dims();
    let n = h * w;
    let (heads, d) = (p.heads, p.head_dim);
    let eps = 1e-8;

    // Projection: F[b][a][t][k] = Σ_c x[b, c, t] · Wqkv[c, a·D + k].
    let mut f = vec![vec![vec![vec![0.0; d]; n]; heads]; nb];
    for b in 0..nb {
        for t in 0..n {
            for a in 0..heads {
                for k in 0..d {
                    let mut s = 0.0;
                    for ch in 0..c {
                        s += x.get([b, ch, t / w, t % w]) * p.qkv.weight.get(ch, a * d + k);
                    }
                    f[b][a][t][k] = s;
                }
            }
        }
    }

    let mut out = Tensor::zeros(x.dims());
    for b in 0..nb {
        // Normalize then square, summed over D.
        let mut soms = vec![vec![0.0; heads]; n];
        for a in 0..heads {
            for t in 0..n {
                for k in 0..d {
                    let norm = match p.norm_axis {
                        NormAxis::Tokens => {
                            (0..n).map(|s| f[b][a][s][k].powi(2)).sum::<f64>().sqrt()
                        }
                        NormAxis::Features => {
                            (0..d).map(|j| f[b][a][t][j].powi(2)).sum::<f64>().sqrt()
                        }
                    };
                    soms[t][a] += (f[b][a][t][k] / (norm + eps)).powi(2);
                }
            }
        }
        // Softmax over heads.
        let mut pi = vec![vec![0.0; heads]; n];
        for t in 0..n {
            let z: f64 = soms[t].iter().map(|v| v.exp()).sum();
            for a in 0..heads {
                pi[t][a] = soms[t][a].exp() / z;
            }
        }
        // Dots and Attn per (head, d).
        let mut attn = vec![vec![0.0; d]; heads];
        for a in 0..heads {
            let total: f64 = (0..n).map(|t| pi[t][a]).sum();
            for k in 0..d {
                let mut dots = 0.0;
                for t in 0..n {
                    dots += pi[t][a] / (total + eps) * f[b][a][t][k].powi(2);
                }
                attn[a][k] = 1.0 / (1.0 + dots);
            }
        }
        // Output projection of −F · factor · Attn.
        for t in 0..n {
            for o in 0..c {
                let mut s = p.out.bias.get(o).copied().unwrap_or(0.0);
                for a in 0..heads {
                    let factor = match p.pi_mode {
                        PiMode::Constant => std::f64::consts::PI,
                        PiMode::Distribution => pi[t][a],
                    };
                    for k in 0..d {
                        s += -f[b][a][t][k] * factor * attn[a][k] * p.out.weight.get(a * d + k, o);
                    }
                }
                out.set([b, o, t / w, t % w], s);
            }
        }
    }
    out
}

pub fn mona_op(z: &Tensor<f64>, p: &MonaParams<f64>) -> Tensor<f64> {
    let c3 = conv2d(z, &p.dw3.weight, &p.dw3.bias, &p.dw3.spec);
    let c5 = conv2d(z, &p.dw5.weight, &p.dw5.bias, &p.dw5.spec);
    let c7 = conv2d(z, &p.dw7.weight, &p.dw7.bias, &p.dw7.spec);
    let inner = Tensor::from_fn(z.dims(), |i| {
        (c3.get(i) + c5.get(i) + c7.get(i)) / 3.0 + z.get(i)
    });
    add(z, &conv2d(&inner, &p.mix.weight, &p.mix.bias, &p.mix.spec))
}

pub fn xmona(x: &Tensor<f64>, p: &MonaParams<f64>) -> Tensor<f64> {
    let lin = pixel_linear(x, &p.xmona.weight, &p.xmona.bias);
    Tensor::from_fn(lin.dims(), |i| p.xmona_scale * lin.get(i))
}

pub fn mona(x: &Tensor<f64>, p: &MonaParams<f64>) -> Tensor<f64> {
    let down = conv2d(x, &p.down.weight, &p.down.bias, &p.down.spec);
    let op = mona_op(&down, p);
    let act = Tensor::from_fn(op.dims(), |i| gelu(op.get(i)));
    add(
        &xmona(x, p),
        &conv2d(&act, &p.up.weight, &p.up.bias, &p.up.spec),
    )
}

pub fn daff(x: &Tensor<f64>, p: &DaffParams<f64>) -> Tensor<f64> {
    mona(&add(x, &tssa(&dyt(x, &p.dyt), &p.tssa)), &p.mona)
}

/// Spectral feed-forward with every transform a direct DFT.
pub fn seff(x: &Tensor<f64>, p: &SeffParams<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    let split = conv2d(x, &p.split.weight, &p.split.bias, &p.split.spec);
    let half = |off: usize| {
        Tensor::from_fn([n, c, h, w], |[b, ch, y, xx]| {
            split.get([b, ch + off, y, xx])
        })
    };
    let r1 = conv2d(
        &half(0),
        &p.branch1.weight,
        &p.branch1.bias,
        &p.branch1.spec,
    );
    let r2 = conv2d(
        &half(c),
        &p.branch2.weight,
        &p.branch2.bias,
        &p.branch2.spec,
    );
    let filter = |r: &Tensor<f64>, wre: &Tensor<f64>, wim: &Tensor<f64>, bias: &[f64]| {
        let (ure, uim) = (resize_bilinear(wre, h, w), resize_bilinear(wim, h, w));
        let mut planes = dft2(r);
        for (i, plane) in planes.iter_mut().enumerate() {
            let ch = i % c;
            for (k, z) in plane.iter_mut().enumerate() {
                let (a, bb) = (
                    ure.get([0, ch, k / w, k % w]),
                    uim.get([0, ch, k / w, k % w]),
                );
                *z = (a * z.0 - bb * z.1 + bias[ch], a * z.1 + bb * z.0);
            }
        }
        idft2_real(&planes, [n, c, h, w])
    };
    let f1 = filter(&r1, &p.freq1.re, &p.freq1.im, &p.bias1);
    let f2 = filter(&r2, &p.freq2.re, &p.freq2.im, &p.bias2);
    let gated = Tensor::from_fn([n, c, h, w], |i| silu(f2.get(i)) * f1.get(i));
    conv2d(&gated, &p.merge.weight, &p.merge.bias, &p.merge.spec)
}

pub fn serr(d: &Tensor<f64>, p: &SerrParams<f64>) -> Tensor<f64> {
    mona(&add(d, &seff(&dyt(d, &p.dyt), &p.seff)), &p.mona)
}

pub fn ftssa(x: &Tensor<f64>, p: &FtssaParams<f64>) -> Tensor<f64> {
    serr(&daff(x, &p.daff), &p.serr)
}
