//! Token-statistics self-attention.
//!
//! Each pixel is a token with `C` features. Tokens are projected to
//! `heads × head_dim` statistics `F`, squared-normalized moments are
//! summed over the head feature axis and soft-maxed across heads to give
//! a per-token head distribution `Π`. `Π` then weights the second moments
//! `F²` over all tokens, producing one `Dots` value per (head, feature),
//! and the gate `Attn = 1 / (1 + Dots)` rescales `-F`. Every step is a
//! sum or map over tokens, so cost is linear in the token count.

use crate::error::{Result, TensorError};
use crate::ops::{from_tokens, to_tokens};
use crate::params::{join, Linear, ParamMut, ParamRef, ParamSet};
use crate::tensor::{Matrix, Tensor};
use crate::Scalar;

/// Stabilizer added to the normalizer norm and to `ΣΠ`.
pub const TSSA_EPS: f64 = 1e-8;

/// Factor multiplying `-F · Attn` before the output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PiMode {
    /// The mathematical constant π.
    #[default]
    Constant,
    /// The per-token head distribution `Π`.
    Distribution,
}

/// Axis along which the statistics are L2-normalized before squaring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormAxis {
    /// Across tokens, per (head, feature).
    #[default]
    Tokens,
    /// Across the head feature axis, per (token, head). With this choice
    /// every per-head moment sum is ≈1 and `Π` is ≈uniform.
    Features,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TssaParams<T> {
    pub heads: usize,
    pub head_dim: usize,
    /// `C → heads·head_dim`, no bias.
    pub qkv: Linear<T>,
    /// `heads·head_dim → C`, with bias.
    pub out: Linear<T>,
    pub pi_mode: PiMode,
    pub norm_axis: NormAxis,
}

impl<T: Scalar> TssaParams<T> {
    pub fn zeros(channels: usize, heads: usize, head_dim: usize) -> Self {
        Self {
            heads,
            head_dim,
            qkv: Linear::zeros(channels, heads * head_dim, false),
            out: Linear::zeros(heads * head_dim, channels, true),
            pi_mode: PiMode::default(),
            norm_axis: NormAxis::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.qkv.inputs()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(TensorError::Config(
                "tssa needs heads >= 1 and head_dim >= 1".into(),
            ));
        }
        let inner = self.heads * self.head_dim;
        if self.qkv.outputs() != inner || self.out.inputs() != inner {
            return Err(TensorError::mismatch(
                "tssa",
                "head feature",
                inner,
                self.qkv.outputs(),
            ));
        }
        if self.qkv.inputs() != x.channels() || self.out.outputs() != x.channels() {
            return Err(TensorError::mismatch(
                "tssa",
                "channel",
                self.qkv.inputs(),
                x.channels(),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> ParamSet<T> for TssaParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Intermediate values of one forward pass. Statistic arrays are indexed
/// `[token][head·D + d]` like the projection, per-(token, head) arrays
/// `[token][head]`, per-(head, d) arrays `[batch][head·D + d]`.
#[derive(Debug, Clone)]
pub struct TssaTrace<T> {
    pub tokens: Matrix<T>,
    /// `F`, the projected statistics.
    pub stat: Matrix<T>,
    /// L2 norms used by the normalizer (layout depends on the axis).
    pub norms: Vec<T>,
    /// `Σ_d normalize(F)²`, per token and head.
    pub moments: Matrix<T>,
    /// `Π`, per token and head.
    pub pi: Matrix<T>,
    /// `ΣΠ` over tokens, per batch and head.
    pub pi_sum: Vec<T>,
    pub dots: Vec<T>,
    pub attn: Vec<T>,
    /// `-F · factor · Attn` before the output projection.
    pub mixed: Matrix<T>,
}

struct Geometry {
    batch: usize,
    n: usize,
    heads: usize,
    d: usize,
}

impl Geometry {
    fn of<T: Scalar>(x: &Tensor<T>, p: &TssaParams<T>) -> Self {
        Self {
            batch: x.batch(),
            n: x.plane_len(),
            heads: p.heads,
            d: p.head_dim,
        }
    }

    #[inline]
    fn inner(&self) -> usize {
        self.heads * self.d
    }

    #[inline]
    fn norm_index(&self, axis: NormAxis, b: usize, t: usize, h: usize, k: usize) -> usize {
        match axis {
            NormAxis::Tokens => (b * self.heads + h) * self.d + k,
            NormAxis::Features => t * self.heads + h,
        }
    }
}

pub fn tssa_trace<T: Scalar>(x: &Tensor<T>, p: &TssaParams<T>) -> Result<TssaTrace<T>> {
    p.check(x)?;
    let g = Geometry::of(x, p);
    let eps = T::lit(TSSA_EPS);
    let tokens = to_tokens(x);
    let stat = p.qkv.forward(&tokens)?;
    let inner = g.inner();

    let norms = {
        let mut sq = match p.norm_axis {
            NormAxis::Tokens => vec![T::zero(); g.batch * inner],
            NormAxis::Features => vec![T::zero(); g.batch * g.n * g.heads],
        };
        for b in 0..g.batch {
            for i in 0..g.n {
                let t = b * g.n + i;
                let row = stat.row(t);
                for h in 0..g.heads {
                    for k in 0..g.d {
                        let v = row[h * g.d + k];
                        sq[g.norm_index(p.norm_axis, b, t, h, k)] += v * v;
                    }
                }
            }
        }
        sq.into_iter().map(|s| s.sqrt()).collect::<Vec<_>>()
    };

    let rows = g.batch * g.n;
    let mut moments = Matrix::zeros(rows, g.heads);
    let mut pi = Matrix::zeros(rows, g.heads);
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            let row = stat.row(t);
            for h in 0..g.heads {
                let mut s = T::zero();
                for k in 0..g.d {
                    let u = row[h * g.d + k] / (norms[g.norm_index(p.norm_axis, b, t, h, k)] + eps);
                    s += u * u;
                }
                moments.set(t, h, s);
            }
            let m = moments
                .row(t)
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max);
            let prow = pi.row_mut(t);
            let mut z = T::zero();
            for (h, pv) in prow.iter_mut().enumerate() {
                *pv = (moments.get(t, h) - m).exp();
                z += *pv;
            }
            prow.iter_mut().for_each(|v| *v /= z);
        }
    }

    let mut pi_sum = vec![T::zero(); g.batch * g.heads];
    for b in 0..g.batch {
        for i in 0..g.n {
            for h in 0..g.heads {
                pi_sum[b * g.heads + h] += pi.get(b * g.n + i, h);
            }
        }
    }

    let mut dots = vec![T::zero(); g.batch * inner];
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            let row = stat.row(t);
            for h in 0..g.heads {
                let w = pi.get(t, h) / (pi_sum[b * g.heads + h] + eps);
                for k in 0..g.d {
                    let v = row[h * g.d + k];
                    dots[b * inner + h * g.d + k] += w * v * v;
                }
            }
        }
    }
    let attn: Vec<T> = dots.iter().map(|&d| T::one() / (T::one() + d)).collect();

    let mut mixed = Matrix::zeros(rows, inner);
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            for h in 0..g.heads {
                let factor = match p.pi_mode {
                    PiMode::Constant => T::PI(),
                    PiMode::Distribution => pi.get(t, h),
                };
                for k in 0..g.d {
                    let j = h * g.d + k;
                    mixed.set(t, j, -stat.get(t, j) * factor * attn[b * inner + j]);
                }
            }
        }
    }

    Ok(TssaTrace {
        tokens,
        stat,
        norms,
        moments,
        pi,
        pi_sum,
        dots,
        attn,
        mixed,
    })
}

pub fn tssa<T: Scalar>(x: &Tensor<T>, p: &TssaParams<T>) -> Result<Tensor<T>> {
    let trace = tssa_trace(x, p)?;
    from_tokens(&p.out.forward(&trace.mixed)?, x.dims())
}

pub fn tssa_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &TssaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, TssaParams<T>)> {
    x.same_dims(grad_out, "tssa_backward")?;
    let tr = tssa_trace(x, p)?;
    let g = Geometry::of(x, p);
    let eps = T::lit(TSSA_EPS);
    let inner = g.inner();
    let two = T::lit(2.0);

    let (g_mixed, g_out) = p.out.backward(&tr.mixed, &to_tokens(grad_out))?;

    let rows = g.batch * g.n;
    let mut g_stat = Matrix::zeros(rows, inner);
    let mut g_pi = Matrix::zeros(rows, g.heads);
    let mut g_attn = vec![T::zero(); g.batch * inner];

    // mixed = -F · factor · Attn
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            for h in 0..g.heads {
                let factor = match p.pi_mode {
                    PiMode::Constant => T::PI(),
                    PiMode::Distribution => tr.pi.get(t, h),
                };
                let mut g_factor = T::zero();
                for k in 0..g.d {
                    let j = h * g.d + k;
                    let (gm, f, a) = (g_mixed.get(t, j), tr.stat.get(t, j), tr.attn[b * inner + j]);
                    g_stat.set(t, j, -gm * factor * a);
                    g_attn[b * inner + j] -= gm * f * factor;
                    g_factor -= gm * f * a;
                }
                if p.pi_mode == PiMode::Distribution {
                    g_pi.set(t, h, g_factor);
                }
            }
        }
    }

    // Attn = 1 / (1 + Dots)
    let g_dots: Vec<T> = g_attn
        .iter()
        .zip(&tr.attn)
        .map(|(&ga, &a)| -ga * a * a)
        .collect();

    // Dots = Σ_t w·F², w = Π / (ΣΠ + eps)
    let mut g_pi_sum = vec![T::zero(); g.batch * g.heads];
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            for h in 0..g.heads {
                let denom = tr.pi_sum[b * g.heads + h] + eps;
                let w = tr.pi.get(t, h) / denom;
                let mut g_w = T::zero();
                for k in 0..g.d {
                    let j = h * g.d + k;
                    let (f, gd) = (tr.stat.get(t, j), g_dots[b * inner + j]);
                    g_w += gd * f * f;
                    g_stat.set(t, j, g_stat.get(t, j) + two * w * gd * f);
                }
                g_pi.set(t, h, g_pi.get(t, h) + g_w / denom);
                g_pi_sum[b * g.heads + h] -= g_w * tr.pi.get(t, h) / (denom * denom);
            }
        }
    }
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            for h in 0..g.heads {
                g_pi.set(t, h, g_pi.get(t, h) + g_pi_sum[b * g.heads + h]);
            }
        }
    }

    // Π = softmax over heads of the moments; moments = Σ_d u², u = F / (‖·‖ + eps)
    let mut g_norm = vec![T::zero(); tr.norms.len()];
    let mut g_u = Matrix::zeros(rows, inner);
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            let dot: T = (0..g.heads).map(|h| tr.pi.get(t, h) * g_pi.get(t, h)).sum();
            for h in 0..g.heads {
                let g_moment = tr.pi.get(t, h) * (g_pi.get(t, h) - dot);
                for k in 0..g.d {
                    let j = h * g.d + k;
                    let ni = g.norm_index(p.norm_axis, b, t, h, k);
                    let denom = tr.norms[ni] + eps;
                    let f = tr.stat.get(t, j);
                    let gu = two * (f / denom) * g_moment;
                    g_u.set(t, j, gu);
                    g_stat.set(t, j, g_stat.get(t, j) + gu / denom);
                    g_norm[ni] -= gu * f / (denom * denom);
                }
            }
        }
    }
    for b in 0..g.batch {
        for i in 0..g.n {
            let t = b * g.n + i;
            for h in 0..g.heads {
                for k in 0..g.d {
                    let j = h * g.d + k;
                    let ni = g.norm_index(p.norm_axis, b, t, h, k);
                    let norm = tr.norms[ni];
                    if norm > T::zero() {
                        g_stat.set(
                            t,
                            j,
                            g_stat.get(t, j) + g_norm[ni] * tr.stat.get(t, j) / norm,
                        );
                    }
                }
            }
        }
    }

    let (g_tokens, g_qkv) = p.qkv.backward(&tr.tokens, &g_stat)?;
    let grads = TssaParams {
        heads: p.heads,
        head_dim: p.head_dim,
        qkv: g_qkv,
        out: g_out,
        pi_mode: p.pi_mode,
        norm_axis: p.norm_axis,
    };
    Ok((from_tokens(&g_tokens, x.dims())?, grads))
}
