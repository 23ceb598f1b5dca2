//! Token-count scaling of TSSA against a quadratic softmax attention.

use std::hint::black_box;
use std::time::Instant;

use mgdfis_core::ftssa::{tssa, TssaParams};
use mgdfis_core::ops::{from_tokens, to_tokens};
use mgdfis_core::{Matrix, Result, Tensor};

use crate::config::RunConfig;
use crate::init::Stream;

pub const REPS: usize = 9;
pub const WARMUP: usize = 2;
pub const DEFAULT_TOKENS: [usize; 3] = [1024, 4096, 16384];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub tokens: usize,
    pub tssa_ms: f64,
    pub quadratic_ms: f64,
    /// Time growth per doubling of the token count relative to the
    /// previous row; `None` on the first row.
    pub tssa_ratio: Option<f64>,
    pub quadratic_ratio: Option<f64>,
}

/// Plain scaled dot-product attention over the same projected statistics
/// TSSA uses: per head `softmax(F Fᵀ/√d) F`, then the output projection.
/// Memory stays linear; time is quadratic in the token count.
pub fn quadratic_attention(x: &Tensor<f64>, p: &TssaParams<f64>) -> Result<Tensor<f64>> {
    let tokens = to_tokens(x);
    let stat = p.qkv.forward(&tokens)?;
    let (n, d, heads) = (stat.rows(), p.head_dim, p.heads);
    let inner = heads * d;
    let scale = 1.0 / (d as f64).sqrt();
    let mut mixed = Matrix::zeros(n, inner);
    let mut head = vec![0.0; n * d];
    let mut scores = vec![0.0; n];
    let mut acc = vec![0.0; d];
    for h in 0..heads {
        for i in 0..n {
            head[i * d..(i + 1) * d].copy_from_slice(&stat.row(i)[h * d..(h + 1) * d]);
        }
        for i in 0..n {
            let q = &head[i * d..(i + 1) * d];
            let mut max = f64::NEG_INFINITY;
            for (s, k) in scores.iter_mut().zip(head.chunks_exact(d)) {
                *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                max = max.max(*s);
            }
            let mut z = 0.0;
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (s, v) in scores.iter().zip(head.chunks_exact(d)) {
                let e = (s - max).exp();
                z += e;
                acc.iter_mut().zip(v).for_each(|(a, v)| *a += e * v);
            }
            for (k, a) in acc.iter().enumerate() {
                mixed.set(i, h * d + k, a / z);
            }
        }
    }
    from_tokens(&p.out.forward(&mixed)?, x.dims())
}

/// `h × w = n` with `h` the largest divisor not above `√n`.
pub fn token_plane(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && !n.is_multiple_of(h) {
        h -= 1;
    }
    let h = h.max(1);
    (h, n / h)
}

/// Shortest wall time of one timed repetition; fast ops are called
/// repeatedly inside a repetition to reach it.
pub const MIN_REP_MS: f64 = 50.0;

/// Median per-call wall time in milliseconds over [`REPS`] timed
/// repetitions after [`WARMUP`] discarded ones. Each repetition makes
/// enough calls to last at least [`MIN_REP_MS`].
pub fn median_ms(mut f: impl FnMut()) -> f64 {
    let mut slowest_warmup = 0.0f64;
    for _ in 0..WARMUP {
        let t = Instant::now();
        f();
        slowest_warmup = slowest_warmup.max(t.elapsed().as_secs_f64() * 1e3);
    }
    let calls = (MIN_REP_MS / slowest_warmup.max(1e-6)).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..REPS)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..calls {
                f();
            }
            t.elapsed().as_secs_f64() * 1e3 / calls as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[REPS / 2]
}

/// `(t / t_prev)^(1 / log₂(n / n_prev))`.
pub fn per_doubling(t_prev: f64, t: f64, n_prev: usize, n: usize) -> f64 {
    let doublings = (n as f64 / n_prev as f64).log2();
    (t / t_prev).powf(1.0 / doublings)
}

/// Times TSSA and the quadratic baseline at each token count on the
/// calling thread. Both see the same seeded input and parameters, sized
/// from `cfg` (`f1` channels, `heads`, `head_dim`).
pub fn bench_tssa(cfg: &RunConfig, token_counts: &[usize]) -> Result<Vec<BenchRow>> {
    let c = cfg.f1[1];
    let mut stream = Stream::new(cfg.seed);
    let mut p = TssaParams::zeros(c, cfg.heads, cfg.head_dim);
    p.pi_mode = cfg.pi_mode;
    p.norm_axis = cfg.norm_axis;
    stream.fill(&mut p);

    let mut rows: Vec<BenchRow> = Vec::with_capacity(token_counts.len());
    for &n in token_counts {
        let (h, w) = token_plane(n);
        let x = stream.tensor([1, c, h, w], 1.0);
        tssa(&x, &p)?;
        quadratic_attention(&x, &p)?;
        let tssa_ms = median_ms(|| {
            black_box(tssa(black_box(&x), &p).ok());
        });
        let quadratic_ms = median_ms(|| {
            black_box(quadratic_attention(black_box(&x), &p).ok());
        });
        let (tssa_ratio, quadratic_ratio) = match rows.last() {
            Some(prev) => (
                Some(per_doubling(prev.tssa_ms, tssa_ms, prev.tokens, n)),
                Some(per_doubling(
                    prev.quadratic_ms,
                    quadratic_ms,
                    prev.tokens,
                    n,
                )),
            ),
            None => (None, None),
        };
        rows.push(BenchRow {
            tokens: n,
            tssa_ms,
            quadratic_ms,
            tssa_ratio,
            quadratic_ratio,
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let ratio = |r: Option<f64>| r.map_or_else(String::new, |v| format!("{v:.3}"));
    let mut s = format!(
        "{:>8} {:>12} {:>8} {:>14} {:>8}\n",
        "N", "tssa_ms", "ratio", "quadratic_ms", "ratio"
    );
    for r in rows {
        s += &format!(
            "{:>8} {:>12.4} {:>8} {:>14.4} {:>8}\n",
            r.tokens,
            r.tssa_ms,
            ratio(r.tssa_ratio),
            r.quadratic_ms,
            ratio(r.quadratic_ratio)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planes_cover_the_token_count() {
        assert_eq!(token_plane(1024), (32, 32));
        assert_eq!(token_plane(16384), (128, 128));
        assert_eq!(token_plane(13), (1, 13));
        assert_eq!(token_plane(12), (3, 4));
        assert_eq!(token_plane(1), (1, 1));
    }

    #[test]
    fn per_doubling_normalizes_the_step() {
        assert!((per_doubling(1.0, 16.0, 1024, 4096) - 4.0).abs() < 1e-12);
        assert!((per_doubling(1.0, 2.0, 10, 20) - 2.0).abs() < 1e-12);
    }
}
