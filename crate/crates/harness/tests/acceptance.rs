//! Acceptance criteria 1–7, one line each. Exits non-zero when any fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mgdfis_core::dpam::{dpam, DpamParams};
use mgdfis_core::fft::{fft2, ifft2};
use mgdfis_core::ftssa::tssa::tssa_trace;
use mgdfis_core::ftssa::{
    dyt, seff, tssa, DyTParams, FtssaShape, NormAxis, PiMode, SeffParams, TssaParams,
};
use mgdfis_core::gdim::{dmm, gmm, DmmParams, GmmParams};
use mgdfis_core::{ParamSet, Tensor};
use mgdfis_harness::bench::{bench_tssa, format_table, DEFAULT_TOKENS};
use mgdfis_harness::flops::ladder;
use mgdfis_harness::gradcheck::{gradcheck_all, DEFAULT_SEEDS};
use mgdfis_harness::run::{deterministic_part, run};
use mgdfis_harness::threads::thread_cap;
use mgdfis_harness::{RunConfig, Stage};
use mgdfis_oracle::{dpam as odpam, ftssa as oftssa, gdim as ogdim, naive, Fixture};

const ORACLE_TOL: f64 = 1e-9;
const ORACLE_INSTANCES: usize = 50;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const TSSA_MAX_RATIO: f64 = 2.6;
const QUADRATIC_MIN_RATIO: f64 = 3.4;
const FUZZ: usize = 1000;
const PI_TOL: f64 = 1e-6;
const FFT_TOL: f64 = 1e-6;
const DFT_TOL: f64 = 1e-9;
const RUN_BUDGET: Duration = Duration::from_secs(10);

type Outcome = Result<String, String>;
type OracleCase = Box<dyn FnMut(&mut Fixture) -> Result<f64, String>>;
type Criterion = (&'static str, fn() -> Outcome);

fn random<P: ParamSet<f64>>(fx: &mut Fixture, mut p: P) -> P {
    fx.randomize(&mut p, 1.0, 0.3);
    p
}

fn shape(fx: &mut Fixture, c: usize) -> FtssaShape {
    FtssaShape {
        channels: c,
        heads: fx.int(1, 2),
        head_dim: fx.int(1, 4),
        mona_ratio: 4,
        seff_base: fx.pick(&[2, 4, 8]),
    }
}

fn tssa_params(fx: &mut Fixture, c: usize) -> TssaParams<f64> {
    let s = shape(fx, c);
    let mut p = random(fx, TssaParams::zeros(c, s.heads, s.head_dim));
    p.pi_mode = fx.pick(&[PiMode::Constant, PiMode::Distribution]);
    p.norm_axis = fx.pick(&[NormAxis::Tokens, NormAxis::Features]);
    p
}

/// Batch ≤ 2, every other extent in `1..=8`.
fn tiny(fx: &mut Fixture, c: usize) -> [usize; 4] {
    [fx.int(1, 2), c, fx.int(1, 8), fx.int(1, 8)]
}

fn worst(got: &Tensor<f64>, want: &Tensor<f64>) -> Result<f64, String> {
    got.max_abs_diff(want).map_err(|e| e.to_string())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut fx = Fixture::new(0xacc1);
    let mut report = Vec::new();
    let mut cases: Vec<(&str, OracleCase)> = vec![
        (
            "tssa",
            Box::new(|fx| {
                let c = fx.int(1, 8);
                let p = tssa_params(fx, c);
                let d = tiny(fx, c);
                let x = fx.tensor(d, 2.0);
                worst(
                    &tssa(&x, &p).map_err(|e| e.to_string())?,
                    &oftssa::tssa(&x, &p),
                )
            }),
        ),
        (
            "gmm",
            Box::new(|fx| {
                let k = fx.pick(&[1, 2, 4]);
                let c = k * fx.int(1, 8 / k);
                let d = tiny(fx, c);
                let p = random(
                    fx,
                    GmmParams::zeros(c, d[2], d[3], k).map_err(|e| e.to_string())?,
                );
                let x = fx.tensor(d, 1.0);
                worst(
                    &gmm(&x, &p).map_err(|e| e.to_string())?,
                    &ogdim::gmm(&x, &p),
                )
            }),
        ),
        (
            "dmm",
            Box::new(|fx| {
                let c = fx.int(1, 8);
                let s = shape(fx, c);
                let p = random(fx, DmmParams::zeros(s, 4));
                let d = tiny(fx, c);
                let x = fx.tensor(d, 1.0);
                worst(
                    &dmm(&x, &p).map_err(|e| e.to_string())?,
                    &ogdim::dmm(&x, &p),
                )
            }),
        ),
        (
            "seff",
            Box::new(|fx| {
                let c = fx.int(1, 8);
                let base = fx.pick(&[2, 4, 8]);
                let p = random(fx, SeffParams::zeros(c, base));
                let d = tiny(fx, c);
                let x = fx.tensor(d, 1.0);
                worst(
                    &seff(&x, &p).map_err(|e| e.to_string())?,
                    &oftssa::seff(&x, &p),
                )
            }),
        ),
        (
            "dpam",
            Box::new(|fx| {
                let c = fx.int(1, 8);
                let d = tiny(fx, c);
                let p = random(fx, DpamParams::zeros(c));
                let (a, b) = (fx.tensor(d, 1.0), fx.tensor(d, 1.0));
                worst(
                    &dpam(&a, &b, &p).map_err(|e| e.to_string())?,
                    &odpam::dpam(&a, &b, &p),
                )
            }),
        ),
    ];
    let mut ok = true;
    for (name, case) in cases.iter_mut() {
        let mut max = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let d = case(&mut fx).map_err(|e| format!("{name} instance {i}: {e}"))?;
            max = max.max(d);
        }
        ok &= max <= ORACLE_TOL;
        report.push(format!("{name} {max:.1e}"));
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{} instances each, max abs diff {} (tol {ORACLE_TOL:e}), {:.2} s",
        ORACLE_INSTANCES,
        report.join(", "),
        elapsed.as_secs_f64()
    );
    if ok && elapsed < ORACLE_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = gradcheck_all(&RunConfig::default(), DEFAULT_SEEDS, thread_cap());
    let elapsed = start.elapsed();
    let worst = report
        .ops
        .iter()
        .map(|o| o.max_rel_error)
        .fold(0.0, f64::max);
    let noise: usize = report.ops.iter().map(|o| o.noise_accepted).sum();
    let failed: Vec<&str> = report
        .ops
        .iter()
        .filter(|o| !o.passed())
        .map(|o| o.name.as_str())
        .collect();
    let detail = format!(
        "{} ops x {} seeds, eps 1e-4, tol {:e}, max rel error {worst:.3e}, {noise} gate elements within the noise floor, failed [{}], {:.1} s",
        report.ops.len(),
        DEFAULT_SEEDS,
        report.tol,
        failed.join(", "),
        elapsed.as_secs_f64()
    );
    if report.passed() && elapsed < GRAD_BUDGET {
        Ok(detail)
    } else {
        Err(format!("{detail}\n{}", report.to_text()))
    }
}

fn tssa_complexity() -> Outcome {
    let rows = bench_tssa(&RunConfig::default(), &DEFAULT_TOKENS).map_err(|e| e.to_string())?;
    let tssa: Vec<f64> = rows.iter().filter_map(|r| r.tssa_ratio).collect();
    let quad: Vec<f64> = rows.iter().filter_map(|r| r.quadratic_ratio).collect();
    let ok =
        tssa.iter().all(|&r| r <= TSSA_MAX_RATIO) && quad.iter().all(|&r| r >= QUADRATIC_MIN_RATIO);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|r| format!("{r:.2}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let detail = format!(
        "per-doubling ratios tssa [{}] (<= {TSSA_MAX_RATIO}), quadratic [{}] (>= {QUADRATIC_MIN_RATIO})",
        fmt(&tssa),
        fmt(&quad)
    );
    if ok {
        Ok(detail)
    } else {
        Err(format!("{detail}\n{}", format_table(&rows)))
    }
}

fn range_invariants() -> Outcome {
    let mut fx = Fixture::new(0xacc4);
    let (mut pi_err, mut attn_min, mut attn_max) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..FUZZ {
        let c = fx.int(1, 6);
        let p = tssa_params(&mut fx, c);
        let scale = fx.pick(&[0.01, 1.0, 10.0, 100.0]);
        let d = tiny(&mut fx, c);
        let x = fx.tensor(d, scale);
        let tr = tssa_trace(&x, &p).map_err(|e| e.to_string())?;
        for t in 0..tr.pi.rows() {
            pi_err = pi_err.max((tr.pi.row(t).iter().sum::<f64>() - 1.0).abs());
        }
        for &a in &tr.attn {
            attn_min = attn_min.min(a);
            attn_max = attn_max.max(a);
        }
    }
    let (mut amap_min, mut amap_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..FUZZ {
        let c = fx.int(1, 6);
        let d = tiny(&mut fx, c);
        let p = random(&mut fx, DpamParams::zeros(c));
        let scale = fx.pick(&[0.1, 1.0, 5.0]);
        let (a, b) = (fx.tensor(d, scale), fx.tensor(d, scale));
        let m = dpam(&a, &b, &p).map_err(|e| e.to_string())?;
        amap_min = amap_min.min(m.min());
        amap_max = amap_max.max(m.max());
    }
    let mut dyt_excess = f64::NEG_INFINITY;
    for _ in 0..FUZZ {
        let c = fx.int(1, 6);
        let mut p = DyTParams::new(c);
        p.alpha = fx.uniform(-5.0, 5.0);
        p.gamma = (0..c).map(|_| fx.uniform(-3.0, 3.0)).collect();
        p.beta = (0..c).map(|_| fx.uniform(-3.0, 3.0)).collect();
        let d = tiny(&mut fx, c);
        let x = fx.tensor(d, 100.0);
        let y = dyt(&x, &p).map_err(|e| e.to_string())?;
        let n = y.batch();
        for b in 0..n {
            for ch in 0..c {
                for &v in y.plane(b, ch) {
                    dyt_excess = dyt_excess.max((v - p.beta[ch]).abs() - p.gamma[ch].abs());
                }
            }
        }
    }
    let ok = pi_err <= PI_TOL
        && attn_min > 0.0
        && attn_max <= 1.0
        && amap_min > 0.0
        && amap_max < 1.0
        && dyt_excess <= 1e-12;
    let detail = format!(
        "{FUZZ} inputs each: |sum pi - 1| <= {pi_err:.1e}, attn in [{attn_min:.3e}, {attn_max}], amap in [{amap_min:.3e}, {amap_max:.6}], dyt |y - beta| - |gamma| <= {dyt_excess:.1e}"
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fft_correctness() -> Outcome {
    let mut fx = Fixture::new(0xacc5);
    let (mut round_trip, mut parseval, mut dft) = (0.0f64, 0.0f64, 0.0f64);
    for h in 1..=16 {
        for w in 1..=16 {
            let x = fx.tensor([1, 2, h, w], 1.0);
            let spec = fft2(&x);
            let back = ifft2(&spec);
            let norm = x.data().iter().map(|v| v * v).sum::<f64>();
            let err = back
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            round_trip = round_trip.max((err / norm).sqrt());
            let energy = spec.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (h * w) as f64;
            parseval = parseval.max((energy - norm).abs() / norm);
            if h <= 8 && w <= 8 {
                let want = naive::dft2(&x).concat();
                for (z, (re, im)) in spec.data().iter().zip(&want) {
                    dft = dft.max((z.re - re).abs()).max((z.im - im).abs());
                }
            }
        }
    }
    let detail = format!(
        "sizes 1..16 squared: round trip {round_trip:.1e}, parseval {parseval:.1e} (tol {FFT_TOL:e}); naive dft up to 8x8 {dft:.1e} (tol {DFT_TOL:e})"
    );
    if round_trip <= FFT_TOL && parseval <= FFT_TOL && dft <= DFT_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn flop_monotonicity() -> Outcome {
    let steps = ladder(&RunConfig::default()).map_err(|e| e.to_string())?;
    let ok = steps.windows(2).all(|w| w[0].1 < w[1].1);
    let detail = steps
        .iter()
        .map(|(level, total)| format!("{} {:.3} GFLOPs", level.name(), *total as f64 / 1e9))
        .collect::<Vec<_>>()
        .join(" < ");
    if ok {
        Ok(detail)
    } else {
        Err(format!("not strictly increasing: {detail}"))
    }
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    let mut times = Vec::new();
    for i in 0..2 {
        let cfg = RunConfig {
            stage: Stage::Full,
            f1: [1, 64, 80, 80],
            f2: [1, 64, 40, 40],
            out: dir.path().join(format!("run{i}")),
            ..RunConfig::default()
        };
        let start = Instant::now();
        let report = run(&cfg).map_err(|e| e.to_string())?;
        times.push(start.elapsed());
        runs.push(report);
    }
    let out_dims = runs[0]
        .outputs
        .iter()
        .find(|(name, _)| *name == "out")
        .map(|(_, t)| t.dims())
        .ok_or("no `out` output")?;
    let mut identical =
        deterministic_part(&runs[0].summary) == deterministic_part(&runs[1].summary);
    for (a, b) in runs[0].files.iter().zip(&runs[1].files) {
        if a.extension().is_some_and(|e| e == "mgdt") {
            identical &= fs::read(a).map_err(|e| e.to_string())?
                == fs::read(b).map_err(|e| e.to_string())?;
        }
    }
    let slowest = times.iter().max().copied().unwrap_or_default();
    let detail = format!(
        "out {:?}, byte-identical {identical}, slowest run {:.2} s (limit {} s)",
        out_dims,
        slowest.as_secs_f64(),
        RUN_BUDGET.as_secs()
    );
    if out_dims == [1, 64, 80, 80] && identical && slowest < RUN_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("oracle equivalence", oracle_equivalence),
        ("gradient suite", gradient_suite),
        ("tssa complexity", tssa_complexity),
        ("range invariants", range_invariants),
        ("fft correctness", fft_correctness),
        ("flop monotonicity", flop_monotonicity),
        ("end-to-end contract", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
