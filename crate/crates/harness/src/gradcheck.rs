//! Gradient checks over every differentiable op at tiny shapes.
//!
//! Each case draws its shapes, input and parameters from a SplitMix64
//! stream seeded per run. Parameters start from their init rule; leaves
//! with a constant init are then jittered by up to ±0.3 so their
//! gradients are not checked only at the symmetric starting point. The
//! loss weights are drawn from the same stream.
//!
//! Ops that run FTSSA inside the DMM gate have parameter gradients near
//! 1e-10, where central differences at `eps = 1e-4` carry about 1e-12 of
//! rounding noise. Those cases accept absolute discrepancies below
//! [`GATE_NOISE_FLOOR`]; the report counts every element accepted that way.

use std::fmt::Write as _;

use mgdfis_core::diffops::*;
use mgdfis_core::dpam::{DpamParams, FusionWeights};
use mgdfis_core::ftssa::{
    mona::reduced_channels, DaffParams, DyTParams, FtssaParams, FtssaShape, MonaParams, PiMode,
    SeffParams, SerrParams, TssaParams,
};
use mgdfis_core::gdim::{AggregateParams, DmmParams, GdimParams, GmmParams};
use mgdfis_core::{
    grad_check, Activation, Conv, ConvSpec, DifferentiableOp, Dims, GradCheckOptions,
    GradCheckReport, Init, Linear, Matrix, Padding, ParamSet, Tensor,
};

use crate::config::RunConfig;
use crate::init::Stream;
use crate::threads::for_each_batch;

pub const DEFAULT_SEEDS: u64 = 20;
pub const MAX_SPATIAL: usize = 6;
pub const MAX_CHANNELS: usize = 4;
pub const GATE_NOISE_FLOOR: f64 = 1e-11;
const JITTER: f64 = 0.3;

type Runner = Box<dyn Fn(u64, f64) -> GradCheckReport + Send + Sync>;

/// A named op plus a recipe for its input and parameters.
pub struct Case {
    pub name: String,
    pub noise_floor: f64,
    run: Runner,
}

impl Case {
    pub fn new<Op, F>(name: impl Into<String>, op: Op, make: F) -> Self
    where
        Op: DifferentiableOp<f64> + Clone + Send + Sync + 'static,
        F: Fn(&mut Stream) -> (Op::Input, Op::Params) + Send + Sync + 'static,
    {
        Self::with_op(name, move |s| {
            let (x, p) = make(s);
            (op.clone(), x, p)
        })
    }

    /// Like [`Case::new`] for ops whose configuration is itself drawn.
    pub fn with_op<Op, F>(name: impl Into<String>, make: F) -> Self
    where
        Op: DifferentiableOp<f64> + 'static,
        F: Fn(&mut Stream) -> (Op, Op::Input, Op::Params) + Send + Sync + 'static,
    {
        let run = move |seed: u64, noise_floor: f64| {
            let mut s = Stream::new(seed);
            let (op, x, p) = make(&mut s);
            let loss_weights = op.forward(&x, &p).ok().map(|y| s.tensor(y.dims(), 1.0));
            let opts = GradCheckOptions {
                loss_weights,
                noise_floor,
                ..Default::default()
            };
            grad_check(&op, &x, &p, &opts)
        };
        Self {
            name: name.into(),
            noise_floor: 0.0,
            run: Box::new(run),
        }
    }

    pub fn with_noise_floor(mut self, floor: f64) -> Self {
        self.noise_floor = floor;
        self
    }

    pub fn run(&self, seed: u64) -> GradCheckReport {
        (self.run)(seed, self.noise_floor)
    }
}

/// Draws an integer in `lo..=hi`.
pub fn int(s: &mut Stream, lo: usize, hi: usize) -> usize {
    lo + (s.next_u64() % (hi - lo + 1) as u64) as usize
}

/// Fills `p` by its init rule, then jitters constant leaves.
pub fn fresh<P: ParamSet<f64>>(s: &mut Stream, mut p: P) -> P {
    s.fill(&mut p);
    p.visit_mut("", &mut |leaf| {
        if let Init::Constant(_) = leaf.init {
            leaf.data.iter_mut().for_each(|v| *v += s.uniform(JITTER));
        }
    });
    p
}

fn dims(s: &mut Stream, c: usize) -> Dims {
    [1, c, int(s, 2, MAX_SPATIAL), int(s, 2, MAX_SPATIAL)]
}

fn input(s: &mut Stream, c: usize, scale: f64) -> Tensor<f64> {
    let d = dims(s, c);
    s.tensor(d, scale)
}

fn shape(s: &mut Stream, c: usize, cfg: &RunConfig) -> FtssaShape {
    FtssaShape {
        channels: c,
        heads: int(s, 1, 2),
        head_dim: int(s, 1, 2),
        mona_ratio: cfg.mona_ratio.min(4),
        seff_base: int(s, 2, 4),
    }
}

fn tssa_params(s: &mut Stream, c: usize, mode: PiMode, cfg: &RunConfig) -> TssaParams<f64> {
    let mut p = TssaParams::zeros(c, int(s, 1, 2), int(s, 1, 2));
    p.pi_mode = mode;
    p.norm_axis = cfg.norm_axis;
    fresh(s, p)
}

fn ftssa_params(s: &mut Stream, sh: FtssaShape, cfg: &RunConfig) -> FtssaParams<f64> {
    let mut p = FtssaParams::zeros(sh);
    p.daff.tssa.pi_mode = cfg.pi_mode;
    p.daff.tssa.norm_axis = cfg.norm_axis;
    fresh(s, p)
}

fn conv_case(name: &str, spec: impl Fn(&mut Stream) -> ConvSpec + Send + Sync + 'static) -> Case {
    Case::with_op(format!("conv2d/{name}"), move |s| {
        let spec = spec(s);
        let x = input(s, spec.in_channels, 1.0);
        (Conv2dOp { spec }, x, fresh(s, Conv::zeros(spec)))
    })
}

fn conv_cases() -> Vec<Case> {
    vec![
        conv_case("3x3", |s| {
            ConvSpec::same(int(s, 1, 3), int(s, 1, 3), (3, 3))
        }),
        conv_case("depthwise_dilated", |s| {
            ConvSpec::depthwise(int(s, 1, 4), (3, 3))
                .with_dilation((2, 2))
                .with_same_padding()
        }),
        conv_case("4x6_same", |s| {
            ConvSpec::same(int(s, 1, 3), int(s, 1, 3), (4, 6))
        }),
        conv_case("grouped_strided", |_| {
            ConvSpec::new(4, 2, (2, 2))
                .with_groups(2)
                .with_stride((2, 2))
                .with_padding(Padding::uniform(1))
        }),
    ]
}

fn dmm_params(s: &mut Stream, c: usize, cfg: &RunConfig) -> DmmParams<f64> {
    let sh = shape(s, c, cfg);
    let mut p = DmmParams::zeros(sh, cfg.mlp_ratio.min(4));
    p.ftssa.daff.tssa.pi_mode = cfg.pi_mode;
    p.ftssa.daff.tssa.norm_axis = cfg.norm_axis;
    fresh(s, p)
}

pub fn dmm_case<Op>(name: &str, op: Op, cfg: &RunConfig) -> Case
where
    Op: DifferentiableOp<f64, Input = Tensor<f64>, Params = DmmParams<f64>>
        + Clone
        + Send
        + Sync
        + 'static,
{
    let cfg = cfg.clone();
    Case::new(name, op, move |s| {
        let c = int(s, 1, MAX_CHANNELS);
        let x = input(s, c, 1.0);
        (x, dmm_params(s, c, &cfg))
    })
}

/// Every differentiable op of every module.
pub fn cases(cfg: &RunConfig) -> Vec<Case> {
    let mut v = conv_cases();
    v.push(Case::new("linear", LinearOp, |s| {
        let (m, n, p) = (int(s, 1, 4), int(s, 1, 4), int(s, 1, 4));
        let x = Matrix::from_fn(m, n, |_, _| s.uniform(1.0));
        (x, fresh(s, Linear::zeros(n, p, true)))
    }));
    for axis in [1, 3] {
        v.push(Case::new(
            format!("softmax/axis{axis}"),
            SoftmaxOp { axis },
            |s| {
                let c = int(s, 1, MAX_CHANNELS);
                (input(s, c, 2.0), ())
            },
        ));
    }
    for (label, kind) in [
        ("tanh", Activation::Tanh),
        ("gelu", Activation::Gelu),
        ("silu", Activation::Silu),
        ("sigmoid", Activation::Sigmoid),
    ] {
        v.push(Case::new(
            format!("activation/{label}"),
            ActivationOp { kind },
            |s| {
                let c = int(s, 1, MAX_CHANNELS);
                (input(s, c, 2.0), ())
            },
        ));
    }
    v.push(Case::new("global_avg_pool", GapOp, |s| {
        let c = int(s, 1, MAX_CHANNELS);
        (input(s, c, 1.0), ())
    }));

    v.push(Case::new("dyt", DytOp, |s| {
        let c = int(s, 1, MAX_CHANNELS);
        (input(s, c, 1.0), fresh(s, DyTParams::new(c)))
    }));
    for (label, mode) in [
        ("constant", PiMode::Constant),
        ("distribution", PiMode::Distribution),
    ] {
        let cfg = cfg.clone();
        v.push(Case::new(format!("tssa/{label}"), TssaOp, move |s| {
            let c = int(s, 1, MAX_CHANNELS);
            let x = input(s, c, 1.0);
            (x, tssa_params(s, c, mode, &cfg))
        }));
    }
    let mona_input = |s: &mut Stream, cfg: &RunConfig| {
        let c = int(s, 1, MAX_CHANNELS);
        let x = input(s, c, 1.0);
        let p = fresh(
            s,
            MonaParams::zeros(c, reduced_channels(c, cfg.mona_ratio.min(4))),
        );
        (x, p)
    };
    {
        let cfg = cfg.clone();
        v.push(Case::new("mona_op", MonaOpOp, move |s| {
            let c = int(s, 1, MAX_CHANNELS);
            let r = reduced_channels(c, cfg.mona_ratio.min(4));
            let z = input(s, r, 1.0);
            (z, fresh(s, MonaParams::zeros(c, r)))
        }));
    }
    {
        let cfg = cfg.clone();
        v.push(Case::new("xmona", XmonaOp, move |s| mona_input(s, &cfg)));
    }
    {
        let cfg = cfg.clone();
        v.push(Case::new("mona", MonaOp, move |s| mona_input(s, &cfg)));
    }
    {
        let cfg = cfg.clone();
        v.push(Case::new("daff", DaffOp, move |s| {
            let c = int(s, 1, MAX_CHANNELS);
            let sh = shape(s, c, &cfg);
            let x = input(s, c, 1.0);
            let mut p = DaffParams::zeros(sh);
            p.tssa.pi_mode = cfg.pi_mode;
            p.tssa.norm_axis = cfg.norm_axis;
            (x, fresh(s, p))
        }));
    }
    v.push(Case::new("seff", SeffOp, |s| {
        let c = int(s, 1, MAX_CHANNELS);
        let base = int(s, 2, 4);
        let x = input(s, c, 1.0);
        (x, fresh(s, SeffParams::zeros(c, base)))
    }));
    {
        let cfg = cfg.clone();
        v.push(Case::new("serr", SerrOp, move |s| {
            let c = int(s, 1, MAX_CHANNELS);
            let sh = shape(s, c, &cfg);
            let x = input(s, c, 1.0);
            (x, fresh(s, SerrParams::zeros(sh)))
        }));
    }
    {
        let cfg = cfg.clone();
        v.push(Case::new("ftssa", FtssaOp, move |s| {
            let c = int(s, 1, MAX_CHANNELS);
            let sh = shape(s, c, &cfg);
            let x = input(s, c, 1.0);
            (x, ftssa_params(s, sh, &cfg))
        }));
    }

    v.push(Case::new("aggregate", AggregateOp, |s| {
        let c = int(s, 1, MAX_CHANNELS);
        let d1 = dims(s, c);
        let c2 = int(s, 1, MAX_CHANNELS);
        let d2 = dims(s, c2);
        let pair = Pair {
            first: s.tensor(d1, 1.0),
            second: s.tensor(d2, 1.0),
        };
        (pair, fresh(s, AggregateParams::zeros_for(d1, d2)))
    }));
    let gmm_shape = |s: &mut Stream| {
        let k = int(s, 1, 2);
        let c = k * int(s, 1, MAX_CHANNELS / k);
        (k, dims(s, c))
    };
    v.push(Case::new("gmm", GmmOp, move |s| {
        let (k, d) = gmm_shape(s);
        let x = s.tensor(d, 1.0);
        (
            x,
            fresh(
                s,
                GmmParams::zeros(d[1], d[2], d[3], k).expect("k divides c"),
            ),
        )
    }));
    v.push(dmm_case("dmm_directional", DmmDirectionalOp, cfg));
    v.push(dmm_case("dmm_attention", DmmAttentionOp, cfg).with_noise_floor(GATE_NOISE_FLOOR));
    v.push(dmm_case("dmm", DmmOp, cfg).with_noise_floor(GATE_NOISE_FLOOR));
    {
        let cfg = cfg.clone();
        v.push(
            Case::new("gdim", GdimOp, move |s| {
                let (k, d1) = gmm_shape(s);
                let c2 = int(s, 1, MAX_CHANNELS);
                let d2 = dims(s, c2);
                let pair = Pair {
                    first: s.tensor(d1, 1.0),
                    second: s.tensor(d2, 1.0),
                };
                let p = GdimParams {
                    agg: fresh(s, AggregateParams::zeros_for(d1, d2)),
                    gmm: fresh(
                        s,
                        GmmParams::zeros(d1[1], d1[2], d1[3], k).expect("k divides c"),
                    ),
                    dmm: dmm_params(s, d1[1], &cfg),
                };
                (pair, p)
            })
            .with_noise_floor(GATE_NOISE_FLOOR),
        );
    }
    v.push(Case::new("dpam", DpamOp, |s| {
        let c = int(s, 1, MAX_CHANNELS);
        let d = dims(s, c);
        let pair = Pair {
            first: s.tensor(d, 1.0),
            second: s.tensor(d, 1.0),
        };
        (pair, fresh(s, DpamParams::zeros(c)))
    }));
    v.push(Case::new("mgdfis_fuse", FuseOp, |s| {
        let c = int(s, 1, MAX_CHANNELS);
        let d1 = dims(s, c);
        let c2 = int(s, 1, MAX_CHANNELS);
        let d2 = dims(s, c2);
        let inputs = FuseInputs {
            amap: Tensor::from_fn(d1, |_| 0.5 + s.uniform(0.45)),
            f_hat: s.tensor(d1, 1.0),
            x1: s.tensor(d1, 1.0),
            x2: s.tensor(d2, 1.0),
        };
        let params = FuseParams {
            weights: fresh(s, FusionWeights::default()),
            agg: fresh(s, AggregateParams::zeros_for(d1, d2)),
        };
        (inputs, params)
    }));
    v
}

#[derive(Debug, Clone)]
pub struct OpResult {
    pub name: String,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub noise_floor: f64,
    /// Elements over `tol` accepted by the noise floor, over all seeds.
    pub noise_accepted: usize,
    /// Failing runs as `(seed, report)`.
    pub failures: Vec<(u64, GradCheckReport)>,
}

impl OpResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub tol: f64,
    pub ops: Vec<OpResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpResult::passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for op in &self.ops {
            let verdict = if op.passed() { "pass" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{verdict} {:<28} seeds={} max_rel_error={:.3e}",
                op.name, op.seeds, op.max_rel_error
            );
            if op.noise_floor > 0.0 {
                let _ = writeln!(
                    s,
                    "    {} elements over tol accepted with |analytic - numeric| <= {:e}",
                    op.noise_accepted, op.noise_floor
                );
            }
            for (seed, r) in &op.failures {
                let failing = r
                    .leaves
                    .iter()
                    .filter(|l| l.failing > 0)
                    .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
                match (&r.failure, failing.or(r.worst_leaf())) {
                    (Some(f), _) => {
                        let _ = writeln!(s, "    seed {seed}: {f}");
                    }
                    (None, Some(l)) => {
                        let _ = writeln!(
                            s,
                            "    seed {seed}: parameter {}[{}] analytic {:e} numeric {:e} rel {:.3e}",
                            l.name, l.worst_index, l.analytic_at_worst, l.numeric_at_worst, l.max_rel_error
                        );
                    }
                    (None, None) => {}
                }
            }
        }
        let failed = self.ops.iter().filter(|o| !o.passed()).count();
        let _ = writeln!(
            s,
            "{} ops, {} failed, tol {:e}",
            self.ops.len(),
            failed,
            self.tol
        );
        s
    }
}

/// Seed of run `i` of case `index` under base seed `base`.
pub fn run_seed(base: u64, index: usize, i: u64) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((index as u64) << 32) ^ i
}

/// Runs every case for `seeds` seeds, cases spread over `threads` workers.
pub fn run_cases(cases: &[Case], base_seed: u64, seeds: u64, threads: usize) -> SuiteReport {
    let ops = for_each_batch(cases.len(), threads, |ci| -> Result<OpResult, ()> {
        let case = &cases[ci];
        let mut result = OpResult {
            name: case.name.clone(),
            seeds,
            max_rel_error: 0.0,
            noise_floor: case.noise_floor,
            noise_accepted: 0,
            failures: Vec::new(),
        };
        for i in 0..seeds {
            let seed = run_seed(base_seed, ci, i);
            let r = case.run(seed);
            result.max_rel_error = result.max_rel_error.max(r.max_rel_error());
            result.noise_accepted += r.noise_accepted();
            if !r.passed() {
                result.failures.push((seed, r));
            }
        }
        Ok(result)
    })
    .expect("case runners are infallible");
    SuiteReport {
        tol: GradCheckOptions::<f64>::default().tol,
        ops,
    }
}

/// Every case at tiny shapes, `seeds` runs each.
pub fn gradcheck_all(cfg: &RunConfig, seeds: u64, threads: usize) -> SuiteReport {
    run_cases(&cases(cfg), cfg.seed, seeds, threads)
}
