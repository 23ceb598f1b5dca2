#![allow(dead_code)]

use mgdfis_core::{grad_check, DifferentiableOp, GradCheckOptions, ParamSet};
use mgdfis_oracle::Fixture;

/// Weights uniform in `±GAIN/√fan_in`, matching the harness initializer.
pub const GAIN: f64 = 1.0;

/// Seeds per op in the gradient suites.
pub const SEEDS: u64 = 20;

pub fn random<P: ParamSet<f64>>(fx: &mut Fixture, mut p: P) -> P {
    fx.randomize(&mut p, GAIN, 0.3);
    p
}

/// Central differences against the analytic backward under a random
/// cotangent drawn from `seed`.
pub fn check<Op: DifferentiableOp<f64>>(seed: u64, op: &Op, x: &Op::Input, p: &Op::Params) {
    let dims = op.forward(x, p).unwrap().dims();
    let opts = GradCheckOptions {
        loss_weights: Some(Fixture::new(seed).tensor(dims, 1.0)),
        ..Default::default()
    };
    let r = grad_check(op, x, p, &opts);
    assert!(
        r.passed(),
        "{} failed: worst {:?}, failure {:?}",
        r.op,
        r.worst_leaf(),
        r.failure
    );
}
