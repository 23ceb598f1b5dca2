//! Central-difference gradient checking for ops with hand-written
//! backward passes.
//!
//! The scalar loss is `Σ wᵢ·yᵢ` over the op output, with `w ≡ 1` by
//! default (plain sum of outputs). Every scalar of every input and
//! parameter leaf is perturbed by `±eps`, and the numeric derivative is
//! compared with the analytic one using relative error
//! `|a − n| / max(|a|, |n|, 1e-8)`. An element fails when that exceeds
//! `tol` and its absolute discrepancy also exceeds `noise_floor`, which is
//! zero unless set.

use std::fmt;

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::Scalar;

/// An op with an analytic vector-Jacobian product.
///
/// Inputs and parameters are both [`ParamSet`]s so that the checker can
/// perturb either; multi-input ops bundle their inputs in a record.
pub trait DifferentiableOp<T: Scalar> {
    type Input: ParamSet<T> + Clone;
    type Params: ParamSet<T> + Clone;

    fn name(&self) -> String;

    fn forward(&self, input: &Self::Input, params: &Self::Params) -> Result<Tensor<T>>;

    /// Gradients of `Σ grad_out ⊙ forward(input, params)`.
    fn backward(
        &self,
        input: &Self::Input,
        params: &Self::Params,
        grad_out: &Tensor<T>,
    ) -> Result<(Self::Input, Self::Params)>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions<T> {
    pub eps: f64,
    pub tol: f64,
    /// Absolute discrepancy always accepted, for gradients so small that
    /// `tol·1e-8` sits below the rounding noise of the forward pass.
    pub noise_floor: f64,
    /// Loss weights; `None` means the plain sum of outputs.
    pub loss_weights: Option<Tensor<T>>,
}

impl<T> Default for GradCheckOptions<T> {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol: 1e-4,
            noise_floor: 0.0,
            loss_weights: None,
        }
    }
}

/// Relative error with the `1e-8` denominator floor.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafReport {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Elements over `tol` whose discrepancy exceeds the noise floor.
    pub failing: usize,
    /// Elements over `tol` accepted by the noise floor.
    pub noise_accepted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradCheckFailure {
    NonFinite { parameter: String, index: usize },
    Op(TensorError),
}

impl fmt::Display for GradCheckFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradCheckFailure::NonFinite { parameter, index } => {
                write!(f, "non-finite gradient for {parameter}[{index}]")
            }
            GradCheckFailure::Op(e) => write!(f, "op failed: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub tol: f64,
    pub leaves: Vec<LeafReport>,
    pub failure: Option<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves
            .iter()
            .map(|l| l.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst_leaf(&self) -> Option<&LeafReport> {
        self.leaves
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.leaves.iter().all(|l| l.failing == 0)
    }

    pub fn noise_accepted(&self) -> usize {
        self.leaves.iter().map(|l| l.noise_accepted).sum()
    }
}

/// `Σ w·(plus − minus)`. Differencing element by element before summing
/// keeps the cancellation inside each output instead of in the loss total.
fn loss_delta<T: Scalar>(plus: &Tensor<T>, minus: &Tensor<T>, weights: Option<&Tensor<T>>) -> f64 {
    let diffs = plus
        .data()
        .iter()
        .zip(minus.data())
        .map(|(a, b)| a.as_f64() - b.as_f64());
    match weights {
        None => diffs.sum(),
        Some(w) => diffs.zip(w.data()).map(|(d, w)| d * w.as_f64()).sum(),
    }
}

fn flatten<T: Scalar, P: ParamSet<T>>(p: &P, prefix: &str) -> Vec<(String, Vec<T>)> {
    let mut leaves = Vec::new();
    p.visit(prefix, &mut |r| {
        leaves.push((r.name.to_string(), r.data.to_vec()))
    });
    leaves
}

/// Overwrites scalar `index` of leaf number `leaf`, returning the old value.
fn poke<T: Scalar, P: ParamSet<T>>(p: &mut P, leaf: usize, index: usize, value: T) -> T {
    let mut i = 0;
    let mut old = value;
    p.visit_mut("", &mut |m| {
        if i == leaf {
            old = std::mem::replace(&mut m.data[index], value);
        }
        i += 1;
    });
    old
}

fn value_at<T: Scalar, P: ParamSet<T>>(p: &P, leaf: usize, index: usize) -> T {
    let mut i = 0;
    let mut out = T::zero();
    p.visit("", &mut |r| {
        if i == leaf {
            out = r.data[index];
        }
        i += 1;
    });
    out
}

#[derive(Clone, Copy)]
enum Target {
    Input,
    Params,
}

pub fn grad_check<T, Op>(
    op: &Op,
    input: &Op::Input,
    params: &Op::Params,
    opts: &GradCheckOptions<T>,
) -> GradCheckReport
where
    T: Scalar,
    Op: DifferentiableOp<T>,
{
    let mut report = GradCheckReport {
        op: op.name(),
        tol: opts.tol,
        leaves: Vec::new(),
        failure: None,
    };
    let run = || -> std::result::Result<Vec<LeafReport>, GradCheckFailure> {
        let y = op.forward(input, params).map_err(GradCheckFailure::Op)?;
        let cotangent = match &opts.loss_weights {
            Some(w) => {
                y.same_dims(w, "grad_check").map_err(GradCheckFailure::Op)?;
                w.clone()
            }
            None => Tensor::ones(y.dims()),
        };
        let (gin, gpar) = op
            .backward(input, params, &cotangent)
            .map_err(GradCheckFailure::Op)?;
        let weights = opts.loss_weights.as_ref();
        let eps = T::lit(opts.eps);
        let mut leaves = Vec::new();
        for (target, analytic) in [
            (Target::Input, flatten(&gin, "input")),
            (Target::Params, flatten(&gpar, "")),
        ] {
            let mut x = input.clone();
            let mut p = params.clone();
            for (li, (name, grads)) in analytic.into_iter().enumerate() {
                let mut leaf = LeafReport {
                    name: name.clone(),
                    len: grads.len(),
                    max_rel_error: 0.0,
                    worst_index: 0,
                    analytic_at_worst: 0.0,
                    numeric_at_worst: 0.0,
                    failing: 0,
                    noise_accepted: 0,
                };
                for (k, a) in grads.into_iter().enumerate() {
                    let original = match target {
                        Target::Input => value_at(&x, li, k),
                        Target::Params => value_at(&p, li, k),
                    };
                    let mut eval = |value: T| -> std::result::Result<Tensor<T>, GradCheckFailure> {
                        let set = |x: &mut Op::Input, p: &mut Op::Params, v: T| match target {
                            Target::Input => poke(x, li, k, v),
                            Target::Params => poke(p, li, k, v),
                        };
                        set(&mut x, &mut p, value);
                        let out = op.forward(&x, &p).map_err(GradCheckFailure::Op);
                        set(&mut x, &mut p, original);
                        out
                    };
                    let (hi, lo) = (original + eps, original - eps);
                    let plus = eval(hi)?;
                    let minus = eval(lo)?;
                    // Divide by the step actually taken after rounding.
                    let numeric = loss_delta(&plus, &minus, weights) / (hi - lo).as_f64();
                    let a = a.as_f64();
                    if !a.is_finite() || !numeric.is_finite() {
                        return Err(GradCheckFailure::NonFinite {
                            parameter: name,
                            index: k,
                        });
                    }
                    let rel = relative_error(a, numeric);
                    if rel > opts.tol {
                        if (a - numeric).abs() > opts.noise_floor {
                            leaf.failing += 1;
                        } else {
                            leaf.noise_accepted += 1;
                        }
                    }
                    if rel > leaf.max_rel_error || k == 0 {
                        leaf.max_rel_error = leaf.max_rel_error.max(rel);
                        leaf.worst_index = k;
                        leaf.analytic_at_worst = a;
                        leaf.numeric_at_worst = numeric;
                    }
                }
                leaves.push(leaf);
            }
        }
        Ok(leaves)
    };
    match run() {
        Ok(leaves) => report.leaves = leaves,
        Err(f) => report.failure = Some(f),
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant;

    impl DifferentiableOp<f64> for Constant {
        type Input = Tensor<f64>;
        type Params = Tensor<f64>;

        fn name(&self) -> String {
            "constant".into()
        }

        fn forward(&self, input: &Tensor<f64>, _: &Tensor<f64>) -> Result<Tensor<f64>> {
            Ok(Tensor::full(input.dims(), 3.0))
        }

        fn backward(
            &self,
            input: &Tensor<f64>,
            params: &Tensor<f64>,
            _: &Tensor<f64>,
        ) -> Result<(Tensor<f64>, Tensor<f64>)> {
            Ok((input.zeros_like(), params.zeros_like()))
        }
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = Tensor::from_fn([1, 2, 2, 2], |[_, c, h, w]| (c + h + w) as f64);
        let r = grad_check(
            &Constant,
            &x,
            &Tensor::ones([1, 1, 1, 1]),
            &GradCheckOptions::default(),
        );
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.noise_accepted(), 0);
        for leaf in &r.leaves {
            assert_eq!(leaf.analytic_at_worst, 0.0);
            assert_eq!(leaf.numeric_at_worst, 0.0);
        }
    }

    struct Scaled(f64);

    impl DifferentiableOp<f64> for Scaled {
        type Input = Tensor<f64>;
        type Params = Tensor<f64>;

        fn name(&self) -> String {
            "scaled".into()
        }

        fn forward(&self, input: &Tensor<f64>, _: &Tensor<f64>) -> Result<Tensor<f64>> {
            Ok(input.map(|v| v * self.0))
        }

        /// Off by one part in a thousand.
        fn backward(
            &self,
            _input: &Tensor<f64>,
            params: &Tensor<f64>,
            g: &Tensor<f64>,
        ) -> Result<(Tensor<f64>, Tensor<f64>)> {
            Ok((g.map(|v| v * self.0 * 1.001), params.zeros_like()))
        }
    }

    #[test]
    fn noise_floor_only_covers_small_discrepancies() {
        let x = Tensor::ones([1, 1, 1, 3]);
        let p = Tensor::ones([1, 1, 1, 1]);
        let floor = GradCheckOptions {
            noise_floor: 1e-11,
            ..Default::default()
        };
        let tiny = grad_check(&Scaled(5e-9), &x, &p, &floor);
        assert!(tiny.passed(), "{tiny:?}");
        assert_eq!(tiny.noise_accepted(), 3);
        assert!(!grad_check(&Scaled(5e-9), &x, &p, &GradCheckOptions::default()).passed());
        let large = grad_check(&Scaled(1.0), &x, &p, &floor);
        assert!(!large.passed());
        assert_eq!(large.leaves[0].failing, 3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
