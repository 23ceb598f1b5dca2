use crate::error::{Result, TensorError};
use crate::params::{leaf, leaf_mut, Init, ParamMut, ParamRef, ParamSet};
use crate::tensor::Tensor;
use crate::Scalar;

/// Dynamic tanh: `γ_c · tanh(α·x) + β_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DyTParams<T> {
    pub alpha: T,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub const DYT_ALPHA_INIT: f64 = 0.5;

impl<T: Scalar> DyTParams<T> {
    /// `α = 0.5`, `γ = 1`, `β = 0`.
    pub fn new(channels: usize) -> Self {
        Self {
            alpha: T::lit(DYT_ALPHA_INIT),
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if self.gamma.len() != x.channels() || self.beta.len() != x.channels() {
            return Err(TensorError::mismatch(
                "dyt",
                "channel",
                self.gamma.len(),
                x.channels(),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> ParamSet<T> for DyTParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        let c = [self.gamma.len()];
        leaf(
            f,
            prefix,
            "alpha",
            &[],
            Init::Constant(DYT_ALPHA_INIT),
            std::slice::from_ref(&self.alpha),
        );
        leaf(f, prefix, "gamma", &c, Init::Constant(1.0), &self.gamma);
        leaf(f, prefix, "beta", &c, Init::Constant(0.0), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let c = [self.gamma.len()];
        leaf_mut(
            f,
            prefix,
            "alpha",
            &[],
            Init::Constant(DYT_ALPHA_INIT),
            std::slice::from_mut(&mut self.alpha),
        );
        leaf_mut(f, prefix, "gamma", &c, Init::Constant(1.0), &mut self.gamma);
        leaf_mut(f, prefix, "beta", &c, Init::Constant(0.0), &mut self.beta);
    }
}

pub fn dyt<T: Scalar>(x: &Tensor<T>, p: &DyTParams<T>) -> Result<Tensor<T>> {
    p.check(x)?;
    let mut out = x.clone();
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            let (g, be) = (p.gamma[c], p.beta[c]);
            out.plane_mut(b, c)
                .iter_mut()
                .for_each(|v| *v = g * (p.alpha * *v).tanh() + be);
        }
    }
    Ok(out)
}

pub fn dyt_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &DyTParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, DyTParams<T>)> {
    p.check(x)?;
    x.same_dims(grad_out, "dyt_backward")?;
    let mut gx = x.zeros_like();
    let mut gp = p.zeros_like();
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            let gamma = p.gamma[c];
            let xs = x.plane(b, c);
            let gs = grad_out.plane(b, c);
            for (i, gxv) in gx.plane_mut(b, c).iter_mut().enumerate() {
                let t = (p.alpha * xs[i]).tanh();
                let dt = T::one() - t * t;
                let g = gs[i];
                *gxv = g * gamma * p.alpha * dt;
                gp.alpha += g * gamma * xs[i] * dt;
                gp.gamma[c] += g * t;
                gp.beta[c] += g;
            }
        }
    }
    Ok((gx, gp))
}
