//! Reconciles two feature maps of possibly different sizes and sums them.

use crate::conv::ConvSpec;
use crate::error::{Result, TensorError};
use crate::ops::{resize_bilinear, resize_bilinear_backward};
use crate::params::{join, Conv, ParamMut, ParamRef, ParamSet};
use crate::tensor::{Dims, Tensor};
use crate::Scalar;

/// Optional 1×1 projection applied to the resampled secondary map.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateParams<T> {
    pub proj: Option<Conv<T>>,
}

impl<T: Scalar> AggregateParams<T> {
    /// No projection: both inputs must already share dims.
    pub fn none() -> Self {
        Self { proj: None }
    }

    /// A zero projection when `f2` needs reconciling with `f1`, otherwise
    /// none.
    pub fn zeros_for(f1: Dims, f2: Dims) -> Self {
        if f1 == f2 {
            Self::none()
        } else {
            Self {
                proj: Some(Conv::zeros(ConvSpec::pointwise(f2[1], f1[1]))),
            }
        }
    }

    /// Identity projection (requires equal channel counts).
    pub fn identity(channels: usize) -> Self {
        Self {
            proj: Some(Conv::identity_pointwise(channels)),
        }
    }
}

impl<T: Scalar> ParamSet<T> for AggregateParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        if let Some(p) = &self.proj {
            p.visit(&join(prefix, "proj"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        if let Some(p) = &mut self.proj {
            p.visit_mut(&join(prefix, "proj"), f);
        }
    }
}

fn projection<'a, T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &'a AggregateParams<T>,
) -> Result<&'a Conv<T>> {
    if f1.batch() != f2.batch() {
        return Err(TensorError::mismatch(
            "aggregate",
            "batch",
            f1.batch(),
            f2.batch(),
        ));
    }
    p.proj.as_ref().ok_or_else(|| {
        TensorError::Config(format!(
            "aggregate: inputs {:?} and {:?} differ but no projection is configured",
            f1.dims(),
            f2.dims()
        ))
    })
}

/// Resamples `f2` to `f1`'s plane and projects it to `f1`'s channels.
/// Equal-dims inputs pass through untouched.
pub fn reconcile<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &AggregateParams<T>,
) -> Result<Tensor<T>> {
    if f1.dims() == f2.dims() {
        return Ok(f2.clone());
    }
    let proj = projection(f1, f2, p)?;
    proj.forward(&resize_bilinear(f2, f1.height(), f1.width())?)
}

/// Returns the gradient on `f2` and on the projection.
pub fn reconcile_backward<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &AggregateParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, AggregateParams<T>)> {
    f1.same_dims(grad_out, "reconcile_backward")?;
    if f1.dims() == f2.dims() {
        return Ok((grad_out.clone(), p.zeros_like()));
    }
    let proj = projection(f1, f2, p)?;
    let resized = resize_bilinear(f2, f1.height(), f1.width())?;
    let (g_resized, g_proj) = proj.backward(&resized, grad_out)?;
    Ok((
        resize_bilinear_backward(f2.dims(), &g_resized)?,
        AggregateParams { proj: Some(g_proj) },
    ))
}

/// `f1 + reconcile(f2)`; output dims equal `f1`'s.
pub fn aggregate<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &AggregateParams<T>,
) -> Result<Tensor<T>> {
    f1.add(&reconcile(f1, f2, p)?)
}

/// Returns `(grad_f1, grad_f2, grad_params)`.
pub fn aggregate_backward<T: Scalar>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    p: &AggregateParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, AggregateParams<T>)> {
    let (g2, gp) = reconcile_backward(f1, f2, p, grad_out)?;
    Ok((grad_out.clone(), g2, gp))
}
