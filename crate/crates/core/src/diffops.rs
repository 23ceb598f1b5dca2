//! [`DifferentiableOp`] adapters for every op with a backward pass, so a
//! single checker can drive them all.

use crate::conv::ConvSpec;
use crate::dpam::{
    dpam, dpam_backward, mgdfis_fuse, mgdfis_fuse_backward, DpamParams, FusionWeights,
};
use crate::error::Result;
use crate::ftssa::{
    daff, daff_backward, dyt, dyt_backward, ftssa, ftssa_backward, mona, mona_backward, mona_op,
    mona_op_backward, seff, seff_backward, serr, serr_backward, tssa, tssa_backward, xmona,
    xmona_backward, DaffParams, DyTParams, FtssaParams, MonaParams, SeffParams, SerrParams,
    TssaParams,
};
use crate::gdim::{
    aggregate, aggregate_backward, dmm, dmm_attention, dmm_attention_backward, dmm_backward,
    dmm_directional, dmm_directional_backward, gdim, gdim_backward, gmm, gmm_backward,
    AggregateParams, DmmParams, GdimParams, GmmParams,
};
use crate::gradcheck::DifferentiableOp;
use crate::ops::{
    activation, activation_backward, global_avg_pool, global_avg_pool_backward, linear,
    linear_backward, softmax, softmax_backward, Activation,
};
use crate::params::{join, Conv, Linear, ParamMut, ParamRef, ParamSet};
use crate::pipeline::{mgdfis, mgdfis_backward, MgdfisParams};
use crate::tensor::{Matrix, Tensor};
use crate::Scalar;

/// Two tensor inputs, visited as `first` then `second`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T> {
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

impl<T: Scalar> ParamSet<T> for Pair<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.first.visit(&join(prefix, "first"), f);
        self.second.visit(&join(prefix, "second"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.first.visit_mut(&join(prefix, "first"), f);
        self.second.visit_mut(&join(prefix, "second"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseInputs<T> {
    pub amap: Tensor<T>,
    pub f_hat: Tensor<T>,
    pub x1: Tensor<T>,
    pub x2: Tensor<T>,
}

impl<T: Scalar> ParamSet<T> for FuseInputs<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.amap.visit(&join(prefix, "amap"), f);
        self.f_hat.visit(&join(prefix, "f_hat"), f);
        self.x1.visit(&join(prefix, "x1"), f);
        self.x2.visit(&join(prefix, "x2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.amap.visit_mut(&join(prefix, "amap"), f);
        self.f_hat.visit_mut(&join(prefix, "f_hat"), f);
        self.x1.visit_mut(&join(prefix, "x1"), f);
        self.x2.visit_mut(&join(prefix, "x2"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseParams<T> {
    pub weights: FusionWeights<T>,
    pub agg: AggregateParams<T>,
}

impl<T: Scalar> ParamSet<T> for FuseParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.weights.visit(&join(prefix, "weights"), f);
        self.agg.visit(&join(prefix, "agg"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.weights.visit_mut(&join(prefix, "weights"), f);
        self.agg.visit_mut(&join(prefix, "agg"), f);
    }
}

/// Unary ops of the form `op(x, &params) -> y` with
/// `op_backward(x, &params, g) -> (gx, gparams)`.
macro_rules! unary_op {
    ($(#[$m:meta])* $name:ident, $label:literal, $params:ident, $fwd:path, $bwd:path) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $name;

        impl<T: Scalar> DifferentiableOp<T> for $name {
            type Input = Tensor<T>;
            type Params = $params<T>;

            fn name(&self) -> String {
                $label.into()
            }

            fn forward(&self, x: &Tensor<T>, p: &$params<T>) -> Result<Tensor<T>> {
                $fwd(x, p)
            }

            fn backward(&self, x: &Tensor<T>, p: &$params<T>, g: &Tensor<T>) -> Result<(Tensor<T>, $params<T>)> {
                $bwd(x, p, g)
            }
        }
    };
}

unary_op!(DytOp, "dyt", DyTParams, dyt, dyt_backward);
unary_op!(TssaOp, "tssa", TssaParams, tssa, tssa_backward);
unary_op!(MonaOpOp, "mona_op", MonaParams, mona_op, mona_op_backward);
unary_op!(XmonaOp, "xmona", MonaParams, xmona, xmona_backward);
unary_op!(MonaOp, "mona", MonaParams, mona, mona_backward);
unary_op!(DaffOp, "daff", DaffParams, daff, daff_backward);
unary_op!(SeffOp, "seff", SeffParams, seff, seff_backward);
unary_op!(SerrOp, "serr", SerrParams, serr, serr_backward);
unary_op!(FtssaOp, "ftssa", FtssaParams, ftssa, ftssa_backward);
unary_op!(GmmOp, "gmm", GmmParams, gmm, gmm_backward);
unary_op!(
    DmmDirectionalOp,
    "dmm_directional",
    DmmParams,
    dmm_directional,
    dmm_directional_backward
);
unary_op!(DmmOp, "dmm", DmmParams, dmm, dmm_backward);
unary_op!(
    /// Gradient flows in through the `N×C×1×1` gate.
    DmmAttentionOp,
    "dmm_attention",
    DmmParams,
    dmm_attention,
    dmm_attention_backward
);

#[derive(Debug, Clone, Copy)]
pub struct Conv2dOp {
    pub spec: ConvSpec,
}

impl<T: Scalar> DifferentiableOp<T> for Conv2dOp {
    type Input = Tensor<T>;
    type Params = Conv<T>;

    fn name(&self) -> String {
        "conv2d".into()
    }

    fn forward(&self, x: &Tensor<T>, p: &Conv<T>) -> Result<Tensor<T>> {
        Conv {
            spec: self.spec,
            ..p.clone()
        }
        .forward(x)
    }

    fn backward(&self, x: &Tensor<T>, p: &Conv<T>, g: &Tensor<T>) -> Result<(Tensor<T>, Conv<T>)> {
        Conv {
            spec: self.spec,
            ..p.clone()
        }
        .backward(x, g)
    }
}

/// `x·W + b` on a matrix; the output is returned as a `1×1×rows×cols`
/// tensor.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearOp;

impl<T: Scalar> DifferentiableOp<T> for LinearOp {
    type Input = Matrix<T>;
    type Params = Linear<T>;

    fn name(&self) -> String {
        "linear".into()
    }

    fn forward(&self, x: &Matrix<T>, p: &Linear<T>) -> Result<Tensor<T>> {
        let y = linear(x, &p.weight, &p.bias)?;
        Tensor::from_vec([1, 1, y.rows(), y.cols()], y.data().to_vec())
    }

    fn backward(
        &self,
        x: &Matrix<T>,
        p: &Linear<T>,
        g: &Tensor<T>,
    ) -> Result<(Matrix<T>, Linear<T>)> {
        let g = Matrix::from_vec(g.height(), g.width(), g.data().to_vec())?;
        let grads = linear_backward(x, &p.weight, &p.bias, &g)?;
        Ok((
            grads.input,
            Linear {
                weight: grads.weight,
                bias: grads.bias,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SoftmaxOp {
    pub axis: usize,
}

impl<T: Scalar> DifferentiableOp<T> for SoftmaxOp {
    type Input = Tensor<T>;
    type Params = ();

    fn name(&self) -> String {
        format!("softmax(axis={})", self.axis)
    }

    fn forward(&self, x: &Tensor<T>, _: &()) -> Result<Tensor<T>> {
        softmax(x, self.axis)
    }

    fn backward(&self, x: &Tensor<T>, _: &(), g: &Tensor<T>) -> Result<(Tensor<T>, ())> {
        Ok((softmax_backward(&softmax(x, self.axis)?, g, self.axis)?, ()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActivationOp {
    pub kind: Activation,
}

impl<T: Scalar> DifferentiableOp<T> for ActivationOp {
    type Input = Tensor<T>;
    type Params = ();

    fn name(&self) -> String {
        format!("{:?}", self.kind).to_lowercase()
    }

    fn forward(&self, x: &Tensor<T>, _: &()) -> Result<Tensor<T>> {
        Ok(activation(self.kind, x))
    }

    fn backward(&self, x: &Tensor<T>, _: &(), g: &Tensor<T>) -> Result<(Tensor<T>, ())> {
        Ok((activation_backward(self.kind, x, g)?, ()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GapOp;

impl<T: Scalar> DifferentiableOp<T> for GapOp {
    type Input = Tensor<T>;
    type Params = ();

    fn name(&self) -> String {
        "global_avg_pool".into()
    }

    fn forward(&self, x: &Tensor<T>, _: &()) -> Result<Tensor<T>> {
        Ok(global_avg_pool(x))
    }

    fn backward(&self, x: &Tensor<T>, _: &(), g: &Tensor<T>) -> Result<(Tensor<T>, ())> {
        Ok((global_avg_pool_backward(x.dims(), g)?, ()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AggregateOp;

impl<T: Scalar> DifferentiableOp<T> for AggregateOp {
    type Input = Pair<T>;
    type Params = AggregateParams<T>;

    fn name(&self) -> String {
        "aggregate".into()
    }

    fn forward(&self, x: &Pair<T>, p: &AggregateParams<T>) -> Result<Tensor<T>> {
        aggregate(&x.first, &x.second, p)
    }

    fn backward(
        &self,
        x: &Pair<T>,
        p: &AggregateParams<T>,
        g: &Tensor<T>,
    ) -> Result<(Pair<T>, AggregateParams<T>)> {
        let (first, second, gp) = aggregate_backward(&x.first, &x.second, p, g)?;
        Ok((Pair { first, second }, gp))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GdimOp;

impl<T: Scalar> DifferentiableOp<T> for GdimOp {
    type Input = Pair<T>;
    type Params = GdimParams<T>;

    fn name(&self) -> String {
        "gdim".into()
    }

    fn forward(&self, x: &Pair<T>, p: &GdimParams<T>) -> Result<Tensor<T>> {
        gdim(&x.first, &x.second, p)
    }

    fn backward(
        &self,
        x: &Pair<T>,
        p: &GdimParams<T>,
        g: &Tensor<T>,
    ) -> Result<(Pair<T>, GdimParams<T>)> {
        let (first, second, gp) = gdim_backward(&x.first, &x.second, p, g)?;
        Ok((Pair { first, second }, gp))
    }
}

/// Inputs are `(F_agg, F̂)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DpamOp;

impl<T: Scalar> DifferentiableOp<T> for DpamOp {
    type Input = Pair<T>;
    type Params = DpamParams<T>;

    fn name(&self) -> String {
        "dpam".into()
    }

    fn forward(&self, x: &Pair<T>, p: &DpamParams<T>) -> Result<Tensor<T>> {
        dpam(&x.first, &x.second, p)
    }

    fn backward(
        &self,
        x: &Pair<T>,
        p: &DpamParams<T>,
        g: &Tensor<T>,
    ) -> Result<(Pair<T>, DpamParams<T>)> {
        let (first, second, gp) = dpam_backward(&x.first, &x.second, p, g)?;
        Ok((Pair { first, second }, gp))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FuseOp;

impl<T: Scalar> DifferentiableOp<T> for FuseOp {
    type Input = FuseInputs<T>;
    type Params = FuseParams<T>;

    fn name(&self) -> String {
        "mgdfis_fuse".into()
    }

    fn forward(&self, x: &FuseInputs<T>, p: &FuseParams<T>) -> Result<Tensor<T>> {
        mgdfis_fuse(&x.amap, &x.f_hat, &x.x1, &x.x2, &p.weights, &p.agg)
    }

    fn backward(
        &self,
        x: &FuseInputs<T>,
        p: &FuseParams<T>,
        g: &Tensor<T>,
    ) -> Result<(FuseInputs<T>, FuseParams<T>)> {
        let fg = mgdfis_fuse_backward(&x.amap, &x.f_hat, &x.x1, &x.x2, &p.weights, &p.agg, g)?;
        Ok((
            FuseInputs {
                amap: fg.amap,
                f_hat: fg.f_hat,
                x1: fg.x1,
                x2: fg.x2,
            },
            FuseParams {
                weights: fg.weights,
                agg: fg.agg,
            },
        ))
    }
}

/// The whole pipeline from the two input maps.
#[derive(Debug, Clone, Copy, Default)]
pub struct MgdfisOp;

impl<T: Scalar> DifferentiableOp<T> for MgdfisOp {
    type Input = Pair<T>;
    type Params = MgdfisParams<T>;

    fn name(&self) -> String {
        "mgdfis".into()
    }

    fn forward(&self, x: &Pair<T>, p: &MgdfisParams<T>) -> Result<Tensor<T>> {
        mgdfis(&x.first, &x.second, p)
    }

    fn backward(
        &self,
        x: &Pair<T>,
        p: &MgdfisParams<T>,
        g: &Tensor<T>,
    ) -> Result<(Pair<T>, MgdfisParams<T>)> {
        let (first, second, gp) = mgdfis_backward(&x.first, &x.second, p, g)?;
        Ok((Pair { first, second }, gp))
    }
}
