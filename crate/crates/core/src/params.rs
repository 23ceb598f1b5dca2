//! Named parameter records.
//!
//! Every learnable record implements [`ParamSet`], which walks its leaf
//! arrays in a fixed order with a dotted name, dims and an init rule.
//! Gradients are returned as values of the same record type, so gradient
//! checking, seeded initialization and serialization all share one walk.

use crate::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::error::Result;
use crate::ops::{channel_linear, channel_linear_backward, linear, linear_backward};
use crate::tensor::{Matrix, Tensor};
use crate::Scalar;

/// How a leaf is initialized from a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform {
        fan_in: usize,
    },
    Constant(f64),
}

pub struct ParamRef<'a, T> {
    pub name: &'a str,
    pub dims: &'a [usize],
    pub init: Init,
    pub data: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: &'a str,
    pub dims: &'a [usize],
    pub init: Init,
    pub data: &'a mut [T],
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub trait ParamSet<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>));

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |p| n += p.data.len());
        n
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |p| p.data.iter_mut().for_each(|v| *v = T::zero()));
        z
    }

    fn leaf_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |p| names.push(p.name.to_string()));
        names
    }

    /// Elementwise `self += other`; both must come from the same layout.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut flat = Vec::new();
        other.visit("", &mut |p| flat.extend_from_slice(p.data));
        let mut it = flat.into_iter();
        self.visit_mut("", &mut |p| {
            for v in p.data.iter_mut() {
                *v += it.next().expect("parameter layouts differ");
            }
        });
    }
}

impl<T: Scalar> ParamSet<T> for Tensor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        f(ParamRef {
            name: prefix,
            dims: &self.dims(),
            init: Init::Constant(0.0),
            data: self.data(),
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let dims = self.dims();
        f(ParamMut {
            name: prefix,
            dims: &dims,
            init: Init::Constant(0.0),
            data: self.data_mut(),
        });
    }
}

/// No parameters.
impl<T: Scalar> ParamSet<T> for () {
    fn visit(&self, _: &str, _: &mut dyn FnMut(ParamRef<'_, T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(ParamMut<'_, T>)) {}
}

impl<T: Scalar> ParamSet<T> for Matrix<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        f(ParamRef {
            name: prefix,
            dims: &[self.rows(), self.cols()],
            init: Init::Constant(0.0),
            data: self.data(),
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let dims = [self.rows(), self.cols()];
        f(ParamMut {
            name: prefix,
            dims: &dims,
            init: Init::Constant(0.0),
            data: self.data_mut(),
        });
    }
}

/// Emits one leaf; used by hand-written [`ParamSet`] impls.
pub fn leaf<T: Scalar>(
    f: &mut dyn FnMut(ParamRef<'_, T>),
    prefix: &str,
    name: &str,
    dims: &[usize],
    init: Init,
    data: &[T],
) {
    f(ParamRef {
        name: &join(prefix, name),
        dims,
        init,
        data,
    });
}

pub fn leaf_mut<T: Scalar>(
    f: &mut dyn FnMut(ParamMut<'_, T>),
    prefix: &str,
    name: &str,
    dims: &[usize],
    init: Init,
    data: &mut [T],
) {
    f(ParamMut {
        name: &join(prefix, name),
        dims,
        init,
        data,
    });
}

/// Implements [`ParamSet`] for a record whose fields are all `ParamSet`s.
#[macro_export]
macro_rules! composite_params {
    ($ty:ident { $($field:ident),+ $(,)? }) => {
        impl<T: $crate::Scalar> $crate::params::ParamSet<T> for $ty<T> {
            fn visit(
                &self,
                prefix: &str,
                f: &mut dyn FnMut($crate::params::ParamRef<'_, T>),
            ) {
                $( self.$field.visit(&$crate::params::join(prefix, stringify!($field)), f); )+
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut($crate::params::ParamMut<'_, T>),
            ) {
                $( self.$field.visit_mut(&$crate::params::join(prefix, stringify!($field)), f); )+
            }
        }
    };
}

/// Convolution layer: spec, weights and per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        Self {
            spec,
            weight: Tensor::zeros(spec.weight_dims()),
            bias: vec![T::zero(); spec.out_channels],
        }
    }

    /// Pointwise identity (requires equal in/out channels).
    pub fn identity_pointwise(channels: usize) -> Self {
        let mut c = Self::zeros(ConvSpec::pointwise(channels, channels));
        for i in 0..channels {
            c.weight.set([i, i, 0, 0], T::one());
        }
        c
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, &self.bias, &self.spec)
    }

    /// Returns the input gradient and the parameter gradient.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let g = conv2d_backward(x, &self.weight, &self.bias, &self.spec, grad_out)?;
        Ok((
            g.input,
            Self {
                spec: self.spec,
                weight: g.weight,
                bias: g.bias,
            },
        ))
    }
}

impl<T: Scalar> ParamSet<T> for Conv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        let init = Init::Uniform {
            fan_in: self.spec.fan_in(),
        };
        leaf(
            f,
            prefix,
            "weight",
            &self.weight.dims(),
            init,
            self.weight.data(),
        );
        leaf(
            f,
            prefix,
            "bias",
            &[self.bias.len()],
            Init::Constant(0.0),
            &self.bias,
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let init = Init::Uniform {
            fan_in: self.spec.fan_in(),
        };
        let dims = self.weight.dims();
        leaf_mut(f, prefix, "weight", &dims, init, self.weight.data_mut());
        let n = self.bias.len();
        leaf_mut(f, prefix, "bias", &[n], Init::Constant(0.0), &mut self.bias);
    }
}

/// Dense layer `x·W + b` with `W` stored `in × out`. An empty bias means
/// the layer has none.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize, with_bias: bool) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: if with_bias {
                vec![T::zero(); outputs]
            } else {
                Vec::new()
            },
        }
    }

    pub fn identity(n: usize, with_bias: bool) -> Self {
        let mut l = Self::zeros(n, n, with_bias);
        l.weight = Matrix::identity(n);
        l
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        linear(x, &self.weight, &self.bias)
    }

    pub fn backward(&self, x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, Self)> {
        let g = linear_backward(x, &self.weight, &self.bias, grad_out)?;
        Ok((
            g.input,
            Self {
                weight: g.weight,
                bias: g.bias,
            },
        ))
    }

    /// Applies the layer to the channel vector of every pixel.
    pub fn forward_channels(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        channel_linear(x, &self.weight, &self.bias)
    }

    pub fn backward_channels(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Self)> {
        let (gx, gw, gb) = channel_linear_backward(x, &self.weight, &self.bias, grad_out)?;
        Ok((
            gx,
            Self {
                weight: gw,
                bias: gb,
            },
        ))
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        let dims = [self.weight.rows(), self.weight.cols()];
        let init = Init::Uniform { fan_in: dims[0] };
        leaf(f, prefix, "weight", &dims, init, self.weight.data());
        if !self.bias.is_empty() {
            leaf(
                f,
                prefix,
                "bias",
                &[self.bias.len()],
                Init::Constant(0.0),
                &self.bias,
            );
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        let dims = [self.weight.rows(), self.weight.cols()];
        let init = Init::Uniform { fan_in: dims[0] };
        leaf_mut(f, prefix, "weight", &dims, init, self.weight.data_mut());
        if !self.bias.is_empty() {
            let n = self.bias.len();
            leaf_mut(f, prefix, "bias", &[n], Init::Constant(0.0), &mut self.bias);
        }
    }
}
