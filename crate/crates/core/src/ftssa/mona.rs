//! Multi-cognitive adapter: a bottleneck with averaged 3/5/7 depthwise
//! convolutions and a small-scaled linear skip.

use crate::conv::ConvSpec;
use crate::error::{Result, TensorError};
use crate::ops::{activation, activation_backward, Activation};
use crate::params::{join, leaf, leaf_mut, Conv, Init, Linear, ParamMut, ParamRef, ParamSet};
use crate::tensor::Tensor;
use crate::Scalar;

pub const XMONA_SCALE_INIT: f64 = 1e-6;

/// Bottleneck width `max(C / ratio, 1)`.
pub fn reduced_channels(channels: usize, ratio: usize) -> usize {
    (channels / ratio.max(1)).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonaParams<T> {
    /// 1×1, `C → C_r`.
    pub down: Conv<T>,
    pub dw3: Conv<T>,
    pub dw5: Conv<T>,
    pub dw7: Conv<T>,
    /// 1×1, `C_r → C_r`.
    pub mix: Conv<T>,
    /// 1×1, `C_r → C`.
    pub up: Conv<T>,
    /// Per-pixel `C → C` map of the skip path.
    pub xmona: Linear<T>,
    pub xmona_scale: T,
}

impl<T: Scalar> MonaParams<T> {
    pub fn zeros(channels: usize, reduced: usize) -> Self {
        Self {
            down: Conv::zeros(ConvSpec::pointwise(channels, reduced)),
            dw3: Conv::zeros(ConvSpec::depthwise(reduced, (3, 3))),
            dw5: Conv::zeros(ConvSpec::depthwise(reduced, (5, 5))),
            dw7: Conv::zeros(ConvSpec::depthwise(reduced, (7, 7))),
            mix: Conv::zeros(ConvSpec::pointwise(reduced, reduced)),
            up: Conv::zeros(ConvSpec::pointwise(reduced, channels)),
            xmona: Linear::zeros(channels, channels, true),
            xmona_scale: T::zero(),
        }
    }

    pub fn channels(&self) -> usize {
        self.down.spec.in_channels
    }

    pub fn reduced(&self) -> usize {
        self.down.spec.out_channels
    }
}

impl<T: Scalar> ParamSet<T> for MonaParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.down.visit(&join(prefix, "down"), f);
        self.dw3.visit(&join(prefix, "dw3"), f);
        self.dw5.visit(&join(prefix, "dw5"), f);
        self.dw7.visit(&join(prefix, "dw7"), f);
        self.mix.visit(&join(prefix, "mix"), f);
        self.up.visit(&join(prefix, "up"), f);
        self.xmona.visit(&join(prefix, "xmona"), f);
        let scale = std::slice::from_ref(&self.xmona_scale);
        leaf(
            f,
            prefix,
            "xmona_scale",
            &[],
            Init::Constant(XMONA_SCALE_INIT),
            scale,
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.down.visit_mut(&join(prefix, "down"), f);
        self.dw3.visit_mut(&join(prefix, "dw3"), f);
        self.dw5.visit_mut(&join(prefix, "dw5"), f);
        self.dw7.visit_mut(&join(prefix, "dw7"), f);
        self.mix.visit_mut(&join(prefix, "mix"), f);
        self.up.visit_mut(&join(prefix, "up"), f);
        self.xmona.visit_mut(&join(prefix, "xmona"), f);
        let scale = std::slice::from_mut(&mut self.xmona_scale);
        leaf_mut(
            f,
            prefix,
            "xmona_scale",
            &[],
            Init::Constant(XMONA_SCALE_INIT),
            scale,
        );
    }
}

fn three_scale_average<T: Scalar>(z: &Tensor<T>, p: &MonaParams<T>) -> Result<Tensor<T>> {
    let mut avg = p.dw3.forward(z)?;
    avg.add_assign(&p.dw5.forward(z)?)?;
    avg.add_assign(&p.dw7.forward(z)?)?;
    Ok(avg.scale(T::one() / T::lit(3.0)))
}

/// `z + mix((dw3(z) + dw5(z) + dw7(z)) / 3 + z)` on the reduced width.
pub fn mona_op<T: Scalar>(z: &Tensor<T>, p: &MonaParams<T>) -> Result<Tensor<T>> {
    if z.channels() != p.reduced() {
        return Err(TensorError::mismatch(
            "mona_op",
            "channel",
            p.reduced(),
            z.channels(),
        ));
    }
    let mut inner = three_scale_average(z, p)?;
    inner.add_assign(z)?;
    let mut out = p.mix.forward(&inner)?;
    out.add_assign(z)?;
    Ok(out)
}

pub fn mona_op_backward<T: Scalar>(
    z: &Tensor<T>,
    p: &MonaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, MonaParams<T>)> {
    let mut inner = three_scale_average(z, p)?;
    inner.add_assign(z)?;
    let mut grads = p.zeros_like();
    let (g_inner, g_mix) = p.mix.backward(&inner, grad_out)?;
    grads.mix = g_mix;
    let mut g_z = grad_out.clone();
    g_z.add_assign(&g_inner)?;
    let g_avg = g_inner.scale(T::one() / T::lit(3.0));
    let (gz3, g3) = p.dw3.backward(z, &g_avg)?;
    let (gz5, g5) = p.dw5.backward(z, &g_avg)?;
    let (gz7, g7) = p.dw7.backward(z, &g_avg)?;
    for gz in [&gz3, &gz5, &gz7] {
        g_z.add_assign(gz)?;
    }
    grads.dw3 = g3;
    grads.dw5 = g5;
    grads.dw7 = g7;
    Ok((g_z, grads))
}

/// `xmona_scale · (x W + b)` applied per pixel.
pub fn xmona<T: Scalar>(x: &Tensor<T>, p: &MonaParams<T>) -> Result<Tensor<T>> {
    Ok(p.xmona.forward_channels(x)?.scale(p.xmona_scale))
}

pub fn xmona_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &MonaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, MonaParams<T>)> {
    let lin = p.xmona.forward_channels(x)?;
    let mut grads = p.zeros_like();
    grads.xmona_scale = lin.mul(grad_out)?.sum();
    let (gx, g_lin) = p
        .xmona
        .backward_channels(x, &grad_out.scale(p.xmona_scale))?;
    grads.xmona = g_lin;
    Ok((gx, grads))
}

struct MonaTrace<T> {
    down: Tensor<T>,
    op: Tensor<T>,
    act: Tensor<T>,
}

fn mona_trace<T: Scalar>(x: &Tensor<T>, p: &MonaParams<T>) -> Result<MonaTrace<T>> {
    let down = p.down.forward(x)?;
    let op = mona_op(&down, p)?;
    let act = activation(Activation::Gelu, &op);
    Ok(MonaTrace { down, op, act })
}

/// `xmona(x) + up(GELU(mona_op(down(x))))`.
pub fn mona<T: Scalar>(x: &Tensor<T>, p: &MonaParams<T>) -> Result<Tensor<T>> {
    if x.channels() != p.channels() {
        return Err(TensorError::mismatch(
            "mona",
            "channel",
            p.channels(),
            x.channels(),
        ));
    }
    let tr = mona_trace(x, p)?;
    let mut out = p.up.forward(&tr.act)?;
    out.add_assign(&xmona(x, p)?)?;
    Ok(out)
}

pub fn mona_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &MonaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, MonaParams<T>)> {
    let tr = mona_trace(x, p)?;
    let (g_act, g_up) = p.up.backward(&tr.act, grad_out)?;
    let g_op = activation_backward(Activation::Gelu, &tr.op, &g_act)?;
    let (g_down_out, mut grads) = mona_op_backward(&tr.down, p, &g_op)?;
    let (mut gx, g_down) = p.down.backward(x, &g_down_out)?;
    let (gx_skip, g_skip) = xmona_backward(x, p, grad_out)?;
    gx.add_assign(&gx_skip)?;
    grads.up = g_up;
    grads.down = g_down;
    grads.xmona = g_skip.xmona;
    grads.xmona_scale = g_skip.xmona_scale;
    Ok((gx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 4]) -> Tensor<f64> {
        Tensor::from_fn(dims, |[b, c, h, w]| {
            ((b * 7 + c * 5 + h * 3 + w) % 9) as f64 * 0.25 - 1.0
        })
    }

    #[test]
    fn zero_convs_make_mona_op_identity() {
        let p = MonaParams::<f64>::zeros(4, 2);
        let z = ramp([1, 2, 5, 5]);
        assert_eq!(mona_op(&z, &p).unwrap(), z);
    }

    #[test]
    fn zero_params_give_zero() {
        let p = MonaParams::<f64>::zeros(4, 1);
        let y = mona(&ramp([2, 4, 3, 3]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn only_skip_path_live() {
        let mut p = MonaParams::<f64>::zeros(3, 1);
        p.xmona = Linear::identity(3, true);
        p.xmona_scale = 1e-6;
        let x = Tensor::ones([1, 3, 2, 2]);
        assert!(xmona(&x, &p).unwrap().data().iter().all(|&v| v == 1e-6));
        let x = ramp([1, 3, 4, 4]);
        let y = mona(&x, &p).unwrap();
        assert!(y.max_abs_diff(&x.scale(1e-6)).unwrap() < 1e-20);
    }

    #[test]
    fn reduced_width_floor() {
        assert_eq!(reduced_channels(8, 4), 2);
        assert_eq!(reduced_channels(3, 4), 1);
    }
}
