//! FusionLock-TSS attention: a DyT/TSSA/Mona stage (DAFF) followed in
//! series by a DyT/SEFF/Mona stage (SERR).

pub mod dyt;
pub mod mona;
pub mod seff;
pub mod tssa;

pub use dyt::{dyt, dyt_backward, DyTParams};
pub use mona::{mona, mona_backward, mona_op, mona_op_backward, xmona, xmona_backward, MonaParams};
pub use seff::{seff, seff_backward, FreqWeight, SeffParams};
pub use tssa::{tssa, tssa_backward, NormAxis, PiMode, TssaParams};

use crate::composite_params;
use crate::error::Result;
use crate::tensor::Tensor;
use crate::Scalar;

/// Construction sizes for a full FTSSA bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FtssaShape {
    pub channels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mona_ratio: usize,
    pub seff_base: usize,
}

impl FtssaShape {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            heads: 2,
            head_dim: 8,
            mona_ratio: 4,
            seff_base: seff::SEFF_BASE_RESOLUTION,
        }
    }

    fn reduced(&self) -> usize {
        mona::reduced_channels(self.channels, self.mona_ratio)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaffParams<T> {
    pub dyt: DyTParams<T>,
    pub tssa: TssaParams<T>,
    pub mona: MonaParams<T>,
}

composite_params!(DaffParams { dyt, tssa, mona });

impl<T: Scalar> DaffParams<T> {
    /// DyT at its default init, every weight zero.
    pub fn zeros(s: FtssaShape) -> Self {
        Self {
            dyt: DyTParams::new(s.channels),
            tssa: TssaParams::zeros(s.channels, s.heads, s.head_dim),
            mona: MonaParams::zeros(s.channels, s.reduced()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerrParams<T> {
    pub dyt: DyTParams<T>,
    pub seff: SeffParams<T>,
    pub mona: MonaParams<T>,
}

composite_params!(SerrParams { dyt, seff, mona });

impl<T: Scalar> SerrParams<T> {
    pub fn zeros(s: FtssaShape) -> Self {
        Self {
            dyt: DyTParams::new(s.channels),
            seff: SeffParams::zeros(s.channels, s.seff_base),
            mona: MonaParams::zeros(s.channels, s.reduced()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtssaParams<T> {
    pub daff: DaffParams<T>,
    pub serr: SerrParams<T>,
}

composite_params!(FtssaParams { daff, serr });

impl<T: Scalar> FtssaParams<T> {
    pub fn zeros(s: FtssaShape) -> Self {
        Self {
            daff: DaffParams::zeros(s),
            serr: SerrParams::zeros(s),
        }
    }

    pub fn channels(&self) -> usize {
        self.daff.dyt.channels()
    }
}

/// `Mona(x + TSSA(DyT(x)))`.
pub fn daff<T: Scalar>(x: &Tensor<T>, p: &DaffParams<T>) -> Result<Tensor<T>> {
    let mut r = tssa(&dyt(x, &p.dyt)?, &p.tssa)?;
    r.add_assign(x)?;
    mona(&r, &p.mona)
}

pub fn daff_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &DaffParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, DaffParams<T>)> {
    let normed = dyt(x, &p.dyt)?;
    let mut r = tssa(&normed, &p.tssa)?;
    r.add_assign(x)?;
    let (g_r, g_mona) = mona_backward(&r, &p.mona, grad_out)?;
    let (g_normed, g_tssa) = tssa_backward(&normed, &p.tssa, &g_r)?;
    let (mut gx, g_dyt) = dyt_backward(x, &p.dyt, &g_normed)?;
    gx.add_assign(&g_r)?;
    Ok((
        gx,
        DaffParams {
            dyt: g_dyt,
            tssa: g_tssa,
            mona: g_mona,
        },
    ))
}

/// `Mona(d + SEFF(DyT(d)))`.
pub fn serr<T: Scalar>(d: &Tensor<T>, p: &SerrParams<T>) -> Result<Tensor<T>> {
    let mut r = seff(&dyt(d, &p.dyt)?, &p.seff)?;
    r.add_assign(d)?;
    mona(&r, &p.mona)
}

pub fn serr_backward<T: Scalar>(
    d: &Tensor<T>,
    p: &SerrParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, SerrParams<T>)> {
    let normed = dyt(d, &p.dyt)?;
    let mut r = seff(&normed, &p.seff)?;
    r.add_assign(d)?;
    let (g_r, g_mona) = mona_backward(&r, &p.mona, grad_out)?;
    let (g_normed, g_seff) = seff_backward(&normed, &p.seff, &g_r)?;
    let (mut gd, g_dyt) = dyt_backward(d, &p.dyt, &g_normed)?;
    gd.add_assign(&g_r)?;
    Ok((
        gd,
        SerrParams {
            dyt: g_dyt,
            seff: g_seff,
            mona: g_mona,
        },
    ))
}

pub fn ftssa<T: Scalar>(x: &Tensor<T>, p: &FtssaParams<T>) -> Result<Tensor<T>> {
    serr(&daff(x, &p.daff)?, &p.serr)
}

pub fn ftssa_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &FtssaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, FtssaParams<T>)> {
    let d = daff(x, &p.daff)?;
    let (g_d, g_serr) = serr_backward(&d, &p.serr, grad_out)?;
    let (gx, g_daff) = daff_backward(x, &p.daff, &g_d)?;
    Ok((
        gx,
        FtssaParams {
            daff: g_daff,
            serr: g_serr,
        },
    ))
}
