//! Reference implementations written as plain loops, one function per
//! op, sharing no kernels with `mgdfis-core`. Only `f64`.

#![allow(clippy::needless_range_loop)]

pub mod dpam;
pub mod fixtures;
pub mod ftssa;
pub mod gdim;
pub mod naive;

pub use fixtures::Fixture;
