//! MGDT binary tensor container and parameter directories.
//!
//! Layout (all integers little-endian):
//!
//! | bytes      | field                                        |
//! |------------|----------------------------------------------|
//! | 0..4       | magic `MGDT`                                 |
//! | 4          | version, currently 1                         |
//! | 5          | dtype: 0 = real f64, 1 = complex (f64, f64)  |
//! | 6          | rank                                         |
//! | 7..7+8r    | dims as u64                                  |
//! | rest       | row-major payload                            |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex;

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::{ComplexTensor, Tensor};
use crate::Scalar;

pub const MAGIC: &[u8; 4] = b"MGDT";
pub const VERSION: u8 = 1;
const HEADER_FIXED: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Real64 = 0,
    Complex64Pair = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f64>),
    Complex(Vec<Complex<f64>>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Real(v) => v.len(),
            Payload::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Payload::Real(_) => DType::Real64,
            Payload::Complex(_) => DType::Complex64Pair,
        }
    }
}

/// A decoded container of any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl RawTensor {
    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::checked(dims, Payload::Real(data))
    }

    pub fn complex(dims: Vec<usize>, data: Vec<Complex<f64>>) -> Result<Self> {
        Self::checked(dims, Payload::Complex(data))
    }

    fn checked(dims: Vec<usize>, payload: Payload) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(TensorError::InvalidDims {
                dims,
                reason: "rank exceeds 255".into(),
            });
        }
        let n: usize = dims.iter().product();
        if n != payload.len() {
            return Err(TensorError::InvalidDims {
                dims,
                reason: format!("payload holds {} elements", payload.len()),
            });
        }
        Ok(Self { dims, payload })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        Self {
            dims: t.dims().to_vec(),
            payload: Payload::Real(t.data().iter().map(|v| v.as_f64()).collect()),
        }
    }

    pub fn from_complex<T: Scalar>(t: &ComplexTensor<T>) -> Self {
        Self {
            dims: t.dims().to_vec(),
            payload: Payload::Complex(
                t.data()
                    .iter()
                    .map(|z| Complex::new(z.re.as_f64(), z.im.as_f64()))
                    .collect(),
            ),
        }
    }

    /// Rank ≤ 4, left-padded with unit dims.
    fn rank4(&self) -> Result<[usize; 4]> {
        if self.dims.len() > 4 {
            return Err(TensorError::InvalidDims {
                dims: self.dims.clone(),
                reason: "rank above 4 cannot be viewed as NCHW".into(),
            });
        }
        let mut d = [1; 4];
        d[4 - self.dims.len()..].copy_from_slice(&self.dims);
        Ok(d)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        match &self.payload {
            Payload::Real(v) => {
                Tensor::from_vec(self.rank4()?, v.iter().map(|&x| T::lit(x)).collect())
            }
            Payload::Complex(_) => Err(TensorError::Config(
                "expected a real tensor, found complex payload".into(),
            )),
        }
    }

    pub fn to_complex<T: Scalar>(&self) -> Result<ComplexTensor<T>> {
        match &self.payload {
            Payload::Complex(v) => ComplexTensor::from_vec(
                self.rank4()?,
                v.iter()
                    .map(|z| Complex::new(T::lit(z.re), T::lit(z.im)))
                    .collect(),
            ),
            Payload::Real(_) => Err(TensorError::Config(
                "expected a complex tensor, found real payload".into(),
            )),
        }
    }
}

pub fn encode(raw: &RawTensor) -> Vec<u8> {
    let width = match raw.payload {
        Payload::Real(_) => 8,
        Payload::Complex(_) => 16,
    };
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * raw.dims.len() + width * raw.payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(raw.payload.dtype() as u8);
    out.push(raw.dims.len() as u8);
    for &d in &raw.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &raw.payload {
        Payload::Real(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::Complex(v) => v.iter().for_each(|z| {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }),
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> TensorError {
    TensorError::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

fn read_f64(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<RawTensor> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "truncated before end of magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    if bytes.len() < HEADER_FIXED {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::Real64,
        1 => DType::Complex64Pair,
        other => return Err(format_err(5, format!("unknown dtype code {other}"))),
    };
    let rank = bytes[6] as usize;
    let dims_end = HEADER_FIXED + 8 * rank;
    if bytes.len() < dims_end {
        return Err(format_err(
            bytes.len(),
            format!("truncated dims: rank {rank} needs {dims_end} header bytes"),
        ));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for i in 0..rank {
        let at = HEADER_FIXED + 8 * i;
        let d = usize::try_from(read_u64(bytes, at))
            .map_err(|_| format_err(at, "dimension does not fit in usize"))?;
        if d == 0 {
            return Err(format_err(at, format!("dimension {i} is zero")));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| format_err(at, "element count overflows"))?;
        dims.push(d);
    }
    let width = match dtype {
        DType::Real64 => 8,
        DType::Complex64Pair => 16,
    };
    let expected = count
        .checked_mul(width)
        .and_then(|n| n.checked_add(dims_end))
        .ok_or_else(|| format_err(dims_end, "payload size overflows"))?;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes total"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(
            expected,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    let payload = match dtype {
        DType::Real64 => Payload::Real(
            (0..count)
                .map(|i| read_f64(bytes, dims_end + 8 * i))
                .collect(),
        ),
        DType::Complex64Pair => Payload::Complex(
            (0..count)
                .map(|i| {
                    let at = dims_end + 16 * i;
                    Complex::new(read_f64(bytes, at), read_f64(bytes, at + 8))
                })
                .collect(),
        ),
    };
    Ok(RawTensor { dims, payload })
}

pub fn write_raw(path: impl AsRef<Path>, raw: &RawTensor) -> Result<()> {
    fs::write(path, encode(raw))?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawTensor> {
    decode(&fs::read(path)?)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    write_raw(path, &RawTensor::from_tensor(t))
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_raw(path)?.to_tensor()
}

pub fn write_complex<T: Scalar>(path: impl AsRef<Path>, t: &ComplexTensor<T>) -> Result<()> {
    write_raw(path, &RawTensor::from_complex(t))
}

pub fn read_complex<T: Scalar>(path: impl AsRef<Path>) -> Result<ComplexTensor<T>> {
    read_raw(path)?.to_complex()
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Writes every leaf as `<name>.mgdt` plus a `key = value` manifest that
/// lists shapes followed by the given constants.
pub fn write_param_dir<T: Scalar, P: ParamSet<T>>(
    dir: impl AsRef<Path>,
    params: &P,
    constants: &[(String, String)],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# MGDT parameter manifest\n");
    for (k, v) in constants {
        let _ = writeln!(manifest, "{k} = {v}");
    }
    let mut first_err = None;
    params.visit("", &mut |p| {
        let dims = p.dims.to_vec();
        let shape = dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let _ = writeln!(
            manifest,
            "param.{} = {}",
            p.name,
            if shape.is_empty() {
                "scalar".into()
            } else {
                shape
            }
        );
        let raw = RawTensor {
            dims,
            payload: Payload::Real(p.data.iter().map(|v| v.as_f64()).collect()),
        };
        if let Err(e) = write_raw(dir.join(format!("{}.mgdt", p.name)), &raw) {
            first_err.get_or_insert(e);
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Loads leaves written by [`write_param_dir`] into an existing layout;
/// every file must match the leaf's dims exactly.
pub fn read_param_dir<T: Scalar, P: ParamSet<T>>(
    dir: impl AsRef<Path>,
    params: &mut P,
) -> Result<()> {
    let dir = dir.as_ref();
    let mut first_err = None;
    params.visit_mut("", &mut |p| {
        if first_err.is_some() {
            return;
        }
        let loaded = read_raw(dir.join(format!("{}.mgdt", p.name))).and_then(|raw| {
            if raw.dims != p.dims {
                return Err(TensorError::InvalidDims {
                    dims: raw.dims,
                    reason: format!("parameter {} expects dims {:?}", p.name, p.dims),
                });
            }
            match raw.payload {
                Payload::Real(v) => Ok(v),
                Payload::Complex(_) => Err(TensorError::Config(format!(
                    "parameter {} must be real",
                    p.name
                ))),
            }
        });
        match loaded {
            Ok(v) => p.data.iter_mut().zip(v).for_each(|(d, s)| *d = T::lit(s)),
            Err(e) => first_err = Some(e),
        }
    });
    first_err.map_or(Ok(()), Err)
}
