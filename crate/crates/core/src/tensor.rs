//! Dense rank-4 tensors in batch, channel, height, width order.
//!
//! Storage is row-major with width varying fastest. `Matrix` is the
//! two-dimensional companion used by linear layers, and `ComplexTensor`
//! carries frequency-domain features with the same layout as `Tensor`.

use num_complex::Complex;

use crate::error::{Result, TensorError};
use crate::Scalar;

/// Dims of a rank-4 tensor: `[batch, channels, height, width]`.
pub type Dims = [usize; 4];

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(TensorError::InvalidDims {
            dims: dims.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(TensorError::InvalidDims {
                dims: dims.to_vec(),
                reason: format!(
                    "product of dims is {len} but data has {} elements",
                    data.len()
                ),
            });
        }
        Ok(Self { dims, data })
    }

    /// # Panics
    /// If any dim is zero.
    pub fn full(dims: Dims, value: T) -> Self {
        check_dims(dims).expect("tensor dims must be non-zero");
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: Dims) -> Self {
        Self::full(dims, T::one())
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut t = Self::zeros(dims);
        let [n, c, h, w] = dims;
        let mut i = 0;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f([b, ch, y, x]);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.dims;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// The `H×W` plane for one (batch, channel) pair.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let start = (b * self.dims[1] + c) * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let start = (b * self.dims[1] + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn reshape(self, dims: Dims) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_dims(other, op)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_dims(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.same_dims(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Errors naming the first axis on which the dims disagree.
    pub fn same_dims(&self, other: &Self, op: &'static str) -> Result<()> {
        check_same_dims(self.dims, other.dims, op)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

pub(crate) const AXIS_NAMES: [&str; 4] = ["batch", "channel", "height", "width"];

pub(crate) fn check_same_dims(expected: Dims, actual: Dims, op: &'static str) -> Result<()> {
    for axis in 0..4 {
        if expected[axis] != actual[axis] {
            return Err(TensorError::mismatch(
                op,
                AXIS_NAMES[axis],
                expected[axis],
                actual[axis],
            ));
        }
    }
    Ok(())
}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(TensorError::InvalidDims {
                dims: vec![rows, cols],
                reason: format!("matrix needs {} elements, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be non-zero");
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · rhs`, accumulated row by row so the inner loop is contiguous.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(TensorError::mismatch(
                "matmul", "inner", self.cols, rhs.rows,
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(TensorError::mismatch(
                "t_matmul", "inner", self.rows, rhs.rows,
            ));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let brow = rhs.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(TensorError::mismatch(
                "matmul_t", "inner", self.cols, rhs.cols,
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..rhs.rows {
                let v = a.iter().zip(rhs.row(c)).map(|(&x, &y)| x * y).sum();
                out.data[r * rhs.rows + c] = v;
            }
        }
        Ok(out)
    }
}

/// Complex tensor with the same layout as [`Tensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor<T> {
    dims: Dims,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn from_vec(dims: Dims, data: Vec<Complex<T>>) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(TensorError::InvalidDims {
                dims: dims.to_vec(),
                reason: format!(
                    "product of dims is {len} but data has {} elements",
                    data.len()
                ),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        check_dims(dims).expect("tensor dims must be non-zero");
        Self {
            dims,
            data: vec![Complex::new(T::zero(), T::zero()); dims.iter().product()],
        }
    }

    pub fn from_real(t: &Tensor<T>) -> Self {
        Self {
            dims: t.dims(),
            data: t
                .data()
                .iter()
                .map(|&v| Complex::new(v, T::zero()))
                .collect(),
        }
    }

    pub fn from_parts(re: &Tensor<T>, im: &Tensor<T>) -> Result<Self> {
        re.same_dims(im, "complex_from_parts")?;
        Ok(Self {
            dims: re.dims(),
            data: re
                .data()
                .iter()
                .zip(im.data())
                .map(|(&a, &b)| Complex::new(a, b))
                .collect(),
        })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> Complex<T> {
        let [_, c, h, w] = self.dims;
        self.data[((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]]
    }

    pub fn re(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn im(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|z| z.im).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims_and_bad_length() {
        assert!(Tensor::<f64>::from_vec([1, 0, 2, 2], vec![]).is_err());
        assert!(Tensor::<f64>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec([1, 1, 2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn layout_is_width_fastest() {
        let t = Tensor::<f64>::from_fn([2, 3, 4, 5], |[b, c, h, w]| {
            (b * 1000 + c * 100 + h * 10 + w) as f64
        });
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[5], 10.0);
        assert_eq!(t.get([1, 2, 3, 4]), 1234.0);
        assert_eq!(t.plane(1, 2)[0], 1200.0);
    }

    #[test]
    fn mismatch_names_the_axis() {
        let a = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 2, 4, 3]);
        match a.add(&b) {
            Err(TensorError::ShapeMismatch { axis, .. }) => assert_eq!(axis, "height"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a = Matrix::<f64>::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 2.0);
        let b = Matrix::<f64>::from_fn(3, 2, |r, c| (r + 2 * c) as f64 - 1.0);
        let via_t = a.transpose().matmul(&b).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), via_t);
        let c = Matrix::<f64>::from_fn(5, 4, |r, c| (r as f64) - (c as f64) * 0.25);
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
    }
}
