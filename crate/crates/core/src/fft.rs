//! Planar 2-D DFT over the last two axes.
//!
//! Forward transforms are unnormalized; inverse transforms divide by
//! `H·W`. Any extent is supported (rustfft picks mixed-radix, Rader or
//! Bluestein plans as needed).

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::tensor::{ComplexTensor, Tensor};
use crate::Scalar;

struct Plan2d<T: Scalar> {
    rows: Arc<dyn Fft<T>>,
    cols: Arc<dyn Fft<T>>,
    h: usize,
    w: usize,
}

impl<T: Scalar> Plan2d<T> {
    fn new(h: usize, w: usize, direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows: planner.plan_fft(w, direction),
            cols: planner.plan_fft(h, direction),
            h,
            w,
        }
    }

    fn process(&self, data: &mut [Complex<T>]) {
        let plane = self.h * self.w;
        let mut column = vec![Complex::default(); self.h];
        let mut scratch = vec![
            Complex::default();
            self.rows
                .get_inplace_scratch_len()
                .max(self.cols.get_inplace_scratch_len())
        ];
        for chunk in data.chunks_exact_mut(plane) {
            // Rows are contiguous; rustfft processes them back to back.
            self.rows.process_with_scratch(chunk, &mut scratch);
            for x in 0..self.w {
                for y in 0..self.h {
                    column[y] = chunk[y * self.w + x];
                }
                self.cols.process_with_scratch(&mut column, &mut scratch);
                for y in 0..self.h {
                    chunk[y * self.w + x] = column[y];
                }
            }
        }
    }
}

pub fn fft2<T: Scalar>(x: &Tensor<T>) -> ComplexTensor<T> {
    fft2_complex(&ComplexTensor::from_real(x))
}

pub fn fft2_complex<T: Scalar>(x: &ComplexTensor<T>) -> ComplexTensor<T> {
    let [_, _, h, w] = x.dims();
    let mut out = x.clone();
    Plan2d::new(h, w, FftDirection::Forward).process(out.data_mut());
    out
}

/// Normalized inverse (divides by `H·W`).
pub fn ifft2_complex<T: Scalar>(x: &ComplexTensor<T>) -> ComplexTensor<T> {
    let [_, _, h, w] = x.dims();
    let mut out = x.clone();
    Plan2d::new(h, w, FftDirection::Inverse).process(out.data_mut());
    let inv = T::one() / T::lit((h * w) as f64);
    out.data_mut().iter_mut().for_each(|z| *z = *z * inv);
    out
}

/// Real part of the normalized inverse transform.
pub fn ifft2<T: Scalar>(x: &ComplexTensor<T>) -> Tensor<T> {
    ifft2_complex(x).re()
}

/// Adjoint of `y = Re(ifft2(x))` under the real inner product: maps a
/// real upstream gradient to the gradient on `(Re x, Im x)` packed as a
/// complex tensor.
pub fn ifft2_real_backward<T: Scalar>(grad_out: &Tensor<T>) -> ComplexTensor<T> {
    let n = T::lit(grad_out.plane_len() as f64);
    let mut g = fft2(grad_out);
    g.data_mut().iter_mut().for_each(|z| *z = *z / n);
    g
}

/// Adjoint of `X = fft2(x)` for real `x`: takes the packed gradient on
/// `(Re X, Im X)` and returns the gradient on `x`.
pub fn fft2_real_backward<T: Scalar>(grad_out: &ComplexTensor<T>) -> Tensor<T> {
    let n = T::lit(grad_out.dims()[2] as f64 * grad_out.dims()[3] as f64);
    ifft2_complex(grad_out).re().scale(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_concentrates_in_dc() {
        let c = 0.75;
        let x = Tensor::<f64>::full([1, 1, 3, 5], c);
        let spec = fft2(&x);
        assert!((spec.data()[0].re - c * 15.0).abs() < 1e-12);
        for z in &spec.data()[1..] {
            assert!(z.norm() < 1e-12);
        }
    }

    #[test]
    fn delta_gives_flat_spectrum() {
        let mut x = Tensor::<f64>::zeros([1, 1, 4, 7]);
        x.set([0, 0, 0, 0], 1.0);
        for z in fft2(&x).data() {
            assert!((z.re - 1.0).abs() < 1e-14 && z.im.abs() < 1e-14);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let x = Tensor::<f32>::from_fn([1, 2, 5, 3], |[_, c, h, w]| (c + h * 3 + w) as f32 * 0.1);
        let back = ifft2(&fft2(&x));
        assert!(back.max_abs_diff(&x).unwrap() < 1e-5);
    }
}
