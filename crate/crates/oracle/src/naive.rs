//! Textbook loops for the primitive ops.

use mgdfis_core::{ConvSpec, Matrix, Tensor};

pub type C64 = (f64, f64);

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Seven nested loops over batch, output channel, output row, output
/// column, input channel in group, kernel row, kernel column.
pub fn conv2d(x: &Tensor<f64>, weight: &Tensor<f64>, bias: &[f64], spec: &ConvSpec) -> Tensor<f64> {
    let [n, _, h, w] = x.dims();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let pad = spec.padding;
    let oh = (h + pad.top + pad.bottom - dh * (kh - 1) - 1) / sh + 1;
    let ow = (w + pad.left + pad.right - dw * (kw - 1) - 1) / sw + 1;
    let ipg = spec.in_channels / spec.groups;
    let opg = spec.out_channels / spec.groups;
    let mut out = Tensor::zeros([n, spec.out_channels, oh, ow]);
    for b in 0..n {
        for oc in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.get(oc).copied().unwrap_or(0.0);
                    for ic in 0..ipg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky * dh) as isize - pad.top as isize;
                                let ix = (ox * sw + kx * dw) as isize - pad.left as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let c_in = (oc / opg) * ipg + ic;
                                acc += weight.get([oc, ic, ky, kx])
                                    * x.get([b, c_in, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out.set([b, oc, oy, ox], acc);
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub fn linear(x: &Matrix<f64>, weight: &Matrix<f64>, bias: &[f64]) -> Matrix<f64> {
    let mut y = matmul(x, weight);
    for i in 0..y.rows() {
        for j in 0..y.cols() {
            y.set(i, j, y.get(i, j) + bias.get(j).copied().unwrap_or(0.0));
        }
    }
    y
}

/// `linear` applied to the channel vector of every pixel.
pub fn pixel_linear(x: &Tensor<f64>, weight: &Matrix<f64>, bias: &[f64]) -> Tensor<f64> {
    let [n, _, h, w] = x.dims();
    let mut out = Tensor::zeros([n, weight.cols(), h, w]);
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for o in 0..weight.cols() {
                    let mut s = bias.get(o).copied().unwrap_or(0.0);
                    for i in 0..weight.rows() {
                        s += x.get([b, i, y, xx]) * weight.get(i, o);
                    }
                    out.set([b, o, y, xx], s);
                }
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for b in 0..n {
        for ch in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    s += x.get([b, ch, y, xx]);
                }
            }
            out.set([b, ch, 0, 0], s / (h * w) as f64);
        }
    }
    out
}

/// Direct `O((HW)²)` DFT of one plane; `sign` is `-1` forward, `+1`
/// inverse (unnormalized).
pub fn dft_plane(data: &[C64], h: usize, w: usize, sign: f64) -> Vec<C64> {
    let mut out = vec![(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = sign
                        * 2.0
                        * std::f64::consts::PI
                        * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    let (s, c) = phase.sin_cos();
                    let (a, b) = data[y * w + x];
                    re += a * c - b * s;
                    im += a * s + b * c;
                }
            }
            out[u * w + v] = (re, im);
        }
    }
    out
}

/// Forward DFT of every plane of a real tensor.
pub fn dft2(x: &Tensor<f64>) -> Vec<Vec<C64>> {
    let [n, c, h, w] = x.dims();
    let mut planes = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let data: Vec<C64> = x.plane(b, ch).iter().map(|&v| (v, 0.0)).collect();
            planes.push(dft_plane(&data, h, w, -1.0));
        }
    }
    planes
}

/// Real part of the normalized inverse DFT of each plane.
pub fn idft2_real(planes: &[Vec<C64>], dims: [usize; 4]) -> Tensor<f64> {
    let [_, c, h, w] = dims;
    let mut out = Tensor::zeros(dims);
    for (i, p) in planes.iter().enumerate() {
        let back = dft_plane(p, h, w, 1.0);
        let (b, ch) = (i / c, i % c);
        for (k, v) in back.iter().enumerate() {
            out.set([b, ch, k / w, k % w], v.0 / (h * w) as f64);
        }
    }
    out
}

/// Bilinear sample position: half-pixel centres, clamped to the edge.
fn sample_pos(o: usize, out: usize, inp: usize) -> (usize, usize, f64) {
    let mut s = (o as f64 + 0.5) * inp as f64 / out as f64 - 0.5;
    if s < 0.0 {
        s = 0.0;
    }
    if s > (inp - 1) as f64 {
        s = (inp - 1) as f64;
    }
    let lo = s.floor() as usize;
    let hi = if lo + 1 < inp { lo + 1 } else { lo };
    (lo, hi, s - lo as f64)
}

pub fn resize_bilinear(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                let (y0, y1, fy) = sample_pos(oy, oh, h);
                for ox in 0..ow {
                    let (x0, x1, fx) = sample_pos(ox, ow, w);
                    let v = x.get([b, ch, y0, x0]) * (1.0 - fy) * (1.0 - fx)
                        + x.get([b, ch, y0, x1]) * (1.0 - fy) * fx
                        + x.get([b, ch, y1, x0]) * fy * (1.0 - fx)
                        + x.get([b, ch, y1, x1]) * fy * fx;
                    out.set([b, ch, oy, ox], v);
                }
            }
        }
    }
    out
}

pub fn concat_channels(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [n, ca, h, w] = a.dims();
    let cb = b.channels();
    Tensor::from_fn([n, ca + cb, h, w], |[bi, c, y, x]| {
        if c < ca {
            a.get([bi, c, y, x])
        } else {
            b.get([bi, c - ca, y, x])
        }
    })
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(a.dims(), |i| a.get(i) + b.get(i))
}
