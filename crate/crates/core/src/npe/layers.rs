//! Dense, masked and 1D convolution layers with explicit backward passes.
//! Activations are row-major `(batch, features)` or channel-last
//! `(batch, time, channels)`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::Real;

pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

fn uniform<T: Real, R: Rng>(rng: &mut R, shape: (usize, usize), bound: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || cast(rng.random_range(-bound..bound)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `(in, out)`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform fan-in initialization, `U(-1/√in, 1/√in)`.
    pub fn new<R: Rng>(rng: &mut R, n_in: usize, n_out: usize) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Linear {
            w: uniform(rng, (n_in, n_out), bound),
            b: Array1::from_shape_simple_fn(n_out, || cast(rng.random_range(-bound..bound))),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            w: Array2::zeros((n_in, n_out)),
            b: Array1::zeros(n_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w.nrows(), self.w.ncols())
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `∂L/∂x`.
    pub fn backward(&self, x: ArrayView2<T>, gy: ArrayView2<T>, grad: &mut Linear<T>) -> Array2<T> {
        grad.w += &x.t().dot(&gy);
        grad.b += &gy.sum_axis(Axis(0));
        gy.dot(&self.w.t())
    }

    pub fn params(&self) -> [&[T]; 2] {
        [self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    pub fn params_mut(&mut self) -> [&mut [T]; 2] {
        [self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

pub fn relu_inplace<T: Real>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward<T: Real>(out: &Array2<T>, g: &mut Array2<T>) {
    ndarray::Zip::from(g).and(out).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Kernel-3, no padding, channel-last convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    /// `(kernel · in_channels, out_channels)`, rows ordered tap-major.
    pub lin: Linear<T>,
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    if len < kernel {
        0
    } else {
        (len - kernel) / stride + 1
    }
}

impl<T: Real> Conv1d<T> {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Conv1d {
            kernel,
            stride,
            in_channels,
            lin: Linear::new(rng, kernel * in_channels, out_channels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv1d {
            lin: self.lin.zeros_like(),
            ..*self
        }
    }

    pub fn out_channels(&self) -> usize {
        self.lin.w.ncols()
    }

    /// Each output position reads `kernel` consecutive time steps, which are
    /// contiguous in channel-last layout.
    fn im2col(&self, x: &Array3<T>) -> Array2<T> {
        let (b, len, c) = x.dim();
        let lo = conv_out_len(len, self.kernel, self.stride);
        let width = self.kernel * c;
        let src = x.as_slice().expect("standard layout");
        let mut cols = Array2::zeros((b * lo, width));
        let dst = cols.as_slice_mut().unwrap();
        for bi in 0..b {
            for t in 0..lo {
                let from = (bi * len + t * self.stride) * c;
                let to = (bi * lo + t) * width;
                dst[to..to + width].copy_from_slice(&src[from..from + width]);
            }
        }
        cols
    }

    /// Returns the pre-activation output and the im2col matrix for backward.
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, Array2<T>) {
        let (b, len, _) = x.dim();
        let lo = conv_out_len(len, self.kernel, self.stride);
        let cols = self.im2col(x);
        let y = self.lin.forward(cols.view());
        let y = y.into_shape_with_order((b, lo, self.out_channels())).unwrap();
        (y, cols)
    }

    pub fn backward(&self, in_len: usize, cols: &Array2<T>, gy: &Array3<T>, grad: &mut Conv1d<T>, need_input: bool) -> Option<Array3<T>> {
        let (b, lo, co) = gy.dim();
        let gy2 = gy.view().into_shape_with_order((b * lo, co)).unwrap();
        if !need_input {
            grad.lin.w += &cols.t().dot(&gy2);
            grad.lin.b += &gy2.sum_axis(Axis(0));
            return None;
        }
        let gcols = self.lin.backward(cols.view(), gy2, &mut grad.lin);
        let c = self.in_channels;
        let width = self.kernel * c;
        let mut gx = Array3::<T>::zeros((b, in_len, c));
        let dst = gx.as_slice_mut().unwrap();
        let src = gcols.as_slice().unwrap();
        for bi in 0..b {
            for t in 0..lo {
                let to = (bi * in_len + t * self.stride) * c;
                let from = (bi * lo + t) * width;
                for k in 0..width {
                    dst[to + k] += src[from + k];
                }
            }
        }
        Some(gx)
    }
}

/// Max pooling over time with kernel = stride; returns output and argmax.
pub fn maxpool_forward<T: Real>(x: &Array3<T>, k: usize) -> (Array3<T>, Vec<usize>) {
    let (b, len, c) = x.dim();
    let lo = conv_out_len(len, k, k);
    let mut y = Array3::zeros((b, lo, c));
    let mut arg = Vec::with_capacity(b * lo * c);
    for bi in 0..b {
        for t in 0..lo {
            for ch in 0..c {
                let mut best = t * k;
                for j in 1..k {
                    if x[[bi, t * k + j, ch]] > x[[bi, best, ch]] {
                        best = t * k + j;
                    }
                }
                y[[bi, t, ch]] = x[[bi, best, ch]];
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Real>(gy: &Array3<T>, arg: &[usize], in_len: usize) -> Array3<T> {
    let (b, lo, c) = gy.dim();
    let mut gx = Array3::zeros((b, in_len, c));
    let mut i = 0;
    for bi in 0..b {
        for t in 0..lo {
            for ch in 0..c {
                gx[[bi, arg[i], ch]] += gy[[bi, t, ch]];
                i += 1;
            }
        }
    }
    gx
}

pub fn relu3<T: Real>(x: &mut Array3<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

pub fn relu3_backward<T: Real>(out: &Array3<T>, g: &mut Array3<T>) {
    ndarray::Zip::from(g).and(out).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Copy columns `range` of a matrix.
pub fn columns<T: Real>(x: &Array2<T>, from: usize, to: usize) -> Array2<T> {
    x.slice(s![.., from..to]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv: Conv1d<f64> = Conv1d::new(&mut rng, 2, 3, 3, 2);
        let x = Array3::from_shape_fn((2, 9, 2), |(b, t, c)| (b * 100 + t * 10 + c) as f64 * 0.01);
        let (y, _) = conv.forward(&x);
        assert_eq!(y.dim(), (2, 4, 3));
        for b in 0..2 {
            for t in 0..4 {
                for o in 0..3 {
                    let mut acc = conv.lin.b[o];
                    for j in 0..3 {
                        for c in 0..2 {
                            acc += x[[b, 2 * t + j, c]] * conv.lin.w[[j * 2 + c, o]];
                        }
                    }
                    assert!((y[[b, t, o]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_lengths() {
        let trace: Vec<usize> = [(1000, 3, 2), (499, 3, 2), (249, 3, 2), (124, 3, 3), (41, 3, 2), (20, 3, 2)]
            .iter()
            .map(|&(n, k, s)| conv_out_len(n, k, s))
            .collect();
        assert_eq!(trace, vec![499, 249, 124, 41, 20, 9]);
    }
}
