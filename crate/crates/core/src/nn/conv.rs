use std::cell::RefCell;

use rand::Rng;

use super::Tensor2;
use crate::error::{Error, Result};

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// 1D convolution with circular padding of `(k − 1)/2` on each side, so the
/// output keeps the input length.
///
/// `y[o][i] = bias[o] + Σ_c Σ_j w[o][c][j] · x[c][(i + j − (k−1)/2) mod L]`
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// `out × in × k`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        assert!(kernel_size % 2 == 1, "kernel size must be odd");
        Self {
            in_channels,
            out_channels,
            kernel_size,
            weight: vec![0.0; out_channels * in_channels * kernel_size],
            bias: vec![0.0; out_channels],
        }
    }

    /// Weights uniform on `±sqrt(1 / (in · k))`, biases zero.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel_size);
        let bound = (1.0 / (in_channels * kernel_size) as f64).sqrt();
        layer
            .weight
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..bound));
        layer
    }

    fn patch_rows(&self) -> usize {
        self.in_channels * self.kernel_size
    }

    /// Fills `cols` with the `(in·k) × L` matrix of shifted input copies.
    fn im2col(&self, x: &Tensor2, cols: &mut Vec<f64>) {
        let (l, k) = (x.length(), self.kernel_size);
        let pad = (k - 1) / 2;
        cols.resize(self.patch_rows() * l, 0.0);
        for c in 0..self.in_channels {
            let src = x.row(c);
            for j in 0..k {
                let dst = &mut cols[(c * k + j) * l..(c * k + j + 1) * l];
                // dst[i] = src[(i + j − pad) mod L]
                let shift = (j + l * k - pad) % l;
                dst[..l - shift].copy_from_slice(&src[shift..]);
                dst[l - shift..].copy_from_slice(&src[..shift]);
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], dx: &mut Tensor2) {
        let (l, k) = (dx.length(), self.kernel_size);
        let pad = (k - 1) / 2;
        for c in 0..self.in_channels {
            let dst = dx.row_mut(c);
            for j in 0..k {
                let src = &cols[(c * k + j) * l..(c * k + j + 1) * l];
                let shift = (j + l * k - pad) % l;
                for (d, s) in dst[shift..].iter_mut().zip(&src[..l - shift]) {
                    *d += s;
                }
                for (d, s) in dst[..shift].iter_mut().zip(&src[l - shift..]) {
                    *d += s;
                }
            }
        }
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Dimension {
                what: "conv input channels",
                expected: self.in_channels,
                actual: x.channels(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(x)?;
        let l = x.length();
        let mut y = Tensor2::zeros(self.out_channels, l);
        for (o, &b) in self.bias.iter().enumerate() {
            y.row_mut(o).iter_mut().for_each(|v| *v = b);
        }
        let kk = self.patch_rows();
        SCRATCH.with_borrow_mut(|(cols, _)| {
            self.im2col(x, cols);
            // y (out × L) += W (out × in·k) · cols (in·k × L)
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels,
                    kk,
                    l,
                    1.0,
                    self.weight.as_ptr(),
                    kk as isize,
                    1,
                    cols.as_ptr(),
                    l as isize,
                    1,
                    1.0,
                    y.data_mut().as_mut_ptr(),
                    l as isize,
                    1,
                );
            }
        });
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    pub fn backward(&self, x: &Tensor2, dy: &Tensor2, grad: &mut ConvLayer) -> Tensor2 {
        assert_eq!(x.channels(), self.in_channels);
        assert_eq!(dy.channels(), self.out_channels);
        assert_eq!(x.length(), dy.length());
        let l = x.length();
        let kk = self.patch_rows();
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb += dy.row(o).iter().sum::<f64>();
        }
        let mut dx = Tensor2::zeros(self.in_channels, l);
        SCRATCH.with_borrow_mut(|(cols, dcols)| {
            self.im2col(x, cols);
            dcols.resize(kk * l, 0.0);
            unsafe {
                // dW (out × in·k) += dy (out × L) · colsᵀ (L × in·k)
                matrixmultiply::dgemm(
                    self.out_channels,
                    l,
                    kk,
                    1.0,
                    dy.data().as_ptr(),
                    l as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    l as isize,
                    1.0,
                    grad.weight.as_mut_ptr(),
                    kk as isize,
                    1,
                );
                // dcols (in·k × L) = Wᵀ (in·k × out) · dy (out × L)
                matrixmultiply::dgemm(
                    kk,
                    self.out_channels,
                    l,
                    1.0,
                    self.weight.as_ptr(),
                    1,
                    kk as isize,
                    dy.data().as_ptr(),
                    l as isize,
                    1,
                    0.0,
                    dcols.as_mut_ptr(),
                    l as isize,
                    1,
                );
            }
            self.col2im_add(dcols, &mut dx);
        });
        dx
    }
}

pub fn conv1d_circular(x: &Tensor2, layer: &ConvLayer) -> Result<Tensor2> {
    layer.forward(x)
}
