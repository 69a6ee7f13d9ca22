use rand::Rng;

use super::{ConvLayer, Tensor2};
use crate::error::{Error, Result};

/// Kernel sizes of the five convolutions.
pub const KERNEL_SIZES: [usize; 5] = [3, 5, 7, 5, 3];

/// Residual CNN with channel path `N → s₁ → s₂ → s₂ → s₁ → N`, ReLU after
/// the first four layers and the input added to the output.
///
/// With every weight and bias zero the network is exactly the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams {
    pub layers: Vec<ConvLayer>,
}

fn channel_path(n: usize, s1: usize, s2: usize) -> [(usize, usize); 5] {
    [(n, s1), (s1, s2), (s2, s2), (s2, s1), (s1, n)]
}

/// Layer inputs recorded by [`UNetParams::forward_taped`]. Entry `i > 0` is
/// the ReLU output of layer `i − 1`.
#[derive(Debug, Clone)]
pub struct UNetTape {
    inputs: Vec<Tensor2>,
}

impl UNetParams {
    pub fn zeros(n: usize, s1: usize, s2: usize) -> Self {
        Self {
            layers: channel_path(n, s1, s2)
                .iter()
                .zip(KERNEL_SIZES)
                .map(|(&(i, o), k)| ConvLayer::zeros(i, o, k))
                .collect(),
        }
    }

    pub fn init(n: usize, s1: usize, s2: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: channel_path(n, s1, s2)
                .iter()
                .zip(KERNEL_SIZES)
                .map(|(&(i, o), k)| ConvLayer::init(i, o, k, rng))
                .collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn add_assign(&mut self, other: &UNetParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight
                .iter_mut()
                .zip(&b.weight)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.in_channels, l.out_channels, l.kernel_size))
                .collect(),
        }
    }

    fn check(&self, x: &Tensor2) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::Dimension {
                what: "UNet input channels",
                expected: self.channels(),
                actual: x.channels(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        Ok(self.forward_taped(x)?.0)
    }

    pub fn forward_taped(&self, x: &Tensor2) -> Result<(Tensor2, UNetTape)> {
        self.check(x)?;
        let mut inputs = Vec::with_capacity(5);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&h)?;
            inputs.push(h);
            if i < 4 {
                out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h.add_assign(x);
        Ok((h, UNetTape { inputs }))
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    /// The ReLU derivative at zero is taken as zero.
    pub fn backward(&self, tape: &UNetTape, dy: &Tensor2, grad: &mut UNetParams) -> Tensor2 {
        let mut g = dy.clone();
        for i in (0..5).rev() {
            let input = &tape.inputs[i];
            let mut dx = self.layers[i].backward(input, &g, &mut grad.layers[i]);
            if i > 0 {
                dx.data_mut()
                    .iter_mut()
                    .zip(input.data())
                    .for_each(|(d, &a)| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
            g = dx;
        }
        g.add_assign(dy);
        g
    }
}
