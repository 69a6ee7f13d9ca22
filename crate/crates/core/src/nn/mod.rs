//! Circular 1D convolutions, per-field residual UNets, flow-map injection
//! and the composed coarse-to-fine interpolant
//!
//! ```text
//! NN(x) = UNet(x) + LearnFlow(UNet(x))
//! ```
//!
//! Time levels are stacked into channels, so each field is an `N × L`
//! tensor. Gradients are computed by hand-written reverse passes over an
//! explicit [`Tape`].

mod conv;
mod interpolant;
mod io;
mod tensor;
mod unet;

pub use conv::{conv1d_circular, ConvLayer};
pub use interpolant::{learnflow_forward, NeuralInterpolant, Tape};
pub use io::{MODEL_MAGIC, MODEL_VERSION};
pub use tensor::Tensor2;
pub use unet::{UNetParams, UNetTape, KERNEL_SIZES};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Shape of an interpolant: `N` levels (channels), `L` DOF per field and
/// the two hidden widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub levels: usize,
    pub length: usize,
    pub s1: usize,
    pub s2: usize,
}

impl Architecture {
    /// Full-size widths `s₁ = 8N`, `s₂ = 64N`.
    pub fn full(levels: usize, length: usize) -> Self {
        Self {
            levels,
            length,
            s1: 8 * levels,
            s2: 64 * levels,
        }
    }

    /// Reduced widths `s₁ = 2N`, `s₂ = 8N` for quick runs.
    pub fn desk(levels: usize, length: usize) -> Self {
        Self {
            levels,
            length,
            s1: 2 * levels,
            s2: 8 * levels,
        }
    }

    /// `D = 3L`: two P1 velocity blocks and one P0 pressure block.
    pub fn dim(&self) -> usize {
        3 * self.length
    }

    pub fn validate(&self) -> Result<()> {
        if [self.levels, self.length, self.s1, self.s2].contains(&0) {
            return Err(Error::Config(format!(
                "architecture sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Six independent UNets: stage one (`u`, `v`, `p`) and stage two, the
/// post-flow networks inside LearnFlow.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub stage_one: [UNetParams; 3],
    pub stage_two: [UNetParams; 3],
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        let u = || UNetParams::zeros(arch.levels, arch.s1, arch.s2);
        Self {
            arch,
            stage_one: [u(), u(), u()],
            stage_two: [u(), u(), u()],
        }
    }

    /// Fan-in uniform weights, zero biases, drawn from the init stream.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut u = || UNetParams::init(arch.levels, arch.s1, arch.s2, &mut rng);
        let stage_one = [u(), u(), u()];
        let stage_two = [u(), u(), u()];
        Self {
            arch,
            stage_one,
            stage_two,
        }
    }

    pub fn unets(&self) -> impl Iterator<Item = &UNetParams> {
        self.stage_one.iter().chain(&self.stage_two)
    }

    pub fn unets_mut(&mut self) -> impl Iterator<Item = &mut UNetParams> {
        self.stage_one.iter_mut().chain(&mut self.stage_two)
    }

    /// Every weight and bias tensor in declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.unets()
            .flat_map(|u| u.layers.iter())
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.unets_mut()
            .flat_map(|u| u.layers.iter_mut())
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }
}
