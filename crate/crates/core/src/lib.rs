//! Coarse-to-fine neural interpolation for the rotating linear shallow-water
//! equations on a periodic interval.
//!
//! The crate is organised bottom-up:
//!
//! - [`fe`]: periodic mesh, P1/P0 finite-element spaces, matrix assembly and
//!   the discrete energy.
//! - [`dynamics`]: the energy-conserving Crank–Nicolson core and its dense
//!   one-step flow map.
//! - [`transfer`]: exact prolongation between nested meshes.
//! - [`dataset`]: randomized initial data, paired coarse/fine runs and the
//!   binary dataset format.
//! - [`nn`]: circular 1D convolutions, per-field residual UNets, flow-map
//!   injection and the composed interpolant with hand-written backprop.
//! - [`trainer`]: FE-norm loss, energy penalty, Adam and the training /
//!   evaluation loops.
//! - [`verify`]: the invariant suite exposed by the `verify` command.

mod codec;
pub mod dataset;
pub mod dynamics;
mod error;
pub mod fe;
pub mod nn;
#[cfg(test)]
mod oracle;
pub mod rng;
pub mod trainer;
pub mod transfer;
pub mod verify;

pub use dataset::{Dataset, DatasetConfig, SampleParams, TrajectoryPair};
pub use dynamics::{FlowMap, PhysicsParams, State, SystemFactorization, Trajectory};
pub use error::{Error, Result};
pub use fe::{BandedMatrix, FieldP0, FieldP1, PeriodicMesh};
pub use nn::{Architecture, ModelParams, NeuralInterpolant, Tensor2, UNetParams};
pub use trainer::{EvalConfig, EvalReport, TrainConfig, TrainReport};
pub use transfer::MeshPair;
