//! Focal-surface computer-generated holography.
//!
//! * [`wave_optics`]: band-limited angular-spectrum propagation.
//! * [`sac_ops`]: spatially invariant / varying / adaptive convolution.
//! * [`focal_model`]: the learned focal-surface light-transport network.
//! * [`holo_opt`]: phase-only hologram optimization (multiplane and focal-surface).
//! * [`dataset_gen`]: focal-surface training-set synthesis.
//! * [`metrics`], [`imageio`], [`bench`]: evaluation and I/O.

pub mod config;
pub mod bench;
pub mod container;
pub mod dataset_gen;
mod error;
pub mod fft;
pub mod focal_model;
pub mod hologram;
pub mod imageio;
pub mod metrics;
pub mod holo_opt;
pub mod optim;
pub mod sac_ops;
pub mod tensor;
pub mod wave_optics;

pub use error::{Error, Result};
pub use hologram::{FocalSurface, PhaseHologram, ReconstructionTarget};
pub use tensor::Tensor3;
