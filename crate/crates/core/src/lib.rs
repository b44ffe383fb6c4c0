//! Zero-mode conservation correction for neural PDE surrogates.
//!
//! A learned one-step operator rarely preserves the domain integral of a
//! conserved field. Overwriting the zero Fourier mode of each prediction
//! with that of the input state restores the integral exactly and never
//! increases the L2 error against conserving ground truth. The crate ships the
//! correction itself, reference solvers for six conservation laws, a small
//! spectral neural operator with exact gradients, the training and rollout
//! protocol, metrics and a binary dataset format.

pub mod dataset;
pub mod ecf;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod operator;
pub mod pipeline;
pub mod solvers;
pub mod spectral;
pub mod training;
pub mod verify;

pub use dataset::{DatasetConfig, Split, TrajectoryDataset};
pub use ecf::{
    correct_field, correct_spectrum, encode_conserved, error_decomposition, error_reduction_check,
    ConservationMask, ConservedQuantity,
};
pub use error::{EcfError, Result};
pub use metrics::{MetricsRecord, Variant};
pub use grid::{Boundary, GridField, GridSpec, Precision};
pub use solvers::{ProblemKind, ProblemParams};
pub use spectral::{fft_forward, fft_inverse, l2_norm, ModeIndex, Spectrum};
pub use training::{CorrectionMode, TrainConfig, TrainMode};
