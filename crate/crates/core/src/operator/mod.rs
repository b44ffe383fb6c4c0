//! A small spectral neural operator with exact reverse-mode gradients.
//!
//! The network lifts the input channels pointwise to `width` hidden channels,
//! applies `layers` blocks of `gelu(K h + W h + b)` where `K` is a spectral
//! convolution over the retained low modes, and projects back pointwise.

mod adamw;
mod checkpoint;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{EcfError, Result};
use crate::grid::GridSpec;
use crate::spectral::ModeIndex;

pub use adamw::{AdamW, AdamWParams};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{gelu, gelu_prime, LossKind, OperatorModel, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    /// Physical channels in and out.
    pub channels: usize,
    pub layers: usize,
    pub width: usize,
    /// Retained modes per axis: frequencies with `|n_a| < modes`.
    pub modes: usize,
    pub seed: u64,
}

impl OperatorConfig {
    pub fn new(channels: usize) -> Self {
        OperatorConfig {
            channels,
            layers: 2,
            width: 16,
            modes: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 || self.modes == 0 {
            return Err(EcfError::Config(format!(
                "operator needs channels, width and modes >= 1 (got {}, {}, {})",
                self.channels, self.width, self.modes
            )));
        }
        Ok(())
    }

    /// Retained modes must stay below the Nyquist bin of every axis.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        for &n in grid.resolution() {
            if 2 * self.modes > n {
                return Err(EcfError::InvalidArgument(format!(
                    "{} retained modes exceed the Nyquist bound of a {n}-point axis",
                    self.modes
                )));
            }
        }
        Ok(())
    }
}

/// Retained modes for a spectral layer on a `dims`-dimensional grid: the
/// zero mode first, then the half-set `n > 0` in lexicographic order. Their
/// negatives carry the conjugate weights.
pub fn retained_modes(dims: usize, modes: usize) -> Vec<ModeIndex> {
    let m = modes as i64 - 1;
    let mut out = vec![ModeIndex::zero(dims)];
    if dims == 1 {
        out.extend((1..=m).map(|a| ModeIndex::new(&[a])));
    } else {
        for a in 0..=m {
            for b in -m..=m {
                if a > 0 || b > 0 {
                    out.push(ModeIndex::new(&[a, b]));
                }
            }
        }
    }
    out
}

/// Real parameters per `(out, in)` pair of a spectral layer: one for the
/// zero mode, two for each half-set mode.
pub fn spectral_reals(dims: usize, modes: usize) -> usize {
    2 * retained_modes(dims, modes).len() - 1
}

/// Offsets of one hidden block in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    /// `[out][in][k]` with `k` over [`spectral_reals`].
    pub spectral: usize,
    /// `[out][in]`
    pub weight: usize,
    pub bias: usize,
}

/// Named offsets into the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub lift_weight: usize,
    pub lift_bias: usize,
    pub blocks: Vec<BlockLayout>,
    pub proj_weight: usize,
    pub proj_bias: usize,
    pub spectral_reals: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(config: &OperatorConfig, dims: usize) -> Self {
        let (c, w) = (config.channels, config.width);
        let sr = spectral_reals(dims, config.modes);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let lift_weight = take(w * c);
        let lift_bias = take(w);
        let blocks = (0..config.layers)
            .map(|_| BlockLayout {
                spectral: take(w * w * sr),
                weight: take(w * w),
                bias: take(w),
            })
            .collect();
        let proj_weight = take(c * w);
        let proj_bias = take(c);
        Layout {
            lift_weight,
            lift_bias,
            blocks,
            proj_weight,
            proj_bias,
            spectral_reals: sr,
            len: at,
        }
    }
}
