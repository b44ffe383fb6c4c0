//! Discrete check of the integral balance `dE/dt = -boundary flux + integral of source`.

use crate::ecf::ConservationMask;
use crate::error::{EcfError, Result};
use crate::grid::GridField;
use crate::solvers::ConservationLawSpec;

/// Per-frame balance residual `max_c |dE_c/dt + boundary flux - source|`
/// over the masked channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxBalance {
    pub residuals: Vec<f64>,
}

impl FluxBalance {
    pub fn max(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Time derivative of `E` by centred differences at interior frames and
/// one-sided differences at the two ends.
pub fn conserved_rate(integrals: &[f64], frame_dt: f64) -> Vec<f64> {
    let n = integrals.len();
    (0..n)
        .map(|t| match t {
            0 => (integrals[1] - integrals[0]) / frame_dt,
            t if t == n - 1 => (integrals[n - 1] - integrals[n - 2]) / frame_dt,
            t => (integrals[t + 1] - integrals[t - 1]) / (2.0 * frame_dt),
        })
        .collect()
}

/// Evaluates the residual at every frame of `frames`, spaced `frame_dt` apart.
///
/// Only laws with zero boundary flux and a source of zero integral are
/// supported, which covers every shipped problem; for them the residual is `|dE/dt|`.
pub fn verify_flux_balance(
    frames: &[GridField],
    frame_dt: f64,
    law: &ConservationLawSpec,
    mask: &ConservationMask,
) -> Result<FluxBalance> {
    if frames.len() < 3 {
        return Err(EcfError::InvalidArgument(format!(
            "flux balance needs at least 3 frames, got {}",
            frames.len()
        )));
    }
    if !(frame_dt > 0.0) {
        return Err(EcfError::InvalidArgument(format!("frame spacing must be positive, got {frame_dt}")));
    }
    if !law.boundary_flux_zero || !law.source.integrates_to_zero() {
        return Err(EcfError::InvalidArgument(format!(
            "flux balance for {:?} with boundary flux / source terms is not supported",
            law.flux
        )));
    }
    let channels = frames[0].channels();
    if mask.len() != channels {
        return Err(EcfError::ShapeMismatch(format!("mask has {} flags for {channels} channels", mask.len())));
    }
    for f in &frames[1..] {
        frames[0].same_shape(f)?;
    }
    let mut residuals = vec![0.0f64; frames.len()];
    for c in mask.masked() {
        let e: Vec<f64> = frames.iter().map(|f| f.integral(c)).collect();
        for (r, rate) in residuals.iter_mut().zip(conserved_rate(&e, frame_dt)) {
            *r = r.max(rate.abs());
        }
    }
    Ok(FluxBalance { residuals })
}
