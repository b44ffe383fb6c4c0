//! Exterior-embedded conservation correction.
//!
//! The encoder reads the zero Fourier mode (the channel mean) of a state, the
//! correction operator overwrites the zero mode of a prediction with it, and
//! the decoder transforms back. Every other mode passes through untouched, so
//! the corrected prediction is the raw prediction plus a uniform shift.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{EcfError, Result};
use crate::grid::{check_finite, GridField, GridSpec};
use crate::spectral::{fft_forward, fft_inverse, l2_norm, Spectrum};

/// Which channels obey a conservation law and receive correction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationMask {
    flags: Vec<bool>,
}

impl ConservationMask {
    pub fn new(flags: Vec<bool>) -> Self {
        ConservationMask { flags }
    }

    pub fn all(channels: usize) -> Self {
        ConservationMask { flags: vec![true; channels] }
    }

    /// Only channel `index` of `channels` is conserved.
    pub fn only(channels: usize, index: usize) -> Self {
        let mut flags = vec![false; channels];
        flags[index] = true;
        ConservationMask { flags }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_masked(&self, c: usize) -> bool {
        self.flags.get(c).copied().unwrap_or(false)
    }

    pub fn masked(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(c, _)| c)
    }

    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    /// ECF-enabled runs need at least one conserved channel.
    pub fn ensure_enabled(&self) -> Result<()> {
        if self.any() {
            Ok(())
        } else {
            Err(EcfError::InvalidArgument("conservation mask flags no channel".into()))
        }
    }

    pub fn check_channels(&self, channels: usize) -> Result<()> {
        if self.flags.len() != channels {
            return Err(EcfError::ShapeMismatch(format!(
                "mask has {} flags for {channels} channel(s)",
                self.flags.len()
            )));
        }
        Ok(())
    }
}

/// Per-channel zero mode `c0` and integral `E = c0 * L^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedQuantity {
    grid: GridSpec,
    zero_mode: Vec<f64>,
    integral: Vec<f64>,
}

impl ConservedQuantity {
    pub fn from_zero_modes(grid: GridSpec, zero_mode: Vec<f64>) -> Self {
        let vol = grid.domain_volume();
        let integral = zero_mode.iter().map(|c| c * vol).collect();
        ConservedQuantity { grid, zero_mode, integral }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn zero_mode(&self) -> &[f64] {
        &self.zero_mode
    }

    pub fn integral(&self) -> &[f64] {
        &self.integral
    }

    pub fn channels(&self) -> usize {
        self.zero_mode.len()
    }
}

/// Encoder: extracts the zero-frequency coefficient of every channel.
///
/// Only mode 0 of the truncated transform is needed, so it is evaluated
/// directly as `(1/N) sum_j u_j`.
pub fn encode_conserved(field: &GridField, mask: &ConservationMask) -> Result<ConservedQuantity> {
    check_finite(field.values(), "encoder input")?;
    mask.check_channels(field.channels())?;
    let zero_mode = (0..field.channels()).map(|c| field.mean(c)).collect();
    Ok(ConservedQuantity::from_zero_modes(*field.grid(), zero_mode))
}

fn check_target(grid: &GridSpec, channels: usize, target: &ConservedQuantity, mask: &ConservationMask) -> Result<()> {
    if *grid != target.grid {
        return Err(EcfError::ShapeMismatch(format!(
            "prediction grid {:?} vs conserved-quantity grid {:?}",
            grid.resolution(),
            target.grid.resolution()
        )));
    }
    if channels != target.channels() {
        return Err(EcfError::ShapeMismatch(format!(
            "{channels} predicted channel(s) vs {} conserved",
            target.channels()
        )));
    }
    mask.check_channels(channels)
}

/// Correction operator: replaces `coeff(0)` of each masked channel by the
/// target zero mode (with exactly zero imaginary part). All other
/// coefficients are copied bit for bit.
pub fn correct_spectrum(
    pred: &Spectrum,
    target: &ConservedQuantity,
    mask: &ConservationMask,
) -> Result<Spectrum> {
    check_target(pred.grid(), pred.channels(), target, mask)?;
    let mut out = pred.clone();
    for c in mask.masked() {
        out.channel_mut(c)[0] = Complex64::new(target.zero_mode[c], 0.0);
    }
    Ok(out)
}

/// Decoder: `F^-1 . C . F` applied to a predicted field.
pub fn correct_field(pred: &GridField, target: &ConservedQuantity, mask: &ConservationMask) -> Result<GridField> {
    check_target(pred.grid(), pred.channels(), target, mask)?;
    let spectrum = fft_forward(pred)?;
    let corrected = correct_spectrum(&spectrum, target, mask)?;
    Ok(fft_inverse(&corrected)?.with_precision_tag(pred.precision()))
}

/// Algebraic form of [`correct_field`]: adds `target - mean(pred)` to each
/// masked channel. Agrees with the spectral route to rounding.
pub fn shift_to_target(pred: &GridField, target: &ConservedQuantity, mask: &ConservationMask) -> Result<GridField> {
    check_target(pred.grid(), pred.channels(), target, mask)?;
    let mut out = pred.clone();
    for c in mask.masked() {
        let shift = target.zero_mode[c] - pred.mean(c);
        out.channel_mut(c).iter_mut().for_each(|v| *v += shift);
    }
    Ok(out)
}

/// Per-channel split of the squared L2 error into the zero mode and the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    /// `|c0 - c0_hat|^2`
    pub zero_mode: Vec<f64>,
    /// `sum_{n != 0} |c_n - c_n_hat|^2`
    pub nonzero_modes: Vec<f64>,
    /// `L^m (zero_mode + nonzero_modes)`
    pub total: Vec<f64>,
}

impl ErrorDecomposition {
    pub fn total_sum(&self) -> f64 {
        self.total.iter().sum()
    }
}

pub fn error_decomposition(pred: &GridField, truth: &GridField) -> Result<ErrorDecomposition> {
    pred.same_shape(truth)?;
    let a = fft_forward(pred)?;
    let b = fft_forward(truth)?;
    let vol = pred.grid().domain_volume();
    let mut out = ErrorDecomposition {
        zero_mode: Vec::new(),
        nonzero_modes: Vec::new(),
        total: Vec::new(),
    };
    for c in 0..pred.channels() {
        let (ca, cb) = (a.channel(c), b.channel(c));
        let zero = (ca[0] - cb[0]).norm_sqr();
        let rest: f64 = ca[1..].iter().zip(&cb[1..]).map(|(x, y)| (x - y).norm_sqr()).sum();
        out.zero_mode.push(zero);
        out.nonzero_modes.push(rest);
        out.total.push(vol * (zero + rest));
    }
    Ok(out)
}

/// Outcome of comparing errors before and after correction.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReductionReport {
    /// `||pred - truth||` over all channels.
    pub err_before: f64,
    /// `||correct(pred, encode(input)) - truth||`.
    pub err_after: f64,
    /// `err_after <= err_before` within tolerance.
    pub bound_holds: bool,
    /// `err_after == err_before` within tolerance.
    pub equality: bool,
    /// `mean(input) == mean(truth)` on every masked channel (the premise).
    pub premise_holds: bool,
    /// `mean(pred) == mean(truth)` on every masked channel (the equality condition).
    pub means_match: bool,
}

/// Absolute tolerance used by [`error_reduction_check`].
pub const ERROR_REDUCTION_TOLERANCE: f64 = 1e-12;

/// Checks that correcting `pred` against the conserved quantity of `input`
/// never increases the L2 error to `truth` when `truth` conserves it.
pub fn error_reduction_check(
    pred: &GridField,
    truth: &GridField,
    input: &GridField,
    mask: &ConservationMask,
) -> Result<ErrorReductionReport> {
    pred.same_shape(truth)?;
    pred.same_shape(input)?;
    let target = encode_conserved(input, mask)?;
    let corrected = correct_field(pred, &target, mask)?;
    let norm = |a: &GridField, b: &GridField| -> f64 {
        let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let d = GridField::new(*a.grid(), a.channels(), diff).expect("finite difference");
        l2_norm(&d).iter().map(|n| n * n).sum::<f64>().sqrt()
    };
    let err_before = norm(pred, truth);
    let err_after = norm(&corrected, truth);
    let tol = ERROR_REDUCTION_TOLERANCE;
    let close = |x: f64, y: f64| (x - y).abs() <= tol;
    Ok(ErrorReductionReport {
        err_before,
        err_after,
        bound_holds: err_after <= err_before + tol,
        equality: close(err_after, err_before),
        premise_holds: mask.masked().all(|c| close(input.mean(c), truth.mean(c))),
        means_match: mask.masked().all(|c| close(pred.mean(c), truth.mean(c))),
    })
}
