//! Mass-conserving Allen-Cahn equation,
//! `u_t = eps lap u + f(u) - mean(f(u))`, on a periodic grid.
//!
//! First-order IMEX: the Laplacian is implicit in Fourier space, the reaction
//! explicit. The zero mode of the update is `u0 + dt * 0`, so the mean is
//! conserved up to rounding; optionally it is re-pinned to the initial mean
//! after every step.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{EcfError, Result};
use crate::grid::{Boundary, GridField};
use crate::spectral::{plan_for, ModeIndex};

/// Distance from `+-1` the Flory-Huggins logarithm is clipped to.
pub const FH_CLAMP_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    /// `f(u) = u - u^3`
    DoubleWell,
    /// `f(u) = (theta/2) ln((1+u)/(1-u)) - theta_c u`
    FloryHuggins { theta: f64, theta_c: f64 },
}

impl Potential {
    pub fn reaction(&self, u: f64) -> f64 {
        match *self {
            Potential::DoubleWell => u - u * u * u,
            Potential::FloryHuggins { theta, theta_c } => {
                let b = 1.0 - FH_CLAMP_MARGIN;
                let u = u.clamp(-b, b);
                0.5 * theta * ((1.0 + u) / (1.0 - u)).ln() - theta_c * u
            }
        }
    }

    /// Rejects states outside the potential's domain. `step` is reported in the error.
    fn check_admissible(&self, field: &GridField, step: usize) -> Result<()> {
        if let Potential::FloryHuggins { .. } = self {
            let b = 1.0 - FH_CLAMP_MARGIN;
            if let Some((i, v)) = field.values().iter().enumerate().find(|(_, v)| v.abs() > b) {
                return Err(EcfError::SolverAbort {
                    step,
                    reason: format!(
                        "Flory-Huggins state {v} at index {i} escaped the clamp band [-{b}, {b}] (dt too large or inadmissible initial condition)"
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllenCahnParams {
    pub epsilon: f64,
    pub potential: Potential,
    /// Re-pin the mean of every channel to its initial value after each step.
    pub project_mean: bool,
}

/// Runs `steps` IMEX steps of size `dt` from `ic`, returning the state after
/// every `record_every`-th step (and the initial state first).
pub fn solve_allen_cahn(
    ic: &GridField,
    params: &AllenCahnParams,
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<Vec<GridField>> {
    if ic.grid().boundary() != Boundary::Periodic {
        return Err(EcfError::InvalidArgument("Allen-Cahn stepper needs a periodic grid".into()));
    }
    if !(dt > 0.0 && params.epsilon > 0.0) || record_every == 0 {
        return Err(EcfError::InvalidArgument(format!(
            "need dt > 0, epsilon > 0 and record_every > 0 (dt={dt}, epsilon={})",
            params.epsilon
        )));
    }
    ic.ensure_finite()?;
    params.potential.check_admissible(ic, 0)?;

    let grid = *ic.grid();
    let n = grid.len();
    let plan = plan_for(&grid);
    let inv_denominator: Vec<f64> = (0..n)
        .map(|flat| 1.0 / (1.0 + dt * params.epsilon * ModeIndex::of_flat(&grid, flat).wavenumber_sq(&grid)))
        .collect();
    let initial_means: Vec<f64> = (0..ic.channels()).map(|c| ic.mean(c)).collect();

    let mut u = ic.clone();
    let mut out = vec![u.clone()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut reaction = vec![0.0; n];
    for step in 1..=steps {
        for c in 0..u.channels() {
            let ch = u.channel_mut(c);
            for (r, &v) in reaction.iter_mut().zip(ch.iter()) {
                *r = params.potential.reaction(v);
            }
            let mean_r = reaction.iter().sum::<f64>() / n as f64;
            for ((b, &v), &r) in buf.iter_mut().zip(ch.iter()).zip(&reaction) {
                *b = Complex64::new(v + dt * (r - mean_r), 0.0);
            }
            plan.forward(&mut buf);
            for (b, &d) in buf.iter_mut().zip(&inv_denominator) {
                *b *= d / n as f64;
            }
            plan.inverse(&mut buf);
            for (v, b) in ch.iter_mut().zip(&buf) {
                *v = b.re;
            }
            if params.project_mean {
                let drift = initial_means[c] - ch.iter().sum::<f64>() / n as f64;
                ch.iter_mut().for_each(|v| *v += drift);
            }
        }
        if let Some(i) = u.values().iter().position(|v| !v.is_finite()) {
            return Err(EcfError::SolverAbort {
                step,
                reason: format!("non-finite state at index {i}"),
            });
        }
        params.potential.check_admissible(&u, step)?;
        if step % record_every == 0 {
            out.push(u.clone());
        }
    }
    Ok(out)
}
