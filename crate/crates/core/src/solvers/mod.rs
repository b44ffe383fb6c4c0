//! Reference solvers for the six benchmark problems.

pub mod allen_cahn;
pub mod exact;
pub mod flux;
pub mod ic;
pub mod shallow_water;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecf::ConservationMask;
use crate::error::{EcfError, Result};
use crate::grid::Boundary;

pub use allen_cahn::{solve_allen_cahn, AllenCahnParams, Potential};
pub use exact::{solve_convdiff_exact, solve_diffusion_exact, solve_heat_neumann};
pub use flux::{verify_flux_balance, FluxBalance};
pub use ic::{chebyshev_ic, grf_ic};
pub use shallow_water::{dam_break, ShallowWater};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    AcDw,
    AcFh,
    Heat,
    Water,
    Diff,
    Cd,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 6] = [
        ProblemKind::AcDw,
        ProblemKind::AcFh,
        ProblemKind::Heat,
        ProblemKind::Water,
        ProblemKind::Diff,
        ProblemKind::Cd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::AcDw => "ac_dw",
            ProblemKind::AcFh => "ac_fh",
            ProblemKind::Heat => "heat",
            ProblemKind::Water => "water",
            ProblemKind::Diff => "diff",
            ProblemKind::Cd => "cd",
        }
    }

    /// Column label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ProblemKind::AcDw => "AC-DW",
            ProblemKind::AcFh => "AC-FH",
            ProblemKind::Heat => "Heat",
            ProblemKind::Water => "Water",
            ProblemKind::Diff => "Diff",
            ProblemKind::Cd => "CD",
        }
    }

    pub fn tag(self) -> u8 {
        ProblemKind::ALL.iter().position(|&p| p == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        ProblemKind::ALL.get(tag as usize).copied()
    }

    /// Water stores `(h, hu, hv)`; the other problems are scalar.
    pub fn channels(self) -> usize {
        match self {
            ProblemKind::Water => 3,
            _ => 1,
        }
    }

    /// Shallow water conserves depth only; momentum is exchanged with the walls.
    pub fn conservation_mask(self) -> ConservationMask {
        match self {
            ProblemKind::Water => ConservationMask::only(3, 0),
            _ => ConservationMask::all(1),
        }
    }

    pub fn boundary(self) -> Boundary {
        match self {
            ProblemKind::Heat => Boundary::Neumann,
            ProblemKind::Water => Boundary::Wall,
            _ => Boundary::Periodic,
        }
    }

    /// Largest `max_t |dE/dt|` accepted from generated trajectories.
    pub fn flux_tolerance(self) -> f64 {
        match self {
            ProblemKind::Diff | ProblemKind::Cd => 1e-12,
            _ => 1e-10,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = EcfError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ProblemKind::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| EcfError::Config(format!("unknown problem '{s}' (expected one of ac_dw, ac_fh, heat, water, diff, cd)")))
    }
}

/// Flux `F(u)` of the conservation law `u_t + div F(u) = S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxKind {
    /// `F = -D grad u`
    Diffusive,
    /// `F = -eps grad u`
    Interfacial,
    /// `F = u v - D grad u`
    AdvectiveDiffusive,
    /// `F = h u` (mass equation of shallow water)
    MassTransport,
}

/// Source `S` of the conservation law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    None,
    /// `f(u) - mean(f(u))`, whose integral vanishes identically.
    MeanFreeReaction,
}

impl SourceKind {
    pub fn integrates_to_zero(self) -> bool {
        matches!(self, SourceKind::None | SourceKind::MeanFreeReaction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationLawSpec {
    pub flux: FluxKind,
    pub source: SourceKind,
    pub boundary_flux_zero: bool,
}

impl ConservationLawSpec {
    pub fn for_problem(problem: ProblemKind) -> Self {
        let (flux, source) = match problem {
            ProblemKind::AcDw | ProblemKind::AcFh => (FluxKind::Interfacial, SourceKind::MeanFreeReaction),
            ProblemKind::Heat | ProblemKind::Diff => (FluxKind::Diffusive, SourceKind::None),
            ProblemKind::Cd => (FluxKind::AdvectiveDiffusive, SourceKind::None),
            ProblemKind::Water => (FluxKind::MassTransport, SourceKind::None),
        };
        // Periodic, adiabatic and reflective boundaries all carry zero net flux.
        ConservationLawSpec {
            flux,
            source,
            boundary_flux_zero: true,
        }
    }
}

/// Physical and sampling parameters of one problem. Fields a problem does
/// not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    /// Interface parameter of the Allen-Cahn problems.
    pub epsilon: f64,
    /// Flory-Huggins `theta`.
    pub theta: f64,
    /// Flory-Huggins `theta_c`.
    pub theta_c: f64,
    pub diffusion: f64,
    pub velocity: [f64; 2],
    pub gravity: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub n_snapshots: usize,
    /// Re-pin the Allen-Cahn mean after every step.
    pub project_mean: bool,
    /// Random initial conditions are `offset + amplitude * w / max|w|` with
    /// `w` a mean-free random field and `offset ~ U[ic_offset]`.
    pub ic_offset: [f64; 2],
    pub ic_amplitude: f64,
    pub chebyshev_order: usize,
    pub grf_tau: f64,
    pub grf_alpha: f64,
    /// Dam-break radius range and depths inside / outside.
    pub dam_radius: [f64; 2],
    pub dam_inner: f64,
    pub dam_outer: f64,
}

impl ProblemParams {
    /// Parameters of the full-size benchmark configuration.
    pub fn paper(problem: ProblemKind) -> Self {
        let mut p = ProblemParams {
            epsilon: 0.01,
            theta: 0.8,
            theta_c: 1.6,
            diffusion: 0.01,
            velocity: [1.0, 0.5],
            gravity: 1.0,
            t_final: 0.1,
            n_steps: 1000,
            n_snapshots: 20,
            project_mean: true,
            ic_offset: [0.2, 0.4],
            ic_amplitude: 0.5,
            chebyshev_order: 20,
            grf_tau: 5.0,
            grf_alpha: 2.0,
            dam_radius: [0.1, 0.3],
            dam_inner: 2.0,
            dam_outer: 1.0,
        };
        match problem {
            ProblemKind::AcDw | ProblemKind::AcFh | ProblemKind::Cd => {}
            ProblemKind::Heat | ProblemKind::Diff | ProblemKind::Water => p.t_final = 1.0,
        }
        if matches!(problem, ProblemKind::Heat | ProblemKind::Diff | ProblemKind::Cd) {
            p.ic_offset = [0.5, 1.0];
            p.ic_amplitude = 1.0;
        }
        p
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// Solver steps between stored frames.
    pub fn frame_stride(&self) -> usize {
        self.n_steps / self.n_snapshots
    }

    pub fn frame_dt(&self) -> f64 {
        self.dt() * self.frame_stride() as f64
    }

    pub fn allen_cahn(&self, problem: ProblemKind) -> AllenCahnParams {
        let potential = match problem {
            ProblemKind::AcFh => Potential::FloryHuggins {
                theta: self.theta,
                theta_c: self.theta_c,
            },
            _ => Potential::DoubleWell,
        };
        AllenCahnParams {
            epsilon: self.epsilon,
            potential,
            project_mean: self.project_mean,
        }
    }

    pub fn validate(&self, problem: ProblemKind) -> Result<()> {
        let bad = |what: &str| Err(EcfError::Config(format!("{problem}: {what}")));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be positive");
        }
        if self.n_snapshots < 2 || self.n_steps == 0 || self.n_steps % self.n_snapshots != 0 {
            return bad("n_snapshots must be >= 2 and divide n_steps evenly");
        }
        if !(self.ic_offset[0] <= self.ic_offset[1]) || !self.ic_amplitude.is_finite() {
            return bad("ic_offset must be an ordered range and ic_amplitude finite");
        }
        match problem {
            ProblemKind::AcDw | ProblemKind::AcFh => {
                if !(self.epsilon > 0.0) {
                    return bad("epsilon must be positive");
                }
                if problem == ProblemKind::AcFh && !(self.theta > 0.0 && self.theta_c.is_finite()) {
                    return bad("theta must be positive");
                }
            }
            ProblemKind::Heat | ProblemKind::Diff | ProblemKind::Cd => {
                if !(self.diffusion > 0.0) {
                    return bad("diffusion must be positive");
                }
                if !self.velocity.iter().all(|v| v.is_finite()) {
                    return bad("velocity must be finite");
                }
                if problem == ProblemKind::Diff && !(self.grf_tau > 0.0 && self.grf_alpha > 0.0) {
                    return bad("GRF tau and alpha must be positive");
                }
            }
            ProblemKind::Water => {
                if !(self.gravity > 0.0) {
                    return bad("gravity must be positive");
                }
                if !(self.dam_inner > 0.0 && self.dam_outer > 0.0) {
                    return bad("dam depths must be positive");
                }
                if !(0.0 < self.dam_radius[0] && self.dam_radius[0] <= self.dam_radius[1]) {
                    return bad("dam_radius must be an ordered positive range");
                }
            }
        }
        if matches!(problem, ProblemKind::AcDw | ProblemKind::AcFh | ProblemKind::Heat | ProblemKind::Cd)
            && self.chebyshev_order == 0
        {
            return bad("chebyshev_order must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_names_round_trip() {
        for p in ProblemKind::ALL {
            assert_eq!(p.name().parse::<ProblemKind>().unwrap(), p);
            assert_eq!(ProblemKind::from_tag(p.tag()), Some(p));
        }
        assert_eq!("AC-DW".parse::<ProblemKind>().unwrap(), ProblemKind::AcDw);
        assert!("burgers".parse::<ProblemKind>().is_err());
    }

    #[test]
    fn paper_parameters() {
        let fh = ProblemParams::paper(ProblemKind::AcFh);
        assert_eq!((fh.epsilon, fh.theta, fh.theta_c), (0.01, 0.8, 1.6));
        assert_eq!((fh.n_steps, fh.t_final, fh.n_snapshots), (1000, 0.1, 20));
        let cd = ProblemParams::paper(ProblemKind::Cd);
        assert_eq!((cd.velocity, cd.diffusion), ([1.0, 0.5], 0.01));
        let diff = ProblemParams::paper(ProblemKind::Diff);
        assert_eq!((diff.grf_tau, diff.grf_alpha, diff.t_final), (5.0, 2.0, 1.0));
        for p in ProblemKind::ALL {
            ProblemParams::paper(p).validate(p).unwrap();
        }
    }

    #[test]
    fn snapshots_must_divide_steps() {
        let mut p = ProblemParams::paper(ProblemKind::Diff);
        p.n_snapshots = 19;
        assert!(p.validate(ProblemKind::Diff).is_err());
    }

    #[test]
    fn every_source_integrates_to_zero() {
        for p in ProblemKind::ALL {
            let law = ConservationLawSpec::for_problem(p);
            assert!(law.source.integrates_to_zero() && law.boundary_flux_zero);
        }
    }
}
