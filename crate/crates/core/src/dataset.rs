//! Trajectory datasets: configuration, generation and the conservation audit.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecf::ConservationMask;
use crate::error::{EcfError, Result};
use crate::grid::{GridField, GridSpec, Precision};
use crate::solvers::{
    chebyshev_ic, dam_break, grf_ic, solve_allen_cahn, solve_convdiff_exact, solve_diffusion_exact,
    solve_heat_neumann, verify_flux_balance, ConservationLawSpec, ProblemKind, ProblemParams, ShallowWater,
};

/// Largest relative drift `|E(t) - E(0)| / |E(0)|` accepted in generated data.
pub const DRIFT_TOLERANCE: f64 = 1e-10;

pub const GENERATOR_VERSION: &str = concat!("ecf-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Valid => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = EcfError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| EcfError::Config(format!("unknown split '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub problem: ProblemKind,
    /// Points per axis; every problem is posed on a square.
    pub resolution: usize,
    pub length: f64,
    pub master_seed: u64,
    pub counts: SplitCounts,
    pub params: ProblemParams,
}

impl DatasetConfig {
    /// Full-size benchmark grids and sample counts.
    pub fn paper(problem: ProblemKind) -> Self {
        let resolution = match problem {
            ProblemKind::AcFh => 64,
            ProblemKind::Diff => 100,
            _ => 128,
        };
        DatasetConfig {
            problem,
            resolution,
            length: 1.0,
            master_seed: 0,
            counts: SplitCounts {
                train: 500,
                valid: 100,
                test: 100,
            },
            params: ProblemParams::paper(problem),
        }
    }

    /// 32 x 32 grids and 50/10/10 samples, otherwise the full-size parameters.
    pub fn desk(problem: ProblemKind) -> Self {
        DatasetConfig {
            resolution: 32,
            counts: SplitCounts {
                train: 50,
                valid: 10,
                test: 10,
            },
            ..DatasetConfig::paper(problem)
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            &[self.length, self.length],
            &[self.resolution, self.resolution],
            self.problem.boundary(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(EcfError::Config(format!("resolution must be >= 2, got {}", self.resolution)));
        }
        self.grid()?;
        self.params.validate(self.problem)
    }
}

/// Seed of sample `index` of `split`, derived from the master seed alone.
pub fn sample_seed(master_seed: u64, split: Split, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(split.stream());
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Worst conservation statistics over a set of trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub max_drift: f64,
    pub max_flux_residual: f64,
    pub drift_tolerance: f64,
    pub flux_tolerance: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.max_drift < self.drift_tolerance && self.max_flux_residual < self.flux_tolerance
    }

    fn merge(self, other: AuditReport) -> AuditReport {
        AuditReport {
            max_drift: self.max_drift.max(other.max_drift),
            max_flux_residual: self.max_flux_residual.max(other.max_flux_residual),
            ..self
        }
    }
}

/// Generation record stored next to the binary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: Split,
    pub master_seed: u64,
    pub params: ProblemParams,
    pub frame_dt: f64,
    pub generator: String,
    pub audit: Option<AuditReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    /// `snapshots` frames, each `channels * grid.len()` values.
    pub frames: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub problem: ProblemKind,
    pub grid: GridSpec,
    pub channels: usize,
    pub snapshots: usize,
    pub mask: ConservationMask,
    pub precision: Precision,
    pub meta: DatasetMeta,
    samples: Vec<Sample>,
}

impl TrajectoryDataset {
    pub fn new(
        problem: ProblemKind,
        grid: GridSpec,
        channels: usize,
        snapshots: usize,
        mask: ConservationMask,
        meta: DatasetMeta,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if mask.len() != channels {
            return Err(EcfError::ShapeMismatch(format!("mask has {} flags for {channels} channels", mask.len())));
        }
        let frame_len = channels * grid.len();
        for (i, s) in samples.iter().enumerate() {
            if s.frames.len() != snapshots * frame_len {
                return Err(EcfError::ShapeMismatch(format!(
                    "sample {i} holds {} values, expected {}",
                    s.frames.len(),
                    snapshots * frame_len
                )));
            }
            crate::grid::check_finite(&s.frames, &format!("sample {i}"))?;
        }
        Ok(TrajectoryDataset {
            problem,
            grid,
            channels,
            snapshots,
            mask,
            precision: Precision::F64,
            meta,
            samples,
        })
    }

    /// Builds a dataset from per-sample frame lists.
    pub fn from_trajectories(
        problem: ProblemKind,
        mask: ConservationMask,
        meta: DatasetMeta,
        trajectories: Vec<(u64, Vec<GridField>)>,
    ) -> Result<Self> {
        let first = trajectories
            .first()
            .and_then(|(_, t)| t.first())
            .ok_or_else(|| EcfError::InvalidArgument("no trajectories".into()))?;
        let (grid, channels, snapshots) = (*first.grid(), first.channels(), trajectories[0].1.len());
        let samples = trajectories
            .into_iter()
            .map(|(seed, frames)| Sample {
                seed,
                frames: frames.into_iter().flat_map(GridField::into_values).collect(),
            })
            .collect();
        TrajectoryDataset::new(problem, grid, channels, snapshots, mask, meta, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.grid.len()
    }

    pub fn frame(&self, sample: usize, t: usize) -> GridField {
        let n = self.frame_len();
        let values = self.samples[sample].frames[t * n..(t + 1) * n].to_vec();
        GridField::new(self.grid, self.channels, values)
            .expect("frames validated on construction")
            .with_precision_tag(self.precision)
    }

    pub fn trajectory(&self, sample: usize) -> Vec<GridField> {
        (0..self.snapshots).map(|t| self.frame(sample, t)).collect()
    }

    /// Copy with every value rounded to `precision`.
    pub fn to_precision(&self, precision: Precision) -> Self {
        let mut out = self.clone();
        if precision == Precision::F32 {
            for s in &mut out.samples {
                s.frames.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
        out.precision = precision;
        out
    }

    pub(crate) fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    /// Recomputes the conservation audit from the stored frames.
    pub fn audit(&self) -> Result<AuditReport> {
        let law = ConservationLawSpec::for_problem(self.problem);
        let mut report = AuditReport {
            max_drift: 0.0,
            max_flux_residual: 0.0,
            drift_tolerance: DRIFT_TOLERANCE,
            flux_tolerance: self.problem.flux_tolerance(),
        };
        for i in 0..self.len() {
            let traj = self.trajectory(i);
            let r = audit_trajectory(&traj, self.meta.frame_dt, &law, &self.mask, report)
                .map_err(|e| e.in_sample(i))?;
            report = report.merge(r);
        }
        Ok(report)
    }
}

fn audit_trajectory(
    frames: &[GridField],
    frame_dt: f64,
    law: &ConservationLawSpec,
    mask: &ConservationMask,
    base: AuditReport,
) -> Result<AuditReport> {
    let mut drift: f64 = 0.0;
    for c in mask.masked() {
        let e0 = frames[0].integral(c);
        let scale = if e0 != 0.0 { e0.abs() } else { 1.0 };
        for f in frames {
            drift = drift.max((f.integral(c) - e0).abs() / scale);
        }
    }
    let flux = if frames.len() >= 3 {
        verify_flux_balance(frames, frame_dt, law, mask)?.max()
    } else {
        0.0
    };
    Ok(AuditReport {
        max_drift: drift,
        max_flux_residual: flux,
        ..base
    })
}

/// Rescales a random field to `offset + amplitude * w / max|w|`, `w` its
/// mean-free part, with `offset` drawn from `range`.
fn normalize_ic(raw: GridField, range: [f64; 2], amplitude: f64, rng: &mut ChaCha8Rng) -> Result<GridField> {
    let offset = if range[0] < range[1] { rng.random_range(range[0]..range[1]) } else { range[0] };
    let mean = raw.mean(0);
    let peak = raw.values().iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let values = raw.values().iter().map(|v| offset + scale * (v - mean)).collect();
    GridField::new(*raw.grid(), 1, values)
}

/// Initial condition of one sample.
pub fn initial_condition(problem: ProblemKind, params: &ProblemParams, grid: &GridSpec, seed: u64) -> Result<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    match problem {
        ProblemKind::Water => {
            let radius = if params.dam_radius[0] < params.dam_radius[1] {
                rng.random_range(params.dam_radius[0]..params.dam_radius[1])
            } else {
                params.dam_radius[0]
            };
            let center = [0.5 * grid.lengths()[0], 0.5 * grid.lengths()[1]];
            dam_break(grid, center, radius, params.dam_inner, params.dam_outer)
        }
        ProblemKind::Diff => {
            let raw = grf_ic(seed, params.grf_tau, params.grf_alpha, grid)?;
            normalize_ic(raw, params.ic_offset, params.ic_amplitude, &mut rng)
        }
        _ => {
            let raw = chebyshev_ic(seed, params.chebyshev_order, grid)?;
            normalize_ic(raw, params.ic_offset, params.ic_amplitude, &mut rng)
        }
    }
}

/// Solves one trajectory of `params.n_snapshots` equally spaced frames from `ic`.
pub fn solve_trajectory(problem: ProblemKind, params: &ProblemParams, ic: &GridField) -> Result<Vec<GridField>> {
    let stride = params.frame_stride();
    let steps = (params.n_snapshots - 1) * stride;
    let frame_dt = params.frame_dt();
    let at_frames = |f: &dyn Fn(f64) -> Result<GridField>| -> Result<Vec<GridField>> {
        (0..params.n_snapshots).map(|k| f(k as f64 * frame_dt)).collect()
    };
    match problem {
        ProblemKind::AcDw | ProblemKind::AcFh => {
            solve_allen_cahn(ic, &params.allen_cahn(problem), params.dt(), steps, stride)
        }
        ProblemKind::Water => ShallowWater::new(params.gravity, params.dt())?.run(ic, steps, stride),
        ProblemKind::Heat => at_frames(&|t| solve_heat_neumann(ic, params.diffusion, t)),
        ProblemKind::Diff => at_frames(&|t| solve_diffusion_exact(ic, params.diffusion, t)),
        ProblemKind::Cd => at_frames(&|t| solve_convdiff_exact(ic, params.diffusion, params.velocity, t)),
    }
}

/// Generates one split. Samples run in parallel; results keep index order.
pub fn generate_split(config: &DatasetConfig, split: Split) -> Result<TrajectoryDataset> {
    config.validate()?;
    let grid = config.grid()?;
    let problem = config.problem;
    let params = &config.params;
    let law = ConservationLawSpec::for_problem(problem);
    let mask = problem.conservation_mask();
    let count = config.counts.get(split);
    if count == 0 {
        return Err(EcfError::Config(format!("{split} split has no samples")));
    }
    let base = AuditReport {
        max_drift: 0.0,
        max_flux_residual: 0.0,
        drift_tolerance: DRIFT_TOLERANCE,
        flux_tolerance: problem.flux_tolerance(),
    };
    let results: Vec<(u64, Vec<GridField>, AuditReport)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = sample_seed(config.master_seed, split, i);
            let run = || -> Result<_> {
                let ic = initial_condition(problem, params, &grid, seed)?;
                let frames = solve_trajectory(problem, params, &ic)?;
                let audit = audit_trajectory(&frames, params.frame_dt(), &law, &mask, base)?;
                Ok((seed, frames, audit))
            };
            run().map_err(|e| e.in_sample(i))
        })
        .collect::<Result<_>>()?;
    let audit = results.iter().fold(base, |acc, r| acc.merge(r.2));
    let meta = DatasetMeta {
        split,
        master_seed: config.master_seed,
        params: params.clone(),
        frame_dt: params.frame_dt(),
        generator: GENERATOR_VERSION.to_string(),
        audit: Some(audit),
    };
    let trajectories = results.into_iter().map(|(s, f, _)| (s, f)).collect();
    TrajectoryDataset::from_trajectories(problem, mask, meta, trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(problem: ProblemKind) -> DatasetConfig {
        let mut c = DatasetConfig::desk(problem);
        c.resolution = 16;
        c.counts = SplitCounts { train: 2, valid: 1, test: 1 };
        c.params.n_steps = 100;
        c.params.n_snapshots = 5;
        c
    }

    #[test]
    fn presets() {
        let p = DatasetConfig::paper(ProblemKind::AcDw);
        assert_eq!((p.resolution, p.counts.train, p.counts.valid), (128, 500, 100));
        assert_eq!(DatasetConfig::paper(ProblemKind::AcFh).resolution, 64);
        assert_eq!(DatasetConfig::paper(ProblemKind::Diff).resolution, 100);
        let d = DatasetConfig::desk(ProblemKind::Heat);
        assert_eq!((d.resolution, d.counts.train, d.counts.test), (32, 50, 10));
    }

    #[test]
    fn sample_seeds_are_distinct_and_stable() {
        let a = sample_seed(3, Split::Train, 0);
        assert_eq!(a, sample_seed(3, Split::Train, 0));
        assert_ne!(a, sample_seed(3, Split::Train, 1));
        assert_ne!(a, sample_seed(3, Split::Test, 0));
        assert_ne!(a, sample_seed(4, Split::Train, 0));
    }

    #[test]
    fn every_problem_generates_and_conserves() {
        for p in ProblemKind::ALL {
            let ds = generate_split(&tiny(p), Split::Train).unwrap();
            assert_eq!((ds.len(), ds.snapshots, ds.channels), (2, 5, p.channels()));
            let audit = ds.meta.audit.unwrap();
            assert!(audit.passed(), "{p}: {audit:?}");
            assert_eq!(ds.audit().unwrap(), audit);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = tiny(ProblemKind::Diff);
        assert_eq!(generate_split(&c, Split::Valid).unwrap(), generate_split(&c, Split::Valid).unwrap());
    }

    #[test]
    fn fh_initial_conditions_stay_admissible() {
        let c = tiny(ProblemKind::AcFh);
        let grid = c.grid().unwrap();
        for seed in 0..20 {
            let ic = initial_condition(ProblemKind::AcFh, &c.params, &grid, seed).unwrap();
            assert!(ic.values().iter().all(|v| v.abs() <= 0.9 + 1e-12));
        }
    }

    #[test]
    fn solver_failure_names_the_sample() {
        let mut c = tiny(ProblemKind::AcFh);
        c.params.ic_offset = [0.95, 0.95];
        let err = generate_split(&c, Split::Train).unwrap_err();
        assert!(matches!(err, EcfError::Sample { index: 0, .. }), "{err}");
        assert_eq!(err.kind(), "solver_abort");
    }
}
