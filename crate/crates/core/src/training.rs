//! Training paradigms and autoregressive rollout.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrajectoryDataset;
use crate::ecf::{correct_field, encode_conserved, ConservationMask};
use crate::error::{EcfError, Result};
use crate::grid::GridField;
use crate::metrics::{relative_conservation_error, rmse, MetricsRecord, Variant};
use crate::operator::{AdamW, AdamWParams, LossKind, OperatorConfig, OperatorModel, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    #[serde(rename = "ecf_i")]
    EcfIntegrated,
    #[serde(rename = "ecf_s")]
    EcfStaged,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::EcfIntegrated => "ecf_i",
            TrainMode::EcfStaged => "ecf_s",
        }
    }

    /// Rollout correction used when evaluating a model trained this way.
    pub fn evaluation_correction(self) -> CorrectionMode {
        match self {
            TrainMode::Baseline => CorrectionMode::Off,
            TrainMode::EcfIntegrated => CorrectionMode::EveryStepFeedback,
            TrainMode::EcfStaged => CorrectionMode::PostHocPerStep,
        }
    }

    /// Correction applied to validation rollouts during training. Staged
    /// training must not differ from the baseline, so both validate uncorrected.
    fn validation_correction(self) -> CorrectionMode {
        match self {
            TrainMode::EcfIntegrated => CorrectionMode::EveryStepFeedback,
            _ => CorrectionMode::Off,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = EcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "base" => Ok(TrainMode::Baseline),
            "ecf_i" | "integrated" => Ok(TrainMode::EcfIntegrated),
            "ecf_s" | "staged" => Ok(TrainMode::EcfStaged),
            _ => Err(EcfError::Config(format!("unknown training mode '{s}' (baseline, ecf_i, ecf_s)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// Plain autoregression.
    Off,
    /// Each prediction is corrected and the corrected state is fed forward.
    #[serde(rename = "feedback")]
    EveryStepFeedback,
    /// Plain autoregression, then every stored frame is corrected.
    #[serde(rename = "posthoc")]
    PostHocPerStep,
}

impl CorrectionMode {
    pub fn name(self) -> &'static str {
        match self {
            CorrectionMode::Off => "off",
            CorrectionMode::EveryStepFeedback => "feedback",
            CorrectionMode::PostHocPerStep => "posthoc",
        }
    }
}

impl FromStr for CorrectionMode {
    type Err = EcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(CorrectionMode::Off),
            "feedback" | "every_step" => Ok(CorrectionMode::EveryStepFeedback),
            "posthoc" | "post_hoc" => Ok(CorrectionMode::PostHocPerStep),
            _ => Err(EcfError::Config(format!("unknown correction '{s}' (off, feedback, posthoc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub seeds: Vec<u64>,
    /// Epochs between validation rollouts; the last epoch is always validated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Baseline,
            epochs: 200,
            batch_size: 5,
            lr: 1e-3,
            weight_decay: 1e-4,
            loss: LossKind::Mae,
            seeds: vec![0, 1, 2, 3, 4],
            eval_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.epochs == 0 || self.eval_every == 0 {
            return Err(EcfError::Config("epochs and eval_every must be >= 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(EcfError::Config(format!(
                "batch_size {} must lie in 1..={train_len} (training samples)",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(EcfError::Config("lr and weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One adjacent pair `(sample, t)` per trajectory, `t` uniform in
/// `0..snapshots-1`, in shuffled order; deterministic per `(seed, epoch)`.
pub fn sample_training_pairs(dataset: &TrajectoryDataset, seed: u64, epoch: usize) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let last = dataset.snapshots.saturating_sub(1).max(1);
    let mut pairs: Vec<(usize, usize)> = (0..dataset.len()).map(|s| (s, rng.random_range(0..last))).collect();
    pairs.shuffle(&mut rng);
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation rollout RMSE.
    pub model: OperatorModel,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Divergence error carrying the log up to the failing epoch.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: EcfError,
    pub log: Vec<EpochRecord>,
}

/// Trains one model with `seed` (used for initialization and pair sampling).
pub fn train(
    train_set: &TrajectoryDataset,
    valid_set: &TrajectoryDataset,
    model_config: OperatorConfig,
    config: &TrainConfig,
    seed: u64,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let model_config = OperatorConfig { seed, ..model_config };
    match OperatorModel::init(model_config, train_set.grid.dims()) {
        Ok(model) => train_from(model, train_set, valid_set, config, seed),
        Err(error) => Err(TrainFailure { error, log: Vec::new() }),
    }
}

/// Same as [`train`] but starting from given weights.
pub fn train_from(
    mut model: OperatorModel,
    train_set: &TrajectoryDataset,
    valid_set: &TrajectoryDataset,
    config: &TrainConfig,
    seed: u64,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let fail = |error: EcfError, log: &[EpochRecord]| TrainFailure { error, log: log.to_vec() };
    let mut log = Vec::new();
    if let Err(e) = config.validate(train_set.len()) {
        return Err(fail(e, &log));
    }
    for (name, ds) in [("training", train_set), ("validation", valid_set)] {
        if ds.snapshots < 2 || ds.channels != model.config().channels || ds.grid.dims() != model.dims() {
            return Err(fail(
                EcfError::ShapeMismatch(format!(
                    "{name} set has {} snapshots, {} channels and {} dims; model expects {} channels and {} dims",
                    ds.snapshots,
                    ds.channels,
                    ds.grid.dims(),
                    model.config().channels,
                    model.dims()
                )),
                &log,
            ));
        }
    }
    if let Err(e) = model.config().check_grid(&train_set.grid) {
        return Err(fail(e, &log));
    }
    let mut opt = AdamW::new(
        model.len(),
        AdamWParams {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWParams::default()
        },
    );
    let ecf = (config.mode == TrainMode::EcfIntegrated).then_some(&train_set.mask);
    let mut best: Option<(f64, usize, OperatorModel)> = None;
    for epoch in 1..=config.epochs {
        let pairs = sample_training_pairs(train_set, seed, epoch);
        let mut total = 0.0;
        for batch in pairs.chunks(config.batch_size) {
            let inputs: Vec<GridField> = batch.iter().map(|&(s, t)| train_set.frame(s, t)).collect();
            let targets: Vec<GridField> = batch.iter().map(|&(s, t)| train_set.frame(s, t + 1)).collect();
            let step = model
                .loss_and_grad(&inputs, &targets, config.loss, ecf)
                .and_then(|(loss, grad)| opt.step(model.params_mut(), &grad).map(|_| loss));
            match step {
                Ok(loss) => total += loss * batch.len() as f64,
                Err(e) => {
                    return Err(fail(
                        EcfError::Diverged {
                            epoch,
                            reason: e.to_string(),
                        },
                        &log,
                    ))
                }
            }
        }
        let loss = total / pairs.len() as f64;
        if !loss.is_finite() {
            return Err(fail(
                EcfError::Diverged {
                    epoch,
                    reason: format!("training loss {loss}"),
                },
                &log,
            ));
        }
        let mut record = EpochRecord {
            epoch,
            loss,
            val_rmse: None,
        };
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let val = validation_rmse(&model, valid_set, config.mode.validation_correction());
            record.val_rmse = Some(val);
            if val.is_finite() && best.as_ref().is_none_or(|(b, _, _)| val < *b) {
                best = Some((val, epoch, model.clone()));
            }
        }
        log.push(record);
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, config.epochs),
    };
    Ok(TrainOutcome { model, best_epoch, log })
}

/// Mean over the validation trajectories of the mean per-step rollout RMSE.
/// A rollout that blows up scores infinity.
pub fn validation_rmse(model: &dyn Surrogate, valid_set: &TrajectoryDataset, correction: CorrectionMode) -> f64 {
    let scores: Vec<f64> = (0..valid_set.len())
        .into_par_iter()
        .map(|i| {
            let truth = valid_set.trajectory(i);
            match evaluate_rollout(model, &truth, correction, &valid_set.mask) {
                Ok(r) if !r.rmse.is_empty() => r.rmse.iter().sum::<f64>() / r.rmse.len() as f64,
                Ok(_) => 0.0,
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    if scores.is_empty() {
        return f64::INFINITY;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Predicts `n_steps` frames from `initial`. The conserved target of every
/// correction is the zero mode of `initial`.
pub fn rollout(
    model: &dyn Surrogate,
    initial: &GridField,
    n_steps: usize,
    correction: CorrectionMode,
    mask: &ConservationMask,
) -> Result<Vec<GridField>> {
    let target = encode_conserved(initial, mask)?;
    let mut out = Vec::with_capacity(n_steps);
    let mut state = initial.clone();
    for step in 1..=n_steps {
        let mut next = model.predict(&state).map_err(|e| EcfError::RolloutAbort {
            step,
            reason: e.to_string(),
        })?;
        if let Some(i) = next.values().iter().position(|v| !v.is_finite()) {
            return Err(EcfError::RolloutAbort {
                step,
                reason: format!("non-finite prediction at flat index {i}"),
            });
        }
        if correction == CorrectionMode::EveryStepFeedback {
            next = correct_field(&next, &target, mask)?;
        }
        out.push(next.clone());
        state = next;
    }
    if correction == CorrectionMode::PostHocPerStep {
        out = out
            .iter()
            .map(|f| correct_field(f, &target, mask))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub predictions: Vec<GridField>,
    /// RMSE against the truth at steps `1..snapshots`.
    pub rmse: Vec<f64>,
    /// Relative conservation error at steps `1..snapshots`.
    pub conservation_error: Vec<f64>,
    pub seconds: f64,
}

/// Rolls out from `truth[0]` and scores every predicted step against `truth`.
pub fn evaluate_rollout(
    model: &dyn Surrogate,
    truth: &[GridField],
    correction: CorrectionMode,
    mask: &ConservationMask,
) -> Result<RolloutResult> {
    let start = Instant::now();
    let Some(initial) = truth.first() else {
        return Err(EcfError::InvalidArgument("empty ground-truth trajectory".into()));
    };
    let predictions = rollout(model, initial, truth.len() - 1, correction, mask)?;
    let seconds = start.elapsed().as_secs_f64();
    let rmse = predictions
        .iter()
        .zip(&truth[1..])
        .map(|(p, t)| rmse(p, t))
        .collect::<Result<Vec<_>>>()?;
    let conservation_error = relative_conservation_error(&predictions, &truth[1..], mask)?.values;
    Ok(RolloutResult {
        predictions,
        rmse,
        conservation_error,
        seconds,
    })
}

/// Variant label implied by a rollout correction.
pub fn variant_for(correction: CorrectionMode) -> Variant {
    match correction {
        CorrectionMode::Off => Variant::Base,
        CorrectionMode::EveryStepFeedback => Variant::EcfI,
        CorrectionMode::PostHocPerStep => Variant::EcfS,
    }
}

/// Evaluation of one model over a whole test split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub record: MetricsRecord,
    /// One result per test trajectory, in dataset order.
    pub rollouts: Vec<RolloutResult>,
}

/// Rolls out every test trajectory (in parallel, collected in order) and
/// aggregates the per-step metrics.
pub fn evaluate_dataset(
    model: &dyn Surrogate,
    test_set: &TrajectoryDataset,
    correction: CorrectionMode,
    variant: Variant,
    seed: u64,
    scale: &str,
) -> Result<Evaluation> {
    if test_set.is_empty() {
        return Err(EcfError::InvalidArgument("test split holds no trajectories".into()));
    }
    if test_set.snapshots < 2 {
        return Err(EcfError::InvalidArgument("test trajectories need at least two snapshots".into()));
    }
    let rollouts = (0..test_set.len())
        .into_par_iter()
        .map(|i| evaluate_rollout(model, &test_set.trajectory(i), correction, &test_set.mask).map_err(|e| e.in_sample(i)))
        .collect::<Result<Vec<_>>>()?;
    let steps = test_set.snapshots - 1;
    let n = rollouts.len() as f64;
    let average = |f: &dyn Fn(&RolloutResult) -> &[f64]| -> Vec<f64> {
        (0..steps).map(|t| rollouts.iter().map(|r| f(r)[t]).sum::<f64>() / n).collect()
    };
    let rmse = average(&|r| &r.rmse);
    let conservation_error = average(&|r| &r.conservation_error);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let max_conservation_error = rollouts
        .iter()
        .flat_map(|r| r.conservation_error.iter().copied())
        .fold(0.0, f64::max);
    let skipped_channels = {
        let truth = test_set.trajectory(0);
        relative_conservation_error(&truth[1..], &truth[1..], &test_set.mask)?.skipped_channels
    };
    let record = MetricsRecord {
        dataset: test_set.problem,
        variant,
        seed,
        scale: scale.to_string(),
        resolution: test_set.grid.resolution()[0],
        test_samples: test_set.len(),
        mean_rmse: mean(&rmse),
        final_rmse: *rmse.last().expect("at least one step"),
        mean_conservation_error: mean(&conservation_error),
        max_conservation_error,
        rmse,
        conservation_error,
        skipped_channels,
    };
    Ok(Evaluation { record, rollouts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, Sample, Split};
    use crate::grid::{Boundary, GridSpec};
    use crate::solvers::{ProblemKind, ProblemParams};

    fn dataset(samples: usize, snapshots: usize) -> TrajectoryDataset {
        let grid = GridSpec::unit_square(4, Boundary::Periodic).unwrap();
        let meta = DatasetMeta {
            split: Split::Train,
            master_seed: 0,
            params: ProblemParams::paper(ProblemKind::Diff),
            frame_dt: 0.1,
            generator: "test".into(),
            audit: None,
        };
        let samples = (0..samples)
            .map(|s| Sample {
                seed: s as u64,
                frames: vec![1.0 + s as f64; snapshots * 16],
            })
            .collect();
        TrajectoryDataset::new(ProblemKind::Diff, grid, 1, snapshots, ConservationMask::all(1), meta, samples).unwrap()
    }

    #[test]
    fn two_snapshots_force_the_only_pair() {
        let ds = dataset(3, 2);
        for epoch in 0..5 {
            assert!(sample_training_pairs(&ds, 1, epoch).iter().all(|&(_, t)| t == 0));
        }
    }

    #[test]
    fn pairs_are_deterministic_and_cover_every_trajectory() {
        let ds = dataset(6, 20);
        let a = sample_training_pairs(&ds, 4, 7);
        assert_eq!(a, sample_training_pairs(&ds, 4, 7));
        assert_ne!(a, sample_training_pairs(&ds, 4, 8));
        let mut seen: Vec<usize> = a.iter().map(|p| p.0).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn zero_step_rollout_is_empty() {
        let m = OperatorModel::zeros(OperatorConfig::new(1), 2).unwrap();
        let x = dataset(1, 2).frame(0, 0);
        assert!(rollout(&m, &x, 0, CorrectionMode::PostHocPerStep, &ConservationMask::all(1))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mode_names_parse() {
        for m in [TrainMode::Baseline, TrainMode::EcfIntegrated, TrainMode::EcfStaged] {
            assert_eq!(m.name().parse::<TrainMode>().unwrap(), m);
        }
        for c in [CorrectionMode::Off, CorrectionMode::EveryStepFeedback, CorrectionMode::PostHocPerStep] {
            assert_eq!(c.name().parse::<CorrectionMode>().unwrap(), c);
        }
    }

    #[test]
    fn batch_larger_than_training_set_is_rejected() {
        let cfg = TrainConfig {
            batch_size: 10,
            ..Default::default()
        };
        assert!(cfg.validate(5).is_err());
    }
}
