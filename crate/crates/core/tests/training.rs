mod common;

use common::*;
use ecf_core::dataset::{generate_split, DatasetMeta, Sample};
use ecf_core::metrics::rmse;
use ecf_core::operator::{LossKind, OperatorConfig, OperatorModel};
use ecf_core::training::{evaluate_rollout, sample_training_pairs, train, train_from, TrainOutcome};
use ecf_core::{
    ConservationMask, CorrectionMode, DatasetConfig, GridField, GridSpec, ProblemKind, ProblemParams, Split,
    TrainConfig, TrainMode, TrajectoryDataset,
};
use rand::Rng;

fn meta(split: Split) -> DatasetMeta {
    DatasetMeta {
        split,
        master_seed: 0,
        params: ProblemParams::paper(ProblemKind::Diff),
        frame_dt: 0.1,
        generator: "test fixture".into(),
        audit: None,
    }
}

/// Trajectories whose frames never change, so every target equals its input.
fn static_dataset(grid: GridSpec, trajectories: usize, snapshots: usize, seed: u64) -> TrajectoryDataset {
    let mut r = rng(seed);
    let samples = (0..trajectories)
        .map(|i| {
            let frame: Vec<f64> = (0..grid.len()).map(|_| 0.5 + r.random_range(-0.4..0.4)).collect();
            Sample { seed: i as u64, frames: frame.repeat(snapshots) }
        })
        .collect();
    TrajectoryDataset::new(ProblemKind::Diff, grid, 1, snapshots, ConservationMask::all(1), meta(Split::Train), samples).unwrap()
}

#[test]
fn pair_indices_are_uniform() {
    let snapshots = 6;
    let ds = static_dataset(square(2), 1000, snapshots, 40);
    let mut counts = vec![0usize; snapshots - 1];
    let mut seen = vec![0usize; ds.len()];
    for epoch in 1..=100 {
        let pairs = sample_training_pairs(&ds, 7, epoch);
        assert_eq!(pairs.len(), ds.len());
        for (s, t) in pairs {
            counts[t] += 1;
            seen[s] += 1;
        }
    }
    assert!(seen.iter().all(|&n| n == 100), "every trajectory once per epoch");
    let expected = 1e5 / (snapshots - 1) as f64;
    for (t, &c) in counts.iter().enumerate() {
        assert!((c as f64 / expected - 1.0).abs() < 0.02, "bin {t}: {c} vs {expected}");
    }
}

#[test]
fn integrated_correction_supplies_a_uniform_shift() {
    let grid = square(8);
    let (train_set, valid_set) = (static_dataset(grid, 10, 4, 41), static_dataset(grid, 3, 4, 42));
    let cfg = OperatorConfig { width: 2, modes: 2, ..OperatorConfig::new(1) };
    let mut model = OperatorModel::identity(cfg, 2).unwrap();
    model.set_output_bias(0, 0.3);
    let bias = model.layout().proj_bias;
    let config = TrainConfig {
        mode: TrainMode::EcfIntegrated,
        epochs: 10,
        loss: LossKind::Mse,
        seeds: vec![0],
        eval_every: 5,
        ..TrainConfig::default()
    };
    let out = train_from(model.clone(), &train_set, &valid_set, &config, 0).unwrap();
    // Adam rescales roundoff-sized gradients, so the fit wanders slightly
    // before settling; the converged loss is what counts.
    assert!(out.log[0].loss < 1e-12);
    assert!(out.log.last().unwrap().loss < 1e-6, "{:?}", out.log);
    assert!((out.model.params()[bias] - 0.3).abs() < 1e-5, "bias untouched by gradients");
    let x = train_set.frame(0, 0);
    let (_, grad) = out
        .model
        .loss_and_grad(&[x.clone()], &[x.clone()], LossKind::Mse, Some(&train_set.mask))
        .unwrap();
    assert_eq!(grad[bias], 0.0);

    // Without the correction the same start has to unlearn the offset.
    let baseline = TrainConfig { mode: TrainMode::Baseline, ..config };
    let out = train_from(model, &train_set, &valid_set, &baseline, 0).unwrap();
    assert!(out.log[0].loss > 0.05);
}

#[test]
fn zero_learning_rate_epoch_is_a_no_op() {
    let grid = square(8);
    let ds = static_dataset(grid, 5, 3, 43);
    let model = OperatorModel::init(OperatorConfig { width: 4, modes: 2, seed: 3, ..OperatorConfig::new(1) }, 2).unwrap();
    let config = TrainConfig { epochs: 1, lr: 0.0, weight_decay: 0.0, seeds: vec![3], ..TrainConfig::default() };
    let out = train_from(model.clone(), &ds, &ds, &config, 3).unwrap();
    assert_eq!(out.model, model);
}

fn desk_diff(split: Split) -> TrajectoryDataset {
    generate_split(&DatasetConfig::desk(ProblemKind::Diff), split).unwrap()
}

#[test]
fn smoke_training_reduces_the_loss() {
    let (tr, va) = (desk_diff(Split::Train), desk_diff(Split::Valid));
    let config = TrainConfig { epochs: 20, eval_every: 10, seeds: vec![0], ..TrainConfig::default() };
    let TrainOutcome { log, best_epoch, .. } = train(&tr, &va, OperatorConfig::new(1), &config, 0).unwrap();
    assert_eq!(log.len(), 20);
    assert!(log.last().unwrap().loss <= log[0].loss, "{} > {}", log.last().unwrap().loss, log[0].loss);
    assert!([10, 20].contains(&best_epoch));
    assert!(log[9].val_rmse.is_some() && log[19].val_rmse.is_some() && log[0].val_rmse.is_none());
}

#[test]
fn same_seed_same_model_regardless_of_threads() {
    let (tr, va) = (desk_diff(Split::Train), desk_diff(Split::Valid));
    let config = TrainConfig { epochs: 2, eval_every: 1, seeds: vec![4], ..TrainConfig::default() };
    let a = train(&tr, &va, OperatorConfig::new(1), &config, 4).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| train(&tr, &va, OperatorConfig::new(1), &config, 4).unwrap());
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
}

#[test]
fn biased_model_drifts_and_posthoc_correction_closes_it() {
    let test = desk_diff(Split::Test);
    let cfg = OperatorConfig { width: 2, modes: 2, ..OperatorConfig::new(1) };
    let mut model = OperatorModel::identity(cfg, 2).unwrap();
    model.set_output_bias(0, 0.01);
    for i in 0..3 {
        let truth = test.trajectory(i);
        let off = evaluate_rollout(&model, &truth, CorrectionMode::Off, &test.mask).unwrap();
        let fixed = evaluate_rollout(&model, &truth, CorrectionMode::PostHocPerStep, &test.mask).unwrap();
        let e = truth[0].integral(0);
        for t in 0..off.rmse.len() {
            let expected = (t + 1) as f64 * 0.01 / e.abs();
            assert!((off.conservation_error[t] - expected).abs() < 1e-9 * expected.max(1.0), "step {t}");
            assert!(fixed.conservation_error[t] <= 1e-12);
            assert!(fixed.rmse[t] < off.rmse[t], "step {t}");
        }
    }
}

#[test]
fn metric_oracles() {
    let g = square(16);
    let truth = random_field(&mut rng(44), g, 1);
    let mut pred = truth.clone();
    pred.values_mut().iter_mut().for_each(|v| *v += 0.1);
    assert!((rmse(&pred, &truth).unwrap() - 0.1).abs() < 1e-15);
    let other = random_field(&mut rng(45), g, 1);
    let d = ecf_core::error_decomposition(&other, &truth).unwrap();
    assert!((rmse(&other, &truth).unwrap() - d.total[0].sqrt()).abs() < 1e-12);
}

mod properties {
    use super::*;
    use ecf_core::metrics::relative_conservation_error;
    use ecf_core::{correct_field, encode_conserved};
    use proptest::prelude::*;

    fn field(channels: usize) -> impl Strategy<Value = GridField> {
        proptest::collection::vec(-3.0f64..3.0, 36 * channels)
            .prop_map(move |v| GridField::new(square(6), channels, v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rmse_is_a_metric(a in field(2), b in field(2), c in field(2)) {
            let d = |x: &GridField, y: &GridField| rmse(x, y).unwrap();
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert!(d(&a, &b) >= 0.0);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-15);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn corrected_frames_close_the_conservation_error(pred in field(1), truth in field(1), shift in 0.5f64..2.0) {
            let mut truth = truth;
            truth.values_mut().iter_mut().for_each(|v| *v += 3.0 + shift);
            let mask = ConservationMask::all(1);
            let fixed = correct_field(&pred, &encode_conserved(&truth, &mask).unwrap(), &mask).unwrap();
            let err = relative_conservation_error(&[fixed], &[truth], &mask).unwrap();
            prop_assert!(err.values[0] <= 1e-12);
        }
    }
}
