mod common;

use std::f64::consts::PI;

use common::*;
use ecf_core::operator::{
    decode_checkpoint, encode_checkpoint, AdamW, AdamWParams, LossKind, OperatorConfig, OperatorModel,
};
use ecf_core::{Boundary, ConservationMask, EcfError, GridField, GridSpec};
use num_complex::Complex64;
use proptest::prelude::*;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// Retained half-set: zero mode, then `(a, b)` with `a > 0` or `a == 0, b > 0`.
fn half_modes(modes: usize) -> Vec<(i64, i64)> {
    let m = modes as i64 - 1;
    let mut out = vec![(0, 0)];
    for a in 0..=m {
        for b in -m..=m {
            if a > 0 || b > 0 {
                out.push((a, b));
            }
        }
    }
    out
}

/// Straight-line forward pass of a 2-D model from its flat parameters:
/// direct DFT sums, no FFT, no shared buffers.
fn naive_forward(model: &OperatorModel, x: &GridField) -> Vec<f64> {
    let cfg = model.config();
    let (c, w) = (cfg.channels, cfg.width);
    let (n0, n1) = (x.grid().resolution()[0], x.grid().resolution()[1]);
    let n = n0 * n1;
    let p = model.params();
    let l = model.layout();
    let modes = half_modes(cfg.modes);
    let sr = 2 * modes.len() - 1;
    let phase = |(a, b): (i64, i64), j: usize| {
        2.0 * PI * (a as f64 * (j / n1) as f64 / n0 as f64 + b as f64 * (j % n1) as f64 / n1 as f64)
    };
    let table: Vec<Vec<Complex64>> = modes
        .iter()
        .map(|&k| (0..n).map(|j| Complex64::from_polar(1.0, phase(k, j))).collect())
        .collect();

    let mut h = vec![vec![0.0; n]; w];
    for (o, ho) in h.iter_mut().enumerate() {
        for j in 0..n {
            ho[j] = p[l.lift_bias + o] + (0..c).map(|i| p[l.lift_weight + o * c + i] * x.channel(i)[j]).sum::<f64>();
        }
    }
    for b in &l.blocks {
        let spec: Vec<Vec<Complex64>> = h
            .iter()
            .map(|hi| table.iter().map(|t| (0..n).map(|j| hi[j] * t[j].conj()).sum()).collect())
            .collect();
        let mut next = vec![vec![0.0; n]; w];
        for o in 0..w {
            let mut s = vec![Complex64::new(0.0, 0.0); modes.len()];
            for i in 0..w {
                let at = b.spectral + (o * w + i) * sr;
                s[0] += p[at] * spec[i][0];
                for k in 1..modes.len() {
                    s[k] += Complex64::new(p[at + 2 * k - 1], p[at + 2 * k]) * spec[i][k];
                }
            }
            for j in 0..n {
                let mut z = s[0].re;
                for k in 1..modes.len() {
                    z += 2.0 * (s[k] * table[k][j]).re;
                }
                z = p[b.bias + o] + z / n as f64;
                z += (0..w).map(|i| p[b.weight + o * w + i] * h[i][j]).sum::<f64>();
                next[o][j] = gelu(z);
            }
        }
        h = next;
    }
    let mut out = vec![0.0; c * n];
    for o in 0..c {
        for j in 0..n {
            out[o * n + j] = p[l.proj_bias + o] + (0..w).map(|i| p[l.proj_weight + o * w + i] * h[i][j]).sum::<f64>();
        }
    }
    out
}

#[test]
fn parameter_count_matches_the_layout() {
    let model = OperatorModel::init(OperatorConfig::new(1), 2).unwrap();
    let (c, w, nk) = (1, 16, half_modes(8).len());
    let per_block = w * w * (2 * nk - 1) + w * w + w;
    assert_eq!(model.len(), (w * c + w) + 2 * per_block + (c * w + c));
}

#[test]
fn zero_and_bias_only_models_are_constant() {
    let g = square(16);
    let x = random_field(&mut rng(30), g, 2);
    let mut m = OperatorModel::zeros(OperatorConfig::new(2), 2).unwrap();
    assert!(m.forward(&x).unwrap().values().iter().all(|&v| v == 0.0));
    m.set_output_bias(1, 0.25);
    let y = m.forward(&x).unwrap();
    assert!(y.channel(0).iter().all(|&v| v == 0.0) && y.channel(1).iter().all(|&v| v == 0.25));
}

#[test]
fn identity_fixture_maps_constants_and_fields_to_themselves() {
    let cfg = OperatorConfig { width: 4, modes: 4, ..OperatorConfig::new(2) };
    let m = OperatorModel::identity(cfg, 2).unwrap();
    let g = square(16);
    let constant = GridField::constant(g, 2, 0.37);
    assert!(max_abs_diff(m.forward(&constant).unwrap().values(), constant.values()) < 1e-14);
    let x = random_field(&mut rng(31), g, 2);
    assert!(max_abs_diff(m.forward(&x).unwrap().values(), x.values()) < 1e-13);
    assert!(OperatorModel::identity(OperatorConfig::new(2), 2).is_err());
}

#[test]
fn forward_matches_the_naive_reimplementation() {
    let mut r = rng(32);
    for (seed, channels) in [(1, 1), (2, 3)] {
        let m = OperatorModel::init(OperatorConfig { seed, ..OperatorConfig::new(channels) }, 2).unwrap();
        let x = random_field(&mut r, square(32), channels);
        let fast = m.forward(&x).unwrap();
        let slow = naive_forward(&m, &x);
        let worst = max_abs_diff(fast.values(), &slow);
        assert!(worst < 1e-12, "seed {seed}: {worst:e}");
    }
}

#[test]
fn non_square_grid_matches_the_naive_reimplementation() {
    let m = OperatorModel::init(OperatorConfig { width: 5, modes: 3, seed: 9, ..OperatorConfig::new(1) }, 2).unwrap();
    let g = GridSpec::new(&[1.0, 2.0], &[8, 12], Boundary::Periodic).unwrap();
    let x = random_field(&mut rng(33), g, 1);
    assert!(max_abs_diff(m.forward(&x).unwrap().values(), &naive_forward(&m, &x)) < 1e-12);
}

#[test]
fn too_many_modes_for_the_grid_is_rejected() {
    let m = OperatorModel::init(OperatorConfig::new(1), 2).unwrap();
    assert!(matches!(m.forward(&GridField::zeros(square(8), 1)), Err(EcfError::InvalidArgument(_))));
    assert!(matches!(m.forward(&GridField::zeros(square(16), 2)), Err(EcfError::ShapeMismatch(_))));
}

fn tiny(channels: usize, seed: u64) -> OperatorModel {
    let cfg = OperatorConfig { channels, layers: 2, width: 3, modes: 2, seed };
    let m = OperatorModel::init(cfg, 2).unwrap();
    assert!(m.len() <= 500, "{}", m.len());
    m
}

/// Fourth-order central difference of the batch loss along parameter `i`.
fn fd(m: &OperatorModel, i: usize, xs: &[GridField], ys: &[GridField], loss: LossKind, mask: Option<&ConservationMask>) -> f64 {
    let h = 3e-3;
    let at = |delta: f64| {
        let mut q = m.clone();
        q.params_mut()[i] += delta;
        q.loss(xs, ys, loss, mask).unwrap()
    };
    (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
}

fn check_gradients(m: &OperatorModel, xs: &[GridField], ys: &[GridField], loss: LossKind, mask: Option<&ConservationMask>) {
    let (value, grad) = m.loss_and_grad(xs, ys, loss, mask).unwrap();
    assert!((value - m.loss(xs, ys, loss, mask).unwrap()).abs() < 1e-14);
    for (i, &g) in grad.iter().enumerate() {
        let numeric = fd(m, i, xs, ys, loss, mask);
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-5, "param {i}: analytic {g:e}, numeric {numeric:e}");
    }
}

#[test]
fn gradients_match_finite_differences_mse() {
    let mut r = rng(34);
    let g = square(8);
    let m = tiny(2, 5);
    let xs: Vec<GridField> = (0..2).map(|_| random_field(&mut r, g, 2)).collect();
    let ys: Vec<GridField> = (0..2).map(|_| random_field(&mut r, g, 2)).collect();
    check_gradients(&m, &xs, &ys, LossKind::Mse, None);
    check_gradients(&m, &xs, &ys, LossKind::Mse, Some(&ConservationMask::only(2, 0)));
}

#[test]
fn gradients_match_finite_differences_mae_away_from_the_kink() {
    let mut r = rng(35);
    let g = GridSpec::new(&[1.0, 1.0], &[6, 8], Boundary::Periodic).unwrap();
    let m = tiny(1, 6);
    let mask = ConservationMask::all(1);
    let x = random_field(&mut r, g, 1);
    // Residuals of magnitude >= 0.2 keep the stencil on one side of |.|.
    for ecf in [None, Some(&mask)] {
        let mut y = m.forward(&x).unwrap();
        if let Some(k) = ecf {
            let t = ecf_core::encode_conserved(&x, k).unwrap();
            y = ecf_core::correct_field(&y, &t, k).unwrap();
        }
        for (i, v) in y.values_mut().iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.5 } else { -0.3 };
        }
        check_gradients(&m, &[x.clone()], &[y], LossKind::Mae, ecf);
    }
}

#[test]
fn corrected_loss_is_flat_along_the_uniform_direction() {
    let mut r = rng(36);
    let g = square(8);
    let mut m = tiny(2, 7);
    let mask = ConservationMask::only(2, 1);
    let xs = vec![random_field(&mut r, g, 2)];
    let ys = vec![random_field(&mut r, g, 2)];
    let (_, grad) = m.loss_and_grad(&xs, &ys, LossKind::Mse, Some(&mask)).unwrap();
    let bias = m.layout().proj_bias;
    assert!(grad[bias + 1].abs() < 1e-10, "{:e}", grad[bias + 1]);
    assert!(grad[bias].abs() > 1e-6, "the unmasked channel still sees its bias");
    let base = m.loss(&xs, &ys, LossKind::Mse, Some(&mask)).unwrap();
    m.set_output_bias(1, m.params()[bias + 1] + 0.7);
    let shifted = m.loss(&xs, &ys, LossKind::Mse, Some(&mask)).unwrap();
    assert!((shifted - base).abs() < 1e-10);
}

#[test]
fn adamw_first_step_and_pure_decay() {
    let hp = AdamWParams { lr: 0.01, weight_decay: 0.0, ..Default::default() };
    let mut opt = AdamW::new(1, hp);
    let mut p = [0.5];
    opt.step(&mut p, &[1.0]).unwrap();
    assert!((p[0] - (0.5 - 0.01 / (1.0 + 1e-8))).abs() < 1e-12);

    let hp = AdamWParams { lr: 0.01, weight_decay: 0.1, ..Default::default() };
    let mut opt = AdamW::new(3, hp);
    let mut p = [1.0, -2.0, 0.25];
    let before = p;
    opt.step(&mut p, &[0.0; 3]).unwrap();
    for (a, b) in p.iter().zip(before) {
        assert!((a - b * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    }
    assert!(opt.step(&mut p, &[f64::NAN, 0.0, 0.0]).is_err());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let m = tiny(3, 8);
    let bytes = encode_checkpoint(&m);
    assert_eq!(decode_checkpoint(&bytes).unwrap(), m);
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x10;
    assert!(matches!(decode_checkpoint(&bad), Err(EcfError::Format(_))));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 9]).is_err());
    let mut be = bytes.clone();
    be[6..8].copy_from_slice(&[0xFE, 0xFF]);
    assert!(decode_checkpoint(&be).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip_any_parameters(seed in 0u64..1000, scale in 1e-3f64..1e3) {
        let mut m = tiny(1, seed);
        m.params_mut().iter_mut().for_each(|p| *p *= scale);
        prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&m)).unwrap(), m);
    }

    #[test]
    fn masked_bias_never_moves_the_corrected_loss(seed in 0u64..1000, shift in -5.0f64..5.0) {
        let mut r = rng(seed);
        let g = square(6);
        let mut m = tiny(1, seed);
        let mask = ConservationMask::all(1);
        let xs = vec![random_field(&mut r, g, 1)];
        let ys = vec![random_field(&mut r, g, 1)];
        let base = m.loss(&xs, &ys, LossKind::Mae, Some(&mask)).unwrap();
        let bias = m.layout().proj_bias;
        m.set_output_bias(0, m.params()[bias] + shift);
        let moved = m.loss(&xs, &ys, LossKind::Mae, Some(&mask)).unwrap();
        prop_assert!((moved - base).abs() < 1e-12);
    }
}
