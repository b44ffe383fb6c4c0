//! Closed-form evolution of the linear problems in their eigenbases.

use num_complex::Complex64;

use crate::error::{EcfError, Result};
use crate::grid::{Boundary, GridField, GridSpec};
use crate::spectral::{plan_for, ModeIndex};

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(EcfError::InvalidArgument(format!("evolution time must be >= 0, got {t}")));
    }
    Ok(())
}

fn require_boundary(grid: &GridSpec, boundary: Boundary, what: &str) -> Result<()> {
    if grid.boundary() != boundary {
        return Err(EcfError::InvalidArgument(format!(
            "{what} needs a {boundary:?} grid, got {:?}",
            grid.boundary()
        )));
    }
    Ok(())
}

/// Multiplies every Fourier mode of every channel by `factor(mode, flat)`.
fn apply_fourier_multiplier(ic: &GridField, factor: impl Fn(&ModeIndex) -> Complex64) -> Result<GridField> {
    ic.ensure_finite()?;
    let grid = *ic.grid();
    let plan = plan_for(&grid);
    let n = grid.len();
    let factors: Vec<Complex64> = (0..n)
        .map(|flat| factor(&ModeIndex::of_flat(&grid, flat)) / n as f64)
        .collect();
    let mut out = ic.clone();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..ic.channels() {
        for (b, &v) in buf.iter_mut().zip(ic.channel(c)) {
            *b = Complex64::new(v, 0.0);
        }
        plan.forward(&mut buf);
        for (b, f) in buf.iter_mut().zip(&factors) {
            *b *= f;
        }
        plan.inverse(&mut buf);
        for (o, b) in out.channel_mut(c).iter_mut().zip(&buf) {
            *o = b.re;
        }
    }
    Ok(out)
}

/// Periodic `u_t = D lap u`: mode `n` decays by `exp(-D |k_n|^2 t)`.
pub fn solve_diffusion_exact(ic: &GridField, diffusion: f64, t: f64) -> Result<GridField> {
    check_time(t)?;
    require_boundary(ic.grid(), Boundary::Periodic, "periodic diffusion")?;
    let grid = *ic.grid();
    apply_fourier_multiplier(ic, |mode| Complex64::new((-diffusion * mode.wavenumber_sq(&grid) * t).exp(), 0.0))
}

/// Periodic `u_t + v . grad u = D lap u`: mode factor
/// `exp(-(D |k|^2 + i k . v) t)`.
///
/// The advective wavenumber of a Nyquist bin is taken as zero (the usual
/// convention for odd derivatives), which keeps the result real and the
/// evolution a semigroup; such bins only diffuse.
pub fn solve_convdiff_exact(ic: &GridField, diffusion: f64, velocity: [f64; 2], t: f64) -> Result<GridField> {
    check_time(t)?;
    require_boundary(ic.grid(), Boundary::Periodic, "periodic convection-diffusion")?;
    let grid = *ic.grid();
    apply_fourier_multiplier(ic, |mode| {
        let mut phase = 0.0;
        for (axis, (&n, &l)) in mode.components().iter().zip(grid.lengths()).enumerate() {
            let res = grid.resolution()[axis] as i64;
            if res % 2 == 0 && n.abs() == res / 2 {
                continue;
            }
            phase += 2.0 * std::f64::consts::PI * n as f64 / l * velocity[axis];
        }
        let decay = -diffusion * mode.wavenumber_sq(&grid) * t;
        Complex64::from_polar(decay.exp(), -phase * t)
    })
}

/// Orthonormal DCT-II matrix on cell-centred points: row `n` samples
/// `cos(pi n (i + 1/2) / N)`.
pub(crate) fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let w = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] = w * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
        }
    }
    m
}

/// Applies `mat` (n x n, row-major) along `axis` of a `[n0, n1]` array.
fn apply_along(values: &[f64], shape: [usize; 2], axis: usize, mat: &[f64], transpose: bool) -> Vec<f64> {
    let [n0, n1] = shape;
    let n = shape[axis];
    let entry = |r: usize, c: usize| if transpose { mat[c * n + r] } else { mat[r * n + c] };
    let mut out = vec![0.0; values.len()];
    if axis == 0 {
        for r in 0..n0 {
            for c in 0..n0 {
                let m = entry(r, c);
                if m == 0.0 {
                    continue;
                }
                let src = &values[c * n1..(c + 1) * n1];
                for (o, s) in out[r * n1..(r + 1) * n1].iter_mut().zip(src) {
                    *o += m * s;
                }
            }
        }
    } else {
        for row in 0..n0 {
            let src = &values[row * n1..(row + 1) * n1];
            for r in 0..n1 {
                out[row * n1 + r] = (0..n1).map(|c| entry(r, c) * src[c]).sum();
            }
        }
    }
    out
}

/// Adiabatic `u_t = D lap u` with `grad u . n = 0`, evolved exactly in the
/// cosine eigenbasis: coefficient `n` decays by `exp(-D sum_a (pi n_a / L_a)^2 t)`.
pub fn solve_heat_neumann(ic: &GridField, diffusion: f64, t: f64) -> Result<GridField> {
    check_time(t)?;
    require_boundary(ic.grid(), Boundary::Neumann, "adiabatic heat")?;
    ic.ensure_finite()?;
    let grid = *ic.grid();
    let shape = [grid.resolution()[0], grid.inner()];
    let mats: Vec<Vec<f64>> = (0..grid.dims()).map(|a| dct_matrix(shape[a])).collect();
    let decay_axis = |axis: usize, k: usize| {
        let w = std::f64::consts::PI * k as f64 / grid.lengths()[axis];
        w * w
    };
    let mut out = ic.clone();
    for c in 0..ic.channels() {
        let mut coef = ic.channel(c).to_vec();
        for (axis, m) in mats.iter().enumerate() {
            coef = apply_along(&coef, shape, axis, m, false);
        }
        for (flat, v) in coef.iter_mut().enumerate() {
            let mut k2 = decay_axis(0, flat / shape[1]);
            if grid.dims() == 2 {
                k2 += decay_axis(1, flat % shape[1]);
            }
            *v *= (-diffusion * k2 * t).exp();
        }
        for (axis, m) in mats.iter().enumerate().rev() {
            coef = apply_along(&coef, shape, axis, m, true);
        }
        out.channel_mut(c).copy_from_slice(&coef);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn periodic(n: usize) -> GridSpec {
        GridSpec::unit_square(n, Boundary::Periodic).unwrap()
    }

    #[test]
    fn constant_is_invariant() {
        let c = GridField::constant(periodic(8), 1, 0.42);
        for out in [
            solve_diffusion_exact(&c, 0.3, 2.0).unwrap(),
            solve_convdiff_exact(&c, 0.3, [1.0, 0.5], 2.0).unwrap(),
        ] {
            assert!(out.values().iter().all(|v| (v - 0.42).abs() < 1e-15));
        }
        let n = GridField::constant(periodic(8).with_boundary(Boundary::Neumann), 1, 0.42);
        let out = solve_heat_neumann(&n, 0.3, 2.0).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.42).abs() < 1e-14));
    }

    #[test]
    fn single_mode_decay_is_closed_form() {
        let g = periodic(16);
        let ic = GridField::from_fn(g, |x| (2.0 * PI * x[0]).cos()).unwrap();
        let out = solve_diffusion_exact(&ic, 0.01, 1.0).unwrap();
        let amp = (-0.01 * 4.0 * PI * PI).exp();
        for (o, i) in out.values().iter().zip(ic.values()) {
            assert!((o - amp * i).abs() < 1e-10);
        }
    }

    #[test]
    fn neumann_cosine_mode_decay() {
        let g = GridSpec::new(&[2.0, 1.0], &[12, 10], Boundary::Neumann).unwrap();
        let ic = GridField::from_fn(g, |x| (PI * x[0] / 2.0).cos()).unwrap();
        let (d, t) = (0.05, 0.7);
        let out = solve_heat_neumann(&ic, d, t).unwrap();
        let amp = (-d * PI * PI * t / 4.0).exp();
        for (o, i) in out.values().iter().zip(ic.values()) {
            assert!((o - amp * i).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_velocity_reduces_to_diffusion() {
        let g = periodic(12);
        let ic = crate::solvers::ic::grf_ic(1, 5.0, 2.0, &g).unwrap();
        let a = solve_convdiff_exact(&ic, 0.02, [0.0, 0.0], 0.3).unwrap();
        let b = solve_diffusion_exact(&ic, 0.02, 0.3).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_time_and_wrong_boundary_rejected() {
        let ic = GridField::zeros(periodic(4), 1);
        assert!(solve_diffusion_exact(&ic, 0.1, -1.0).is_err());
        assert!(solve_convdiff_exact(&ic, 0.1, [1.0, 0.0], -1e-3).is_err());
        assert!(solve_heat_neumann(&ic, 0.1, 1.0).is_err());
    }

    #[test]
    fn dct_matrix_is_orthonormal() {
        let n = 7;
        let m = dct_matrix(n);
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| m[a * n + i] * m[b * n + i]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }
}
