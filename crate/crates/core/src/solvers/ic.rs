//! Random initial conditions.

use num_complex::Complex64;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{EcfError, Result};
use crate::grid::GridField;
use crate::grid::GridSpec;
use crate::spectral::{plan_for, ModeIndex};

/// Chebyshev polynomials `T_0..T_{order-1}` at `xi`.
pub fn chebyshev_values(order: usize, xi: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(order);
    for i in 0..order {
        t.push(match i {
            0 => 1.0,
            1 => xi,
            _ => 2.0 * xi * t[i - 1] - t[i - 2],
        });
    }
    t
}

/// `u(x, y) = sum_{i,j < order} c_ij T_i(xi(x)) T_j(xi(y))` with
/// `xi(x) = 2x/L - 1`; `coeffs` is row-major in `(i, j)`.
pub fn chebyshev_field(coeffs: &[f64], order: usize, grid: &GridSpec) -> Result<GridField> {
    if grid.dims() != 2 {
        return Err(EcfError::InvalidArgument("Chebyshev initial conditions need a 2-D grid".into()));
    }
    if coeffs.len() != order * order {
        return Err(EcfError::InvalidArgument(format!(
            "{} coefficients for order {order}",
            coeffs.len()
        )));
    }
    let basis = |axis: usize| -> Vec<Vec<f64>> {
        (0..grid.resolution()[axis])
            .map(|i| {
                let xi = 2.0 * grid.coordinate(axis, i) / grid.lengths()[axis] - 1.0;
                chebyshev_values(order, xi)
            })
            .collect()
    };
    let (tx, ty) = (basis(0), basis(1));
    // a[i][y] = sum_j c_ij T_j(y)
    let a: Vec<Vec<f64>> = (0..order)
        .map(|i| {
            ty.iter()
                .map(|t| (0..order).map(|j| coeffs[i * order + j] * t[j]).sum())
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    for t in &tx {
        for y in 0..ty.len() {
            values.push((0..order).map(|i| t[i] * a[i][y]).sum());
        }
    }
    GridField::new(*grid, 1, values)
}

/// Random Chebyshev combination with `c_ij ~ U[-1, 1]`, deterministic per seed.
pub fn chebyshev_ic(seed: u64, order: usize, grid: &GridSpec) -> Result<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let coeffs: Vec<f64> = (0..order * order).map(|_| dist.sample(&mut rng)).collect();
    chebyshev_field(&coeffs, order, grid)
}

/// Mode variance of the Gaussian random field,
/// `sigma_n^2 = tau^(2 alpha) (|k_n|^2 + tau^2)^(-alpha)`.
///
/// The `tau^(2 alpha)` factor normalizes the density so `sigma_0 = 1`.
pub fn grf_mode_variance(mode: &ModeIndex, grid: &GridSpec, tau: f64, alpha: f64) -> f64 {
    let k2 = mode.wavenumber_sq(grid);
    tau.powf(2.0 * alpha) * (k2 + tau * tau).powf(-alpha)
}

/// Zero-mean Gaussian random field on a periodic grid.
///
/// White noise is transformed, each mode scaled to standard deviation
/// `sigma_n`, and the zero mode removed; real-valuedness follows from the
/// conjugate symmetry of the noise spectrum.
pub fn grf_ic(seed: u64, tau: f64, alpha: f64, grid: &GridSpec) -> Result<GridField> {
    if !(tau > 0.0 && alpha > 0.0) {
        return Err(EcfError::InvalidArgument(format!("GRF needs tau > 0 and alpha > 0, got {tau}, {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let plan = plan_for(grid);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    plan.forward(&mut buf);
    // Unnormalized noise coefficients have E|.|^2 = N; the target is sigma_n^2
    // under the mean-normalized convention, whose inverse is the plain sum.
    let scale = 1.0 / (n as f64).sqrt();
    for (flat, z) in buf.iter_mut().enumerate() {
        let mode = ModeIndex::of_flat(grid, flat);
        *z *= if mode.is_zero() {
            0.0
        } else {
            scale * grf_mode_variance(&mode, grid, tau, alpha).sqrt()
        };
    }
    plan.inverse(&mut buf);
    GridField::new(*grid, 1, buf.iter().map(|z| z.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn chebyshev_recurrence_matches_cosine_form() {
        for &xi in &[-1.0, -0.3, 0.0, 0.71, 1.0] {
            let t = chebyshev_values(20, xi);
            for (i, v) in t.iter().enumerate() {
                let closed = (i as f64 * f64::acos(xi)).cos();
                assert!((v - closed).abs() < 1e-12, "T_{i}({xi})");
            }
        }
    }

    #[test]
    fn degree_zero_term_is_constant() {
        let g = GridSpec::unit_square(6, Boundary::Periodic).unwrap();
        let mut c = vec![0.0; 400];
        c[0] = 0.37;
        let f = chebyshev_field(&c, 20, &g).unwrap();
        assert!(f.values().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn linear_term_reproduces_mapped_coordinate() {
        let g = GridSpec::new(&[2.0, 1.0], &[5, 4], Boundary::Neumann).unwrap();
        let mut c = vec![0.0; 400];
        c[20] = 1.0; // i = 1, j = 0
        let f = chebyshev_field(&c, 20, &g).unwrap();
        for i in 0..5 {
            let xi = 2.0 * g.coordinate(0, i) / 2.0 - 1.0;
            for j in 0..4 {
                assert!((f.values()[i * 4 + j] - xi).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ics_are_seed_deterministic() {
        let g = GridSpec::unit_square(16, Boundary::Periodic).unwrap();
        assert_eq!(chebyshev_ic(7, 20, &g).unwrap(), chebyshev_ic(7, 20, &g).unwrap());
        assert_ne!(chebyshev_ic(7, 20, &g).unwrap(), chebyshev_ic(8, 20, &g).unwrap());
        assert_eq!(grf_ic(3, 5.0, 2.0, &g).unwrap(), grf_ic(3, 5.0, 2.0, &g).unwrap());
    }

    #[test]
    fn grf_is_real_with_zero_mean() {
        let g = GridSpec::unit_square(16, Boundary::Periodic).unwrap();
        let f = grf_ic(11, 5.0, 2.0, &g).unwrap();
        let s = crate::spectral::fft_forward(&f).unwrap();
        assert!(s.zero_mode(0).norm() < 1e-15);
        // Real-valuedness: the complex inverse had negligible imaginary part.
        let mut buf = s.channel(0).to_vec();
        plan_for(&g).inverse(&mut buf);
        assert!(buf.iter().all(|z| z.im.abs() < 1e-12));
    }

    #[test]
    fn chebyshev_needs_2d() {
        let g = GridSpec::line(8, 1.0, Boundary::Periodic).unwrap();
        assert!(chebyshev_ic(0, 20, &g).is_err());
    }
}
