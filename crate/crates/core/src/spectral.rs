//! Discrete Fourier transforms on [`GridSpec`]s and Parseval accounting.
//!
//! Normalization: `coeff(n) = (1/N) sum_j u_j exp(-2 pi i n . x_j / L)`, so the
//! zero mode is the arithmetic mean of the field and the inverse transform is
//! the plain (unnormalized) sum over modes.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{EcfError, Result};
use crate::grid::{check_finite, GridField, GridSpec};

/// Relative tolerance on conjugate symmetry accepted by [`fft_inverse`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Cached forward/inverse plans for one grid shape. Both directions are
/// unnormalized; callers scale.
pub struct FftPlan {
    shape: [usize; 2],
    dims: usize,
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl FftPlan {
    fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let dims = grid.dims();
        let shape = [grid.resolution()[0], grid.inner()];
        FftPlan {
            shape,
            dims,
            fwd: [planner.plan_fft_forward(shape[0]), planner.plan_fft_forward(shape[1])],
            inv: [planner.plan_fft_inverse(shape[0]), planner.plan_fft_inverse(shape[1])],
        }
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `sum_j u_j exp(-i ...)`, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.fwd);
    }

    /// `sum_n c_n exp(+i ...)`, in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inv);
    }

    fn run(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 2]) {
        debug_assert_eq!(buf.len(), self.len());
        let [n0, n1] = self.shape;
        if self.dims == 1 {
            process(&plans[0], buf);
            return;
        }
        process(&plans[1], buf);
        let mut cols = vec![Complex64::new(0.0, 0.0); buf.len()];
        for i in 0..n0 {
            for j in 0..n1 {
                cols[j * n0 + i] = buf[i * n1 + j];
            }
        }
        process(&plans[0], &mut cols);
        for i in 0..n0 {
            for j in 0..n1 {
                buf[i * n1 + j] = cols[j * n0 + i];
            }
        }
    }
}

impl FftPlan {
    /// Forward transform that completes only the last-axis bins listed in
    /// `cols`; the other columns are left partially transformed.
    pub(crate) fn forward_cols(&self, buf: &mut [Complex64], cols: &[usize]) {
        if self.dims == 1 {
            return self.forward(buf);
        }
        let [n0, n1] = self.shape;
        process(&self.fwd[1], buf);
        self.columns(buf, cols, &self.fwd[0], n0, n1);
    }

    /// Inverse transform of a spectrum that vanishes outside the last-axis
    /// bins listed in `cols`.
    pub(crate) fn inverse_cols(&self, buf: &mut [Complex64], cols: &[usize]) {
        if self.dims == 1 {
            return self.inverse(buf);
        }
        let [n0, n1] = self.shape;
        self.columns(buf, cols, &self.inv[0], n0, n1);
        process(&self.inv[1], buf);
    }

    fn columns(&self, buf: &mut [Complex64], cols: &[usize], plan: &Arc<dyn Fft<f64>>, n0: usize, n1: usize) {
        let mut gathered = vec![Complex64::new(0.0, 0.0); n0 * cols.len()];
        for (c, &j) in cols.iter().enumerate() {
            for i in 0..n0 {
                gathered[c * n0 + i] = buf[i * n1 + j];
            }
        }
        process(plan, &mut gathered);
        for (c, &j) in cols.iter().enumerate() {
            for i in 0..n0 {
                buf[i * n1 + j] = gathered[c * n0 + i];
            }
        }
    }
}

fn process(plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
    if plan.len() <= 1 {
        return;
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    plan.process_with_scratch(buf, &mut scratch);
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, usize, usize), Arc<FftPlan>>> = RefCell::new(HashMap::new());
}

/// Returns the (per-thread cached) plan for `grid`'s shape.
pub fn plan_for(grid: &GridSpec) -> Arc<FftPlan> {
    let key = (grid.dims(), grid.resolution()[0], grid.inner());
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(key)
            .or_insert_with(|| Arc::new(FftPlan::new(grid)))
            .clone()
    })
}

/// Maps an FFT bin `k` in `0..n` to its signed frequency. The Nyquist bin of
/// an even axis maps to `+n/2`.
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Flat index of the mode `-n` given the flat index of `n`.
pub fn conjugate_index(grid: &GridSpec, flat: usize) -> usize {
    let inner = grid.inner();
    let n0 = grid.resolution()[0];
    let (i, j) = (flat / inner, flat % inner);
    ((n0 - i) % n0) * inner + (inner - j) % inner
}

/// Multi-index `n = (n_1, ..., n_m)` of a Fourier mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeIndex {
    components: [i64; 2],
    dims: usize,
}

impl ModeIndex {
    pub fn zero(dims: usize) -> Self {
        ModeIndex { components: [0; 2], dims }
    }

    pub fn new(components: &[i64]) -> Self {
        let mut c = [0; 2];
        c[..components.len()].copy_from_slice(components);
        ModeIndex {
            components: c,
            dims: components.len(),
        }
    }

    pub fn components(&self) -> &[i64] {
        &self.components[..self.dims]
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// Mode carried by flat FFT bin `flat` on `grid`.
    pub fn of_flat(grid: &GridSpec, flat: usize) -> Self {
        let res = grid.resolution();
        let inner = grid.inner();
        match grid.dims() {
            1 => ModeIndex::new(&[signed_frequency(flat, res[0])]),
            _ => ModeIndex::new(&[
                signed_frequency(flat / inner, res[0]),
                signed_frequency(flat % inner, res[1]),
            ]),
        }
    }

    /// Flat FFT bin holding this mode (frequencies are taken modulo `N`).
    pub fn flat(&self, grid: &GridSpec) -> Result<usize> {
        if self.dims != grid.dims() {
            return Err(EcfError::ShapeMismatch(format!(
                "{}-D mode index on a {}-D grid",
                self.dims,
                grid.dims()
            )));
        }
        let mut flat = 0usize;
        for (axis, &n) in grid.resolution().iter().enumerate() {
            flat = flat * n + self.components[axis].rem_euclid(n as i64) as usize;
        }
        Ok(flat)
    }

    /// Squared physical wavenumber `sum_a (2 pi n_a / L_a)^2`.
    pub fn wavenumber_sq(&self, grid: &GridSpec) -> f64 {
        self.components()
            .iter()
            .zip(grid.lengths())
            .map(|(&n, &l)| {
                let k = 2.0 * std::f64::consts::PI * n as f64 / l;
                k * k
            })
            .sum()
    }
}

/// Full discrete spectrum of a field, per channel, in FFT bin order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: GridSpec,
    channels: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn from_coeffs(grid: GridSpec, channels: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != channels * grid.len() {
            return Err(EcfError::ShapeMismatch(format!(
                "{} coefficients for {channels} channel(s) on {} modes",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Spectrum { grid, channels, coeffs })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.grid.len();
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.len();
        &mut self.coeffs[c * n..(c + 1) * n]
    }

    pub fn coeff(&self, c: usize, mode: &ModeIndex) -> Result<Complex64> {
        Ok(self.channel(c)[mode.flat(&self.grid)?])
    }

    pub fn set_coeff(&mut self, c: usize, mode: &ModeIndex, value: Complex64) -> Result<()> {
        let flat = mode.flat(&self.grid)?;
        self.channel_mut(c)[flat] = value;
        Ok(())
    }

    /// Coefficient of mode 0 (the channel mean for spectra of real fields).
    pub fn zero_mode(&self, c: usize) -> Complex64 {
        self.channel(c)[0]
    }

    /// Largest `|c(-n) - conj(c(n))|` and where it occurs.
    pub fn symmetry_defect(&self) -> (f64, usize) {
        let n = self.grid.len();
        let mut worst = (0.0, 0);
        for c in 0..self.channels {
            let ch = self.channel(c);
            for (flat, z) in ch.iter().enumerate() {
                let d = (ch[conjugate_index(&self.grid, flat)] - z.conj()).norm();
                if d > worst.0 {
                    worst = (d, c * n + flat);
                }
            }
        }
        worst
    }
}

/// Forward transform under the mean-normalized convention.
pub fn fft_forward(field: &GridField) -> Result<Spectrum> {
    check_finite(field.values(), "fft_forward input")?;
    let grid = *field.grid();
    let plan = plan_for(&grid);
    let n = grid.len();
    let scale = 1.0 / n as f64;
    let mut coeffs = Vec::with_capacity(field.values().len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..field.channels() {
        for (b, &v) in buf.iter_mut().zip(field.channel(c)) {
            *b = Complex64::new(v, 0.0);
        }
        plan.forward(&mut buf);
        coeffs.extend(buf.iter().map(|z| z * scale));
    }
    Ok(Spectrum {
        grid,
        channels: field.channels(),
        coeffs,
    })
}

/// Inverse transform; the spectrum must be conjugate symmetric so the result is real.
pub fn fft_inverse(spectrum: &Spectrum) -> Result<GridField> {
    check_finite_complex(&spectrum.coeffs)?;
    let scale = spectrum.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let (defect, index) = spectrum.symmetry_defect();
    if defect > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(EcfError::SymmetryViolation { deviation: defect, index });
    }
    let grid = spectrum.grid;
    let plan = plan_for(&grid);
    let n = grid.len();
    let mut values = Vec::with_capacity(spectrum.coeffs.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..spectrum.channels {
        buf.copy_from_slice(spectrum.channel(c));
        plan.inverse(&mut buf);
        values.extend(buf.iter().map(|z| z.re));
    }
    GridField::new(grid, spectrum.channels, values)
}

fn check_finite_complex(coeffs: &[Complex64]) -> Result<()> {
    match coeffs.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        Some(index) => Err(EcfError::NonFinite {
            context: "spectrum".into(),
            index,
        }),
        None => Ok(()),
    }
}

/// Discrete L2 norm per channel, `sqrt(cell_volume * sum v^2)`.
pub fn l2_norm(field: &GridField) -> Vec<f64> {
    let dv = field.grid().cell_volume();
    (0..field.channels())
        .map(|c| (dv * field.channel(c).iter().map(|v| v * v).sum::<f64>()).sqrt())
        .collect()
}

/// `L^m sum_n |c_n|^2` per channel; equals `l2_norm^2` by Parseval.
pub fn parseval_energy(spectrum: &Spectrum) -> Vec<f64> {
    let vol = spectrum.grid.domain_volume();
    (0..spectrum.channels)
        .map(|c| vol * spectrum.channel(c).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use std::f64::consts::PI;

    fn line(n: usize) -> GridSpec {
        GridSpec::line(n, 1.0, Boundary::Periodic).unwrap()
    }

    #[test]
    fn constant_field_has_only_mean() {
        let g = GridSpec::unit_square(4, Boundary::Periodic).unwrap();
        let s = fft_forward(&GridField::constant(g, 1, 0.7)).unwrap();
        assert!((s.zero_mode(0).re - 0.7).abs() < 1e-15);
        for z in &s.channel(0)[1..] {
            assert!(z.norm() < 1e-15);
        }
    }

    #[test]
    fn cosine_splits_between_plus_minus_one() {
        let f = GridField::from_fn(line(8), |x| (2.0 * PI * x[0]).cos()).unwrap();
        let s = fft_forward(&f).unwrap();
        for flat in 0..8 {
            let mode = ModeIndex::of_flat(s.grid(), flat);
            let expect = if mode.components()[0].abs() == 1 { 0.5 } else { 0.0 };
            assert!((s.channel(0)[flat] - Complex64::new(expect, 0.0)).norm() < 1e-15);
        }
        let back = fft_inverse(&s).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_pure_mean_is_constant() {
        let g = GridSpec::unit_square(3, Boundary::Periodic).unwrap();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 9];
        coeffs[0] = Complex64::new(-1.25, 0.0);
        let f = fft_inverse(&Spectrum::from_coeffs(g, 1, coeffs).unwrap()).unwrap();
        assert!(f.values().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 8];
        coeffs[1] = Complex64::new(0.0, 1.0);
        let err = fft_inverse(&Spectrum::from_coeffs(line(8), 1, coeffs).unwrap()).unwrap_err();
        assert!(matches!(err, EcfError::SymmetryViolation { .. }));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let g = line(4);
        let mut f = GridField::zeros(g, 1);
        f.values_mut()[3] = f64::NAN;
        match fft_forward(&f).unwrap_err() {
            EcfError::NonFinite { index, .. } => assert_eq!(index, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn l2_norm_of_constant_on_unit_square() {
        let g = GridSpec::unit_square(8, Boundary::Periodic).unwrap();
        assert_eq!(l2_norm(&GridField::zeros(g, 1))[0], 0.0);
        assert!((l2_norm(&GridField::constant(g, 1, -0.3))[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mode_index_flat_round_trip() {
        let g = GridSpec::new(&[1.0, 2.0], &[6, 5], Boundary::Periodic).unwrap();
        for flat in 0..g.len() {
            let m = ModeIndex::of_flat(&g, flat);
            assert_eq!(m.flat(&g).unwrap(), flat);
            let neg = ModeIndex::new(&[-m.components()[0], -m.components()[1]]);
            assert_eq!(neg.flat(&g).unwrap(), conjugate_index(&g, flat));
        }
        assert!(ModeIndex::zero(2).is_zero());
    }
}
