//! 2-D shallow-water equations on a flat bed with reflective walls.
//!
//! Finite-volume update of `(h, hu, hv)` with Rusanov (local Lax-Friedrichs)
//! interface fluxes and SSP-RK2 time stepping. Wall ghost cells mirror the
//! interior state with the normal momentum negated, so the mass flux through
//! every wall face is exactly zero and total mass is conserved by telescoping.

use crate::error::{EcfError, Result};
use crate::grid::{Boundary, GridField, GridSpec};

/// Largest CFL number accepted for the initial state.
pub const INITIAL_CFL_LIMIT: f64 = 0.45;
/// Largest CFL number tolerated during a run before aborting.
pub const RUNNING_CFL_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
struct State {
    h: f64,
    hu: f64,
    hv: f64,
}

impl State {
    /// Physical flux along `axis` (0 = x, 1 = y) and the local wave speed.
    fn flux(&self, g: f64, axis: usize) -> ([f64; 3], f64) {
        let (u, v) = (self.hu / self.h, self.hv / self.h);
        let p = 0.5 * g * self.h * self.h;
        let c = (g * self.h).sqrt();
        if axis == 0 {
            ([self.hu, self.hu * u + p, self.hu * v], u.abs() + c)
        } else {
            ([self.hv, self.hv * u, self.hv * v + p], v.abs() + c)
        }
    }

    fn mirrored(self, axis: usize) -> Self {
        if axis == 0 {
            State { hu: -self.hu, ..self }
        } else {
            State { hv: -self.hv, ..self }
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.h, self.hu, self.hv]
    }
}

fn rusanov(left: State, right: State, g: f64, axis: usize) -> [f64; 3] {
    let (fl, sl) = left.flux(g, axis);
    let (fr, sr) = right.flux(g, axis);
    let s = sl.max(sr);
    let (ul, ur) = (left.as_array(), right.as_array());
    let mut f = [0.0; 3];
    for k in 0..3 {
        f[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * s * (ur[k] - ul[k]);
    }
    f
}

/// Fixed-step shallow-water integrator.
#[derive(Debug, Clone, Copy)]
pub struct ShallowWater {
    pub gravity: f64,
    pub dt: f64,
}

impl ShallowWater {
    pub fn new(gravity: f64, dt: f64) -> Result<Self> {
        if !(gravity > 0.0 && dt > 0.0) {
            return Err(EcfError::InvalidArgument(format!(
                "need gravity > 0 and dt > 0 (gravity={gravity}, dt={dt})"
            )));
        }
        Ok(ShallowWater { gravity, dt })
    }

    /// `dt * max(|u| + sqrt(g h)) / min(dx, dy)`.
    pub fn cfl(&self, state: &GridField) -> f64 {
        let grid = state.grid();
        let hmin_dx = grid.spacing(0).min(grid.spacing(1));
        let (h, hu, hv) = (state.channel(0), state.channel(1), state.channel(2));
        let mut s: f64 = 0.0;
        for i in 0..h.len() {
            let c = (self.gravity * h[i]).sqrt();
            s = s.max((hu[i] / h[i]).abs() + c).max((hv[i] / h[i]).abs() + c);
        }
        self.dt * s / hmin_dx
    }

    fn check_state(&self, state: &GridField, step: usize, limit: f64) -> Result<()> {
        if let Some((i, v)) = state.channel(0).iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(EcfError::SolverAbort {
                step,
                reason: format!("water depth {v} at index {i} is not positive"),
            });
        }
        if let Some(i) = state.values().iter().position(|v| !v.is_finite()) {
            return Err(EcfError::SolverAbort {
                step,
                reason: format!("non-finite momentum at flat index {i}"),
            });
        }
        let cfl = self.cfl(state);
        if cfl > limit {
            return Err(EcfError::SolverAbort {
                step,
                reason: format!("CFL number {cfl:.3} exceeds {limit}"),
            });
        }
        Ok(())
    }

    /// `-div F(U)` per cell.
    fn tendency(&self, state: &GridField) -> Vec<f64> {
        let grid = state.grid();
        let [nx, ny] = [grid.resolution()[0], grid.resolution()[1]];
        let (dx, dy) = (grid.spacing(0), grid.spacing(1));
        let n = nx * ny;
        let vals = state.values();
        let at = |i: usize, j: usize| {
            let k = i * ny + j;
            State {
                h: vals[k],
                hu: vals[n + k],
                hv: vals[2 * n + k],
            }
        };
        let g = self.gravity;
        let mut out = vec![0.0; 3 * n];
        let mut add = |i: usize, j: usize, f: [f64; 3], scale: f64| {
            let k = i * ny + j;
            for (c, fc) in f.iter().enumerate() {
                out[c * n + k] += scale * fc;
            }
        };
        // x faces
        for j in 0..ny {
            for face in 0..=nx {
                let left = if face == 0 { at(0, j).mirrored(0) } else { at(face - 1, j) };
                let right = if face == nx { at(nx - 1, j).mirrored(0) } else { at(face, j) };
                let f = rusanov(left, right, g, 0);
                if face > 0 {
                    add(face - 1, j, f, -1.0 / dx);
                }
                if face < nx {
                    add(face, j, f, 1.0 / dx);
                }
            }
        }
        // y faces
        for i in 0..nx {
            for face in 0..=ny {
                let left = if face == 0 { at(i, 0).mirrored(1) } else { at(i, face - 1) };
                let right = if face == ny { at(i, ny - 1).mirrored(1) } else { at(i, face) };
                let f = rusanov(left, right, g, 1);
                if face > 0 {
                    add(i, face - 1, f, -1.0 / dy);
                }
                if face < ny {
                    add(i, face, f, 1.0 / dy);
                }
            }
        }
        out
    }

    /// One SSP-RK2 step; `step` is used for diagnostics.
    pub fn step(&self, state: &GridField, step: usize) -> Result<GridField> {
        let dt = self.dt;
        let k1 = self.tendency(state);
        let mut stage = state.clone();
        for (v, k) in stage.values_mut().iter_mut().zip(&k1) {
            *v += dt * k;
        }
        self.check_state(&stage, step, RUNNING_CFL_LIMIT)?;
        let k2 = self.tendency(&stage);
        let mut next = state.clone();
        for ((v, s), k) in next.values_mut().iter_mut().zip(stage.values()).zip(&k2) {
            *v = 0.5 * *v + 0.5 * (s + dt * k);
        }
        self.check_state(&next, step, RUNNING_CFL_LIMIT)?;
        Ok(next)
    }

    /// Runs `steps` steps, recording the initial state and every
    /// `record_every`-th state.
    pub fn run(&self, ic: &GridField, steps: usize, record_every: usize) -> Result<Vec<GridField>> {
        let grid = ic.grid();
        if grid.dims() != 2 || grid.boundary() != Boundary::Wall || ic.channels() != 3 {
            return Err(EcfError::InvalidArgument(
                "shallow water needs a 2-D wall-bounded grid with channels (h, hu, hv)".into(),
            ));
        }
        if record_every == 0 {
            return Err(EcfError::InvalidArgument("record_every must be positive".into()));
        }
        self.check_state(ic, 0, INITIAL_CFL_LIMIT)?;
        let mut out = vec![ic.clone()];
        let mut state = ic.clone();
        for step in 1..=steps {
            state = self.step(&state, step)?;
            if step % record_every == 0 {
                out.push(state.clone());
            }
        }
        Ok(out)
    }
}

/// Radial dam break at rest: depth `inner` within `radius` of `center`, else `outer`.
pub fn dam_break(grid: &GridSpec, center: [f64; 2], radius: f64, inner: f64, outer: f64) -> Result<GridField> {
    let h = GridField::from_fn(*grid, |x| {
        let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
        if r2 <= radius * radius {
            inner
        } else {
            outer
        }
    })?;
    GridField::stack(&[h, GridField::zeros(*grid, 1), GridField::zeros(*grid, 1)])
}
