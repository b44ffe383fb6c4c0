//! Uniform rectangular grids and multi-channel fields living on them.
//!
//! Values are stored channel-major; within a channel the points are row-major
//! with the last axis fastest, so a 2-D point `(i, j)` sits at `i * n1 + j`.
//! Axis 0 is `x`, axis 1 is `y`.

use serde::{Deserialize, Serialize};

use crate::error::{EcfError, Result};

/// Boundary treatment of a grid.
///
/// Periodic grids sample `x_i = i h`; Neumann and wall grids are cell-centred,
/// `x_i = (i + 1/2) h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Neumann,
    Wall,
}

impl Boundary {
    pub fn tag(self) -> u8 {
        match self {
            Boundary::Periodic => 0,
            Boundary::Neumann => 1,
            Boundary::Wall => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Boundary::Periodic),
            1 => Some(Boundary::Neumann),
            2 => Some(Boundary::Wall),
            _ => None,
        }
    }
}

/// Storage precision of a field. Arithmetic is always carried out in `f64`;
/// an `F32` field holds values that are exactly representable as `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Grid geometry on `[0, L_0] x ... x [0, L_{m-1}]`, with `m` = 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: usize,
    lengths: [f64; 2],
    resolution: [usize; 2],
    boundary: Boundary,
}

impl GridSpec {
    pub fn new(lengths: &[f64], resolution: &[usize], boundary: Boundary) -> Result<Self> {
        let dims = resolution.len();
        if !(1..=2).contains(&dims) {
            return Err(EcfError::InvalidGrid(format!(
                "only 1-D and 2-D grids are supported, got {dims} axes"
            )));
        }
        if lengths.len() != dims {
            return Err(EcfError::InvalidGrid(format!(
                "{} lengths given for {dims} axes",
                lengths.len()
            )));
        }
        let mut spec = GridSpec {
            dims,
            lengths: [1.0; 2],
            resolution: [1; 2],
            boundary,
        };
        for axis in 0..dims {
            let (l, n) = (lengths[axis], resolution[axis]);
            if !(l.is_finite() && l > 0.0) {
                return Err(EcfError::InvalidGrid(format!("axis {axis}: length {l} must be positive")));
            }
            // A single point is allowed so the degenerate 1x1 correction case is expressible.
            if n == 0 {
                return Err(EcfError::InvalidGrid(format!("axis {axis}: resolution must be positive")));
            }
            spec.lengths[axis] = l;
            spec.resolution[axis] = n;
        }
        Ok(spec)
    }

    /// `[0,1]^2` with `n x n` points.
    pub fn unit_square(n: usize, boundary: Boundary) -> Result<Self> {
        Self::new(&[1.0, 1.0], &[n, n], boundary)
    }

    pub fn line(n: usize, length: f64, boundary: Boundary) -> Result<Self> {
        Self::new(&[length], &[n], boundary)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dims]
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution[..self.dims]
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.resolution().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.resolution[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dims).map(|a| self.spacing(a)).product()
    }

    /// `|Omega| = L^m`.
    pub fn domain_volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        let h = self.spacing(axis);
        match self.boundary {
            Boundary::Periodic => i as f64 * h,
            Boundary::Neumann | Boundary::Wall => (i as f64 + 0.5) * h,
        }
    }

    /// Size of the trailing axis (1 for 1-D grids).
    pub(crate) fn inner(&self) -> usize {
        if self.dims == 2 {
            self.resolution[1]
        } else {
            1
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }
}

impl std::str::FromStr for Precision {
    type Err = EcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(EcfError::Config(format!("unknown precision '{s}' (f32, f64)"))),
        }
    }
}

/// A `channels`-component state sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: GridSpec,
    channels: usize,
    values: Vec<f64>,
    precision: Precision,
}

impl GridField {
    /// Builds a field, rejecting non-finite entries and shape mismatches.
    pub fn new(grid: GridSpec, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(EcfError::ShapeMismatch("a field needs at least one channel".into()));
        }
        if values.len() != channels * grid.len() {
            return Err(EcfError::ShapeMismatch(format!(
                "{} values for {channels} channel(s) on {} points",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values, "field")?;
        Ok(GridField {
            grid,
            channels,
            values,
            precision: Precision::F64,
        })
    }

    pub fn zeros(grid: GridSpec, channels: usize) -> Self {
        GridField {
            grid,
            channels,
            values: vec![0.0; channels * grid.len()],
            precision: Precision::F64,
        }
    }

    pub fn constant(grid: GridSpec, channels: usize, value: f64) -> Self {
        GridField {
            grid,
            channels,
            values: vec![value; channels * grid.len()],
            precision: Precision::F64,
        }
    }

    /// Samples `f(x)` (or `f(x, y)`) at the grid coordinates, single channel.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        let inner = grid.inner();
        for flat in 0..grid.len() {
            let x = [
                grid.coordinate(0, flat / inner),
                if grid.dims() == 2 { grid.coordinate(1, flat % inner) } else { 0.0 },
            ];
            values.push(f(&x[..grid.dims()]));
        }
        GridField::new(grid, 1, values)
    }

    /// Concatenates single- or multi-channel fields on the same grid.
    pub fn stack(parts: &[GridField]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| EcfError::ShapeMismatch("nothing to stack".into()))?;
        let mut values = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.grid != first.grid {
                return Err(EcfError::ShapeMismatch("stacked fields live on different grids".into()));
            }
            values.extend_from_slice(&p.values);
            channels += p.channels;
        }
        Ok(GridField {
            grid: first.grid,
            channels,
            values,
            precision: first.precision,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[c * n..(c + 1) * n]
    }

    /// Mutable access for in-place updates. Callers are responsible for
    /// keeping the values finite; see [`GridField::ensure_finite`].
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn ensure_finite(&self) -> Result<()> {
        check_finite(&self.values, "field")
    }

    pub fn mean(&self, c: usize) -> f64 {
        let ch = self.channel(c);
        ch.iter().sum::<f64>() / ch.len() as f64
    }

    /// Rectangle-rule integral `cell_volume * sum(values)`.
    pub fn integral(&self, c: usize) -> f64 {
        self.grid.cell_volume() * self.channel(c).iter().sum::<f64>()
    }

    /// Rounds every value to the nearest `f32` when `precision` is `F32`.
    pub fn to_precision(&self, precision: Precision) -> Self {
        let values = match precision {
            Precision::F64 => self.values.clone(),
            Precision::F32 => self.values.iter().map(|&v| v as f32 as f64).collect(),
        };
        GridField {
            grid: self.grid,
            channels: self.channels,
            values,
            precision,
        }
    }

    pub(crate) fn with_precision_tag(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn same_shape(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid {
            return Err(EcfError::ShapeMismatch(format!(
                "grid {:?} vs {:?}",
                self.grid.resolution(),
                other.grid.resolution()
            )));
        }
        if self.channels != other.channels {
            return Err(EcfError::ShapeMismatch(format!(
                "{} vs {} channels",
                self.channels, other.channels
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_finite(values: &[f64], context: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(EcfError::NonFinite {
            context: context.to_string(),
            index,
        }),
        None => Ok(()),
    }
}
