//! Shared fixtures for the criterion benches in `benches/`.

use ecf_core::{dataset, Boundary, GridField, GridSpec, ProblemKind, ProblemParams};

/// A seeded initial condition for `problem` on an `n`-point square grid.
pub fn fixture(problem: ProblemKind, n: usize) -> (ProblemParams, GridField) {
    let params = ProblemParams::paper(problem);
    let boundary = problem.boundary();
    let grid = GridSpec::unit_square(n, boundary).expect("valid grid");
    let ic = dataset::initial_condition(problem, &params, &grid, 7).expect("valid initial condition");
    (params, ic)
}

/// A smooth periodic two-channel field.
pub fn periodic_field(n: usize) -> GridField {
    let grid = GridSpec::unit_square(n, Boundary::Periodic).expect("valid grid");
    let a = GridField::from_fn(grid, |x| 1.0 + (6.3 * x[0]).sin() * (6.3 * x[1]).cos()).expect("finite");
    let b = GridField::from_fn(grid, |x| 0.5 + x[0] * x[1]).expect("finite");
    GridField::stack(&[a, b]).expect("same grid")
}
