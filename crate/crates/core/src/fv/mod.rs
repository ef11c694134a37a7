//! Cell-centred finite-volume solver on the quarter-annulus grid.

mod flux;
mod grid;
mod reconstruct;
mod schedule;
mod solver;

pub use flux::rusanov_flux;
pub use grid::{Face, GridSpec, StructuredGrid, R_INNER};
pub use reconstruct::{limited_slope, minmod, minmod_reconstruct};
pub use schedule::{blend_schedule, cfl_schedule};
pub use solver::{
    freestream_field, residual_metric, solve_steady, solve_steady_with_reference,
    stagnation_density_ratio, to_conservative, to_primitive, BoundaryMode, FvSolver,
    ResidualHistory, SolveFailure, SolverConfig, SteadySolution, REFERENCE_ITER, STAGE_COEFFS,
};
