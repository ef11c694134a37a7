use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::flux::rusanov_flux_unchecked;
use super::grid::StructuredGrid;
use super::reconstruct::limited_slope;
use super::schedule::{blend_schedule, cfl_schedule};
use crate::error::{Error, Result};
use crate::euler::{freestream_state, normal_flux, pressure, GasConstants, PrimitiveState};
use crate::field::StateField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub cfl_start: f64,
    pub cfl_end: f64,
    pub cfl_ramp_iters: usize,
    pub first_order_until: usize,
    pub blend_until: usize,
    pub max_iters: usize,
    /// Orders of magnitude the residual must fall below its iteration-10
    /// value.
    pub residual_drop_target: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl_start: 0.01,
            cfl_end: 0.8,
            cfl_ramp_iters: 1000,
            first_order_until: 250,
            blend_until: 750,
            max_iters: 20000,
            residual_drop_target: 6.0,
            seed: 0,
        }
    }
}

/// Stage weights of the low-storage four-stage scheme; every stage restarts
/// from the state at the beginning of the iteration.
pub const STAGE_COEFFS: [f64; 4] = [0.25, 1.0 / 3.0, 0.5, 1.0];

/// Iteration whose residual is the convergence reference.
pub const REFERENCE_ITER: usize = 10;

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_start > 0.0 && self.cfl_start <= self.cfl_end && self.cfl_end.is_finite()) {
            return Err(Error::Argument(format!(
                "need 0 < cfl_start <= cfl_end, got {} and {}",
                self.cfl_start, self.cfl_end
            )));
        }
        if self.first_order_until > self.blend_until {
            return Err(Error::Argument(
                "first_order_until must not exceed blend_until".into(),
            ));
        }
        if !(self.residual_drop_target > 0.0) {
            return Err(Error::Argument(
                "residual_drop_target must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the exact bit patterns of every field.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in [self.cfl_start, self.cfl_end, self.residual_drop_target] {
            h.update(v.to_bits().to_le_bytes());
        }
        for v in [
            self.cfl_ramp_iters as u64,
            self.first_order_until as u64,
            self.blend_until as u64,
            self.max_iters as u64,
            self.seed,
        ] {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualHistory {
    pub residuals: Vec<f64>,
    pub converged_at: Option<usize>,
}

impl ResidualHistory {
    /// First iteration at or after [`REFERENCE_ITER`] whose residual is
    /// `drop` orders below `reference`.
    pub fn first_below(&self, reference: f64, drop: f64) -> Option<usize> {
        let target = reference * 10f64.powf(-drop);
        self.residuals
            .iter()
            .enumerate()
            .skip(REFERENCE_ITER)
            .find(|(_, &r)| r <= target)
            .map(|(i, _)| i)
    }

    pub fn reference(&self) -> Option<f64> {
        self.residuals.get(REFERENCE_ITER).copied()
    }
}

/// Mean over cells of `|r|/V` per equation, then mean over the equations.
pub fn residual_metric(residuals: &[[f64; 4]], volumes: &[f64]) -> f64 {
    assert_eq!(residuals.len(), volumes.len());
    assert!(!residuals.is_empty());
    let mut per_eq = [0.0; 4];
    for (r, v) in residuals.iter().zip(volumes) {
        for k in 0..4 {
            per_eq[k] += r[k].abs() / v;
        }
    }
    per_eq.iter().sum::<f64>() / (4.0 * residuals.len() as f64)
}

/// Which physical boundary conditions are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Slip wall on the cylinder, freestream inflow, extrapolated outflow,
    /// mirror plane at `y = 0`.
    BluntBody,
    /// Freestream ghost states on every boundary.
    Farfield,
}

/// Explicit local-time-stepping finite-volume marcher.
///
/// Cell states are stored as conservative `[ρ, ρu, ρv, E]`; reconstruction
/// works on `[ρ, u, v, P]`.
pub struct FvSolver<'g> {
    grid: &'g StructuredGrid,
    gas: GasConstants,
    inflow: PrimitiveState,
    inflow_q: [f64; 4],
    mode: BoundaryMode,
    q: Vec<[f64; 4]>,
    slope_r: Vec<[f64; 4]>,
    slope_t: Vec<[f64; 4]>,
    residual: Vec<[f64; 4]>,
    start: Vec<[f64; 4]>,
    dt: Vec<f64>,
    boundary_flux: [f64; 4],
}

#[inline]
fn to_state(q: &[f64; 4], gas: &GasConstants) -> PrimitiveState {
    PrimitiveState::from_pressure(q[0], q[1], q[2], q[3], gas)
}

#[inline]
fn reflect(q: &[f64; 4], n: [f64; 2]) -> [f64; 4] {
    let un = q[1] * n[0] + q[2] * n[1];
    [q[0], q[1] - 2.0 * un * n[0], q[2] - 2.0 * un * n[1], q[3]]
}

#[inline]
fn face_state(q: &[f64; 4], slope: &[f64; 4], half: f64) -> [f64; 4] {
    [
        q[0] + half * slope[0],
        q[1] + half * slope[1],
        q[2] + half * slope[2],
        q[3] + half * slope[3],
    ]
}

#[inline]
fn stencil_slope(a: &[f64; 4], b: &[f64; 4], c: &[f64; 4]) -> [f64; 4] {
    [
        limited_slope(a[0], b[0], c[0]),
        limited_slope(a[1], b[1], c[1]),
        limited_slope(a[2], b[2], c[2]),
        limited_slope(a[3], b[3], c[3]),
    ]
}

impl<'g> FvSolver<'g> {
    pub fn new(grid: &'g StructuredGrid, gas: GasConstants, mach: f64) -> Self {
        let inflow = freestream_state(mach, &gas);
        let n = grid.num_cells();
        Self {
            grid,
            gas,
            inflow,
            inflow_q: [inflow.rho, inflow.u, inflow.v, pressure(&inflow, &gas)],
            mode: BoundaryMode::BluntBody,
            q: vec![[0.0; 4]; n],
            slope_r: vec![[0.0; 4]; n],
            slope_t: vec![[0.0; 4]; n],
            residual: vec![[0.0; 4]; n],
            start: vec![[0.0; 4]; n],
            dt: vec![0.0; n],
            boundary_flux: [0.0; 4],
        }
    }

    pub fn with_boundary_mode(mut self, mode: BoundaryMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn grid(&self) -> &StructuredGrid {
        self.grid
    }

    pub fn freestream(&self) -> PrimitiveState {
        self.inflow
    }

    /// Per-cell flux balance `Σ_faces F̂·n L` from the last residual
    /// evaluation.
    pub fn residuals(&self) -> &[[f64; 4]] {
        &self.residual
    }

    /// Net outward flux through the boundary faces from the last evaluation.
    pub fn boundary_flux(&self) -> [f64; 4] {
        self.boundary_flux
    }

    fn ghost_wall(&self, q: &[f64; 4], n: [f64; 2]) -> [f64; 4] {
        match self.mode {
            BoundaryMode::BluntBody => reflect(q, n),
            BoundaryMode::Farfield => self.inflow_q,
        }
    }

    fn ghost_outflow(&self, q: &[f64; 4]) -> [f64; 4] {
        match self.mode {
            BoundaryMode::BluntBody => *q,
            BoundaryMode::Farfield => self.inflow_q,
        }
    }

    fn load(&mut self, cons: &[[f64; 4]]) {
        let g1 = self.gas.gamma - 1.0;
        for (q, u) in self.q.iter_mut().zip(cons) {
            let rho = u[0];
            let (vx, vy) = (u[1] / rho, u[2] / rho);
            *q = [rho, vx, vy, g1 * (u[3] - 0.5 * rho * (vx * vx + vy * vy))];
        }
    }

    fn compute_slopes(&mut self) {
        let grid = self.grid;
        let (nr, nt) = (grid.nr, grid.ntheta);
        for i in 0..nr {
            for j in 0..nt {
                let c = grid.cell(i, j);
                let qc = self.q[c];
                let below = if i == 0 {
                    self.ghost_wall(&qc, grid.radial_face(0, j).normal)
                } else {
                    self.q[grid.cell(i - 1, j)]
                };
                let above = if i + 1 == nr {
                    self.inflow_q
                } else {
                    self.q[grid.cell(i + 1, j)]
                };
                self.slope_r[c] = stencil_slope(&below, &qc, &above);

                let before = if j == 0 {
                    self.ghost_outflow(&qc)
                } else {
                    self.q[grid.cell(i, j - 1)]
                };
                let after = if j + 1 == nt {
                    self.ghost_wall(&qc, grid.angular_face(i, nt).normal)
                } else {
                    self.q[grid.cell(i, j + 1)]
                };
                self.slope_t[c] = stencil_slope(&before, &qc, &after);
            }
        }
    }

    /// Adds one face's contribution. `left`/`right` are cell indices (None
    /// for ghosts), `ql`/`qr` the face states.
    #[inline]
    fn accumulate(
        &mut self,
        left: Option<usize>,
        right: Option<usize>,
        ql: [f64; 4],
        qr: [f64; 4],
        n: [f64; 2],
        len: f64,
    ) {
        let gas = self.gas;
        let (mut ql, mut qr) = (ql, qr);
        if !(ql[0] > 0.0 && ql[3] > 0.0 && qr[0] > 0.0 && qr[3] > 0.0) {
            // first-order fallback from the cell centres (or their ghosts)
            ql = left.map(|c| self.q[c]).unwrap_or(ql);
            qr = right.map(|c| self.q[c]).unwrap_or(qr);
        }
        let (wl, wr) = (to_state(&ql, &gas), to_state(&qr, &gas));
        let f = rusanov_flux_unchecked(&wl, ql[3], &wr, qr[3], n, &gas);
        // Subtracting each cell's own flux (which sums to zero around a closed
        // cell) makes uniform states produce an exactly zero balance.
        match left {
            Some(c) => {
                let own = normal_flux(&to_state(&self.q[c], &gas), n, &gas);
                for k in 0..4 {
                    self.residual[c][k] += (f[k] - own[k]) * len;
                }
            }
            None => {
                for k in 0..4 {
                    self.boundary_flux[k] -= f[k] * len;
                }
            }
        }
        match right {
            Some(c) => {
                let own = normal_flux(&to_state(&self.q[c], &gas), n, &gas);
                for k in 0..4 {
                    self.residual[c][k] -= (f[k] - own[k]) * len;
                }
            }
            None => {
                for k in 0..4 {
                    self.boundary_flux[k] += f[k] * len;
                }
            }
        }
    }

    /// Evaluates the flux balance of every cell for the given conservative
    /// field and second-order weight `blend`.
    pub fn evaluate_residual(&mut self, cons: &[[f64; 4]], blend: f64) {
        assert_eq!(cons.len(), self.grid.num_cells());
        self.load(cons);
        if blend > 0.0 {
            self.compute_slopes();
        } else {
            self.slope_r.iter_mut().for_each(|s| *s = [0.0; 4]);
            self.slope_t.iter_mut().for_each(|s| *s = [0.0; 4]);
        }
        self.residual.iter_mut().for_each(|r| *r = [0.0; 4]);
        self.boundary_flux = [0.0; 4];
        let half = 0.5 * blend;
        let grid = self.grid;
        let (nr, nt) = (grid.nr, grid.ntheta);

        for i in 0..=nr {
            for j in 0..nt {
                let face = *grid.radial_face(i, j);
                let left = (i > 0).then(|| grid.cell(i - 1, j));
                let right = (i < nr).then(|| grid.cell(i, j));
                let (ql, qr) = match (left, right) {
                    (Some(l), Some(r)) => (
                        face_state(&self.q[l], &self.slope_r[l], half),
                        face_state(&self.q[r], &self.slope_r[r], -half),
                    ),
                    (None, Some(r)) => {
                        let qr = face_state(&self.q[r], &self.slope_r[r], -half);
                        (self.ghost_wall(&qr, face.normal), qr)
                    }
                    (Some(l), None) => (
                        face_state(&self.q[l], &self.slope_r[l], half),
                        self.inflow_q,
                    ),
                    (None, None) => unreachable!(),
                };
                self.accumulate(left, right, ql, qr, face.normal, face.length);
            }
        }
        for i in 0..nr {
            for j in 0..=nt {
                let face = *grid.angular_face(i, j);
                let left = (j > 0).then(|| grid.cell(i, j - 1));
                let right = (j < nt).then(|| grid.cell(i, j));
                let (ql, qr) = match (left, right) {
                    (Some(l), Some(r)) => (
                        face_state(&self.q[l], &self.slope_t[l], half),
                        face_state(&self.q[r], &self.slope_t[r], -half),
                    ),
                    (None, Some(r)) => {
                        let qr = face_state(&self.q[r], &self.slope_t[r], -half);
                        (self.ghost_outflow(&qr), qr)
                    }
                    (Some(l), None) => {
                        let ql = face_state(&self.q[l], &self.slope_t[l], half);
                        (ql, self.ghost_wall(&ql, face.normal))
                    }
                    (None, None) => unreachable!(),
                };
                self.accumulate(left, right, ql, qr, face.normal, face.length);
            }
        }
    }

    /// One pseudo-time iteration with local time steps
    /// `Δt = CFL·dx/(|u| + a)` frozen over the stages. Returns the residual
    /// metric of the field before the update.
    pub fn time_step(
        &mut self,
        cons: &mut [[f64; 4]],
        iter: usize,
        cfg: &SolverConfig,
    ) -> Result<f64> {
        let cfl = cfl_schedule(iter, cfg);
        let blend = blend_schedule(iter, cfg);
        self.evaluate_residual(cons, blend);
        let metric = residual_metric(&self.residual, self.grid.volumes());
        let gamma = self.gas.gamma;
        for c in 0..cons.len() {
            let q = self.q[c];
            let a = (gamma * q[3] / q[0]).sqrt();
            self.dt[c] =
                cfl * self.grid.spacing()[c] / (q[1].hypot(q[2]) + a) / self.grid.volumes()[c];
        }
        self.start.copy_from_slice(cons);
        for (st, alpha) in STAGE_COEFFS.into_iter().enumerate() {
            if st > 0 {
                self.evaluate_residual(cons, blend);
            }
            for c in 0..cons.len() {
                let u = &mut cons[c];
                for k in 0..4 {
                    u[k] = self.start[c][k] - alpha * self.dt[c] * self.residual[c][k];
                }
                let rho = u[0];
                let ke = 0.5 * (u[1] * u[1] + u[2] * u[2]) / rho;
                if !(u.iter().all(|v| v.is_finite()) && rho > 0.0 && u[3] - ke > 0.0) {
                    return Err(Error::Divergence {
                        iteration: iter,
                        cell: c,
                    });
                }
            }
        }
        if !metric.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                cell: 0,
            });
        }
        Ok(metric)
    }
}

pub fn to_conservative(states: &[PrimitiveState]) -> Vec<[f64; 4]> {
    states
        .iter()
        .map(|w| w.to_conservative().to_array())
        .collect()
}

pub fn to_primitive(cons: &[[f64; 4]]) -> Vec<PrimitiveState> {
    cons.iter()
        .map(|u| crate::euler::ConservativeState::from_array(*u).to_primitive())
        .collect()
}

#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub field: StateField,
    pub history: ResidualHistory,
}

/// A run that stopped on a numerical failure, with whatever history it had.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: Error,
    pub history: ResidualHistory,
}

impl fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations",
            self.error,
            self.history.residuals.len()
        )
    }
}

impl std::error::Error for SolveFailure {}

impl From<SolveFailure> for Error {
    fn from(f: SolveFailure) -> Self {
        f.error
    }
}

/// Marches `initial` to steady state.
///
/// Convergence is declared at the first iteration whose residual is
/// `residual_drop_target` orders below `reference`, or below the run's own
/// iteration-10 residual when no reference is given.
pub fn solve_steady_with_reference(
    initial: &[PrimitiveState],
    grid: &StructuredGrid,
    cfg: &SolverConfig,
    mach: f64,
    gas: &GasConstants,
    reference: Option<f64>,
) -> std::result::Result<SteadySolution, SolveFailure> {
    let fail = |error, history| SolveFailure { error, history };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, ResidualHistory::default()));
    }
    if initial.len() != grid.num_cells() {
        let e = Error::Shape {
            expected: grid.num_cells(),
            got: initial.len(),
        };
        return Err(fail(e, ResidualHistory::default()));
    }
    if let Some(c) = initial
        .iter()
        .position(|w| !w.is_finite() || !w.is_physical(gas))
    {
        let e = Error::Argument(format!("initial field is not finite/physical at cell {c}"));
        return Err(fail(e, ResidualHistory::default()));
    }
    let mut solver = FvSolver::new(grid, *gas, mach);
    let mut cons = to_conservative(initial);
    let mut history = ResidualHistory::default();
    let target = |reference: f64| reference * 10f64.powf(-cfg.residual_drop_target);
    let mut threshold = reference.map(target);
    for iter in 0..cfg.max_iters {
        let r = match solver.time_step(&mut cons, iter, cfg) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, history)),
        };
        history.residuals.push(r);
        if iter == REFERENCE_ITER && threshold.is_none() {
            threshold = Some(target(r));
        }
        if iter >= REFERENCE_ITER && threshold.is_some_and(|t| r <= t) {
            history.converged_at = Some(iter);
            break;
        }
    }
    let field = StateField {
        mach,
        points: grid.centroids().to_vec(),
        states: to_primitive(&cons),
    };
    Ok(SteadySolution { field, history })
}

pub fn solve_steady(
    initial: &[PrimitiveState],
    grid: &StructuredGrid,
    cfg: &SolverConfig,
    mach: f64,
    gas: &GasConstants,
) -> std::result::Result<SteadySolution, SolveFailure> {
    solve_steady_with_reference(initial, grid, cfg, mach, gas, None)
}

pub fn freestream_field(
    grid: &StructuredGrid,
    mach: f64,
    gas: &GasConstants,
) -> Vec<PrimitiveState> {
    vec![freestream_state(mach, gas); grid.num_cells()]
}

/// Post-shock over freestream density along the stagnation line.
///
/// Walks the line from the outer boundary towards the body, locates the
/// steepest density rise, then moves inward until the cell-to-cell increase
/// falls below `plateau_tol` relative; that cell's density is the post-shock
/// value. Returns `None` when the line shows no compression.
pub fn stagnation_density_ratio(
    grid: &StructuredGrid,
    states: &[PrimitiveState],
    plateau_tol: f64,
) -> Option<f64> {
    let mut rho: Vec<f64> = grid
        .stagnation_line()
        .iter()
        .map(|&c| states[c].rho)
        .collect();
    rho.reverse();
    let upstream = rho[0];
    let jump =
        (1..rho.len()).max_by(|&a, &b| (rho[a] - rho[a - 1]).total_cmp(&(rho[b] - rho[b - 1])))?;
    if rho[jump] <= rho[jump - 1] {
        return None;
    }
    let mut k = jump;
    while k + 1 < rho.len() && rho[k + 1] - rho[k] > plateau_tol * rho[k] {
        k += 1;
    }
    Some(rho[k] / upstream)
}
