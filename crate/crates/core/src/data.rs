//! Snapshot generation over a Mach sweep.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::euler::{GasConstants, PdeParameter};
use crate::field::{write_residual_csv, StateField};
use crate::fv::{freestream_field, solve_steady, SolverConfig, StructuredGrid};

/// Mach numbers from `min` to `max` inclusive in steps of `step`.
pub fn mach_sweep(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max >= min && min.is_finite() && max.is_finite()) {
        return Err(Error::Argument(format!(
            "bad sweep {min}..{max} step {step}"
        )));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| min + k as f64 * step).collect())
}

pub fn snapshot_file_name(mach: f64) -> String {
    format!("snap_m{mach:06.2}.snap")
}

pub fn residual_file_name(mach: f64) -> String {
    format!("residuals_m{mach:06.2}.csv")
}

/// Converged snapshot of one Mach number with its iteration count.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub field: StateField,
    pub residuals: Vec<f64>,
    pub converged_at: Option<usize>,
}

/// Solves the steady problem from freestream for one Mach number.
pub fn solve_snapshot(
    mach: f64,
    grid: &StructuredGrid,
    cfg: &SolverConfig,
    gas: &GasConstants,
) -> Result<Snapshot> {
    PdeParameter::new(mach)?;
    let init = freestream_field(grid, mach, gas);
    match solve_steady(&init, grid, cfg, mach, gas) {
        Ok(sol) => {
            if sol.history.converged_at.is_none() {
                log::warn!(
                    "Mach {mach}: residual target not reached in {} iterations",
                    cfg.max_iters
                );
            }
            Ok(Snapshot {
                field: sol.field,
                residuals: sol.history.residuals,
                converged_at: sol.history.converged_at,
            })
        }
        Err(f) => Err(Error::Data(format!("snapshot at Mach {mach} failed: {f}"))),
    }
}

/// Solves every Mach number, using up to `jobs` threads. Results come back
/// in input order and do not depend on `jobs`.
pub fn generate_snapshots(
    machs: &[f64],
    grid: &StructuredGrid,
    cfg: &SolverConfig,
    gas: &GasConstants,
    jobs: usize,
) -> Result<Vec<Snapshot>> {
    if let Some(&m) = machs.iter().find(|&&m| !(m > 1.0)) {
        return Err(Error::Argument(format!(
            "Mach numbers must exceed 1, got {m}"
        )));
    }
    let jobs = jobs.max(1).min(machs.len().max(1));
    if jobs == 1 {
        return machs
            .iter()
            .map(|&m| solve_snapshot(m, grid, cfg, gas))
            .collect();
    }
    let mut slots: Vec<Option<Result<Snapshot>>> = (0..machs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> = (0..jobs)
            .map(|t| (t..machs.len()).step_by(jobs).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| {
                scope.spawn(move || {
                    idx.into_iter()
                        .map(|i| (i, solve_snapshot(machs[i], grid, cfg, gas)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("solver thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every Mach solved"))
        .collect()
}

/// Writes the SNAP file, its CSV mirror and the residual history of each
/// snapshot into `dir`, returning the SNAP paths.
pub fn write_snapshots(
    snaps: &[Snapshot],
    dir: &Path,
    csv: bool,
    force: bool,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(snaps.len());
    for s in snaps {
        let path = dir.join(snapshot_file_name(s.field.mach));
        s.field.write_snap(&path, force)?;
        if csv {
            s.field.write_csv(&path.with_extension("csv"), force)?;
        }
        write_residual_csv(
            &dir.join(residual_file_name(s.field.mach)),
            &s.residuals,
            force,
        )?;
        paths.push(path);
    }
    Ok(paths)
}
