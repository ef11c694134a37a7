//! Error metrics, the Mach-sweep study, the training-size ablation and the
//! warm-start experiment.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::deeponet::DeepOnetModel;
use crate::error::{Error, Result};
use crate::euler::{freestream_state, pressure, GasConstants, PrimitiveState};
use crate::field::{StateField, Variable};
use crate::fv::{
    freestream_field, solve_steady_with_reference, ResidualHistory, SolverConfig, StructuredGrid,
};
use crate::io;
use crate::nbf::NbfModel;
use crate::pod::SnapshotSet;

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let norm: f64 = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Domain(
            "relative error against a zero truth field".into(),
        ));
    }
    let err: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    Ok(err / norm)
}

/// Per-variable relative errors of a predicted field.
pub fn field_errors(pred: &StateField, truth: &StateField) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (v, var) in Variable::ALL.iter().enumerate() {
        out[v] = relative_l2(&pred.variable(*var), &truth.variable(*var))?;
    }
    Ok(out)
}

/// Anything that maps (points, Mach) to a state field.
pub trait Surrogate {
    fn predict_field(&self, points: &[[f64; 2]], mach: f64) -> Result<StateField>;
}

impl Surrogate for NbfModel {
    fn predict_field(&self, points: &[[f64; 2]], mach: f64) -> Result<StateField> {
        Ok(self.predict(points, mach)?.field)
    }
}

impl Surrogate for DeepOnetModel {
    fn predict_field(&self, points: &[[f64; 2]], mach: f64) -> Result<StateField> {
        self.predict(points, mach)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub psi: f64,
    pub variable: Variable,
    pub split: Split,
    pub rel_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    pub n_bf: usize,
    pub train_size: usize,
    pub seed: u64,
}

impl ErrorReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("psi,variable,split,rel_l2\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:e}",
                r.psi,
                r.variable.name(),
                r.split.name(),
                r.rel_l2
            );
        }
        s
    }

    pub fn errors(&self, split: Split, variable: Variable) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.variable == variable)
            .map(|r| r.rel_l2)
            .collect()
    }

    pub fn error_at(&self, psi: f64, variable: Variable) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.psi == psi && r.variable == variable)
            .map(|r| r.rel_l2)
    }
}

/// Relative errors of `model` against every snapshot in `set`; Mach numbers
/// listed in `holdout` are labelled as test.
pub fn mach_sweep_eval(
    model: &dyn Surrogate,
    set: &SnapshotSet,
    holdout: &[f64],
    n_bf: usize,
    seed: u64,
) -> Result<ErrorReport> {
    if let Some(h) = holdout.iter().find(|h| !set.params.contains(h)) {
        return Err(Error::Data(format!("no snapshot for held-out Mach {h}")));
    }
    let mut rows = Vec::with_capacity(4 * set.num_snapshots());
    for d in 0..set.num_snapshots() {
        let truth = set.field(d);
        let pred = model.predict_field(&set.points, truth.mach)?;
        let e = field_errors(&pred, &truth)?;
        let split = if holdout.contains(&truth.mach) {
            Split::Test
        } else {
            Split::Train
        };
        for (v, var) in Variable::ALL.iter().enumerate() {
            rows.push(ErrorRow {
                psi: truth.mach,
                variable: *var,
                split,
                rel_l2: e[v],
            });
        }
    }
    Ok(ErrorReport {
        rows,
        n_bf,
        train_size: set.num_snapshots() - holdout.len(),
        seed,
    })
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile of `values`; NaN when empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `size` Mach numbers from `available` spread evenly over its range: each
/// evenly spaced target takes the nearest unused entry, ties going to the
/// lower Mach. The result is sorted.
pub fn even_subsample(available: &[f64], size: usize) -> Result<Vec<f64>> {
    if size == 0 || size > available.len() {
        return Err(Error::Argument(format!(
            "training size {size} must lie in 1..={}",
            available.len()
        )));
    }
    let mut pool = available.to_vec();
    pool.sort_by(f64::total_cmp);
    let (lo, hi) = (pool[0], pool[pool.len() - 1]);
    let mut used = vec![false; pool.len()];
    let mut out = Vec::with_capacity(size);
    for k in 0..size {
        let target = if size == 1 {
            lo
        } else {
            lo + (hi - lo) * k as f64 / (size - 1) as f64
        };
        let best = (0..pool.len())
            .filter(|&i| !used[i])
            .min_by(|&a, &b| {
                (pool[a] - target)
                    .abs()
                    .total_cmp(&(pool[b] - target).abs())
                    .then(a.cmp(&b))
            })
            .expect("size bounded by the pool");
        used[best] = true;
        out.push(pool[best]);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelKind {
    Nbf,
    DeepOnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nbf => "nbf",
            ModelKind::DeepOnet => "deeponet",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub size: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub variable: Variable,
    pub rel_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub size: usize,
    pub model: ModelKind,
    /// Statistics over seeds of the per-seed error averaged over variables
    /// and held-out Mach numbers.
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,seed,model,variable,rel_l2\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e}",
                r.size,
                r.seed,
                r.model.name(),
                r.variable.name(),
                r.rel_l2
            );
        }
        s
    }

    /// Mean over variables of each seed's error.
    pub fn seed_scores(&self, size: usize, model: ModelKind) -> Vec<f64> {
        let mut seeds: Vec<u64> = self
            .rows
            .iter()
            .filter(|r| r.size == size && r.model == model)
            .map(|r| r.seed)
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
            .into_iter()
            .map(|s| {
                let e: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.size == size && r.model == model && r.seed == s)
                    .map(|r| r.rel_l2)
                    .collect();
                e.iter().sum::<f64>() / e.len() as f64
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<AblationSummary> {
        let mut keys: Vec<(usize, ModelKind)> =
            self.rows.iter().map(|r| (r.size, r.model)).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|(size, model)| {
                let s = self.seed_scores(size, model);
                AblationSummary {
                    size,
                    model,
                    median: median(&s),
                    q25: quantile(&s, 0.25),
                    q75: quantile(&s, 0.75),
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("size,model,median,q25,q75\n");
        for r in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e}",
                r.size,
                r.model.name(),
                r.median,
                r.q25,
                r.q75
            );
        }
        s
    }
}

/// Runs every (size, seed, model) cell on up to `jobs` threads. `train`
/// receives the training subset and the seed and returns a fitted
/// surrogate; held-out errors are averaged over the holdout Mach numbers per
/// variable. Rows come back in (size, seed, model) order whatever `jobs` is.
#[allow(clippy::too_many_arguments)]
pub fn ablation<F>(
    all: &SnapshotSet,
    holdout: &[f64],
    sizes: &[usize],
    seeds: &[u64],
    kinds: &[ModelKind],
    jobs: usize,
    train: F,
) -> Result<AblationTable>
where
    F: Fn(ModelKind, &SnapshotSet, u64) -> Result<Box<dyn Surrogate>> + Sync,
{
    let test_idx: Vec<usize> = holdout
        .iter()
        .map(|h| {
            all.params
                .iter()
                .position(|p| p == h)
                .ok_or_else(|| Error::Data(format!("no snapshot for held-out Mach {h}")))
        })
        .collect::<Result<_>>()?;
    let available: Vec<f64> = all
        .params
        .iter()
        .copied()
        .filter(|p| !holdout.contains(p))
        .collect();
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > available.len()) {
        return Err(Error::Argument(format!(
            "ablation size {s} exceeds the {} non-held-out snapshots",
            available.len()
        )));
    }
    let mut subsets = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let machs = even_subsample(&available, size)?;
        let cols: Vec<usize> = machs
            .iter()
            .map(|m| {
                all.params
                    .iter()
                    .position(|p| p == m)
                    .expect("subsample of params")
            })
            .collect();
        subsets.push(all.select(&cols));
    }
    let mut cells = Vec::new();
    for (k, &size) in sizes.iter().enumerate() {
        for &seed in seeds {
            for &kind in kinds {
                cells.push((k, size, seed, kind));
            }
        }
    }
    let run_cell = |&(k, size, seed, kind): &(usize, usize, u64, ModelKind)| -> Result<[f64; 4]> {
        log::info!("ablation size {size} seed {seed} model {}", kind.name());
        let model = train(kind, &subsets[k], seed)?;
        let mut acc = [0.0; 4];
        for &d in &test_idx {
            let truth = all.field(d);
            let e = field_errors(&model.predict_field(&all.points, truth.mach)?, &truth)?;
            for v in 0..4 {
                acc[v] += e[v] / test_idx.len() as f64;
            }
        }
        Ok(acc)
    };
    let jobs = jobs.clamp(1, cells.len().max(1));
    let results: Vec<Result<[f64; 4]>> = if jobs == 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let mut slots: Vec<Option<Result<[f64; 4]>>> = (0..cells.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|t| {
                    let cells = &cells;
                    let run_cell = &run_cell;
                    scope.spawn(move || {
                        (t..cells.len())
                            .step_by(jobs)
                            .map(|i| (i, run_cell(&cells[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("ablation thread panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every cell ran"))
            .collect()
    };
    let mut table = AblationTable::default();
    for (&(_, size, seed, kind), r) in cells.iter().zip(results) {
        let acc = r?;
        for (v, var) in Variable::ALL.iter().enumerate() {
            table.rows.push(AblationRow {
                size,
                seed,
                model: kind,
                variable: *var,
                rel_l2: acc[v],
            });
        }
    }
    Ok(table)
}

/// Replaces non-positive density or pressure by `1e-6` of the freestream
/// value.
pub fn sanitize_initial(
    states: &[PrimitiveState],
    mach: f64,
    gas: &GasConstants,
) -> Vec<PrimitiveState> {
    let inf = freestream_state(mach, gas);
    let p_inf = pressure(&inf, gas);
    states
        .iter()
        .map(|w| {
            let p = pressure(w, gas);
            if w.is_finite() && w.rho > 0.0 && p > 0.0 {
                *w
            } else {
                let rho = if w.rho > 0.0 && w.rho.is_finite() {
                    w.rho
                } else {
                    1e-6 * inf.rho
                };
                let p = if p > 0.0 && p.is_finite() {
                    p
                } else {
                    1e-6 * p_inf
                };
                let u = if w.u.is_finite() { w.u } else { 0.0 };
                let v = if w.v.is_finite() { w.v } else { 0.0 };
                PrimitiveState::from_pressure(rho, u, v, p, gas)
            }
        })
        .collect()
}

/// Freestream-initialized and surrogate-initialized solves of one Mach
/// number under one solver configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelReport {
    pub mach: f64,
    pub freestream: ResidualHistory,
    pub nbf: ResidualHistory,
    /// Optional best-case run started from the truth snapshot.
    pub truth: Option<ResidualHistory>,
    pub config_fingerprint: [u8; 32],
}

impl AccelReport {
    /// Iterations saved by the surrogate start, when both runs converged.
    pub fn savings(&self) -> Option<i64> {
        Some(self.freestream.converged_at? as i64 - self.nbf.converged_at? as i64)
    }

    pub fn truth_savings(&self) -> Option<i64> {
        Some(self.freestream.converged_at? as i64 - self.truth.as_ref()?.converged_at? as i64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,residual_freestream,residual_nbf");
        if self.truth.is_some() {
            s.push_str(",residual_truth");
        }
        s.push('\n');
        let mut len = self
            .freestream
            .residuals
            .len()
            .max(self.nbf.residuals.len());
        if let Some(t) = &self.truth {
            len = len.max(t.residuals.len());
        }
        let cell = |h: &ResidualHistory, i: usize| {
            h.residuals
                .get(i)
                .map(|r| format!("{r:e}"))
                .unwrap_or_default()
        };
        for i in 0..len {
            let _ = write!(
                s,
                "{i},{},{}",
                cell(&self.freestream, i),
                cell(&self.nbf, i)
            );
            if let Some(t) = &self.truth {
                let _ = write!(s, ",{}", cell(t, i));
            }
            s.push('\n');
        }
        s
    }
}

/// Failure of either run, with whatever histories were produced.
#[derive(Debug)]
pub struct AccelFailure {
    pub error: Error,
    pub freestream: Option<ResidualHistory>,
    pub nbf: Option<ResidualHistory>,
}

impl fmt::Display for AccelFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for AccelFailure {}

impl From<AccelFailure> for Error {
    fn from(f: AccelFailure) -> Self {
        f.error
    }
}

/// Runs `solve_steady` from freestream and from the surrogate prediction
/// with the same configuration. Both runs measure convergence against the
/// freestream run's reference residual so that iteration counts compare
/// like with like.
pub fn accelerate(
    model: &dyn Surrogate,
    mach: f64,
    grid: &StructuredGrid,
    cfg: &SolverConfig,
    gas: &GasConstants,
    truth: Option<&StateField>,
) -> std::result::Result<AccelReport, AccelFailure> {
    let fail = |error, freestream, nbf| AccelFailure {
        error,
        freestream,
        nbf,
    };
    let fingerprint = cfg.fingerprint();
    let run = |init: &[PrimitiveState], reference: Option<f64>| {
        assert_eq!(cfg.fingerprint(), fingerprint);
        solve_steady_with_reference(init, grid, cfg, mach, gas, reference)
    };
    let fs = run(&freestream_field(grid, mach, gas), None)
        .map_err(|f| fail(f.error, Some(f.history), None))?;
    let reference = fs.history.reference();
    let predicted = model
        .predict_field(grid.centroids(), mach)
        .map_err(|e| fail(e, Some(fs.history.clone()), None))?;
    let warm = sanitize_initial(&predicted.states, mach, gas);
    let nbf = run(&warm, reference)
        .map_err(|f| fail(f.error, Some(fs.history.clone()), Some(f.history)))?;
    let truth = match truth {
        Some(t) => {
            if t.len() != grid.num_cells() {
                return Err(fail(
                    Error::Shape {
                        expected: grid.num_cells(),
                        got: t.len(),
                    },
                    Some(fs.history),
                    Some(nbf.history),
                ));
            }
            let sol = run(&sanitize_initial(&t.states, mach, gas), reference)
                .map_err(|f| fail(f.error, Some(fs.history.clone()), Some(nbf.history.clone())))?;
            Some(sol.history)
        }
        None => None,
    };
    Ok(AccelReport {
        mach,
        freestream: fs.history,
        nbf: nbf.history,
        truth,
        config_fingerprint: fingerprint,
    })
}

pub fn accel_file_name(mach: f64) -> String {
    if mach.fract() == 0.0 {
        format!("accel_{}.csv", mach as i64)
    } else {
        format!("accel_{mach}.csv")
    }
}

/// Writes gnuplot command files next to the CSV reports.
pub fn write_plot_scripts(dir: &Path, accel_machs: &[f64], force: bool) -> Result<()> {
    let errors = "set datafile separator ','\n\
set logscale y\n\
set xlabel 'Mach'\n\
set ylabel 'relative L2 error'\n\
set key outside\n\
plot for [v in 'rho u v E'] 'errors.csv' using 1:(strcol(2) eq v ? $4 : 1/0) with linespoints title v\n";
    io::write_artifact(&dir.join("errors.gp"), errors.as_bytes(), force)?;
    let ablation = "set datafile separator ','\n\
set logscale y\n\
set xlabel 'training snapshots'\n\
set ylabel 'held-out relative L2 error'\n\
plot 'ablation_summary.csv' using 1:(strcol(2) eq 'nbf' ? $3 : 1/0):4:5 with yerrorlines title 'NBF', \\\n\
     'ablation_summary.csv' using 1:(strcol(2) eq 'deeponet' ? $3 : 1/0):4:5 with yerrorlines title 'DeepONet'\n";
    io::write_artifact(&dir.join("ablation.gp"), ablation.as_bytes(), force)?;
    for &m in accel_machs {
        let csv = accel_file_name(m);
        let gp = format!(
            "set datafile separator ','\n\
set logscale y\n\
set xlabel 'iteration'\n\
set ylabel 'residual'\n\
plot '{csv}' using 1:2 with lines title 'freestream start', '{csv}' using 1:3 with lines title 'NBF start'\n"
        );
        io::write_artifact(&dir.join(csv.replace(".csv", ".gp")), gp.as_bytes(), force)?;
    }
    Ok(())
}
