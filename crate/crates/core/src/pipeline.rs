//! Artifact-producing steps of the workflow under one output directory:
//! `data/`, `bases/`, `models/` and `reports/`.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::{generate_snapshots, snapshot_file_name, write_snapshots};
use crate::deeponet::{train_deeponet, DeepOnetModel};
use crate::error::{Error, Result};
use crate::euler::GasConstants;
use crate::eval::{
    ablation, accel_file_name, accelerate, mach_sweep_eval, median, write_plot_scripts, ModelKind,
    Split, Surrogate,
};
use crate::field::{StateField, Variable};
use crate::fv::{GridSpec, SolverConfig, StructuredGrid};
use crate::io;
use crate::nbf::{fit_unknowns, train_basis, NbfModel};
use crate::pod::{compute_pod, PodBasis, SnapshotSet};

/// Ordered `key=value` pairs for the one-line summary of a step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub pairs: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn extend(&mut self, other: Summary) {
        self.pairs.extend(other.pairs);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn line(&self) -> String {
        let mut s = String::from("status=ok");
        for (k, v) in &self.pairs {
            let _ = write!(s, " {k}={v}");
        }
        s
    }
}

/// Records what the snapshots in `data/` were computed with, so a later run
/// with the same settings can reuse them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DataManifest {
    grid: GridSpec,
    gas: GasConstants,
    solver: SolverConfig,
    machs: Vec<f64>,
}

pub const NBF_BASIS_BUNDLE: &str = "nbf_basis";
pub const NBF_BUNDLE: &str = "nbf";
pub const DEEPONET_BUNDLE: &str = "deeponet";

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub grid: StructuredGrid,
    pub force: bool,
    pub jobs: usize,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, force: bool, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        let grid = StructuredGrid::build(cfg.grid)?;
        Ok(Self {
            cfg,
            grid,
            force,
            jobs: jobs.max(1),
        })
    }

    fn data_manifest(&self) -> Result<DataManifest> {
        Ok(DataManifest {
            grid: self.cfg.grid,
            gas: self.cfg.gas,
            solver: self.cfg.solver,
            machs: self.cfg.sweep.machs()?,
        })
    }

    pub fn snapshot_paths(&self) -> Result<Vec<PathBuf>> {
        let dir = self.cfg.data_dir();
        Ok(self
            .cfg
            .sweep
            .machs()?
            .iter()
            .map(|&m| dir.join(snapshot_file_name(m)))
            .collect())
    }

    /// Solves the sweep and writes the snapshots. Snapshots already on disk
    /// from identical settings are kept unless `force` is set.
    pub fn generate_data(&self) -> Result<Summary> {
        let dir = self.cfg.data_dir();
        let manifest = self.data_manifest()?;
        let manifest_path = dir.join("manifest.toml");
        let text = toml::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        let paths = self.snapshot_paths()?;
        let reusable = !self.force
            && manifest_path.exists()
            && io::read_text(&manifest_path)? == text
            && paths.iter().all(|p| p.exists());
        let mut summary = Summary::default();
        if reusable {
            for p in &paths {
                StateField::read_snap(p)?;
            }
            summary.push("reused", true);
        } else {
            let snaps = generate_snapshots(
                &manifest.machs,
                &self.grid,
                &self.cfg.solver,
                &self.cfg.gas,
                self.jobs,
            )?;
            write_snapshots(&snaps, &dir, self.cfg.sweep.csv, self.force)?;
            io::write_artifact(&manifest_path, text.as_bytes(), self.force)?;
            let iters: Vec<String> = snaps
                .iter()
                .map(|s| s.converged_at.map_or("none".to_string(), |i| i.to_string()))
                .collect();
            summary.push("converged_at", iters.join(","));
            summary.push("reused", false);
        }
        summary.push("snapshots", paths.len());
        summary.push("dir", dir.display());
        Ok(summary)
    }

    /// All sweep snapshots, each required to exist.
    pub fn load_snapshots(&self) -> Result<SnapshotSet> {
        let paths = self.snapshot_paths()?;
        if let Some(p) = paths.iter().find(|p| !p.exists()) {
            return Err(Error::Missing(format!(
                "snapshot not found: {} (run generate-data)",
                p.display()
            )));
        }
        SnapshotSet::assemble(&paths)
    }

    pub fn training_set(&self, all: &SnapshotSet) -> SnapshotSet {
        let cols: Vec<usize> = (0..all.num_snapshots())
            .filter(|&d| !self.cfg.sweep.holdout.contains(&all.params[d]))
            .collect();
        all.select(&cols)
    }

    fn basis_path(&self, var: Variable) -> PathBuf {
        self.cfg
            .bases_dir()
            .join(format!("pod_{}.podb", var.name()))
    }

    pub fn pod(&self) -> Result<Summary> {
        let all = self.load_snapshots()?;
        let train = self.training_set(&all);
        let bases = compute_pod(&train, self.cfg.nbf.n_bf)?;
        let mut sigma = String::from("variable,index,sigma\n");
        let mut summary = Summary::default();
        for b in &bases {
            b.write(&self.basis_path(b.variable), self.force)?;
            for (k, s) in b.sigma.iter().enumerate() {
                let _ = writeln!(sigma, "{},{k},{s:e}", b.variable.name());
            }
            summary.push(
                &format!("bound_{}", b.variable.name()),
                format!("{:e}", b.truncation_error_bound(b.n_bf())?),
            );
        }
        io::write_artifact(
            &self.cfg.reports_dir().join("pod_sigma.csv"),
            sigma.as_bytes(),
            self.force,
        )?;
        summary.push("n_bf", self.cfg.nbf.n_bf);
        summary.push("snapshots", train.num_snapshots());
        Ok(summary)
    }

    pub fn load_bases(&self) -> Result<[PodBasis; 4]> {
        let load = |v: Variable| {
            let p = self.basis_path(v);
            if !p.exists() {
                return Err(Error::Missing(format!(
                    "basis not found: {} (run pod)",
                    p.display()
                )));
            }
            PodBasis::read(&p)
        };
        Ok([
            load(Variable::Rho)?,
            load(Variable::U)?,
            load(Variable::V)?,
            load(Variable::Energy)?,
        ])
    }

    pub fn train_basis(&self) -> Result<Summary> {
        let all = self.load_snapshots()?;
        let train = self.training_set(&all);
        let bases = self.load_bases()?;
        let (model, report) = train_basis(
            &train,
            &bases,
            &self.cfg.nbf.arch,
            &self.cfg.nbf.train,
            self.cfg.gas,
        )?;
        model.write_bundle(&self.cfg.models_dir().join(NBF_BASIS_BUNDLE), self.force)?;
        let mut csv = String::from("variable,mode,mse,rel_l2\n");
        for (v, var) in Variable::ALL.iter().enumerate() {
            for j in 0..model.n_bf {
                let _ = writeln!(
                    csv,
                    "{},{j},{:e},{:e}",
                    var.name(),
                    report.mse[v][j],
                    report.rel_l2[v][j]
                );
            }
        }
        io::write_artifact(
            &self.cfg.reports_dir().join("basis_fit.csv"),
            csv.as_bytes(),
            self.force,
        )?;
        let mut summary = Summary::default();
        for (v, var) in Variable::ALL.iter().enumerate() {
            summary.push(
                &format!("median_rel_l2_{}", var.name()),
                format!("{:e}", median(&report.rel_l2[v])),
            );
        }
        Ok(summary)
    }

    pub fn train_unknowns(&self) -> Result<Summary> {
        let all = self.load_snapshots()?;
        let train = self.training_set(&all);
        let mut model = NbfModel::read_bundle(&self.cfg.models_dir().join(NBF_BASIS_BUNDLE))?;
        let (pre, phys) = fit_unknowns(&mut model, &train, &self.grid, &self.cfg.nbf.train)?;
        model.write_bundle(&self.cfg.models_dir().join(NBF_BUNDLE), self.force)?;
        let mut csv = String::from("variable,mode,loss\n");
        for (v, var) in Variable::ALL.iter().enumerate() {
            for (j, l) in pre.loss[v].iter().enumerate() {
                let _ = writeln!(csv, "{},{j},{l:e}", var.name());
            }
        }
        io::write_artifact(
            &self.cfg.reports_dir().join("pretrain.csv"),
            csv.as_bytes(),
            self.force,
        )?;
        let mut csv = String::from("epoch,pde,bc,pt,total\n");
        for (e, t) in phys.history.iter().enumerate() {
            let _ = writeln!(csv, "{e},{:e},{:e},{:e},{:e}", t.pde, t.bc, t.pt, t.total);
        }
        io::write_artifact(
            &self.cfg.reports_dir().join("physics.csv"),
            csv.as_bytes(),
            self.force,
        )?;
        let mut summary = Summary::default();
        summary.push("physics_epochs", phys.history.len() - 1);
        summary.push("pt_before", format!("{:e}", phys.pt_before));
        summary.push("pt_after", format!("{:e}", phys.pt_after));
        summary.push("stopped_early", phys.stopped_early);
        Ok(summary)
    }

    pub fn train_deeponet(&self) -> Result<Summary> {
        let all = self.load_snapshots()?;
        let train = self.training_set(&all);
        let (model, report) =
            train_deeponet(&train, &self.cfg.deeponet.arch, &self.cfg.deeponet.train)?;
        model.write_bundle(&self.cfg.models_dir().join(DEEPONET_BUNDLE), self.force)?;
        let mut summary = Summary::default();
        for (v, var) in Variable::ALL.iter().enumerate() {
            summary.push(
                &format!("mse_{}", var.name()),
                format!("{:e}", report.mse[v]),
            );
        }
        Ok(summary)
    }

    pub fn load_nbf(&self) -> Result<NbfModel> {
        NbfModel::read_bundle(&self.cfg.models_dir().join(NBF_BUNDLE))
    }

    /// Mach-sweep errors of the NBF model, and of the DeepONet model when
    /// its bundle exists.
    pub fn evaluate(&self) -> Result<Summary> {
        let model = self.load_nbf()?;
        let all = self.load_snapshots()?;
        let holdout = &self.cfg.sweep.holdout;
        let report = mach_sweep_eval(&model, &all, holdout, model.n_bf, self.cfg.seed)?;
        let reports = self.cfg.reports_dir();
        io::write_artifact(
            &reports.join("errors.csv"),
            report.to_csv().as_bytes(),
            self.force,
        )?;
        let mut summary = Summary::default();
        for var in Variable::ALL {
            let train = median(&report.errors(Split::Train, var));
            let test = median(&report.errors(Split::Test, var));
            summary.push(
                &format!("train_median_{}", var.name()),
                format!("{train:e}"),
            );
            summary.push(&format!("test_{}", var.name()), format!("{test:e}"));
        }
        let don_dir = self.cfg.models_dir().join(DEEPONET_BUNDLE);
        if don_dir.join("manifest.toml").exists() {
            let don = DeepOnetModel::read_bundle(&don_dir)?;
            let r = mach_sweep_eval(&don, &all, holdout, 0, self.cfg.seed)?;
            io::write_artifact(
                &reports.join("errors_deeponet.csv"),
                r.to_csv().as_bytes(),
                self.force,
            )?;
            summary.push("deeponet", true);
        }
        write_plot_scripts(&reports, &self.cfg.accel.machs, self.force)?;
        summary.push("rows", report.rows.len());
        Ok(summary)
    }

    /// Trains a surrogate of the given kind on `set` from scratch.
    pub fn fit_surrogate(
        &self,
        kind: ModelKind,
        set: &SnapshotSet,
        seed: u64,
    ) -> Result<Box<dyn Surrogate>> {
        let cfg = self.cfg.clone().with_seed(seed);
        match kind {
            ModelKind::Nbf => {
                let n_bf = cfg.nbf.n_bf.min(set.num_snapshots());
                let bases = compute_pod(set, n_bf)?;
                let (mut model, _) =
                    train_basis(set, &bases, &cfg.nbf.arch, &cfg.nbf.train, cfg.gas)?;
                fit_unknowns(&mut model, set, &self.grid, &cfg.nbf.train)?;
                Ok(Box::new(model))
            }
            ModelKind::DeepOnet => {
                let (model, _) = train_deeponet(set, &cfg.deeponet.arch, &cfg.deeponet.train)?;
                Ok(Box::new(model))
            }
        }
    }

    pub fn ablation(&self) -> Result<Summary> {
        let all = self.load_snapshots()?;
        let seeds: Vec<u64> = (0..self.cfg.ablation.seeds as u64)
            .map(|k| self.cfg.seed.wrapping_add(k))
            .collect();
        let table = ablation(
            &all,
            &self.cfg.sweep.holdout,
            &self.cfg.ablation.sizes,
            &seeds,
            &[ModelKind::Nbf, ModelKind::DeepOnet],
            self.jobs,
            |kind, set, seed| self.fit_surrogate(kind, set, seed),
        )?;
        let reports = self.cfg.reports_dir();
        io::write_artifact(
            &reports.join("ablation.csv"),
            table.to_csv().as_bytes(),
            self.force,
        )?;
        io::write_artifact(
            &reports.join("ablation_summary.csv"),
            table.summary_csv().as_bytes(),
            self.force,
        )?;
        write_plot_scripts(&reports, &self.cfg.accel.machs, self.force)?;
        let mut summary = Summary::default();
        for s in table.summary() {
            summary.push(
                &format!("median_{}_{}", s.model.name(), s.size),
                format!("{:e}", s.median),
            );
        }
        Ok(summary)
    }

    pub fn accelerate(&self) -> Result<Summary> {
        let model = self.load_nbf()?;
        let all = if self.cfg.accel.truth_trace {
            Some(self.load_snapshots()?)
        } else {
            None
        };
        let mut summary = Summary::default();
        let mut table = String::from("mach,iters_freestream,iters_nbf,iters_truth,savings\n");
        for &mach in &self.cfg.accel.machs {
            let truth = all
                .as_ref()
                .and_then(|a| a.params.iter().position(|&p| p == mach).map(|d| a.field(d)));
            let report = accelerate(
                &model,
                mach,
                &self.grid,
                &self.cfg.solver,
                &self.cfg.gas,
                truth.as_ref(),
            )?;
            io::write_artifact(
                &self.cfg.reports_dir().join(accel_file_name(mach)),
                report.to_csv().as_bytes(),
                self.force,
            )?;
            let fmt = |o: Option<usize>| o.map_or("none".to_string(), |i| i.to_string());
            let savings = report
                .savings()
                .map_or("none".to_string(), |s| s.to_string());
            let _ = writeln!(
                table,
                "{mach},{},{},{},{savings}",
                fmt(report.freestream.converged_at),
                fmt(report.nbf.converged_at),
                fmt(report.truth.as_ref().and_then(|t| t.converged_at)),
            );
            summary.push(&format!("savings_{mach}"), savings);
        }
        io::write_artifact(
            &self.cfg.reports_dir().join("accel_summary.csv"),
            table.as_bytes(),
            self.force,
        )?;
        write_plot_scripts(&self.cfg.reports_dir(), &self.cfg.accel.machs, self.force)?;
        Ok(summary)
    }

    /// Every step in order.
    pub fn run_all(&self) -> Result<Summary> {
        let mut summary = Summary::default();
        for (name, step) in [
            (
                "generate-data",
                Self::generate_data as fn(&Self) -> Result<Summary>,
            ),
            ("pod", Self::pod),
            ("train-basis", Self::train_basis),
            ("train-unknowns", Self::train_unknowns),
            ("train-deeponet", Self::train_deeponet),
            ("evaluate", Self::evaluate),
            ("ablation", Self::ablation),
            ("accelerate", Self::accelerate),
        ] {
            log::info!("pipeline step {name}");
            step(self)?;
        }
        summary.push("out_dir", self.cfg.out_dir.display());
        let recorded = PipelineConfig {
            out_dir: ".".into(),
            ..self.cfg.clone()
        };
        let cfg_text = recorded.to_toml();
        io::write_artifact(
            &self.cfg.out_dir.join("config.toml"),
            cfg_text.as_bytes(),
            self.force,
        )?;
        Ok(summary)
    }
}
