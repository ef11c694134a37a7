//! Pipeline configuration, read from sectioned TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::mach_sweep;
use crate::deeponet::{DeepOnetArch, DeepOnetConfig};
use crate::error::{Error, Result};
use crate::euler::GasConstants;
use crate::fv::{GridSpec, SolverConfig};
use crate::io;
use crate::nbf::{NbfArch, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mach_min: f64,
    pub mach_max: f64,
    pub step: f64,
    pub holdout: Vec<f64>,
    /// Also write a CSV mirror of every snapshot.
    pub csv: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mach_min: 10.0,
            mach_max: 30.0,
            step: 1.0,
            holdout: vec![25.0],
            csv: true,
        }
    }
}

impl SweepConfig {
    pub fn machs(&self) -> Result<Vec<f64>> {
        mach_sweep(self.mach_min, self.mach_max, self.step)
    }

    pub fn train_machs(&self) -> Result<Vec<f64>> {
        Ok(self
            .machs()?
            .into_iter()
            .filter(|m| !self.holdout.contains(m))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NbfSection {
    pub n_bf: usize,
    pub train: TrainConfig,
    pub arch: NbfArch,
}

impl Default for NbfSection {
    fn default() -> Self {
        Self {
            n_bf: 20,
            train: TrainConfig::default(),
            arch: NbfArch::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepOnetSection {
    pub train: DeepOnetConfig,
    pub arch: DeepOnetArch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub sizes: Vec<usize>,
    /// Number of seeds; seed `k` is the pipeline seed plus `k`.
    pub seeds: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            sizes: vec![5, 8, 11, 14, 17, 20],
            seeds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccelConfig {
    pub machs: Vec<f64>,
    /// Add the run started from the truth snapshot.
    pub truth_trace: bool,
}

impl Default for AccelConfig {
    fn default() -> Self {
        Self {
            machs: vec![25.0, 15.0],
            truth_trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub bases: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            bases: "bases".into(),
            models: "models".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub gas: GasConstants,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub nbf: NbfSection,
    pub deeponet: DeepOnetSection,
    pub ablation: AblationConfig,
    pub accel: AccelConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: ".".into(),
            gas: GasConstants::default(),
            grid: GridSpec::default(),
            solver: SolverConfig::default(),
            sweep: SweepConfig::default(),
            nbf: NbfSection::default(),
            deeponet: DeepOnetSection::default(),
            ablation: AblationConfig::default(),
            accel: AccelConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&io::read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the pipeline seed and propagates it to the trainers.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.nbf.train.seed = seed;
        self.deeponet.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.gas
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.nbf
            .train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.deeponet
            .train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.deeponet
            .arch
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.grid.nr < 2 || self.grid.ntheta < 2 || !(self.grid.r_outer > crate::fv::R_INNER) {
            return bad(format!("bad grid {:?}", self.grid));
        }
        let machs = self
            .sweep
            .machs()
            .map_err(|e| Error::Config(e.to_string()))?;
        if machs.iter().any(|&m| m <= 1.0) {
            return bad("sweep Mach numbers must exceed 1".into());
        }
        if let Some(h) = self.sweep.holdout.iter().find(|h| !machs.contains(h)) {
            return bad(format!("holdout Mach {h} is not in the sweep"));
        }
        let n_train = machs.len() - self.sweep.holdout.len();
        if n_train == 0 {
            return bad("no training Mach numbers remain after the holdout".into());
        }
        if self.nbf.n_bf == 0 || self.nbf.n_bf > n_train {
            return bad(format!(
                "n_bf must lie in 1..={n_train}, got {}",
                self.nbf.n_bf
            ));
        }
        if let Some(s) = self.ablation.sizes.iter().find(|&&s| s == 0 || s > n_train) {
            return bad(format!("ablation size {s} must lie in 1..={n_train}"));
        }
        let (lo, hi) = (machs[0], machs[machs.len() - 1]);
        if let Some(m) = self.accel.machs.iter().find(|&&m| m < lo || m > hi) {
            return bad(format!(
                "acceleration Mach {m} lies outside the trained range"
            ));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join(&self.paths.data)
    }

    pub fn bases_dir(&self) -> PathBuf {
        self.out_dir.join(&self.paths.bases)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join(&self.paths.models)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join(&self.paths.reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.sweep.machs().unwrap().len(), 21);
        assert_eq!(cfg.sweep.train_machs().unwrap().len(), 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 4\n[grid]\nnr = 16\nntheta = 12\nr_outer = 3.0\n[nbf]\nn_bf = 5\n[nbf.train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.grid.ntheta, 12);
        assert_eq!(cfg.nbf.n_bf, 5);
        assert_eq!(cfg.nbf.train.epochs, 3);
        assert_eq!(cfg.nbf.train.batch_size, 128);
    }

    #[test]
    fn round_trip_and_rejections() {
        let cfg = PipelineConfig::default().with_seed(9);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(matches!(
            PipelineConfig::from_toml("bogus = 1"),
            Err(Error::Config(_))
        ));
        let mut bad = PipelineConfig::default();
        bad.sweep.holdout = vec![40.0];
        assert!(bad.validate().is_err());
        let mut bad = PipelineConfig::default();
        bad.ablation.sizes = vec![21];
        assert!(bad.validate().is_err());
    }
}
