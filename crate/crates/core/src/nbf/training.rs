use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{MeanField, NbfModel, ScaledNet};
use crate::autodiff::{
    Activation, AdamConfig, MlpNetwork, ZmuvTransform, DEFAULT_LEAKY_SLOPE, DEFAULT_STD_FLOOR,
};
use crate::error::{Error, Result};
use crate::euler::GasConstants;
use crate::field::Variable;
use crate::pod::{symmetric_eigen, PodBasis, SnapshotSet};
use crate::train::{derive_seed, fit_regression, importance_probs, FitSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Points per minibatch when fitting basis networks.
    pub batch_size: usize,
    /// Snapshots per minibatch when pretraining unknowns networks.
    pub pretrain_batch_size: usize,
    pub importance_period: usize,
    pub seed: u64,
    pub lambda_pde: f64,
    pub lambda_bc: f64,
    pub lambda_pt: f64,
    pub physics_epochs: usize,
    pub physics_lr: f64,
    /// Collocation points drawn per ψ sample during physics training.
    pub collocation_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            adam: AdamConfig::default(),
            batch_size: 128,
            pretrain_batch_size: 1,
            importance_period: 4,
            seed: 0,
            lambda_pde: 1.0,
            lambda_bc: 1.0,
            lambda_pt: 1.0,
            physics_epochs: 20,
            physics_lr: 1e-7,
            collocation_batch: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.pretrain_batch_size == 0 || self.collocation_batch == 0 {
            return Err(Error::Argument("batch sizes must be positive".into()));
        }
        if self.importance_period == 0 {
            return Err(Error::Argument(
                "importance period must be at least 1".into(),
            ));
        }
        let weights = [
            self.lambda_pde,
            self.lambda_bc,
            self.lambda_pt,
            self.physics_lr,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Argument(
                "loss weights and physics learning rate must be positive".into(),
            ));
        }
        Ok(())
    }

    fn schedule(&self, batch_size: usize) -> FitSchedule {
        FitSchedule {
            epochs: self.epochs,
            adam: self.adam,
            batch_size,
            importance_period: self.importance_period,
        }
    }
}

/// Network shapes: `width × depth` hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbfArch {
    pub basis_width: usize,
    pub basis_depth: usize,
    pub unknowns_width: usize,
    pub unknowns_depth: usize,
    pub leaky_slope: f64,
}

impl Default for NbfArch {
    fn default() -> Self {
        Self {
            basis_width: 40,
            basis_depth: 5,
            unknowns_width: 120,
            unknowns_depth: 7,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl NbfArch {
    fn sizes(input: usize, width: usize, depth: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat(width).take(depth));
        s.push(1);
        s
    }

    pub fn basis_sizes(&self) -> Vec<usize> {
        Self::sizes(2, self.basis_width, self.basis_depth)
    }

    pub fn unknowns_sizes(&self) -> Vec<usize> {
        Self::sizes(1, self.unknowns_width, self.unknowns_depth)
    }
}

/// Final fit quality of every basis network, indexed `[variable][mode]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisReport {
    /// Mean squared error against the mode column.
    pub mse: [Vec<f64>; 4],
    /// `‖φ − U‖ / ‖U‖` over the grid points.
    pub rel_l2: [Vec<f64>; 4],
}

fn net_name(kind: &str, v: usize, j: usize) -> String {
    format!("{kind}[{},{j}]", Variable::ALL[v].name())
}

/// Fits one basis network per (variable, mode) to the POD modes and returns
/// a model whose unknowns networks are freshly initialized.
pub fn train_basis(
    set: &SnapshotSet,
    bases: &[PodBasis; 4],
    arch: &NbfArch,
    cfg: &TrainConfig,
    gas: GasConstants,
) -> Result<(NbfModel, BasisReport)> {
    cfg.validate()?;
    let n_bf = bases[0].n_bf();
    if bases
        .iter()
        .any(|b| b.n_bf() != n_bf || b.num_points() != set.num_points())
    {
        return Err(Error::Data("bases disagree on n_BF or point count".into()));
    }
    let pts = Array2::from_shape_fn((set.num_points(), 2), |(r, k)| set.points[r][k]);
    let x_norm = ZmuvTransform::fit(pts.view(), DEFAULT_STD_FLOOR)?;
    let xn = x_norm.apply_rows(pts.view());
    let psi_norm = ZmuvTransform::fit_column(&set.params, DEFAULT_STD_FLOOR)?;
    let act = Activation::LeakyRelu(arch.leaky_slope);

    let mut basis: [Vec<ScaledNet>; 4] = Default::default();
    let mut report = BasisReport {
        mse: Default::default(),
        rel_l2: Default::default(),
    };
    for v in 0..4 {
        for j in 0..n_bf {
            let name = net_name("phi", v, j);
            let column = bases[v].modes.column(j);
            let col: Vec<f64> = column.to_vec();
            let out = ZmuvTransform::fit_column(&col, DEFAULT_STD_FLOOR)?;
            let target = column.mapv(|u| out.apply_scalar(0, u));
            let probs = importance_probs(&col, column.mean().unwrap_or(0.0));
            let mut net = MlpNetwork::new(
                &arch.basis_sizes(),
                act,
                derive_seed(cfg.seed, &[1, v as u64, j as u64]),
            )?;
            fit_regression(
                &mut net,
                &name,
                xn.view(),
                target.view(),
                Some(&probs),
                &cfg.schedule(cfg.batch_size),
                derive_seed(cfg.seed, &[2, v as u64, j as u64]),
            )?;
            let scaled = ScaledNet {
                net,
                out_mean: out.mean[0],
                out_std: out.std[0],
            };
            let fit = scaled.eval_batch(xn.view())?;
            let err2: f64 = fit.iter().zip(column).map(|(a, b)| (a - b) * (a - b)).sum();
            let norm2: f64 = column.iter().map(|u| u * u).sum();
            report.mse[v].push(err2 / col.len() as f64);
            report.rel_l2[v].push(if norm2 > 0.0 {
                (err2 / norm2).sqrt()
            } else {
                err2.sqrt()
            });
            log::debug!("{name}: rel_l2 {:.3e}", report.rel_l2[v][j]);
            basis[v].push(scaled);
        }
    }

    let unknowns = [0, 1, 2, 3].map(|v| {
        (0..n_bf)
            .map(|j| {
                MlpNetwork::new(
                    &arch.unknowns_sizes(),
                    act,
                    derive_seed(cfg.seed, &[3, v as u64, j as u64]),
                )
                .map(|net| ScaledNet {
                    net,
                    out_mean: 0.0,
                    out_std: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    let [u0, u1, u2, u3] = unknowns;
    let mean = MeanField::new(
        set.points.clone(),
        [0, 1, 2, 3].map(|v| bases[v].mean.to_vec()),
    )?;
    let model = NbfModel {
        gas,
        n_bf,
        x_norm,
        psi_norm,
        mean,
        basis,
        unknowns: [u0?, u1?, u2?, u3?],
        train_machs: set.params.clone(),
    };
    Ok((model, report))
}

/// Least-squares coefficients of each mean-subtracted snapshot column in the
/// span of the basis matrix `phi` (`n × n_BF`), as an `n_BF × D` matrix.
/// Directions whose Gram eigenvalue falls below `1e-12` of the largest are
/// dropped, giving the minimum-norm solution.
pub fn least_squares_targets(phi: &Array2<f64>, centered: &Array2<f64>) -> Array2<f64> {
    let gram = phi.t().dot(phi);
    let (vals, vecs) = symmetric_eigen(&gram);
    let top = vals.iter().copied().fold(0.0, f64::max);
    let inv = vals.mapv(|l| {
        if l > 1e-12 * top && l > 0.0 {
            1.0 / l
        } else {
            0.0
        }
    });
    let rhs = phi.t().dot(centered);
    let proj = vecs.t().dot(&rhs);
    let scaled = &proj * &inv.insert_axis(Axis(1));
    vecs.dot(&scaled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Least-squares targets `C̃`, `[variable]` → `n_BF × D`.
    pub targets: [Array2<f64>; 4],
    /// Final mean squared error of each unknowns network against its
    /// targets, in coefficient units.
    pub loss: [Vec<f64>; 4],
}

/// Regresses every `C_ij` onto least-squares coefficients of the training
/// snapshots with the basis networks frozen.
pub fn pretrain_unknowns(
    model: &mut NbfModel,
    set: &SnapshotSet,
    cfg: &TrainConfig,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if set.points.len() != model.mean.len() {
        return Err(Error::Data(
            "snapshot points differ from the model's mean field".into(),
        ));
    }
    let phi = model.basis_values(&set.points)?;
    let psi = Array2::from_shape_fn((set.num_snapshots(), 1), |(d, _)| {
        model.normalize_mach(set.params[d])
    });
    let mut targets: [Array2<f64>; 4] = Default::default();
    let mut loss: [Vec<f64>; 4] = Default::default();
    for v in 0..4 {
        let mean = Array1::from(model.mean.values[v].clone());
        let centered = set.data[v].clone() - &mean.insert_axis(Axis(1));
        let t = least_squares_targets(&phi[v], &centered);
        for j in 0..model.n_bf {
            let row: Vec<f64> = t.row(j).to_vec();
            let out = ZmuvTransform::fit_column(&row, DEFAULT_STD_FLOOR)?;
            let normalized = t.row(j).mapv(|c| out.apply_scalar(0, c));
            let net = &mut model.unknowns[v][j];
            let mse = fit_regression(
                &mut net.net,
                &net_name("C", v, j),
                psi.view(),
                normalized.view(),
                None,
                &cfg.schedule(cfg.pretrain_batch_size),
                derive_seed(cfg.seed, &[4, v as u64, j as u64]),
            )?;
            net.out_mean = out.mean[0];
            net.out_std = out.std[0];
            loss[v].push(mse * out.std[0] * out.std[0]);
        }
        targets[v] = t;
    }
    Ok(PretrainReport { targets, loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn orthonormal_basis_targets_are_projections() {
        let s = 0.5f64.sqrt();
        let phi = array![[s, 0.0], [s, 0.0], [0.0, 1.0]];
        let w = array![[1.0, -2.0], [3.0, 0.5], [2.0, 4.0]];
        let t = least_squares_targets(&phi, &w);
        let proj = phi.t().dot(&w);
        assert!((&t - &proj).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn rank_deficient_basis_gives_minimum_norm() {
        let phi = array![[1.0, 1.0], [1.0, 1.0]];
        let w = array![[2.0], [2.0]];
        let t = least_squares_targets(&phi, &w);
        assert!((t[[0, 0]] - 1.0).abs() < 1e-12 && (t[[1, 0]] - 1.0).abs() < 1e-12);
    }
}
