//! Neural basis function surrogate
//! `ŵ_i(x, ψ) = mean_i(x) + Σ_j C_ij(ψ) φ_ij(x)`.

mod mean;
mod physics;
mod training;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use mean::{MeanField, GRADIENT_NEIGHBOURS};
pub use physics::{
    coefficient_backprop, full_physics_loss, physics_loss, physics_train_unknowns, CollocationSet,
    PhysicsLoss, PhysicsReport, PhysicsTerms, PT_GUARD_FACTOR,
};
pub use training::{
    least_squares_targets, pretrain_unknowns, train_basis, BasisReport, NbfArch, PretrainReport,
    TrainConfig,
};

use crate::autodiff::{MlpNetwork, ZmuvTransform};
use crate::error::{Error, Result};
use crate::euler::{GasConstants, PrimitiveState};
use crate::field::{StateField, Variable};
use crate::fv::StructuredGrid;
use crate::io;
use crate::pod::SnapshotSet;

pub const BUNDLE_MAGIC: &str = "NBF1";
pub const BUNDLE_VERSION: u32 = 1;

/// A scalar-output network with an affine output map
/// `y = out_mean + out_std · net(x̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledNet {
    pub net: MlpNetwork,
    pub out_mean: f64,
    pub out_std: f64,
}

impl ScaledNet {
    pub fn eval_batch(&self, xn: ArrayView2<f64>) -> Result<Array1<f64>> {
        let y = self.net.forward_batch(xn)?;
        Ok(y.column(0).mapv(|v| self.out_mean + self.out_std * v))
    }

    /// Values and derivatives with respect to the normalized inputs.
    pub fn eval_with_tangents(
        &self,
        xn: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Vec<Array1<f64>>)> {
        let (y, t) = self.net.forward_with_tangents(xn)?;
        let vals = y.column(0).mapv(|v| self.out_mean + self.out_std * v);
        let tang = t
            .iter()
            .map(|m| m.column(0).mapv(|v| self.out_std * v))
            .collect();
        Ok((vals, tang))
    }
}

/// Basis functions and their spatial derivatives at a point set, one
/// `n × n_BF` matrix per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub phi: [Array2<f64>; 4],
    pub dphi_dx: [Array2<f64>; 4],
    pub dphi_dy: [Array2<f64>; 4],
}

/// Prediction at a set of points together with whether ψ lay outside the
/// trained range.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub field: StateField,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbfModel {
    pub gas: GasConstants,
    pub n_bf: usize,
    pub x_norm: ZmuvTransform,
    pub psi_norm: ZmuvTransform,
    pub mean: MeanField,
    pub basis: [Vec<ScaledNet>; 4],
    pub unknowns: [Vec<ScaledNet>; 4],
    pub train_machs: Vec<f64>,
}

impl NbfModel {
    pub fn validate(&self) -> Result<()> {
        for v in 0..4 {
            if self.basis[v].len() != self.n_bf || self.unknowns[v].len() != self.n_bf {
                return Err(Error::Data(format!(
                    "variable {} has {} basis and {} unknowns networks, expected {}",
                    Variable::ALL[v].name(),
                    self.basis[v].len(),
                    self.unknowns[v].len(),
                    self.n_bf
                )));
            }
            if self.basis[v]
                .iter()
                .any(|n| n.net.input_dim() != 2 || n.net.output_dim() != 1)
                || self.unknowns[v]
                    .iter()
                    .any(|n| n.net.input_dim() != 1 || n.net.output_dim() != 1)
            {
                return Err(Error::Data(
                    "basis networks take x, unknowns networks take ψ".into(),
                ));
            }
        }
        if self.x_norm.dim() != 2 || self.psi_norm.dim() != 1 {
            return Err(Error::Data(
                "normalization dimensions do not match the inputs".into(),
            ));
        }
        Ok(())
    }

    pub fn normalize_points(&self, points: &[[f64; 2]]) -> Array2<f64> {
        Array2::from_shape_fn((points.len(), 2), |(r, k)| {
            self.x_norm.apply_scalar(k, points[r][k])
        })
    }

    pub fn normalize_mach(&self, mach: f64) -> f64 {
        self.psi_norm.apply_scalar(0, mach)
    }

    /// `φ_ij` and its Cartesian derivatives at `points`.
    pub fn basis_eval(&self, points: &[[f64; 2]]) -> Result<BasisEval> {
        let xn = self.normalize_points(points);
        let n = points.len();
        let mut out = BasisEval {
            phi: [(); 4].map(|_| Array2::zeros((n, self.n_bf))),
            dphi_dx: [(); 4].map(|_| Array2::zeros((n, self.n_bf))),
            dphi_dy: [(); 4].map(|_| Array2::zeros((n, self.n_bf))),
        };
        for v in 0..4 {
            for (j, net) in self.basis[v].iter().enumerate() {
                let (vals, t) = net.eval_with_tangents(xn.view())?;
                out.phi[v].column_mut(j).assign(&vals);
                out.dphi_dx[v]
                    .column_mut(j)
                    .assign(&(&t[0] / self.x_norm.std[0]));
                out.dphi_dy[v]
                    .column_mut(j)
                    .assign(&(&t[1] / self.x_norm.std[1]));
            }
        }
        Ok(out)
    }

    /// Basis values only (no derivatives).
    pub fn basis_values(&self, points: &[[f64; 2]]) -> Result<[Array2<f64>; 4]> {
        let xn = self.normalize_points(points);
        let mut phi = [(); 4].map(|_| Array2::zeros((points.len(), self.n_bf)));
        for v in 0..4 {
            for (j, net) in self.basis[v].iter().enumerate() {
                phi[v].column_mut(j).assign(&net.eval_batch(xn.view())?);
            }
        }
        Ok(phi)
    }

    /// `C_ij(ψ)` for every variable and mode.
    pub fn coefficients(&self, mach: f64) -> Result<[Array1<f64>; 4]> {
        let psi = Array2::from_elem((1, 1), self.normalize_mach(mach));
        let mut c = [(); 4].map(|_| Array1::zeros(self.n_bf));
        for v in 0..4 {
            for (j, net) in self.unknowns[v].iter().enumerate() {
                c[v][j] = net.eval_batch(psi.view())?[0];
            }
        }
        Ok(c)
    }

    /// Mean-field values at `points`, one column per variable.
    pub fn mean_values(&self, points: &[[f64; 2]]) -> Array2<f64> {
        let mut m = Array2::zeros((points.len(), 4));
        for (r, &p) in points.iter().enumerate() {
            let (v, _) = self.mean.eval(p);
            for k in 0..4 {
                m[[r, k]] = v[k];
            }
        }
        m
    }

    pub fn is_extrapolation(&self, mach: f64) -> bool {
        let lo = self
            .train_machs
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .train_machs
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        !(mach >= lo && mach <= hi)
    }

    pub fn predict(&self, points: &[[f64; 2]], mach: f64) -> Result<Prediction> {
        let phi = self.basis_values(points)?;
        let c = self.coefficients(mach)?;
        let mean = self.mean_values(points);
        let field = combine(points, mach, mean.view(), &phi, &c);
        Ok(Prediction {
            field,
            extrapolated: self.is_extrapolation(mach),
        })
    }

    pub fn write_bundle(&self, dir: &Path, force: bool) -> Result<()> {
        self.validate()?;
        let scales = |nets: &[Vec<ScaledNet>; 4]| -> Vec<Vec<[f64; 2]>> {
            nets.iter()
                .map(|v| v.iter().map(|n| [n.out_mean, n.out_std]).collect())
                .collect()
        };
        let manifest = Manifest {
            format: BUNDLE_MAGIC.into(),
            version: BUNDLE_VERSION,
            variables: Variable::ALL.iter().map(|v| v.name().to_string()).collect(),
            n_bf: self.n_bf,
            gamma: self.gas.gamma,
            r_gas: self.gas.r_gas,
            train_machs: self.train_machs.clone(),
            x_norm: self.x_norm.clone(),
            psi_norm: self.psi_norm.clone(),
            basis_scale: scales(&self.basis),
            unknowns_scale: scales(&self.unknowns),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        io::write_artifact(&dir.join("manifest.toml"), text.as_bytes(), force)?;
        io::write_artifact(&dir.join("mean.bin"), &self.mean.to_bytes(), force)?;
        for (v, var) in Variable::ALL.iter().enumerate() {
            for j in 0..self.n_bf {
                write_net(
                    &dir.join(net_file("phi", *var, j)),
                    &self.basis[v][j].net,
                    force,
                )?;
                write_net(
                    &dir.join(net_file("c", *var, j)),
                    &self.unknowns[v][j].net,
                    force,
                )?;
            }
        }
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.toml");
        if !manifest_path.exists() {
            return Err(Error::Missing(format!(
                "model bundle not found: {}",
                dir.display()
            )));
        }
        let text = io::read_text(&manifest_path)?;
        let m: Manifest =
            toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        if m.format != BUNDLE_MAGIC || m.version != BUNDLE_VERSION {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "expected {BUNDLE_MAGIC} version {BUNDLE_VERSION}, found {} version {}",
                    m.format, m.version
                ),
            ));
        }
        let mean_path = dir.join("mean.bin");
        let mean = MeanField::from_bytes(&io::read_bytes(&mean_path)?, &mean_path)?;
        let load = |kind: &str, scales: &[Vec<[f64; 2]>]| -> Result<[Vec<ScaledNet>; 4]> {
            if scales.len() != 4 || scales.iter().any(|s| s.len() != m.n_bf) {
                return Err(Error::format(
                    &manifest_path,
                    "scale table does not match n_bf",
                ));
            }
            let mut out: [Vec<ScaledNet>; 4] = Default::default();
            for (v, var) in Variable::ALL.iter().enumerate() {
                for j in 0..m.n_bf {
                    let net = read_net(&dir.join(net_file(kind, *var, j)))?;
                    out[v].push(ScaledNet {
                        net,
                        out_mean: scales[v][j][0],
                        out_std: scales[v][j][1],
                    });
                }
            }
            Ok(out)
        };
        let model = Self {
            gas: GasConstants {
                gamma: m.gamma,
                r_gas: m.r_gas,
            },
            n_bf: m.n_bf,
            x_norm: m.x_norm,
            psi_norm: m.psi_norm,
            mean,
            basis: load("phi", &m.basis_scale)?,
            unknowns: load("c", &m.unknowns_scale)?,
            train_machs: m.train_machs,
        };
        model
            .validate()
            .map_err(|e| Error::format(dir, e.to_string()))?;
        Ok(model)
    }
}

/// Pretrains the unknowns networks and then fine-tunes them on the physics
/// loss, with collocation on the snapshot points and the boundary faces of
/// `grid`.
pub fn fit_unknowns(
    model: &mut NbfModel,
    set: &SnapshotSet,
    grid: &StructuredGrid,
    cfg: &TrainConfig,
) -> Result<(PretrainReport, PhysicsReport)> {
    let pre = pretrain_unknowns(model, set, cfg)?;
    let colloc = CollocationSet::build(model, set, &grid.boundary_faces())?;
    let phys = physics_train_unknowns(model, &colloc, cfg)?;
    Ok((pre, phys))
}

/// `mean + Σ_j C_ij φ_ij` assembled into a field.
pub fn combine(
    points: &[[f64; 2]],
    mach: f64,
    mean: ArrayView2<f64>,
    phi: &[Array2<f64>; 4],
    c: &[Array1<f64>; 4],
) -> StateField {
    let cols: Vec<Array1<f64>> = (0..4)
        .map(|v| &mean.column(v) + &phi[v].dot(&c[v]))
        .collect();
    let states = (0..points.len())
        .map(|r| PrimitiveState::new(cols[0][r], cols[1][r], cols[2][r], cols[3][r]))
        .collect();
    StateField {
        mach,
        points: points.to_vec(),
        states,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    variables: Vec<String>,
    n_bf: usize,
    gamma: f64,
    r_gas: f64,
    train_machs: Vec<f64>,
    x_norm: ZmuvTransform,
    psi_norm: ZmuvTransform,
    basis_scale: Vec<Vec<[f64; 2]>>,
    unknowns_scale: Vec<Vec<[f64; 2]>>,
}

fn net_file(kind: &str, var: Variable, j: usize) -> String {
    format!("{kind}_{}_{j:02}.nbf", var.name())
}

pub(crate) fn write_net(path: &Path, net: &MlpNetwork, force: bool) -> Result<()> {
    let mut buf = Vec::new();
    net.write_checkpoint(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    io::write_artifact(path, &buf, force)
}

pub(crate) fn read_net(path: &Path) -> Result<MlpNetwork> {
    let bytes = io::read_bytes(path)?;
    MlpNetwork::read_checkpoint(bytes.as_slice()).map_err(|reason| Error::format(path, reason))
}

/// The field as an `n × 4` matrix with columns `[ρ, u, v, E]`.
pub fn field_matrix(field: &StateField) -> Array2<f64> {
    let mut m = Array2::zeros((field.len(), 4));
    for (mut row, w) in m.axis_iter_mut(Axis(0)).zip(&field.states) {
        row.assign(&Array1::from(w.to_array().to_vec()));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;

    fn constant_net(value: f64, input: usize) -> ScaledNet {
        ScaledNet {
            net: MlpNetwork::zeros(&[input, 3, 1], Activation::LeakyRelu(0.01)).unwrap(),
            out_mean: value,
            out_std: 1.0,
        }
    }

    pub(crate) fn toy_model(n_bf: usize, c_value: f64, phi_value: f64) -> NbfModel {
        let points: Vec<[f64; 2]> = (0..12)
            .map(|i| [-(i as f64) * 0.25 - 1.0, 0.1 * (i % 4) as f64])
            .collect();
        let vals = [0, 1, 2, 3].map(|v| {
            points
                .iter()
                .map(|p| 1.0 + v as f64 + p[0] * p[1])
                .collect::<Vec<_>>()
        });
        NbfModel {
            gas: GasConstants::default(),
            n_bf,
            x_norm: ZmuvTransform::identity(2),
            psi_norm: ZmuvTransform::identity(1),
            mean: MeanField::new(points, vals).unwrap(),
            basis: [(); 4].map(|_| (0..n_bf).map(|_| constant_net(phi_value, 2)).collect()),
            unknowns: [(); 4].map(|_| (0..n_bf).map(|_| constant_net(c_value, 1)).collect()),
            train_machs: vec![10.0, 20.0],
        }
    }

    #[test]
    fn zero_coefficients_give_the_mean() {
        let m = toy_model(3, 0.0, 0.7);
        let p = m.predict(&m.mean.points.clone(), 15.0).unwrap();
        for (r, w) in p.field.states.iter().enumerate() {
            assert_eq!(w.to_array(), [0, 1, 2, 3].map(|v| m.mean.values[v][r]));
        }
        assert!(!p.extrapolated);
        assert!(m.predict(&[[-2.0, 0.1]], 31.0).unwrap().extrapolated);
    }

    #[test]
    fn single_constant_mode_shifts_the_mean() {
        let m = toy_model(1, 1.0, 0.25);
        let pts = m.mean.points.clone();
        let p = m.predict(&pts, 12.0).unwrap();
        for (r, w) in p.field.states.iter().enumerate() {
            assert_eq!(w.rho, m.mean.values[0][r] + 0.25);
        }
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_model(2, 0.5, -0.25);
        m.write_bundle(dir.path(), false).unwrap();
        let back = NbfModel::read_bundle(dir.path()).unwrap();
        assert_eq!(back, m);
        let err = NbfModel::read_bundle(&dir.path().join("absent")).unwrap_err();
        assert!(err.to_string().contains("model bundle not found"));
    }
}
