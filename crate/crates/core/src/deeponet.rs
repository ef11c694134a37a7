//! Vanilla DeepONet baseline: per variable,
//! `G(ψ)(x) = Σ_j b_j(ψ̃) t_j(x̃) + b_0`, then output denormalization.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    Activation, AdamConfig, AdamState, MlpNetwork, ZmuvTransform, DEFAULT_LEAKY_SLOPE,
    DEFAULT_STD_FLOOR,
};
use crate::error::{Error, Result};
use crate::euler::PrimitiveState;
use crate::field::{StateField, Variable};
use crate::io;
use crate::nbf::{read_net, write_net};
use crate::pod::SnapshotSet;
use crate::train::{derive_seed, epoch_order, importance_probs, weighted_index};

pub const DEEPONET_MAGIC: &str = "DON1";
pub const DEEPONET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepOnetArch {
    pub branch_width: usize,
    pub branch_depth: usize,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub latent: usize,
    pub leaky_slope: f64,
}

impl Default for DeepOnetArch {
    fn default() -> Self {
        Self {
            branch_width: 120,
            branch_depth: 5,
            trunk_width: 120,
            trunk_depth: 6,
            latent: 64,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl DeepOnetArch {
    pub fn branch_sizes(&self) -> Vec<usize> {
        let mut s = vec![1];
        s.extend(std::iter::repeat(self.branch_width).take(self.branch_depth));
        s.push(self.latent);
        s
    }

    pub fn trunk_sizes(&self) -> Vec<usize> {
        let mut s = vec![2];
        s.extend(std::iter::repeat(self.trunk_width).take(self.trunk_depth));
        s.push(self.latent);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.branch_width == 0 || self.trunk_width == 0 {
            return Err(Error::Argument("DeepONet widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepOnetConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Grid points per minibatch; each point is paired with every training ψ.
    pub batch_size: usize,
    pub importance_period: usize,
    pub seed: u64,
}

impl Default for DeepOnetConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            adam: AdamConfig::default(),
            batch_size: 128,
            importance_period: 4,
            seed: 0,
        }
    }
}

impl DeepOnetConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.importance_period == 0 {
            return Err(Error::Argument(
                "batch size and importance period must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Branch/trunk pair of one state variable.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNet {
    pub branch: MlpNetwork,
    pub trunk: MlpNetwork,
    pub b0: f64,
}

impl OperatorNet {
    /// Normalized output for every (point, ψ) pair: `T Bᵀ + b_0`, shape
    /// `points × psi`.
    pub fn forward(&self, xn: ArrayView2<f64>, psin: ArrayView2<f64>) -> Result<Array2<f64>> {
        let t = self.trunk.forward_batch(xn)?;
        let b = self.branch.forward_batch(psin)?;
        if t.ncols() != b.ncols() {
            return Err(Error::Shape {
                expected: t.ncols(),
                got: b.ncols(),
            });
        }
        Ok(t.dot(&b.t()) + self.b0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepOnetModel {
    pub x_norm: ZmuvTransform,
    pub psi_norm: ZmuvTransform,
    /// One feature per state variable.
    pub out_norm: ZmuvTransform,
    pub nets: [OperatorNet; 4],
    pub train_machs: Vec<f64>,
}

impl DeepOnetModel {
    pub fn validate(&self) -> Result<()> {
        if self.x_norm.dim() != 2 || self.psi_norm.dim() != 1 || self.out_norm.dim() != 4 {
            return Err(Error::Data(
                "normalization dimensions do not match the model".into(),
            ));
        }
        for n in &self.nets {
            if n.trunk.input_dim() != 2
                || n.branch.input_dim() != 1
                || n.trunk.output_dim() != n.branch.output_dim()
            {
                return Err(Error::Data("branch and trunk latent widths differ".into()));
            }
        }
        Ok(())
    }

    pub fn latent(&self) -> usize {
        self.nets[0].trunk.output_dim()
    }

    pub fn normalize_points(&self, points: &[[f64; 2]]) -> Array2<f64> {
        Array2::from_shape_fn((points.len(), 2), |(r, k)| {
            self.x_norm.apply_scalar(k, points[r][k])
        })
    }

    fn normalize_machs(&self, machs: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((machs.len(), 1), |(d, _)| {
            self.psi_norm.apply_scalar(0, machs[d])
        })
    }

    /// Physical predictions of variable `v`, shape `points × machs`.
    pub fn forward_variable(
        &self,
        v: usize,
        points: &[[f64; 2]],
        machs: &[f64],
    ) -> Result<Array2<f64>> {
        let z = self.nets[v].forward(
            self.normalize_points(points).view(),
            self.normalize_machs(machs).view(),
        )?;
        Ok(z.mapv(|y| self.out_norm.invert_scalar(v, y)))
    }

    pub fn predict(&self, points: &[[f64; 2]], mach: f64) -> Result<StateField> {
        let cols = (0..4)
            .map(|v| self.forward_variable(v, points, &[mach]))
            .collect::<Result<Vec<_>>>()?;
        let states = (0..points.len())
            .map(|r| {
                PrimitiveState::new(
                    cols[0][[r, 0]],
                    cols[1][[r, 0]],
                    cols[2][[r, 0]],
                    cols[3][[r, 0]],
                )
            })
            .collect();
        Ok(StateField {
            mach,
            points: points.to_vec(),
            states,
        })
    }

    pub fn write_bundle(&self, dir: &Path, force: bool) -> Result<()> {
        self.validate()?;
        let manifest = Manifest {
            format: DEEPONET_MAGIC.into(),
            version: DEEPONET_VERSION,
            variables: Variable::ALL.iter().map(|v| v.name().to_string()).collect(),
            latent: self.latent(),
            train_machs: self.train_machs.clone(),
            x_norm: self.x_norm.clone(),
            psi_norm: self.psi_norm.clone(),
            out_norm: self.out_norm.clone(),
            b0: self.nets.iter().map(|n| n.b0).collect(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        io::write_artifact(&dir.join("manifest.toml"), text.as_bytes(), force)?;
        for (v, var) in Variable::ALL.iter().enumerate() {
            write_net(
                &dir.join(format!("branch_{}.nbf", var.name())),
                &self.nets[v].branch,
                force,
            )?;
            write_net(
                &dir.join(format!("trunk_{}.nbf", var.name())),
                &self.nets[v].trunk,
                force,
            )?;
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
        if m.format != DEEPONET_MAGIC || m.version != DEEPONET_VERSION {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "expected {DEEPONET_MAGIC} version {DEEPONET_VERSION}, found {} version {}",
                    m.format, m.version
                ),
            ));
        }
        if m.b0.len() != 4 {
            return Err(Error::format(&manifest_path, "expected four output biases"));
        }
        let load = |v: usize| -> Result<OperatorNet> {
            let name = Variable::ALL[v].name();
            Ok(OperatorNet {
                branch: read_net(&dir.join(format!("branch_{name}.nbf")))?,
                trunk: read_net(&dir.join(format!("trunk_{name}.nbf")))?,
                b0: m.b0[v],
            })
        };
        let model = Self {
            x_norm: m.x_norm,
            psi_norm: m.psi_norm,
            out_norm: m.out_norm,
            nets: [load(0)?, load(1)?, load(2)?, load(3)?],
            train_machs: m.train_machs,
        };
        model
            .validate()
            .map_err(|e| Error::format(dir, e.to_string()))?;
        if model.latent() != m.latent {
            return Err(Error::format(dir, "latent width differs from the manifest"));
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    variables: Vec<String>,
    latent: usize,
    train_machs: Vec<f64>,
    x_norm: ZmuvTransform,
    psi_norm: ZmuvTransform,
    out_norm: ZmuvTransform,
    b0: Vec<f64>,
}

/// Final normalized MSE per variable over all (point, ψ) training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepOnetReport {
    pub mse: [f64; 4],
}

/// Per-point sampling weights from the deviation of each snapshot from its
/// own spatial mean, summed over snapshots.
fn point_probs(w: &Array2<f64>) -> Vec<f64> {
    let means = w.mean_axis(Axis(0)).expect("non-empty snapshot matrix");
    let dev: Vec<f64> = w
        .axis_iter(Axis(0))
        .map(|row| row.iter().zip(&means).map(|(a, m)| (a - m).abs()).sum())
        .collect();
    importance_probs(&dev, 0.0)
}

fn training_error(name: &str, epoch: usize) -> Error {
    Error::Training {
        network: name.to_string(),
        epoch,
    }
}

pub fn train_deeponet(
    set: &SnapshotSet,
    arch: &DeepOnetArch,
    cfg: &DeepOnetConfig,
) -> Result<(DeepOnetModel, DeepOnetReport)> {
    arch.validate()?;
    cfg.validate()?;
    if set.num_snapshots() == 0 {
        return Err(Error::Argument(
            "DeepONet training needs at least one snapshot".into(),
        ));
    }
    let n = set.num_points();
    let pts = Array2::from_shape_fn((n, 2), |(r, k)| set.points[r][k]);
    let x_norm = ZmuvTransform::fit(pts.view(), DEFAULT_STD_FLOOR)?;
    let psi_norm = ZmuvTransform::fit_column(&set.params, DEFAULT_STD_FLOOR)?;
    let all: Vec<Array1<f64>> = (0..4)
        .map(|v| Array1::from_iter(set.data[v].iter().copied()))
        .collect();
    let out_norm = ZmuvTransform {
        mean: all.iter().map(|a| a.mean().unwrap_or(0.0)).collect(),
        std: all
            .iter()
            .map(|a| a.std(0.0).max(DEFAULT_STD_FLOOR))
            .collect(),
        epsilon_floor: DEFAULT_STD_FLOOR,
    };
    let xn = x_norm.apply_rows(pts.view());
    let psin = Array2::from_shape_fn((set.num_snapshots(), 1), |(d, _)| {
        psi_norm.apply_scalar(0, set.params[d])
    });

    let mut nets = Vec::with_capacity(4);
    let mut mse = [0.0; 4];
    for (v, var) in Variable::ALL.iter().enumerate() {
        let name = format!("deeponet[{}]", var.name());
        let z = set.data[v].mapv(|y| out_norm.apply_scalar(v, y));
        let probs = point_probs(&set.data[v]);
        let mut net = OperatorNet {
            branch: MlpNetwork::new(
                &arch.branch_sizes(),
                Activation::Tanh,
                derive_seed(cfg.seed, &[6, v as u64]),
            )?,
            trunk: MlpNetwork::new(
                &arch.trunk_sizes(),
                Activation::LeakyRelu(arch.leaky_slope),
                derive_seed(cfg.seed, &[7, v as u64]),
            )?,
            b0: 0.0,
        };
        fit_operator(
            &mut net,
            &name,
            xn.view(),
            psin.view(),
            z.view(),
            &probs,
            cfg,
            derive_seed(cfg.seed, &[8, v as u64]),
        )?;
        let pred = net.forward(xn.view(), psin.view())?;
        mse[v] = (&pred - &z).mapv(|e| e * e).mean().unwrap_or(0.0);
        if !mse[v].is_finite() {
            return Err(training_error(&name, cfg.epochs));
        }
        nets.push(net);
    }
    let [n0, n1, n2, n3]: [OperatorNet; 4] = nets.try_into().expect("four variables");
    let model = DeepOnetModel {
        x_norm,
        psi_norm,
        out_norm,
        nets: [n0, n1, n2, n3],
        train_machs: set.params.clone(),
    };
    Ok((model, DeepOnetReport { mse }))
}

/// Minibatch Adam on the normalized MSE. Each minibatch takes a set of grid
/// points paired with every training ψ, so the branch runs once per ψ.
#[allow(clippy::too_many_arguments)]
fn fit_operator(
    net: &mut OperatorNet,
    name: &str,
    xn: ArrayView2<f64>,
    psin: ArrayView2<f64>,
    z: ArrayView2<f64>,
    probs: &[f64],
    cfg: &DeepOnetConfig,
    seed: u64,
) -> Result<()> {
    let n = xn.nrows();
    let dist = weighted_index(probs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam_b = AdamState::new(cfg.adam, net.branch.num_params())?;
    let mut adam_t = AdamState::new(cfg.adam, net.trunk.num_params())?;
    let mut adam_0 = AdamState::new(cfg.adam, 1)?;
    for epoch in 0..cfg.epochs {
        adam_b.begin_epoch(epoch);
        adam_t.begin_epoch(epoch);
        adam_0.begin_epoch(epoch);
        let importance = (epoch + 1) % cfg.importance_period == 0;
        let order = epoch_order(n, importance.then_some(&dist), &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = xn.select(Axis(0), chunk);
            let zb = z.select(Axis(0), chunk);
            let tc = net
                .trunk
                .forward_cached(xb.view())
                .map_err(|_| training_error(name, epoch))?;
            let bc = net
                .branch
                .forward_cached(psin)
                .map_err(|_| training_error(name, epoch))?;
            let t = tc.output();
            let b = bc.output();
            let pred = t.dot(&b.t()) + net.b0;
            let scale = 2.0 / pred.len() as f64;
            let g = (pred - &zb).mapv(|e| scale * e);
            let gt = g.dot(b);
            let gb = g.t().dot(t);
            let g0 = g.sum();
            let grad_t = net.trunk.backward(&tc, gt.view());
            let grad_b = net.branch.backward(&bc, gb.view());
            if !g0.is_finite() {
                return Err(training_error(name, epoch));
            }
            adam_t
                .step(net.trunk.params_mut(), &grad_t)
                .map_err(|_| training_error(name, epoch))?;
            adam_b
                .step(net.branch.params_mut(), &grad_b)
                .map_err(|_| training_error(name, epoch))?;
            let mut b0 = [net.b0];
            adam_0
                .step(&mut b0, &[g0])
                .map_err(|_| training_error(name, epoch))?;
            net.b0 = b0[0];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_model(q: usize, seed: u64) -> DeepOnetModel {
        let arch = DeepOnetArch {
            branch_width: 7,
            branch_depth: 2,
            trunk_width: 6,
            trunk_depth: 3,
            latent: q,
            leaky_slope: 0.01,
        };
        let net = |v: u64| OperatorNet {
            branch: MlpNetwork::new(&arch.branch_sizes(), Activation::Tanh, seed + v).unwrap(),
            trunk: MlpNetwork::new(
                &arch.trunk_sizes(),
                Activation::LeakyRelu(0.01),
                seed + 10 + v,
            )
            .unwrap(),
            b0: 0.1 * v as f64 - 0.2,
        };
        DeepOnetModel {
            x_norm: ZmuvTransform {
                mean: vec![-1.0, 2.0],
                std: vec![0.5, 2.0],
                epsilon_floor: DEFAULT_STD_FLOOR,
            },
            psi_norm: ZmuvTransform {
                mean: vec![20.0],
                std: vec![6.0],
                epsilon_floor: DEFAULT_STD_FLOOR,
            },
            out_norm: ZmuvTransform {
                mean: vec![3.0, -1.0, 0.5, 40.0],
                std: vec![2.0, 4.0, 1.5, 10.0],
                epsilon_floor: DEFAULT_STD_FLOOR,
            },
            nets: [net(0), net(1), net(2), net(3)],
            train_machs: vec![10.0, 30.0],
        }
    }

    #[test]
    fn forward_matches_explicit_sum() {
        let model = random_model(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<[f64; 2]> = (0..9)
            .map(|_| [rng.gen_range(-4.0..0.0), rng.gen_range(0.0..4.0)])
            .collect();
        let mach = 17.5;
        let field = model.predict(&points, mach).unwrap();
        for v in 0..4 {
            let net = &model.nets[v];
            let b = net.branch.forward(&[(mach - 20.0) / 6.0]).unwrap();
            for (r, p) in points.iter().enumerate() {
                let t = net
                    .trunk
                    .forward(&[(p[0] + 1.0) / 0.5, (p[1] - 2.0) / 2.0])
                    .unwrap();
                let mut s = net.b0;
                for j in 0..5 {
                    s += b[j] * t[j];
                }
                let want = model.out_norm.mean[v] + model.out_norm.std[v] * s;
                let got = field.states[r].to_array()[v];
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                    "{got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn single_latent_product_reproduces_coordinate() {
        let mut model = random_model(1, 0);
        let net = &mut model.nets[0];
        net.branch = MlpNetwork::zeros(&[1, 3, 1], Activation::Tanh).unwrap();
        net.branch.bias_mut(1)[0] = 1.0;
        net.trunk = MlpNetwork::zeros(&[2, 1], Activation::LeakyRelu(0.01)).unwrap();
        net.trunk.weight_mut(0)[[0, 0]] = 1.0;
        net.b0 = 0.0;
        model.x_norm = ZmuvTransform::identity(2);
        model.out_norm = ZmuvTransform::identity(4);
        let pts = [[-2.5, 1.0], [0.3, 0.0]];
        let f = model.forward_variable(0, &pts, &[12.0]).unwrap();
        assert_eq!(f[[0, 0]], -2.5);
        assert_eq!(f[[1, 0]], 0.3);
    }

    #[test]
    fn zero_branch_gives_denormalized_bias() {
        let mut model = random_model(4, 5);
        model.nets[2].branch = MlpNetwork::zeros(&[1, 7, 4], Activation::Tanh).unwrap();
        let f = model
            .forward_variable(2, &[[-1.0, 1.0], [-3.0, 0.2]], &[11.0, 29.0])
            .unwrap();
        let want = 0.5 + 1.5 * model.nets[2].b0;
        assert!(f.iter().all(|&y| (y - want).abs() < 1e-15));
    }

    #[test]
    fn bundle_round_trip() {
        let model = random_model(3, 9);
        let dir = tempfile::tempdir().unwrap();
        model.write_bundle(dir.path(), false).unwrap();
        let back = DeepOnetModel::read_bundle(dir.path()).unwrap();
        assert_eq!(back, model);
        let missing = DeepOnetModel::read_bundle(&dir.path().join("nope")).unwrap_err();
        assert!(missing.to_string().contains("model bundle not found"));
    }
}
