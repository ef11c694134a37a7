use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{BasisEval, NbfModel, TrainConfig};
use crate::autodiff::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::euler::{
    flux_jacobians, freestream_state, interior_residual_state_derivative, BoundaryTag, NondimScales,
};
use crate::fv::Face;
use crate::pod::SnapshotSet;
use crate::train::{derive_seed, weighted_index};

/// Everything the physics loss needs that does not change while the
/// unknowns networks train: basis values and derivatives at the collocation
/// points, the mean field, boundary data and the nondimensional P/T targets.
#[derive(Debug, Clone)]
pub struct CollocationSet {
    pub points: Vec<[f64; 2]>,
    pub basis: BasisEval,
    pub mean: Array2<f64>,
    pub mean_dx: Array2<f64>,
    pub mean_dy: Array2<f64>,
    /// Sampling weights over `points`.
    pub probs: Vec<f64>,
    pub boundary_tags: Vec<BoundaryTag>,
    pub boundary_normals: Vec<[f64; 2]>,
    pub boundary_phi: [Array2<f64>; 4],
    pub boundary_mean: Array2<f64>,
    pub machs: Vec<f64>,
    /// Per training snapshot: nondimensional pressure and temperature at
    /// every collocation point (`n × 2`).
    pub pt_targets: Vec<Array2<f64>>,
    pub scales: NondimScales,
}

impl CollocationSet {
    /// Uses the snapshot points as interior collocation points and the face
    /// midpoints of `boundary` as boundary points. Interior points are
    /// weighted by the nondimensional deviation of the training snapshots
    /// from the mean flow.
    pub fn build(
        model: &NbfModel,
        set: &SnapshotSet,
        boundary: &[(BoundaryTag, Face)],
    ) -> Result<Self> {
        let gas = model.gas;
        let scales = NondimScales::freestream(&gas);
        let n = set.num_points();
        let basis = model.basis_eval(&set.points)?;
        let mut mean = Array2::zeros((n, 4));
        let mut mean_dx = Array2::zeros((n, 4));
        let mut mean_dy = Array2::zeros((n, 4));
        for (r, &p) in set.points.iter().enumerate() {
            let (v, g) = model.mean.eval(p);
            for k in 0..4 {
                mean[[r, k]] = v[k];
                mean_dx[[r, k]] = g[k][0];
                mean_dy[[r, k]] = g[k][1];
            }
        }
        let mut probs = vec![0.0; n];
        for v in 0..4 {
            for d in 0..set.num_snapshots() {
                for r in 0..n {
                    probs[r] += (set.data[v][[r, d]] - mean[[r, v]]).abs() / scales.state[v];
                }
            }
        }
        let total: f64 = probs
            .iter()
            .map(|p| p + crate::train::IMPORTANCE_FLOOR)
            .sum();
        probs
            .iter_mut()
            .for_each(|p| *p = (*p + crate::train::IMPORTANCE_FLOOR) / total);

        let bpoints: Vec<[f64; 2]> = boundary.iter().map(|(_, f)| f.midpoint).collect();
        let boundary_phi = model.basis_values(&bpoints)?;
        let boundary_mean = model.mean_values(&bpoints);

        let gamma = gas.gamma;
        let pt_targets = (0..set.num_snapshots())
            .map(|d| {
                Array2::from_shape_fn((n, 2), |(r, k)| {
                    let w = [0, 1, 2, 3].map(|v| set.data[v][[r, d]] / scales.state[v]);
                    let p = (gamma - 1.0) * (w[3] - 0.5 * w[0] * (w[1] * w[1] + w[2] * w[2]));
                    if k == 0 {
                        p
                    } else {
                        gamma * p / w[0]
                    }
                })
            })
            .collect();
        Ok(Self {
            points: set.points.clone(),
            basis,
            mean,
            mean_dx,
            mean_dy,
            probs,
            boundary_tags: boundary.iter().map(|(t, _)| *t).collect(),
            boundary_normals: boundary.iter().map(|(_, f)| f.normal).collect(),
            boundary_phi,
            boundary_mean,
            machs: set.params.clone(),
            pt_targets,
            scales,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhysicsTerms {
    pub pde: f64,
    pub bc: f64,
    pub pt: f64,
    pub total: f64,
}

/// Loss of the current model at one training Mach number, with its
/// gradient with respect to the coefficients `C_ij`.
#[derive(Debug, Clone)]
pub struct PhysicsLoss {
    pub terms: PhysicsTerms,
    pub dcoeff: [Array1<f64>; 4],
}

/// Evaluates the weighted physics loss at snapshot `d` over the interior
/// points `batch` and all boundary points, given coefficients `c`.
pub fn physics_loss(
    colloc: &CollocationSet,
    cfg: &TrainConfig,
    gamma: f64,
    d: usize,
    batch: &[usize],
    c: &[Array1<f64>; 4],
) -> Result<PhysicsLoss> {
    let s = colloc.scales.state;
    let nb = batch.len().max(1) as f64;
    let bsel = |m: &Array2<f64>| m.select(Axis(0), batch);
    let mut w = Array2::zeros((batch.len(), 4));
    let mut wx = Array2::zeros((batch.len(), 4));
    let mut wy = Array2::zeros((batch.len(), 4));
    let mut phis = Vec::with_capacity(4);
    for v in 0..4 {
        let phi = bsel(&colloc.basis.phi[v]);
        let px = bsel(&colloc.basis.dphi_dx[v]);
        let py = bsel(&colloc.basis.dphi_dy[v]);
        let mv = colloc.mean.column(v).select(Axis(0), batch);
        let mx = colloc.mean_dx.column(v).select(Axis(0), batch);
        let my = colloc.mean_dy.column(v).select(Axis(0), batch);
        w.column_mut(v).assign(&((&mv + &phi.dot(&c[v])) / s[v]));
        wx.column_mut(v).assign(&((&mx + &px.dot(&c[v])) / s[v]));
        wy.column_mut(v).assign(&((&my + &py.dot(&c[v])) / s[v]));
        phis.push((phi, px, py));
    }

    let mut gw = Array2::<f64>::zeros((batch.len(), 4));
    let mut gwx = Array2::<f64>::zeros((batch.len(), 4));
    let mut gwy = Array2::<f64>::zeros((batch.len(), 4));
    let mut terms = PhysicsTerms::default();
    let targets = &colloc.pt_targets[d];
    for (b, &l) in batch.iter().enumerate() {
        let wl = [w[[b, 0]], w[[b, 1]], w[[b, 2]], w[[b, 3]]];
        let wxl = [wx[[b, 0]], wx[[b, 1]], wx[[b, 2]], wx[[b, 3]]];
        let wyl = [wy[[b, 0]], wy[[b, 1]], wy[[b, 2]], wy[[b, 3]]];
        let (r, dr) = interior_residual_state_derivative(wl, wxl, wyl, gamma);
        let (a1, a2) = flux_jacobians(wl, gamma);
        let rr: f64 = r.iter().map(|x| x * x).sum();

        let g1 = gamma - 1.0;
        let [rho, u, v, e] = wl;
        let p = g1 * (e - 0.5 * rho * (u * u + v * v));
        let t = gamma * p / rho;
        let dp = [
            -0.5 * g1 * (u * u + v * v),
            -g1 * rho * u,
            -g1 * rho * v,
            g1,
        ];
        let dt = [
            gamma * (dp[0] * rho - p) / (rho * rho),
            gamma * dp[1] / rho,
            gamma * dp[2] / rho,
            gamma * dp[3] / rho,
        ];
        let (ep, et) = (p - targets[[l, 0]], t - targets[[l, 1]]);
        if !(rr.is_finite() && ep.is_finite() && et.is_finite()) {
            let x = colloc.points[l];
            return Err(Error::NonFinite {
                index: l,
                what: format!(
                    "physics residual at Mach {} and x = ({}, {})",
                    colloc.machs[d], x[0], x[1]
                ),
            });
        }
        terms.pde += rr / nb;
        terms.pt += (ep * ep + et * et) / nb;
        for m in 0..4 {
            let mut acc_w = 0.0;
            let mut acc_x = 0.0;
            let mut acc_y = 0.0;
            for k in 0..4 {
                let gr = cfg.lambda_pde * 2.0 * r[k] / nb;
                acc_w += gr * dr[k][m];
                acc_x += gr * a1[k][m];
                acc_y += gr * a2[k][m];
            }
            acc_w += cfg.lambda_pt * 2.0 * (ep * dp[m] + et * dt[m]) / nb;
            gw[[b, m]] = acc_w;
            gwx[[b, m]] = acc_x;
            gwy[[b, m]] = acc_y;
        }
    }

    let mut dcoeff: [Array1<f64>; 4] = [0, 1, 2, 3].map(|v| {
        let (phi, px, py) = &phis[v];
        (phi.t().dot(&gw.column(v)) + px.t().dot(&gwx.column(v)) + py.t().dot(&gwy.column(v)))
            / s[v]
    });

    // boundary conditions at every boundary point
    let nbd = colloc.boundary_tags.len();
    if nbd > 0 {
        let inflow = freestream_state(
            colloc.machs[d],
            &crate::euler::GasConstants {
                gamma,
                ..Default::default()
            },
        )
        .to_array();
        let wb: Vec<Array1<f64>> = (0..4)
            .map(|v| (&colloc.boundary_mean.column(v) + &colloc.boundary_phi[v].dot(&c[v])) / s[v])
            .collect();
        let mut gb = Array2::<f64>::zeros((nbd, 4));
        for (q, tag) in colloc.boundary_tags.iter().enumerate() {
            match tag {
                BoundaryTag::Inflow => {
                    for v in 0..4 {
                        let e = wb[v][q] - inflow[v] / s[v];
                        terms.bc += e * e / nbd as f64;
                        gb[[q, v]] = cfg.lambda_bc * 2.0 * e / nbd as f64;
                    }
                }
                BoundaryTag::Wall | BoundaryTag::Symmetry => {
                    let n = colloc.boundary_normals[q];
                    let e = wb[1][q] * n[0] + wb[2][q] * n[1];
                    terms.bc += e * e / nbd as f64;
                    gb[[q, 1]] = cfg.lambda_bc * 2.0 * e * n[0] / nbd as f64;
                    gb[[q, 2]] = cfg.lambda_bc * 2.0 * e * n[1] / nbd as f64;
                }
                BoundaryTag::Outflow => {}
            }
        }
        for v in 0..4 {
            dcoeff[v] = &dcoeff[v] + &(colloc.boundary_phi[v].t().dot(&gb.column(v)) / s[v]);
        }
    }
    terms.total = cfg.lambda_pde * terms.pde + cfg.lambda_bc * terms.bc + cfg.lambda_pt * terms.pt;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite {
            index: d,
            what: format!("physics loss at Mach {}", colloc.machs[d]),
        });
    }
    Ok(PhysicsLoss { terms, dcoeff })
}

/// Loss over every collocation point and training Mach number, unweighted.
pub fn full_physics_loss(
    model: &NbfModel,
    colloc: &CollocationSet,
    cfg: &TrainConfig,
) -> Result<PhysicsTerms> {
    let all: Vec<usize> = (0..colloc.points.len()).collect();
    let mut acc = PhysicsTerms::default();
    let nd = colloc.machs.len() as f64;
    for (d, &mach) in colloc.machs.iter().enumerate() {
        let c = model.coefficients(mach)?;
        let t = physics_loss(colloc, cfg, model.gas.gamma, d, &all, &c)?.terms;
        acc.pde += t.pde / nd;
        acc.bc += t.bc / nd;
        acc.pt += t.pt / nd;
        acc.total += t.total / nd;
    }
    Ok(acc)
}

/// Backpropagates `dL/dC` through every unknowns network at Mach `mach`,
/// returning per-network parameter gradients.
pub fn coefficient_backprop(
    model: &NbfModel,
    mach: f64,
    dcoeff: &[Array1<f64>; 4],
) -> Result<[Vec<Vec<f64>>; 4]> {
    let psi = Array2::from_elem((1, 1), model.normalize_mach(mach));
    let mut out: [Vec<Vec<f64>>; 4] = Default::default();
    for v in 0..4 {
        for (j, net) in model.unknowns[v].iter().enumerate() {
            let cache = net.net.forward_cached(psi.view())?;
            let g = Array2::from_elem((1, 1), dcoeff[v][j] * net.out_std);
            out[v].push(net.net.backward(&cache, g.view()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsReport {
    /// Full-data loss before training and after every completed epoch.
    pub history: Vec<PhysicsTerms>,
    /// Training-set P/T error of the pretrained model and the final model.
    pub pt_before: f64,
    pub pt_after: f64,
    /// Set when an epoch pushed the P/T error past ten times its pretrained
    /// value; that epoch's weights were discarded.
    pub stopped_early: bool,
}

/// Ratio of the P/T error at which physics training is cut off.
pub const PT_GUARD_FACTOR: f64 = 10.0;

/// Fine-tunes the unknowns networks on the physics loss with the basis
/// networks frozen. ψ is drawn from the training Mach numbers only.
pub fn physics_train_unknowns(
    model: &mut NbfModel,
    colloc: &CollocationSet,
    cfg: &TrainConfig,
) -> Result<PhysicsReport> {
    cfg.validate()?;
    let dist = weighted_index(&colloc.probs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[5]));
    let adam_cfg = AdamConfig {
        lr: cfg.physics_lr,
        ..cfg.adam
    };
    let mut adams: [Vec<AdamState>; 4] = Default::default();
    for v in 0..4 {
        for net in &model.unknowns[v] {
            adams[v].push(AdamState::new(adam_cfg, net.net.num_params())?);
        }
    }
    let start = full_physics_loss(model, colloc, cfg)?;
    let mut report = PhysicsReport {
        history: vec![start],
        pt_before: start.pt,
        pt_after: start.pt,
        stopped_early: false,
    };
    let gamma = model.gas.gamma;
    for epoch in 0..cfg.physics_epochs {
        let saved = model.unknowns.clone();
        adams
            .iter_mut()
            .flatten()
            .for_each(|a| a.begin_epoch(epoch));
        let mut order: Vec<usize> = (0..colloc.machs.len()).collect();
        order.shuffle(&mut rng);
        for d in order {
            let batch: Vec<usize> = (0..cfg.collocation_batch)
                .map(|_| dist.sample(&mut rng))
                .collect();
            let mach = colloc.machs[d];
            let c = model.coefficients(mach)?;
            let loss = physics_loss(colloc, cfg, gamma, d, &batch, &c)?;
            let grads = coefficient_backprop(model, mach, &loss.dcoeff)?;
            for v in 0..4 {
                for (j, g) in grads[v].iter().enumerate() {
                    adams[v][j]
                        .step(model.unknowns[v][j].net.params_mut(), g)
                        .map_err(|_| Error::Training {
                            network: format!(
                                "C[{},{j}] physics",
                                crate::field::Variable::ALL[v].name()
                            ),
                            epoch,
                        })?;
                }
            }
        }
        let terms = full_physics_loss(model, colloc, cfg)?;
        if terms.pt > PT_GUARD_FACTOR * report.pt_before {
            model.unknowns = saved;
            report.stopped_early = true;
            log::warn!("physics epoch {epoch} raised the P/T error to {:.3e}; keeping the previous weights", terms.pt);
            break;
        }
        report.pt_after = terms.pt;
        report.history.push(terms);
        log::debug!("physics epoch {epoch}: {terms:?}");
    }
    Ok(report)
}
