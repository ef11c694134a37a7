//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line on stderr; the test fails if any criterion does.
//!
//! Run with `cargo test --release -p nbf-lab --test acceptance`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nbf_core::autodiff::{Activation, HalfSquaredError, Loss, MlpNetwork};
use nbf_core::config::PipelineConfig;
use nbf_core::euler::{flux_f1, flux_f2, normal_flux, pressure, GasConstants, PrimitiveState};
use nbf_core::eval::{ablation, accelerate, mach_sweep_eval, median, ModelKind, Split};
use nbf_core::field::Variable;
use nbf_core::fv::{
    freestream_field, rusanov_flux, solve_steady, stagnation_density_ratio, to_conservative, BoundaryMode, FvSolver,
};
use nbf_core::nbf::NbfModel;
use nbf_core::pipeline::Pipeline;
use nbf_core::pod::{compute_pod_matrix, SnapshotSet};
use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn within(d: Duration, limit: Duration) -> Result<(), String> {
    ensure(d <= limit, || format!("took {} (limit {})", secs(d), secs(limit)))
}

fn gas() -> GasConstants {
    GasConstants::default()
}

fn random_net(rng: &mut ChaCha8Rng, seed: u64) -> MlpNetwork {
    let mut sizes = vec![rng.gen_range(1..4)];
    for _ in 0..rng.gen_range(1..4) {
        sizes.push(rng.gen_range(2..7));
    }
    sizes.push(rng.gen_range(1..4));
    let act = if rng.gen_bool(0.5) { Activation::Tanh } else { Activation::LeakyRelu(0.1) };
    MlpNetwork::new(&sizes, act, seed).unwrap()
}

fn batch_loss(net: &MlpNetwork, x: &Array2<f64>, t: &Array2<f64>) -> f64 {
    let y = net.forward_batch(x.view()).unwrap();
    let mut g = Array1::zeros(net.output_dim());
    let total: f64 = y.outer_iter().zip(t.outer_iter()).map(|(yr, tr)| HalfSquaredError.eval(yr, tr, g.view_mut())).sum();
    total / x.nrows() as f64
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

fn autodiff_suite() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let mut net = random_net(&mut rng, k);
        let batch = rng.gen_range(1..6);
        let x = Array2::from_shape_fn((batch, net.input_dim()), |_| rng.gen_range(-1.5..1.5));
        let t = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.gen_range(-1.5..1.5));
        let (_, grad) = net.param_grad(&HalfSquaredError, x.view(), t.view()).unwrap();
        for p in 0..net.num_params() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let up = batch_loss(&net, &x, &t);
            net.params_mut()[p] = orig - h;
            let down = batch_loss(&net, &x, &t);
            net.params_mut()[p] = orig;
            worst = worst.max(rel_gap(grad[p], (up - down) / (2.0 * h)));
        }
        let x0 = x.row(0).to_vec();
        let jac = net.input_jacobian(&x0).unwrap();
        for i in 0..x0.len() {
            let (mut xp, mut xm) = (x0.clone(), x0.clone());
            xp[i] += h;
            xm[i] -= h;
            let (yp, ym) = (net.forward(&xp).unwrap(), net.forward(&xm).unwrap());
            for o in 0..net.output_dim() {
                worst = worst.max(rel_gap(jac[(o, i)], (yp[o] - ym[o]) / (2.0 * h)));
            }
        }
    }
    ensure(worst <= 1e-5, || format!("worst relative gap {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("100 networks, worst gap {worst:.1e}, {}", secs(start.elapsed())))
}

fn pod_suite() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut ortho, mut energy, mut tail, mut recon) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let w = Array2::from_shape_fn((50, 10), |_| rng.gen_range(-1.0..1.0));
        let b = compute_pod_matrix(Variable::Rho, &w, 10).unwrap();
        let g = b.modes.t().dot(&b.modes);
        for ((i, j), v) in g.indexed_iter() {
            ortho = ortho.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
        ensure(b.sigma.windows(2).into_iter().all(|p| p[1] <= p[0]), || "singular values increase".into())?;
        let c = &w - &w.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let total: f64 = c.iter().map(|x| x * x).sum();
        let e: f64 = b.sigma.iter().map(|x| x * x).sum();
        energy = energy.max((e - total).abs() / total);
        for k in 1..=10 {
            let u = b.modes.slice(s![.., ..k]).to_owned();
            let resid = &c - &u.dot(&u.t().dot(&c));
            let err: f64 = resid.iter().map(|x| x * x).sum();
            tail = tail.max((err - b.truncation_error_bound(k).unwrap()).abs());
        }
        for col in w.columns() {
            let back = b.reconstruct(b.project(col).unwrap().view()).unwrap();
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            recon = recon.max((&back - &col).iter().map(|x| x * x).sum::<f64>().sqrt() / norm);
        }
    }
    ensure(ortho <= 1e-10, || format!("orthonormality defect {ortho:e}"))?;
    ensure(energy <= 1e-10, || format!("energy identity gap {energy:e}"))?;
    ensure(tail <= 1e-10, || format!("truncation error vs bound {tail:e}"))?;
    ensure(recon <= 1e-10, || format!("full-rank reconstruction {recon:e}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "20 matrices 50x10, ortho {ortho:.1e}, energy {energy:.1e}, tail {tail:.1e}, recon {recon:.1e}, {}",
        secs(start.elapsed())
    ))
}

fn close12(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0))
}

fn euler_suite(cfg: &PipelineConfig) -> Check {
    let g = gas();
    let w = PrimitiveState::new(1.0, 2.0, 3.0, 10.0);
    ensure((pressure(&w, &g) - 1.4).abs() <= 1e-12, || "hand pressure".into())?;
    ensure(close12(&flux_f1(&w, &g), &[2.0, 5.4, 6.0, 22.8]), || "hand F1".into())?;
    ensure(close12(&flux_f2(&w, &g), &[3.0, 6.0, 10.4, 34.2]), || "hand F2".into())?;
    let rest = PrimitiveState::new(1.0, 0.0, 0.0, 2.5);
    ensure(close12(&flux_f1(&rest, &g), &[0.0, 1.0, 0.0, 0.0]), || "rest-state F1".into())?;
    ensure(close12(&rusanov_flux(&rest, &rest, [1.0, 0.0], &g).unwrap(), &[0.0, 1.0, 0.0, 0.0]), || {
        "rest-state Rusanov flux".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let w = PrimitiveState::from_pressure(
            rng.gen_range(0.05..10.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(0.1..1e3),
            &g,
        );
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let n = [t.cos(), t.sin()];
        ensure(rusanov_flux(&w, &w, n, &g).unwrap() == normal_flux(&w, n, &g), || format!("Rusanov inconsistent at {w:?}"))?;
    }

    let pipe = Pipeline::new(cfg.clone(), false, 1).map_err(|e| e.to_string())?;
    let grid = &pipe.grid;
    let mut solver = FvSolver::new(grid, g, 25.0).with_boundary_mode(BoundaryMode::Farfield);
    let mut cons = to_conservative(&freestream_field(grid, 25.0, &g));
    let mut worst = 0.0f64;
    for iter in 0..20 {
        worst = worst.max(solver.time_step(&mut cons, iter, &cfg.solver).unwrap());
    }
    ensure(worst <= 1e-12, || format!("freestream residual {worst:e}"))?;

    let mut ratios = Vec::new();
    for m in [10.0, 20.0, 30.0] {
        let start = Instant::now();
        let sol = solve_steady(&freestream_field(grid, m, &g), grid, &cfg.solver, m, &g).map_err(|e| e.to_string())?;
        within(start.elapsed(), Duration::from_secs(600))?;
        let ratio = stagnation_density_ratio(grid, &sol.field.states, 0.05).ok_or("no shock on the stagnation line")?;
        let m2 = m * m;
        let exact = (g.gamma + 1.0) * m2 / ((g.gamma - 1.0) * m2 + 2.0);
        let dev = (ratio - exact).abs() / exact;
        ensure(dev <= 0.1, || format!("Mach {m}: ratio {ratio:.3} vs {exact:.3}"))?;
        ratios.push(format!("M{m} {ratio:.3}/{exact:.3} in {}", secs(start.elapsed())));
    }
    Ok(format!("freestream residual {worst:.1e}; density ratios {}", ratios.join(", ")))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn snapshot_generation(cfg: &PipelineConfig, root: &Path) -> Check {
    let start = Instant::now();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let dir = root.join(name);
        let _ = std::fs::remove_dir_all(&dir);
        let pipe = Pipeline::new(PipelineConfig { out_dir: dir.clone(), ..cfg.clone() }, false, 1).map_err(|e| e.to_string())?;
        pipe.generate_data().map_err(|e| e.to_string())?;
        trees.push(tree(&dir));
    }
    let snaps = trees[0].keys().filter(|p| p.extension().is_some_and(|e| e == "snap")).count();
    ensure(snaps == 21, || format!("{snaps} snapshots"))?;
    ensure(trees[0] == trees[1], || "repeated generation differs".into())?;
    ensure(cfg.sweep.holdout == [25.0], || format!("holdout {:?}", cfg.sweep.holdout))?;
    Ok(format!("21 snapshots identical across two runs, holdout Mach 25, {}", secs(start.elapsed())))
}

fn nbf_quality(pipe: &Pipeline, all: &SnapshotSet) -> Result<(String, NbfModel), String> {
    let start = Instant::now();
    ensure(pipe.cfg.nbf.n_bf == 20, || format!("n_bf {}", pipe.cfg.nbf.n_bf))?;
    ensure(pipe.training_set(all).num_snapshots() == 20, || "training set is not 20 snapshots".into())?;
    pipe.pod().map_err(|e| e.to_string())?;
    pipe.train_basis().map_err(|e| e.to_string())?;
    pipe.train_unknowns().map_err(|e| e.to_string())?;
    let model = pipe.load_nbf().map_err(|e| e.to_string())?;
    let report = mach_sweep_eval(&model, all, &[25.0], model.n_bf, pipe.cfg.seed).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut bad = Vec::new();
    for var in Variable::ALL {
        let test = report.errors(Split::Test, var)[0];
        let train = median(&report.errors(Split::Train, var));
        parts.push(format!("{} {test:.2e}/{train:.2e}", var.name()));
        if test > 3.0 * train {
            bad.push(var.name());
        }
    }
    let detail = format!("Mach 25 vs training median: {}; {}", parts.join(", "), secs(start.elapsed()));
    ensure(bad.is_empty(), || format!("{detail}; exceeded for {bad:?}"))?;
    Ok((detail, model))
}

fn ablation_ordering(pipe: &Pipeline, all: &SnapshotSet) -> Check {
    let start = Instant::now();
    let table = ablation(
        all,
        &pipe.cfg.sweep.holdout,
        &[5],
        &[0, 1, 2],
        &[ModelKind::Nbf, ModelKind::DeepOnet],
        1,
        |kind, set, seed| pipe.fit_surrogate(kind, set, seed),
    )
    .map_err(|e| e.to_string())?;
    let summary = table.summary();
    let get = |k: ModelKind| summary.iter().find(|s| s.model == k && s.size == 5).map(|s| s.median);
    let (nbf, don) = (get(ModelKind::Nbf).ok_or("no NBF row")?, get(ModelKind::DeepOnet).ok_or("no DeepONet row")?);
    let detail = format!("size 5, 3 seeds: NBF {nbf:.3e}, DeepONet {don:.3e}, {}", secs(start.elapsed()));
    within(start.elapsed(), Duration::from_secs(7200))?;
    ensure(nbf <= don, || detail.clone())?;
    Ok(detail)
}

fn acceleration_ordering(pipe: &Pipeline, model: &NbfModel) -> Check {
    let mut parts = Vec::new();
    for m in [25.0, 15.0] {
        let r = accelerate(model, m, &pipe.grid, &pipe.cfg.solver, &pipe.cfg.gas, None).map_err(|e| e.to_string())?;
        let fs = r.freestream.converged_at.ok_or(format!("Mach {m}: freestream run did not converge"))?;
        let warm = r.nbf.converged_at.ok_or(format!("Mach {m}: NBF run did not converge"))?;
        let line = format!("Mach {m}: NBF {warm} vs freestream {fs}");
        ensure(warm < fs, || line.clone())?;
        parts.push(line);
    }
    Ok(parts.join(", "))
}

const REDUCED: &str = r#"
[grid]
nr = 16
ntheta = 12
r_outer = 4.0
[sweep]
mach_min = 10.0
mach_max = 15.0
step = 1.0
holdout = [13.0]
[nbf]
n_bf = 4
[nbf.train]
epochs = 5
physics_epochs = 2
[nbf.arch]
basis_width = 10
basis_depth = 2
unknowns_width = 8
unknowns_depth = 2
[deeponet.train]
epochs = 5
[deeponet.arch]
branch_width = 8
branch_depth = 2
trunk_width = 10
trunk_depth = 2
latent = 6
[ablation]
sizes = [2, 5]
seeds = 2
[accel]
machs = [13.0]
"#;

fn pipeline_determinism(root: &Path) -> Check {
    let start = Instant::now();
    let cfg = root.join("reduced.toml");
    std::fs::write(&cfg, REDUCED).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for name in ["run1", "run2"] {
        let dir = root.join(name);
        let _ = std::fs::remove_dir_all(&dir);
        let out = Command::new(env!("CARGO_BIN_EXE_nbf-lab"))
            .args(["pipeline", "--seed", "7", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(&dir)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        trees.push(tree(&dir));
    }
    ensure(trees[0] == trees[1], || "artifact trees differ".into())?;
    Ok(format!("{} files identical across two runs, {}", trees[0].len(), secs(start.elapsed())))
}

fn record(results: &mut Vec<bool>, n: usize, title: &str, check: impl FnOnce() -> Check) {
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let line = match &outcome {
        Ok(d) => format!("criterion {n} PASS {title}: {d}"),
        Err(d) => format!("criterion {n} FAIL {title}: {d}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    results.push(outcome.is_ok());
}

#[test]
fn acceptance() {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&root).unwrap();
    let cfg = PipelineConfig { out_dir: root.join("a"), ..PipelineConfig::default() };
    let mut results = Vec::new();

    record(&mut results, 1, "autodiff", autodiff_suite);
    record(&mut results, 2, "pod", pod_suite);
    record(&mut results, 3, "euler/fv", || euler_suite(&cfg));
    record(&mut results, 4, "snapshot generation", || snapshot_generation(&cfg, &root));

    let pipe = Pipeline::new(cfg.clone(), true, 1).unwrap();
    let all = pipe.load_snapshots();
    let mut model = None;
    record(&mut results, 5, "nbf quality", || {
        let all = all.as_ref().map_err(|e| e.to_string())?;
        let (d, m) = nbf_quality(&pipe, all)?;
        model = Some(m);
        Ok(d)
    });
    record(&mut results, 6, "ablation ordering", || ablation_ordering(&pipe, all.as_ref().map_err(|e| e.to_string())?));
    record(&mut results, 7, "acceleration ordering", || {
        acceleration_ordering(&pipe, model.as_ref().ok_or("no trained NBF model")?)
    });
    record(&mut results, 8, "determinism", || pipeline_determinism(&root));

    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
