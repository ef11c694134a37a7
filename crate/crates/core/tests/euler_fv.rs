use nbf_core::euler::{
    flux_f1, flux_f1_generic, flux_f2, flux_f2_generic, flux_jacobians, freestream_state, interior_residual,
    mach_number, normal_flux, pressure, temperature, ConservativeState, GasConstants, PrimitiveState,
};
use nbf_core::fv::{
    freestream_field, minmod, minmod_reconstruct, residual_metric, rusanov_flux, solve_steady,
    solve_steady_with_reference, stagnation_density_ratio, to_conservative, BoundaryMode, FvSolver, GridSpec,
    SolverConfig, StructuredGrid,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gas() -> GasConstants {
    GasConstants::default()
}

fn state() -> impl Strategy<Value = PrimitiveState> {
    (0.05f64..10.0, -50.0f64..50.0, -50.0f64..50.0, 0.1f64..1e3).prop_map(|(rho, u, v, p)| {
        PrimitiveState::from_pressure(rho, u, v, p, &gas())
    })
}

fn unit_normal() -> impl Strategy<Value = [f64; 2]> {
    (0.0f64..std::f64::consts::TAU).prop_map(|t| [t.cos(), t.sin()])
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0), "{a:?} vs {b:?}");
    }
}

#[test]
fn hand_evaluated_fluxes() {
    let w = PrimitiveState::new(1.0, 2.0, 3.0, 10.0);
    assert!((pressure(&w, &gas()) - 1.4).abs() < 1e-12);
    assert_close(&flux_f1(&w, &gas()), &[2.0, 5.4, 6.0, 22.8], 1e-12);
    assert_close(&flux_f2(&w, &gas()), &[3.0, 6.0, 10.4, 34.2], 1e-12);

    let rest = PrimitiveState::new(1.0, 0.0, 0.0, 2.5);
    assert_close(&flux_f1(&rest, &gas()), &[0.0, 1.0, 0.0, 0.0], 1e-12);
    assert_close(&flux_f2(&rest, &gas()), &[0.0, 0.0, 1.0, 0.0], 1e-12);
    let f = rusanov_flux(&rest, &rest, [1.0, 0.0], &gas()).unwrap();
    assert_close(&f, &[0.0, 1.0, 0.0, 0.0], 1e-12);

    let w = PrimitiveState::new(2.0, 3.0, 4.0, 100.0);
    assert!((pressure(&w, &gas()) - 30.0).abs() < 1e-12);
}

#[test]
fn thermodynamic_closures() {
    let w = PrimitiveState::from_pressure(1.0, 0.0, 0.0, 287.058, &gas());
    assert!((temperature(&w, &gas()).unwrap() - 1.0).abs() < 1e-12);
    for m in 10..=30 {
        let f = freestream_state(m as f64, &gas());
        assert_eq!(f.v, 0.0);
        assert!((temperature(&f, &gas()).unwrap() - 300.0).abs() < 1e-10);
        assert!((mach_number(&f, &gas()).unwrap() - m as f64).abs() < 1e-10);
    }
}

#[test]
fn flux_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let w = [
            rng.gen_range(0.1..5.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(500.0..2000.0),
        ];
        let (a1, a2) = flux_jacobians(w, 1.4);
        for m in 0..4 {
            let h = 1e-4 * w[m].abs().max(1.0);
            let (mut wp, mut wm) = (w, w);
            wp[m] += h;
            wm[m] -= h;
            let (f1p, f1m) = (flux_f1_generic(wp, 1.4), flux_f1_generic(wm, 1.4));
            let (f2p, f2m) = (flux_f2_generic(wp, 1.4), flux_f2_generic(wm, 1.4));
            for k in 0..4 {
                let fd1 = (f1p[k] - f1m[k]) / (2.0 * h);
                let fd2 = (f2p[k] - f2m[k]) / (2.0 * h);
                assert!((a1[k][m] - fd1).abs() <= 1e-6 * fd1.abs().max(1.0), "dF1[{k}]/dw[{m}]: {} vs {fd1}", a1[k][m]);
                assert!((a2[k][m] - fd2).abs() <= 1e-6 * fd2.abs().max(1.0), "dF2[{k}]/dw[{m}]: {} vs {fd2}", a2[k][m]);
            }
        }
    }
}

#[test]
fn two_flux_codings_agree() {
    // normal_flux with axis normals against the component formulas
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let w = PrimitiveState::from_pressure(
            rng.gen_range(0.01..10.0),
            rng.gen_range(-1e4..1e4),
            rng.gen_range(-1e4..1e4),
            rng.gen_range(1.0..1e7),
            &gas(),
        );
        assert_close(&normal_flux(&w, [1.0, 0.0], &gas()), &flux_f1(&w, &gas()), 1e-12);
        assert_close(&normal_flux(&w, [0.0, 1.0], &gas()), &flux_f2(&w, &gas()), 1e-12);
    }
}

#[test]
fn uniform_state_has_zero_interior_residual() {
    let w = freestream_state(17.0, &gas());
    assert_eq!(interior_residual(&w, [0.0; 4], [0.0; 4], &gas()), [0.0; 4]);
    let wx = [0.1, -2.0, 3.0, 40.0];
    let wy = [-0.3, 1.0, 0.5, -7.0];
    let r1 = interior_residual(&w, wx, wy, &gas());
    let r2 = interior_residual(&w, wx.map(|v| 2.0 * v), wy.map(|v| 2.0 * v), &gas());
    assert_close(&r2, &r1.map(|v| 2.0 * v), 1e-14);
}

proptest! {
    #[test]
    fn rusanov_is_consistent(w in state(), n in unit_normal()) {
        let f = rusanov_flux(&w, &w, n, &gas()).unwrap();
        prop_assert_eq!(f, normal_flux(&w, n, &gas()));
    }

    #[test]
    fn rusanov_is_antisymmetric(wl in state(), wr in state(), n in unit_normal()) {
        let f = rusanov_flux(&wl, &wr, n, &gas()).unwrap();
        let g = rusanov_flux(&wr, &wl, [-n[0], -n[1]], &gas()).unwrap();
        for k in 0..4 {
            prop_assert!((f[k] + g[k]).abs() <= 1e-12 * f[k].abs().max(1.0));
        }
    }

    #[test]
    fn primitive_conservative_round_trip(w in state()) {
        let back = w.to_conservative().to_primitive().to_array();
        for (a, b) in back.iter().zip(w.to_array()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let q = w.to_conservative().to_array();
        let again = ConservativeState::from_array(q).to_primitive().to_conservative().to_array();
        for (a, b) in again.iter().zip(q) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn minmod_properties(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let m = minmod(a, b);
        prop_assert_eq!(m, minmod(b, a));
        prop_assert!(m.abs() <= a.abs().min(b.abs()));
        if a * b <= 0.0 {
            prop_assert_eq!(m, 0.0);
        } else {
            prop_assert!(m * a > 0.0);
        }
    }

    #[test]
    fn residual_metric_is_homogeneous(r in proptest::collection::vec(-5.0f64..5.0, 8), c in -3.0f64..3.0) {
        let res = vec![[r[0], r[1], r[2], r[3]], [r[4], r[5], r[6], r[7]]];
        let vols = [0.5, 2.0];
        let scaled: Vec<[f64; 4]> = res.iter().map(|q| q.map(|v| c * v)).collect();
        let a = residual_metric(&scaled, &vols);
        let b = c.abs() * residual_metric(&res, &vols);
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }
}

#[test]
fn reconstruction_keeps_linear_data_and_clips_extrema() {
    let lin: Vec<f64> = (0..6).map(|i| 2.0 * i as f64 + 1.0).collect();
    let (lo, hi) = minmod_reconstruct(&lin);
    // face k sits between cells k and k + 1
    for k in 1..4 {
        assert_eq!(lo[k], lin[k] + 1.0);
        assert_eq!(hi[k - 1], lin[k] - 1.0);
    }
    let (lo, hi) = minmod_reconstruct(&[1.0, 3.0, 2.0]);
    assert_eq!((hi[0], lo[1]), (3.0, 3.0));
    let (lo, hi) = minmod_reconstruct(&[4.0; 5]);
    assert!(lo.iter().chain(&hi).all(|&v| v == 4.0));
}

#[test]
fn grid_geometry() {
    let g = StructuredGrid::build(GridSpec { nr: 64, ntheta: 64, r_outer: 4.0 }).unwrap();
    let exact = std::f64::consts::FRAC_PI_4 * (16.0 - 1.0);
    assert!((g.total_area() - exact).abs() <= 5e-3 * exact);
    for c in 0..g.num_cells() {
        assert!(g.volumes()[c] > 0.0);
        let d = g.closure_defect(c);
        assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12);
    }
}

#[test]
fn flux_balance_sums_to_boundary_flux() {
    let g = StructuredGrid::build(GridSpec { nr: 10, ntheta: 8, r_outer: 3.0 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = freestream_state(12.0, &gas());
    let field: Vec<PrimitiveState> = (0..g.num_cells())
        .map(|_| {
            let p = pressure(&base, &gas()) * rng.gen_range(0.5..3.0);
            PrimitiveState::from_pressure(
                base.rho * rng.gen_range(0.5..4.0),
                base.u * rng.gen_range(-0.5..1.0),
                base.u * rng.gen_range(-0.3..0.3),
                p,
                &gas(),
            )
        })
        .collect();
    let cons = to_conservative(&field);
    for blend in [0.0, 0.5, 1.0] {
        let mut solver = FvSolver::new(&g, gas(), 12.0);
        solver.evaluate_residual(&cons, blend);
        let total = solver.residuals().iter().fold([0.0; 4], |mut acc, r| {
            for k in 0..4 {
                acc[k] += r[k];
            }
            acc
        });
        let bf = solver.boundary_flux();
        let scale = solver.residuals().iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..4 {
            assert!((total[k] - bf[k]).abs() <= 1e-10 * scale, "eq {k}: {} vs {}", total[k], bf[k]);
        }
    }
}

#[test]
fn freestream_is_preserved_without_a_body() {
    let g = StructuredGrid::build(GridSpec { nr: 16, ntheta: 12, r_outer: 4.0 }).unwrap();
    let mut solver = FvSolver::new(&g, gas(), 25.0).with_boundary_mode(BoundaryMode::Farfield);
    let init = to_conservative(&freestream_field(&g, 25.0, &gas()));
    let mut cons = init.clone();
    for iter in 0..50 {
        let r = solver.time_step(&mut cons, iter, &SolverConfig::default()).unwrap();
        assert!(r <= 1e-12);
    }
    assert_eq!(cons, init);
}

#[test]
fn converged_field_is_a_fixed_point() {
    let g = StructuredGrid::build(GridSpec { nr: 16, ntheta: 12, r_outer: 4.0 }).unwrap();
    let cfg = SolverConfig::default();
    let first = solve_steady(&freestream_field(&g, 12.0, &gas()), &g, &cfg, 12.0, &gas()).unwrap();
    assert!(first.history.converged_at.is_some());
    let reference = first.history.reference().unwrap();
    let steady = SolverConfig {
        cfl_start: cfg.cfl_end,
        cfl_ramp_iters: 0,
        first_order_until: 0,
        blend_until: 0,
        ..cfg
    };
    let again = solve_steady_with_reference(&first.field.states, &g, &steady, 12.0, &gas(), Some(reference)).unwrap();
    let at = again.history.converged_at.expect("warm start converges");
    assert!(at < 50, "warm start took {at} iterations");
}

#[test]
fn mach_10_shock_matches_rankine_hugoniot() {
    let g = StructuredGrid::build(GridSpec::default()).unwrap();
    let sol = solve_steady(&freestream_field(&g, 10.0, &gas()), &g, &SolverConfig::default(), 10.0, &gas()).unwrap();
    assert!(sol.history.converged_at.is_some());
    let ratio = stagnation_density_ratio(&g, &sol.field.states, 0.05).unwrap();
    let (gm, m2) = (1.4, 100.0);
    let exact = (gm + 1.0) * m2 / ((gm - 1.0) * m2 + 2.0);
    assert!((ratio - exact).abs() <= 0.1 * exact, "ratio {ratio} vs {exact}");
}
