mod common;

use std::f64::consts::PI;

use common::*;
use critwave::feasible::project_uad;
use critwave::optimizer::optimize;
use critwave::{ConstraintProfile, ControlTrajectory, OptimizeConfig, SolverParams, Termination, TimeGrid};

#[test]
fn active_constraint_matches_projected_dense_solution() {
    // With a tight budget and beta1 = 0 the solution saturates the bound on
    // some nodes; compare to a projected-gradient solve of the dense model.
    let g = grid1(PI, 10);
    let t = TimeGrid::new(1.0, 24).unwrap();
    let (y0, y1, y_d) = (vec![0.0; 10], vec![0.0; 10], gaussian(&g, 2.0, 0.5, 0.2));
    let beta2 = 0.05;
    let dense = DenseLinear::new(PI, 10, &t, &y0, &y1);
    let p = problem(&g, t, y0, y1, SolverParams::linear(), 0.0, 0.0, beta2, y_d.clone());
    let omega = ConstraintProfile::constant(&t, 0.5).unwrap();

    // Dense projected gradient in the weighted metric.
    let mut u = dense.stack(&p.zero_control());
    let step = 1.0 / (beta2 + 10.0);
    for _ in 0..20000 {
        let r = &dense.g * &u + &dense.free - nalgebra::DVector::from_column_slice(&y_d);
        let gt = dense.g.transpose() * r;
        let grad = nalgebra::DVector::from_fn(u.len(), |i, _| gt[i] / dense.weights[i] + beta2 * u[i]);
        let trial = &u - grad * step;
        let ctl = ControlTrajectory::from_slices(g.clone(), t, dense.unstack(&trial)).unwrap();
        u = dense.stack(&project_uad(&ctl, &omega).unwrap());
    }
    let oracle = ControlTrajectory::from_slices(g.clone(), t, dense.unstack(&u)).unwrap();

    let cfg = OptimizeConfig {
        max_iters: 5000,
        tol_stationarity: 1e-10,
        ..OptimizeConfig::default()
    };
    let res = optimize(&p, &p.zero_control(), &omega, &cfg).unwrap();
    assert_eq!(res.termination, Termination::Converged);
    assert!(res.u.max_slice_norm() <= 0.5 * (1.0 + 1e-12));
    assert!(res.u.slice_norms().iter().any(|n| (n - 0.5).abs() < 1e-9), "bound never active");
    let d = res.u.sub(&oracle).norm_l2l2();
    assert!(d < 1e-6, "distance to dense solution {d:e}");
}

#[test]
fn fista_and_plain_steps_reach_the_same_point() {
    let s = load_setup("sparse_1d.toml", &["time.n_t=50"]);
    let base = load_config("sparse_1d.toml", &["time.n_t=50"]).optimizer;
    let plain = optimize(&s.problem, &s.control, &s.omega, &base).unwrap();
    let fista = optimize(&s.problem, &s.control, &s.omega, &OptimizeConfig { fista: true, ..base }).unwrap();
    assert_eq!(plain.termination, Termination::Converged);
    assert_eq!(fista.termination, Termination::Converged);
    assert!(plain.log.max_increase() <= 1e-12 && fista.log.max_increase() <= 1e-12);
    let d = plain.u.sub(&fista.u).norm_l2l2() / plain.u.norm_l2l2();
    assert!(d < 1e-5, "{d:e}");
}

#[test]
fn iteration_budget_is_reported() {
    let s = load_setup("sparse_1d.toml", &["time.n_t=30"]);
    let cfg = OptimizeConfig {
        max_iters: 3,
        ..OptimizeConfig::default()
    };
    let res = optimize(&s.problem, &s.control, &s.omega, &cfg).unwrap();
    assert_eq!(res.termination, Termination::MaxIters);
    assert_eq!(res.log.records.len(), 4);
    let csv = res.log.to_csv();
    assert_eq!(csv.lines().count(), 5);
}
