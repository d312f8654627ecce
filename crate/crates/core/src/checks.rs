//! Numerical self-checks run by `critwave check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Setup;
use crate::error::{Error, Result};
use crate::feasible::{project_uad, prox_composite, ConstraintProfile};
use crate::kkt::{random_direction, taylor_norm_checks};
use crate::norms::{energy, TimeGrid};
use crate::objective::{psi_pq, psi_pq_first, psi_pq_second, Problem};
use crate::solver::{solve_adjoint, solve_forward, solve_linearized, ControlTrajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Gradient,
    Energy,
    Prox,
    Duality,
    Psi,
    Taylor,
}

impl std::str::FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradient" => Which::Gradient,
            "energy" => Which::Energy,
            "prox" => Which::Prox,
            "duality" => Which::Duality,
            "psi" => Which::Psi,
            "taylor" => Which::Taylor,
            other => return Err(Error::config("check", format!("unknown check `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckRow {
            name: name.into(),
            measured,
            tolerance,
            pass: measured <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckTable {
    pub rows: Vec<CheckRow>,
}

impl CheckTable {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!(
                "{:<4} {:<40} measured = {:.6e}  tolerance = {:.3e}\n",
                if r.pass { "PASS" } else { "FAIL" },
                r.name,
                r.measured,
                r.tolerance
            ));
        }
        s
    }
}

pub fn run(which: Which, setup: &Setup, seed: u64) -> Result<CheckTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match which {
        Which::Gradient => gradient(&setup.problem, &feasible_control(setup)?, &mut rng, 10, 1e-4),
        Which::Energy => energy_order(&setup.problem, 3),
        Which::Prox => prox(setup, &mut rng, 100),
        Which::Duality => duality(&setup.problem, &feasible_control(setup)?, &mut rng, 10),
        Which::Psi => psi(&setup.problem, &feasible_control(setup)?, &mut rng),
        Which::Taylor => taylor(&setup.problem, &mut rng, 100),
    }
}

fn feasible_control(setup: &Setup) -> Result<ControlTrajectory> {
    project_uad(&setup.control, &setup.omega)
}

/// Adjoint directional derivative against a central difference of `F`.
pub fn gradient(problem: &Problem, u: &ControlTrajectory, rng: &mut ChaCha8Rng, dirs: usize, eps: f64) -> Result<CheckTable> {
    let first = problem.grad_F(u)?;
    let mut worst = 0.0f64;
    let mut worst_paths = 0.0f64;
    for _ in 0..dirs {
        let h = random_direction(&problem.grid, problem.tgrid, rng);
        let ad = first.gradient.apply(&h);
        let fd = (problem.eval_F(&u.axpy(eps, &h))? - problem.eval_F(&u.axpy(-eps, &h))?) / (2.0 * eps);
        worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        let tangent = problem.directional_via_tangent(&first, u, &h)?;
        worst_paths = worst_paths.max((ad - tangent).abs() / ad.abs().max(1e-300));
    }
    Ok(CheckTable {
        rows: vec![
            CheckRow::at_most("adjoint vs central difference", worst, 1e-4),
            CheckRow::at_most("adjoint vs linearized assembly", worst_paths, 1e-8),
        ],
    })
}

/// Energy drift of the uncontrolled run over three halvings of `dt`.
pub fn energy_order(problem: &Problem, levels: usize) -> Result<CheckTable> {
    let drifts = energy_ladder(problem, problem.tgrid, levels)?;
    let mut rows = Vec::new();
    for (k, w) in drifts.windows(2).enumerate() {
        let order = (w[0] / w[1]).log2();
        rows.push(CheckRow {
            name: format!("energy drift order, level {}", k + 1),
            measured: order,
            tolerance: 0.2,
            pass: (order - 2.0).abs() <= 0.2,
        });
    }
    Ok(CheckTable { rows })
}

/// Relative energy drift `max_j |E(t_j) - E(0)| / E(0)` with `u = 0` on
/// `levels` successively halved time steps.
pub fn energy_ladder(problem: &Problem, base: TimeGrid, levels: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels {
        let t = base.refined(1 << k);
        let u = ControlTrajectory::zeros(problem.grid.clone(), t);
        let traj = solve_forward(&u, &problem.init, &problem.solver)?;
        let e = energy(&traj, None, problem.solver.potential_power())?;
        let dev = e.iter().fold(0.0f64, |m, x| m.max((x - e[0]).abs()));
        out.push(if e[0] != 0.0 { dev / e[0].abs() } else { dev });
    }
    Ok(out)
}

/// Nodewise prox against a uniform radial scan of
/// `1/2 (s - ||g||)^2 + tau s` on `[0, omega]`.
pub fn prox(setup: &Setup, rng: &mut ChaCha8Rng, controls: usize) -> Result<CheckTable> {
    let problem = &setup.problem;
    let mut worst_gap = 0.0f64;
    let mut worst_proj = 0.0f64;
    for _ in 0..controls {
        let g = random_direction(&problem.grid, problem.tgrid, rng).scaled(rng.gen_range(0.1..3.0));
        let omega = ConstraintProfile::new((0..problem.tgrid.len()).map(|_| rng.gen_range(0.0..2.0)).collect())?;
        let tau = rng.gen_range(0.0..1.0);
        let out = prox_composite(&g, tau, &omega)?;
        for j in 0..problem.tgrid.len() {
            let (a, w) = (g.slice_norms()[j], omega.omega()[j]);
            let obj = |s: f64| 0.5 * (s - a).powi(2) + tau * s;
            let best = (0..200)
                .map(|i| w * i as f64 / 199.0)
                .min_by(|x, y| obj(*x).total_cmp(&obj(*y)))
                .expect("nonempty scan");
            let s = out.slice_norms()[j];
            // Distance to the scan minimizer in units of the scan spacing.
            let spacing = if w > 0.0 { w / 199.0 } else { 1.0 };
            worst_gap = worst_gap.max((s - best).abs() / spacing);
            if obj(s) > obj(best) + 1e-12 {
                worst_gap = f64::INFINITY;
            }
        }
        let proj = project_uad(&g, &omega)?;
        let p0 = prox_composite(&g, 0.0, &omega)?;
        worst_proj = worst_proj.max(proj.sub(&p0).norm_l2l2());
    }
    Ok(CheckTable {
        rows: vec![
            CheckRow::at_most("prox vs radial scan (scan spacings)", worst_gap, 1.0),
            CheckRow::at_most("prox with zero threshold vs projection", worst_proj, 0.0),
        ],
    })
}

/// `int <v, p> = <z_v(T), y(T) - y_d> + int <gamma psi, z_v>`.
pub fn duality(problem: &Problem, u: &ControlTrajectory, rng: &mut ChaCha8Rng, dirs: usize) -> Result<CheckTable> {
    let first = problem.grad_F(u)?;
    let grid = &problem.grid;
    let y_t = grid.to_physical(first.state.final_y())?;
    let term: Vec<f64> = y_t.iter().zip(&problem.cost.y_d).map(|(a, b)| a - b).collect();
    let mut source = ControlTrajectory::zeros(grid.clone(), problem.tgrid);
    if problem.cost.gamma > 0.0 {
        let psi = crate::objective::psi(&first.state)?;
        source = ControlTrajectory::from_slices(grid.clone(), problem.tgrid, psi)?.scaled(problem.cost.gamma);
    }
    let p = solve_adjoint(&first.state, &term, Some(&source), &problem.solver)?.y_as_field()?;
    let mut worst = 0.0f64;
    for _ in 0..dirs {
        let v = random_direction(grid, problem.tgrid, rng);
        let z = solve_linearized(&first.state, &v, &problem.solver)?.y_as_field()?;
        let lhs = v.inner(&p);
        let rhs = grid.nodal_inner(&z.slices()[problem.tgrid.steps()], &term) + source.inner(&z);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    Ok(CheckTable {
        rows: vec![CheckRow::at_most("adjoint duality identity", worst, 1e-10)],
    })
}

/// Central differences of `Psi_{4,12}` and `Psi'` along a random direction.
pub fn psi(problem: &Problem, u: &ControlTrajectory, rng: &mut ChaCha8Rng) -> Result<CheckTable> {
    let (grid, t) = (&problem.grid, &problem.tgrid);
    let mut y = problem.forward(u)?.y_as_field()?;
    if y.max_slice_norm() == 0.0 {
        y = random_direction(grid, *t, rng);
    }
    let h = random_direction(grid, *t, rng).scaled(y.max_slice_norm().max(1e-3));
    let eps = 1e-5;
    let (yp, ym) = (y.axpy(eps, &h), y.axpy(-eps, &h));
    let (p, q) = (4.0, 12.0);
    let d1 = psi_pq_first(grid, t, y.slices(), h.slices(), p, q)?;
    let fd1 = (psi_pq(grid, t, yp.slices(), p, q)? - psi_pq(grid, t, ym.slices(), p, q)?) / (2.0 * eps);
    let d2 = psi_pq_second(grid, t, y.slices(), h.slices(), h.slices(), p, q)?;
    let fd2 = (psi_pq_first(grid, t, yp.slices(), h.slices(), p, q)? - psi_pq_first(grid, t, ym.slices(), h.slices(), p, q)?) / (2.0 * eps);
    Ok(CheckTable {
        rows: vec![
            CheckRow::at_most("Psi' vs central difference", (d1 - fd1).abs() / d1.abs().max(1e-300), 1e-6),
            CheckRow::at_most("Psi'' vs central difference", (d2 - fd2).abs() / d2.abs().max(1e-300), 1e-6),
        ],
    })
}

/// One random instance for the Taylor checks: slices of `f` bounded below
/// by `alpha = 1`, a direction `h` biased along `f`, weights `eta`.
pub fn taylor_instance(
    grid: &crate::grid::SpaceGrid,
    tgrid: &TimeGrid,
    rng: &mut ChaCha8Rng,
    h_scale: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
    let m = grid.len();
    let mut f = Vec::with_capacity(tgrid.len());
    let mut h = Vec::with_capacity(tgrid.len());
    for _ in 0..tgrid.len() {
        let mut s: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = grid.nodal_norm(&s);
        let target = rng.gen_range(1.0..3.0);
        s.iter_mut().for_each(|x| *x *= target / n);
        let dir: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nd = grid.nodal_norm(&dir);
        let bias = rng.gen_range(0.4..0.8);
        let hs: Vec<f64> = dir
            .iter()
            .zip(&s)
            .map(|(d, fv)| h_scale * ((1.0 - bias) * d / nd + bias * fv / target))
            .collect();
        f.push(s);
        h.push(hs);
    }
    let eta = (0..tgrid.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let mask = (0..tgrid.len()).map(|_| rng.gen_bool(0.8)).collect();
    (f, h, eta, mask)
}

/// Parts (i)-(iii) on `instances` random cases plus the 1/8 scaling of
/// the third-order remainder under halving of `h`.
pub fn taylor(problem: &Problem, rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckTable> {
    let (grid, t) = (&problem.grid, &problem.tgrid);
    let mut failures = 0usize;
    let mut worst_ratio = 0.0f64;
    for _ in 0..instances {
        let (f, h, eta, mask) = taylor_instance(grid, t, rng, 1e-2);
        let r = taylor_norm_checks(grid, t, &f, &h, &eta, &mask, 1.0)?;
        if !r.all_pass() {
            failures += 1;
        }
        let half: Vec<Vec<f64>> = h.iter().map(|s| s.iter().map(|x| 0.5 * x).collect()).collect();
        let r2 = taylor_norm_checks(grid, t, &f, &half, &eta, &mask, 1.0)?;
        if r.remainder > 0.0 {
            worst_ratio = worst_ratio.max((r2.remainder / r.remainder * 8.0 - 1.0).abs());
        }
    }
    Ok(CheckTable {
        rows: vec![
            CheckRow::at_most("Taylor parts (i)-(iii) failures", failures as f64, 0.0),
            CheckRow::at_most("remainder ratio deviation from 1/8 (relative)", worst_ratio, 0.2),
        ],
    })
}
