//! Proximal gradient and FISTA for `min_{u in U_ad} F(u) + beta1 j(u)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::{project_uad, prox_composite, ConstraintProfile};
use crate::objective::{eval_j, zero_tolerance, FirstOrder, Problem};
use crate::solver::ControlTrajectory;

const STEP_MIN: f64 = 1e-6;
const STEP_MAX: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub max_iters: usize,
    pub step0: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    pub fista: bool,
    pub tol_stationarity: f64,
    /// Step reductions allowed per iteration before giving up.
    pub max_backtracks: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            max_iters: 500,
            step0: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            fista: false,
            tol_stationarity: 1e-8,
            max_backtracks: 60,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(Error::config("optimizer.step0", "must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::config("optimizer.backtrack", "must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::config("optimizer.sufficient_decrease", "must lie in (0, 1)"));
        }
        if !(self.tol_stationarity > 0.0) {
            return Err(Error::config("optimizer.tol_stationarity", "must be positive"));
        }
        if self.max_backtracks == 0 {
            return Err(Error::config("optimizer.max_backtracks", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub lr: f64,
    #[serde(rename = "F")]
    pub f: f64,
    /// `beta1 j(u)`.
    pub j: f64,
    pub step: f64,
    pub residual: f64,
    pub sparse_nodes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateLog {
    pub records: Vec<IterateRecord>,
}

impl IterateLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,lr,F,j,step,residual,sparse_nodes\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.iter, r.lr, r.f, r.j, r.step, r.residual, r.sparse_nodes
            );
        }
        s
    }

    /// Largest increase `lr_{k+1} - lr_k` over the log.
    pub fn max_increase(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[1].lr - w[0].lr)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIters,
    /// The line search could not decrease the objective although the
    /// residual is above tolerance (rounding floor).
    Stalled,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub u: ControlTrajectory,
    pub log: IterateLog,
    pub termination: Termination,
    /// State, adjoint and gradient at the returned control.
    pub first_order: FirstOrder,
    pub residual: f64,
}

/// `||u - prox(u - s grad F(u), s beta1, omega)||_{L^2 L^2} / s`.
pub fn stationarity_residual(problem: &Problem, u: &ControlTrajectory, omega: &ConstraintProfile, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::config("optimizer.step", "must be positive"));
    }
    let first = problem.grad_F(u)?;
    residual_from_gradient(problem, u, &first, omega, step)
}

fn residual_from_gradient(
    problem: &Problem,
    u: &ControlTrajectory,
    first: &FirstOrder,
    omega: &ConstraintProfile,
    step: f64,
) -> Result<f64> {
    let trial = prox_composite(&u.axpy(-step, first.gradient.values()), step * problem.cost.beta1, omega)?;
    Ok(trial.sub(u).norm_l2l2() / step)
}

fn sparse_count(u: &ControlTrajectory) -> usize {
    let tau0 = zero_tolerance(u);
    u.slice_norms().iter().filter(|n| **n <= tau0).count()
}

/// Rounding allowance in the acceptance tests.
fn slack(lr: f64) -> f64 {
    10.0 * f64::EPSILON * (1.0 + lr.abs())
}

struct Point {
    u: ControlTrajectory,
    first: FirstOrder,
    lr: f64,
}

impl Point {
    fn new(problem: &Problem, u: ControlTrajectory) -> Result<Point> {
        let first = problem.grad_F(&u)?;
        let lr = first.cost.total;
        Ok(Point { u, first, lr })
    }
}

/// Minimizes `l_r` over `U_ad` starting from the projection of `u0`.
pub fn optimize(
    problem: &Problem,
    u0: &ControlTrajectory,
    omega: &ConstraintProfile,
    config: &OptimizeConfig,
) -> Result<OptimizeResult> {
    config.validate()?;
    let beta1 = problem.cost.beta1;
    let mut cur = Point::new(problem, project_uad(u0, omega)?)?;
    let mut log = IterateLog::default();
    let mut step = config.step0.clamp(STEP_MIN, STEP_MAX);
    let mut prev: Option<(ControlTrajectory, ControlTrajectory)> = None;
    // FISTA extrapolation state: momentum parameter and extrapolated point.
    let mut theta: f64 = 1.0;
    let mut extrap: Option<Point> = None;

    for iter in 0..=config.max_iters {
        // Barzilai-Borwein initialisation from the last accepted pair.
        if let Some((du, dg)) = &prev {
            let sy = du.inner(dg);
            if sy > 0.0 {
                step = (du.inner(du) / sy).clamp(STEP_MIN, STEP_MAX);
            }
        }
        let residual = residual_from_gradient(problem, &cur.u, &cur.first, omega, step)?;
        let b1j = beta1 * eval_j(&cur.u);
        log.records.push(IterateRecord {
            iter,
            lr: cur.lr,
            f: cur.lr - b1j,
            j: b1j,
            step,
            residual,
            sparse_nodes: sparse_count(&cur.u),
        });
        if residual <= config.tol_stationarity {
            return Ok(finish(cur, log, Termination::Converged, residual));
        }
        if iter == config.max_iters {
            return Ok(finish(cur, log, Termination::MaxIters, residual));
        }

        let base = match extrap.take() {
            Some(y) if config.fista => y,
            _ => Point {
                u: cur.u.clone(),
                first: cur.first.clone(),
                lr: cur.lr,
            },
        };
        // An extrapolated point gets a single trial before restarting.
        let budget = if base.u != cur.u { 1 } else { config.max_backtracks };
        let accepted = line_search(problem, &base, &cur, omega, config, budget, &mut step)?;
        let next = match accepted {
            Some(p) => p,
            None if config.fista && base.u != cur.u => {
                // Restart from a plain proximal step.
                theta = 1.0;
                let plain = Point {
                    u: cur.u.clone(),
                    first: cur.first.clone(),
                    lr: cur.lr,
                };
                match line_search(problem, &plain, &cur, omega, config, config.max_backtracks, &mut step)? {
                    Some(p) => p,
                    None => return Ok(finish(cur, log, Termination::Stalled, residual)),
                }
            }
            None => return Ok(finish(cur, log, Termination::Stalled, residual)),
        };

        prev = Some((next.u.sub(&cur.u), next.first.gradient.values().sub(cur.first.gradient.values())));
        if config.fista {
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            theta = theta_next;
            if beta > 0.0 {
                let y = project_uad(&next.u.axpy(beta, &next.u.sub(&cur.u)), omega)?;
                extrap = Point::new(problem, y).ok();
            }
        }
        cur = next;
    }
    unreachable!("loop returns at max_iters")
}

fn finish(cur: Point, log: IterateLog, termination: Termination, residual: f64) -> OptimizeResult {
    OptimizeResult {
        u: cur.u,
        log,
        termination,
        first_order: cur.first,
        residual,
    }
}

/// Backtracking from `base`; accepts `u+` when
/// `l_r(u+) <= l_r(cur) - c/s ||u+ - base||^2` (monotone in `cur`).
/// Divergent trial solves halve the step. Returns `None` when the
/// backtracking budget is exhausted.
fn line_search(
    problem: &Problem,
    base: &Point,
    cur: &Point,
    omega: &ConstraintProfile,
    config: &OptimizeConfig,
    budget: usize,
    step: &mut f64,
) -> Result<Option<Point>> {
    let beta1 = problem.cost.beta1;
    let mut diverged = 0usize;
    for _ in 0..budget {
        let s = *step;
        let trial = prox_composite(&base.u.axpy(-s, base.first.gradient.values()), s * beta1, omega)?;
        let d2 = trial.sub(&base.u).inner(&trial.sub(&base.u));
        match Point::new(problem, trial) {
            Ok(p) => {
                if p.lr <= cur.lr - config.sufficient_decrease / s * d2 + slack(cur.lr) && p.lr <= cur.lr + slack(cur.lr) {
                    return Ok(Some(p));
                }
                *step = (s * config.backtrack).max(STEP_MIN * config.backtrack);
            }
            Err(Error::Divergence { .. }) => {
                diverged += 1;
                *step = (s * 0.5).max(STEP_MIN * 0.5);
            }
            Err(e) => return Err(e),
        }
        if *step < STEP_MIN * 1e-6 {
            break;
        }
    }
    if diverged == config.max_backtracks && budget == config.max_backtracks {
        return Err(Error::Aborted {
            iters: 0,
            reason: "every trial point diverged".into(),
        });
    }
    Ok(None)
}
