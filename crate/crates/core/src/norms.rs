//! Mixed Lebesgue norms `L^p(0,T; L^q)`, the energy function and the
//! Strichartz-norm monitor.
//!
//! Spatial integrals use the uniform nodal rule of the sine grid, time
//! integrals the trapezoidal rule on the uniform [`TimeGrid`]. Norms with
//! an infinite time exponent are maxima over the time nodes and therefore
//! lower bounds of the true supremum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceGrid;
use crate::solver::{ControlTrajectory, StateTrajectory};

/// Uniform time grid `t_j = j T / n_t`, `j = 0..=n_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::config("time.t_final", format!("must be positive, got {t_final}")));
        }
        if steps == 0 {
            return Err(Error::config("time.n_t", "need at least one time step"));
        }
        Ok(TimeGrid { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `n_t + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_final
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    /// Trapezoidal weight of node `j`.
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.weight(j)).collect()
    }

    /// Grid with `factor` times as many steps over the same horizon.
    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            t_final: self.t_final,
            steps: self.steps * factor,
        }
    }
}

fn check_exponent(q: f64, name: &str) -> Result<()> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::config(name, format!("Lebesgue exponent must be in [1, inf], got {q}")));
    }
    Ok(())
}

/// `(sum_x w |f(x)|^q)^{1/q}` on the nodes, or `max |f|` for `q = inf`.
pub fn lq_norm(grid: &SpaceGrid, field: &[f64], q: f64) -> Result<f64> {
    check_exponent(q, "q")?;
    Ok(lq_norm_unchecked(grid.quadrature_weight(), field, q))
}

pub(crate) fn lq_norm_unchecked(weight: f64, field: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return field.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    // Scale by the maximum so that high exponents do not overflow.
    let scale = field.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = field.iter().map(|x| (x.abs() / scale).powf(q)).sum();
    scale * (weight * s).powf(1.0 / q)
}

/// `||f||_{L^p(0,T; L^q)}` for nodal slices sampled on `tgrid`.
pub fn mixed_norm(grid: &SpaceGrid, tgrid: &TimeGrid, slices: &[Vec<f64>], p: f64, q: f64) -> Result<f64> {
    check_exponent(p, "p")?;
    check_exponent(q, "q")?;
    if slices.is_empty() {
        return Err(Error::config("trajectory", "empty trajectory"));
    }
    if slices.len() != tgrid.len() {
        return Err(Error::Shape {
            expected: tgrid.len(),
            got: slices.len(),
        });
    }
    let w = grid.quadrature_weight();
    let per_slice: Vec<f64> = slices.iter().map(|s| lq_norm_unchecked(w, s, q)).collect();
    Ok(time_norm(tgrid, &per_slice, p))
}

/// Time quadrature of per-slice norms.
pub(crate) fn time_norm(tgrid: &TimeGrid, per_slice: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return per_slice.iter().fold(0.0, |m, x| m.max(*x));
    }
    let scale = per_slice.iter().fold(0.0f64, |m, x| m.max(*x));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = per_slice
        .iter()
        .enumerate()
        .map(|(j, x)| tgrid.weight(j) * (x / scale).powf(p))
        .sum();
    scale * s.powf(1.0 / p)
}

/// Potential energy `1/(p+1) int |y|^{p+1}` evaluated with the padded
/// quadrature that the dealiased nonlinearity is the gradient of.
pub fn potential_energy(grid: &SpaceGrid, y_modal: &[f64], power: u32) -> f64 {
    let e = (power + 1) as i32;
    let vals = grid.to_padded(y_modal);
    grid.padded_quadrature_weight() * vals.iter().map(|v| v.powi(e)).sum::<f64>() / e as f64
}

/// Energy function `E_y(t_j) = 1/2 ||xi_y||_E^2 + 1/6 ||y||_6^6 - int_0^t <u, y_t>`.
///
/// `power = None` drops the potential term (linear equation). The work
/// integral uses the trapezoidal rule.
pub fn energy(traj: &StateTrajectory, u: Option<&ControlTrajectory>, power: Option<u32>) -> Result<Vec<f64>> {
    let grid = traj.grid();
    let tgrid = traj.tgrid();
    if let Some(u) = u {
        if u.tgrid() != tgrid || u.grid().as_ref() != grid.as_ref() {
            return Err(Error::GridMismatch("control and trajectory grids differ".into()));
        }
    }
    let mut out = Vec::with_capacity(tgrid.len());
    let mut work = 0.0;
    let mut prev_rate = 0.0;
    for j in 0..tgrid.len() {
        let (y, yt) = (&traj.y()[j], &traj.yt()[j]);
        let rate = match u {
            Some(u) => grid.nodal_inner(&u.slices()[j], &grid.to_physical(yt)?),
            None => 0.0,
        };
        if j > 0 {
            work += 0.5 * tgrid.dt() * (rate + prev_rate);
        }
        prev_rate = rate;
        let pot = power.map_or(0.0, |p| potential_energy(grid, y, p));
        out.push(0.5 * grid.energy_norm_sq(y, yt) + pot - work);
    }
    Ok(out)
}

/// Norms tracked along a forward solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedNormReport {
    pub l4l12: f64,
    pub l5l10: f64,
    pub linf_l6: f64,
    /// `||u||_{L^1(L^2)}` of the driving control.
    pub l1l2: f64,
    /// `||xi_0||_E^2 + ||y_0||_6^6 + ||u||_{L^1 L^2}^2`.
    pub e0: f64,
    /// `max_j |E_y(t_j) - E_y(0)| / |E_y(0)|` (absolute when `E_y(0) = 0`).
    pub energy_drift: f64,
    pub blowup: bool,
    /// `(max_t ||xi_y||_E^2 + max_t ||y||_6^6) / E_0`; the a-priori energy
    /// bound asserts this stays finite under refinement.
    #[serde(skip)]
    pub energy_bound_ratio: f64,
}

impl MixedNormReport {
    /// Slack of `||y||_{5,10}^5 <= ||y||_{4,12}^4 ||y||_{inf,6}`; nonnegative
    /// up to rounding.
    pub fn interpolation_gap(&self) -> f64 {
        self.l4l12.powi(4) * self.linf_l6 - self.l5l10.powi(5)
    }

    pub fn interpolation_holds(&self, tol: f64) -> bool {
        self.l5l10.powi(5) <= self.l4l12.powi(4) * self.linf_l6 + tol
    }
}

/// Computes the monitored norms and flags trajectories whose
/// `L^4(L^12)` norm exceeds `threshold`.
pub fn strichartz_monitor(
    traj: &StateTrajectory,
    u: Option<&ControlTrajectory>,
    threshold: f64,
    power: Option<u32>,
) -> Result<MixedNormReport> {
    if !(threshold > 0.0) {
        return Err(Error::config("physics.blowup_threshold", "threshold must be positive"));
    }
    let grid = traj.grid();
    let tgrid = traj.tgrid();
    let nodal = traj.nodal_y()?;
    let l4l12 = mixed_norm(grid, tgrid, &nodal, 4.0, 12.0)?;
    let l5l10 = mixed_norm(grid, tgrid, &nodal, 5.0, 10.0)?;
    let linf_l6 = mixed_norm(grid, tgrid, &nodal, f64::INFINITY, 6.0)?;
    let l1l2 = u.map_or(0.0, |u| u.norm_l1l2());

    let w = grid.quadrature_weight();
    let xi0 = grid.energy_norm_sq(&traj.y()[0], &traj.yt()[0]);
    let y06 = lq_norm_unchecked(w, &nodal[0], 6.0).powi(6);
    let e0 = xi0 + y06 + l1l2 * l1l2;

    let energies = energy(traj, u, power)?;
    let base = energies[0];
    let dev = energies.iter().fold(0.0f64, |m, e| m.max((e - base).abs()));
    let energy_drift = if base.abs() > 0.0 { dev / base.abs() } else { dev };

    let mut sup_e = 0.0f64;
    for j in 0..tgrid.len() {
        sup_e = sup_e.max(grid.energy_norm_sq(&traj.y()[j], &traj.yt()[j]));
    }
    let energy_bound_ratio = if e0 > 0.0 { (sup_e + linf_l6.powi(6)) / e0 } else { 0.0 };

    Ok(MixedNormReport {
        l4l12,
        l5l10,
        linf_l6,
        l1l2,
        e0,
        energy_drift,
        blowup: !(l4l12 <= threshold),
        energy_bound_ratio,
    })
}
