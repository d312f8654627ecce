//! Time integration of the forward semilinear wave equation and its
//! linearized, second-order and adjoint companions.
//!
//! All four solvers share one trigonometric step. With `g(t, y)` the
//! forcing (control minus dealiased nonlinearity), one step of size `h` is
//!
//! ```text
//! v  <- v + h/2 g(t_n, y_n)
//! (y, v) <- e^{A h} (y, v)          exact modewise rotation
//! v  <- v + h/2 g(t_{n+1}, y_{n+1})
//! ```
//!
//! i.e. `y_{n+1} = cos(hW) y_n + W^{-1} sin(hW) v_n + h^2/2 sinc(hW) g_n`.
//! Only one nonlinearity evaluation is needed per step. Consecutive half
//! kicks merge into the trapezoidal weights of the time grid, so the
//! adjoint integrated backward with the same step is the exact transpose
//! of the forward scheme and reproduces the discrete gradient.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::grid::{check_power, Propagator, SpaceGrid};
use crate::norms::{strichartz_monitor, MixedNormReport, TimeGrid};

/// Controls sampled on the time grid: one nodal field per time node.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTrajectory {
    grid: Arc<SpaceGrid>,
    tgrid: TimeGrid,
    u: Vec<Vec<f64>>,
    slice_norms: Vec<f64>,
}

impl ControlTrajectory {
    pub fn zeros(grid: Arc<SpaceGrid>, tgrid: TimeGrid) -> Self {
        let u = vec![vec![0.0; grid.len()]; tgrid.len()];
        ControlTrajectory {
            slice_norms: vec![0.0; tgrid.len()],
            grid,
            tgrid,
            u,
        }
    }

    pub fn from_slices(grid: Arc<SpaceGrid>, tgrid: TimeGrid, u: Vec<Vec<f64>>) -> Result<Self> {
        check_len(tgrid.len(), u.len())?;
        for s in &u {
            check_len(grid.len(), s.len())?;
        }
        let slice_norms = u.iter().map(|s| grid.nodal_norm(s)).collect();
        Ok(ControlTrajectory {
            grid,
            tgrid,
            u,
            slice_norms,
        })
    }

    /// Samples `f(t, x)` at every space-time node.
    pub fn from_fn(grid: Arc<SpaceGrid>, tgrid: TimeGrid, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let u = tgrid.nodes().iter().map(|&t| grid.sample(|x| f(t, x))).collect();
        Self::from_slices(grid, tgrid, u).expect("sampled on the grid")
    }

    pub fn grid(&self) -> &Arc<SpaceGrid> {
        &self.grid
    }

    pub fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }

    pub fn slices(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn into_slices(self) -> Vec<Vec<f64>> {
        self.u
    }

    /// Cached `||u(t_j)||_{L^2}`.
    pub fn slice_norms(&self) -> &[f64] {
        &self.slice_norms
    }

    pub fn max_slice_norm(&self) -> f64 {
        self.slice_norms.iter().fold(0.0, |m, x| m.max(*x))
    }

    pub fn norm_l1l2(&self) -> f64 {
        self.slice_norms
            .iter()
            .enumerate()
            .map(|(j, n)| self.tgrid.weight(j) * n)
            .sum()
    }

    /// Trapezoidal `L^2(0,T; L^2)` inner product.
    pub fn inner(&self, other: &ControlTrajectory) -> f64 {
        self.u
            .iter()
            .zip(&other.u)
            .enumerate()
            .map(|(j, (a, b))| self.tgrid.weight(j) * self.grid.nodal_inner(a, b))
            .sum()
    }

    pub fn norm_l2l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &ControlTrajectory) -> ControlTrajectory {
        self.zip_map(other, |x, y| x + a * y)
    }

    pub fn sub(&self, other: &ControlTrajectory) -> ControlTrajectory {
        self.zip_map(other, |x, y| x - y)
    }

    pub fn scaled(&self, a: f64) -> ControlTrajectory {
        self.map_slices(|_, s| s.iter().map(|x| a * x).collect())
    }

    pub fn map_slices(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> ControlTrajectory {
        let u = self.u.iter().enumerate().map(|(j, s)| f(j, s)).collect();
        Self::from_slices(self.grid.clone(), self.tgrid, u).expect("slice map keeps shapes")
    }

    fn zip_map(&self, other: &ControlTrajectory, f: impl Fn(f64, f64) -> f64) -> ControlTrajectory {
        debug_assert!(self.same_grids(other).is_ok());
        self.map_slices(|j, s| s.iter().zip(&other.u[j]).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn same_grids(&self, other: &ControlTrajectory) -> Result<()> {
        if self.tgrid != other.tgrid || self.grid.as_ref() != other.grid.as_ref() {
            return Err(Error::GridMismatch("control trajectories live on different grids".into()));
        }
        Ok(())
    }
}

/// Time-sampled phase-space trajectory `xi_y = (y, y_t)`, stored spectrally.
#[derive(Clone, Debug)]
pub struct StateTrajectory {
    grid: Arc<SpaceGrid>,
    tgrid: TimeGrid,
    y: Vec<Vec<f64>>,
    yt: Vec<Vec<f64>>,
    monitor: Option<MixedNormReport>,
}

impl StateTrajectory {
    pub fn grid(&self) -> &Arc<SpaceGrid> {
        &self.grid
    }

    pub fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }

    /// Spectral `y(t_j)`.
    pub fn y(&self) -> &[Vec<f64>] {
        &self.y
    }

    /// Spectral `y_t(t_j)`.
    pub fn yt(&self) -> &[Vec<f64>] {
        &self.yt
    }

    pub fn monitor(&self) -> Option<&MixedNormReport> {
        self.monitor.as_ref()
    }

    pub fn nodal_y(&self) -> Result<Vec<Vec<f64>>> {
        self.y.iter().map(|c| self.grid.to_physical(c)).collect()
    }

    pub fn nodal_yt(&self) -> Result<Vec<Vec<f64>>> {
        self.yt.iter().map(|c| self.grid.to_physical(c)).collect()
    }

    /// Nodal `y(t_j)` packaged as a control-like trajectory.
    pub fn y_as_field(&self) -> Result<ControlTrajectory> {
        ControlTrajectory::from_slices(self.grid.clone(), self.tgrid, self.nodal_y()?)
    }

    pub fn final_y(&self) -> &[f64] {
        self.y.last().expect("trajectory has at least two nodes")
    }

    fn check_against(&self, u: &ControlTrajectory) -> Result<()> {
        if self.tgrid != *u.tgrid() || self.grid.as_ref() != u.grid().as_ref() {
            return Err(Error::GridMismatch("trajectory and control grids differ".into()));
        }
        Ok(())
    }
}

/// Initial data `xi_0 = (y_0, y_1)` as nodal fields.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl InitialData {
    pub fn zeros(grid: &SpaceGrid) -> Self {
        InitialData {
            y0: vec![0.0; grid.len()],
            y1: vec![0.0; grid.len()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    /// Odd exponent of the defocusing nonlinearity.
    pub power: u32,
    /// `false` solves the linear wave equation.
    pub nonlinear: bool,
    /// Upper bound on `||y||_{L^4 L^12}` before the solve is declared
    /// divergent.
    pub blowup_threshold: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            power: 5,
            nonlinear: true,
            blowup_threshold: 1e8,
        }
    }
}

impl SolverParams {
    pub fn linear() -> Self {
        SolverParams {
            nonlinear: false,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        check_power(self.power)?;
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::config("physics.blowup_threshold", "must be positive"));
        }
        Ok(())
    }

    /// Exponent used by the energy function, `None` when linear.
    pub fn potential_power(&self) -> Option<u32> {
        self.nonlinear.then_some(self.power)
    }
}

/// Runs the shared trigonometric scheme. `force(j, y)` returns the
/// spectral forcing at node `j` for the current spectral position `y`.
fn integrate(
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    y0: Vec<f64>,
    v0: Vec<f64>,
    backward: bool,
    mut force: impl FnMut(usize, &[f64]) -> Vec<f64>,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n_t = tgrid.steps();
    let h = tgrid.dt();
    let prop = Propagator::new(grid, if backward { -h } else { h });
    let node = |s: usize| if backward { n_t - s } else { s };
    // Backward runs apply the kicks with the negative step.
    let half = if backward { -0.5 * h } else { 0.5 * h };

    let mut ys = vec![Vec::new(); n_t + 1];
    let mut vs = vec![Vec::new(); n_t + 1];
    let (mut y, mut v) = (y0, v0);
    let mut g = force(node(0), &y);
    ys[node(0)] = y.clone();
    vs[node(0)] = v.clone();
    for s in 0..n_t {
        for (vk, gk) in v.iter_mut().zip(&g) {
            *vk += half * gk;
        }
        prop.apply(&mut y, &mut v);
        g = force(node(s + 1), &y);
        for (vk, gk) in v.iter_mut().zip(&g) {
            *vk += half * gk;
        }
        if y.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                time: tgrid.node(node(s + 1)),
                last_valid: tgrid.node(node(s)),
                reason: "non-finite value in state".into(),
            });
        }
        ys[node(s + 1)] = y.clone();
        vs[node(s + 1)] = v.clone();
    }
    Ok((ys, vs))
}

fn spectral_slices(grid: &SpaceGrid, u: &ControlTrajectory) -> Result<Vec<Vec<f64>>> {
    u.slices().iter().map(|s| grid.to_spectral(s).map(|c| c.0)).collect()
}

/// Forward solve of `y_tt - Delta y + y^p = u`, `xi_y(0) = xi_0`.
///
/// The Strichartz monitor is attached to the result; crossing the blow-up
/// threshold or producing a non-finite value is reported as divergence.
pub fn solve_forward(u: &ControlTrajectory, init: &InitialData, params: &SolverParams) -> Result<StateTrajectory> {
    params.validate()?;
    let grid = u.grid().clone();
    let tgrid = *u.tgrid();
    let y0 = grid.to_spectral(&init.y0)?.0;
    let v0 = grid.to_spectral(&init.y1)?.0;
    let uc = spectral_slices(&grid, u)?;
    let (ys, vs) = integrate(&grid, &tgrid, y0, v0, false, |j, y| {
        if params.nonlinear {
            let nl = grid.power_modal(y, params.power);
            uc[j].iter().zip(&nl).map(|(a, b)| a - b).collect()
        } else {
            uc[j].clone()
        }
    })?;
    let mut traj = StateTrajectory {
        grid,
        tgrid,
        y: ys,
        yt: vs,
        monitor: None,
    };
    let report = strichartz_monitor(&traj, Some(u), params.blowup_threshold, params.potential_power())?;
    if report.blowup || !report.l4l12.is_finite() {
        return Err(Error::Divergence {
            time: tgrid.t_final(),
            last_valid: tgrid.t_final(),
            reason: format!(
                "L4(L12) norm {} exceeds blow-up threshold {}",
                report.l4l12, params.blowup_threshold
            ),
        });
    }
    debug_assert!(report.interpolation_holds(1e-10 * (1.0 + report.l5l10.powi(5))));
    traj.monitor = Some(report);
    Ok(traj)
}

/// `z = S'(u) h`: `z_tt - Delta z + p ybar^{p-1} z = h`, zero initial data.
pub fn solve_linearized(ybar: &StateTrajectory, h: &ControlTrajectory, params: &SolverParams) -> Result<StateTrajectory> {
    params.validate()?;
    ybar.check_against(h)?;
    let grid = ybar.grid.clone();
    let hc = spectral_slices(&grid, h)?;
    let p = params.power as i32;
    let c = params.power as f64;
    let zero = vec![0.0; grid.len()];
    let (ys, vs) = integrate(&grid, &ybar.tgrid, zero.clone(), zero, false, |j, z| {
        if params.nonlinear && p > 1 {
            let pot = grid.pointwise_modal(&[&ybar.y[j], z], |a| c * a[0].powi(p - 1) * a[1]);
            hc[j].iter().zip(&pot).map(|(a, b)| a - b).collect()
        } else {
            hc[j].clone()
        }
    })?;
    Ok(StateTrajectory {
        grid,
        tgrid: ybar.tgrid,
        y: ys,
        yt: vs,
        monitor: None,
    })
}

/// `w = S''(u)(h_1, h_2)`: same operator as the linearized equation with
/// right side `-p (p-1) ybar^{p-2} z_1 z_2`.
pub fn solve_second(
    ybar: &StateTrajectory,
    z1: &StateTrajectory,
    z2: &StateTrajectory,
    params: &SolverParams,
) -> Result<StateTrajectory> {
    params.validate()?;
    for z in [z1, z2] {
        if z.tgrid != ybar.tgrid || z.grid.as_ref() != ybar.grid.as_ref() {
            return Err(Error::GridMismatch("sensitivities and state live on different grids".into()));
        }
    }
    let grid = ybar.grid.clone();
    let p = params.power as i32;
    let c1 = params.power as f64;
    let c2 = c1 * (c1 - 1.0);
    let zero = vec![0.0; grid.len()];
    let (ys, vs) = integrate(&grid, &ybar.tgrid, zero.clone(), zero, false, |j, w| {
        if params.nonlinear && p > 1 {
            let inputs: [&[f64]; 4] = [&ybar.y[j], w, &z1.y[j], &z2.y[j]];
            grid.pointwise_modal(&inputs, |a| -(c1 * a[0].powi(p - 1) * a[1] + c2 * a[0].powi(p - 2) * a[2] * a[3]))
        } else {
            vec![0.0; w.len()]
        }
    })?;
    Ok(StateTrajectory {
        grid,
        tgrid: ybar.tgrid,
        y: ys,
        yt: vs,
        monitor: None,
    })
}

/// Backward problem `p_tt - Delta p + p ybar^{p-1} p = source` on `(0, T)`
/// with `p(T) = 0`, `p_t(T) = -terminal_v`.
///
/// It satisfies the duality identity
/// `int <v, p> = <z_v(T), terminal_v> + int <source, z_v>` for every
/// direction `v` exactly at the discrete level (trapezoidal time weights,
/// nodal spatial quadrature).
pub fn solve_adjoint(
    ybar: &StateTrajectory,
    terminal_v: &[f64],
    source: Option<&ControlTrajectory>,
    params: &SolverParams,
) -> Result<StateTrajectory> {
    params.validate()?;
    let grid = ybar.grid.clone();
    let term = grid.to_spectral(terminal_v)?.0;
    let src = match source {
        Some(s) => {
            ybar.check_against(s)?;
            Some(spectral_slices(&grid, s)?)
        }
        None => None,
    };
    let pw = params.power as i32;
    let c = params.power as f64;
    let p0 = vec![0.0; grid.len()];
    let q0: Vec<f64> = term.iter().map(|x| -x).collect();
    let (ps, qs) = integrate(&grid, &ybar.tgrid, p0, q0, true, |j, p| {
        let mut f = match &src {
            Some(s) => s[j].clone(),
            None => vec![0.0; p.len()],
        };
        if params.nonlinear && pw > 1 {
            let pot = grid.pointwise_modal(&[&ybar.y[j], p], |a| c * a[0].powi(pw - 1) * a[1]);
            for (fk, pk) in f.iter_mut().zip(&pot) {
                *fk -= pk;
            }
        }
        f
    })?;
    Ok(StateTrajectory {
        grid,
        tgrid: ybar.tgrid,
        y: ps,
        yt: qs,
        monitor: None,
    })
}

/// Discrete residual of the weak formulation tested with the separable
/// function `phi(t, x) = theta(t) s(x)`:
///
/// `-int <y_t, phi_t> + int <grad y, grad phi> + int <y^p, phi> - int <u, phi>`.
///
/// `theta` returns `(theta(t), theta'(t))` and should vanish at both ends.
pub fn weak_form_residual(
    traj: &StateTrajectory,
    u: &ControlTrajectory,
    params: &SolverParams,
    theta: impl Fn(f64) -> (f64, f64),
    s_nodal: &[f64],
) -> Result<f64> {
    traj.check_against(u)?;
    let grid = &traj.grid;
    let s = grid.to_spectral(s_nodal)?;
    let grad_s: Vec<f64> = s.iter().zip(grid.eigenvalues()).map(|(a, l)| a * l).collect();
    let mut acc = 0.0;
    for j in 0..traj.tgrid.len() {
        let (th, dth) = theta(traj.tgrid.node(j));
        let mut r = -dth * grid.modal_inner(&traj.yt[j], &s) + th * grid.modal_inner(&traj.y[j], &grad_s);
        if params.nonlinear {
            r += th * grid.modal_inner(&grid.power_modal(&traj.y[j], params.power), &s);
        }
        r -= th * grid.nodal_inner(&u.slices()[j], s_nodal);
        acc += traj.tgrid.weight(j) * r;
    }
    Ok(acc)
}
