//! Reduced cost `l_r(u) = F(u) + beta1 j(u)` with
//!
//! ```text
//! F(u) = 1/2 ||y_u(T) - y_d||^2 + gamma/4 ||y_u||_{L^4 L^12}^4 + beta2/2 ||u||_{L^2 L^2}^2
//! j(u) = ||u||_{L^1 L^2}
//! ```
//!
//! together with first and second derivatives and the norm calculus used by
//! the optimality conditions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::SpaceGrid;
use crate::norms::TimeGrid;
use crate::solver::{
    solve_adjoint, solve_forward, solve_linearized, solve_second, ControlTrajectory, InitialData, SolverParams,
    StateTrajectory,
};

/// Default cap on the `j''` integrand before the value is reported as `+inf`.
pub const J_SECOND_CAP: f64 = 1e12;

/// A real number or `+inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn value(self) -> f64 {
        match self {
            Extended::Finite(x) => x,
            Extended::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn plus(self, x: f64) -> Extended {
        match self {
            Extended::Finite(a) => Extended::Finite(a + x),
            Extended::Infinite => Extended::Infinite,
        }
    }

    pub fn scaled(self, c: f64) -> Extended {
        match self {
            Extended::Finite(a) => Extended::Finite(c * a),
            Extended::Infinite if c == 0.0 => Extended::Finite(0.0),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostParams {
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Nodal target for `y(T)`.
    pub y_d: Vec<f64>,
    pub p_norm: f64,
    pub q_norm: f64,
}

impl CostParams {
    pub fn new(gamma: f64, beta1: f64, beta2: f64, y_d: Vec<f64>) -> Result<Self> {
        let c = CostParams {
            gamma,
            beta1,
            beta2,
            y_d,
            p_norm: 4.0,
            q_norm: 12.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cost.gamma", self.gamma), ("cost.beta1", self.beta1), ("cost.beta2", self.beta2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if self.y_d.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("cost.y_d", "target has non-finite entries"));
        }
        Ok(())
    }
}

/// Individual terms of `l_r(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub strichartz_penalty: f64,
    pub l1_term: f64,
    pub l2_term: f64,
    pub total: f64,
}

impl CostBreakdown {
    /// Smooth part `F(u)`.
    pub fn smooth(&self) -> f64 {
        self.tracking + self.strichartz_penalty + self.l2_term
    }
}

/// `p(t_j) + beta2 u(t_j)` as nodal fields: the `L^2(L^2)` gradient of `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField(pub ControlTrajectory);

impl GradientField {
    pub fn values(&self) -> &ControlTrajectory {
        &self.0
    }

    /// `F'(u) h`.
    pub fn apply(&self, h: &ControlTrajectory) -> f64 {
        self.0.inner(h)
    }
}

/// State, adjoint and gradient at one control.
#[derive(Clone, Debug)]
pub struct FirstOrder {
    pub state: StateTrajectory,
    pub adjoint: StateTrajectory,
    /// Nodal adjoint state `p(t_j)`.
    pub p: ControlTrajectory,
    pub gradient: GradientField,
    pub cost: CostBreakdown,
}

/// Data of the optimal control problem on a fixed discretization.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: Arc<SpaceGrid>,
    pub tgrid: TimeGrid,
    pub init: InitialData,
    pub solver: SolverParams,
    pub cost: CostParams,
}

impl Problem {
    pub fn new(
        grid: Arc<SpaceGrid>,
        tgrid: TimeGrid,
        init: InitialData,
        solver: SolverParams,
        cost: CostParams,
    ) -> Result<Self> {
        cost.validate()?;
        check_len(grid.len(), cost.y_d.len())?;
        check_len(grid.len(), init.y0.len())?;
        check_len(grid.len(), init.y1.len())?;
        Ok(Problem {
            grid,
            tgrid,
            init,
            solver,
            cost,
        })
    }

    pub fn zero_control(&self) -> ControlTrajectory {
        ControlTrajectory::zeros(self.grid.clone(), self.tgrid)
    }

    fn check_control(&self, u: &ControlTrajectory) -> Result<()> {
        if *u.tgrid() != self.tgrid || u.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch("control does not live on the problem grids".into()));
        }
        Ok(())
    }

    pub fn forward(&self, u: &ControlTrajectory) -> Result<StateTrajectory> {
        self.check_control(u)?;
        solve_forward(u, &self.init, &self.solver)
    }

    pub fn breakdown_from_state(&self, u: &ControlTrajectory, state: &StateTrajectory) -> Result<CostBreakdown> {
        let grid = &self.grid;
        let y_t = grid.to_physical(state.final_y())?;
        let diff: Vec<f64> = y_t.iter().zip(&self.cost.y_d).map(|(a, b)| a - b).collect();
        let tracking = 0.5 * grid.nodal_inner(&diff, &diff);
        let strichartz_penalty = if self.cost.gamma > 0.0 {
            let ys = state.nodal_y()?;
            self.cost.gamma * psi_pq(grid, &self.tgrid, &ys, self.cost.p_norm, self.cost.q_norm)?
        } else {
            0.0
        };
        let l1_term = self.cost.beta1 * eval_j(u);
        let l2_term = 0.5 * self.cost.beta2 * u.inner(u);
        Ok(CostBreakdown {
            tracking,
            strichartz_penalty,
            l1_term,
            l2_term,
            total: tracking + strichartz_penalty + l1_term + l2_term,
        })
    }

    pub fn breakdown(&self, u: &ControlTrajectory) -> Result<CostBreakdown> {
        let state = self.forward(u)?;
        self.breakdown_from_state(u, &state)
    }

    #[allow(non_snake_case)]
    pub fn eval_F(&self, u: &ControlTrajectory) -> Result<f64> {
        Ok(self.breakdown(u)?.smooth())
    }

    /// `l_r(u) = F(u) + beta1 j(u)`.
    pub fn eval_lr(&self, u: &ControlTrajectory) -> Result<f64> {
        Ok(self.breakdown(u)?.total)
    }

    /// Terminal data `y(T) - y_d` and source `gamma psi` of the adjoint.
    fn adjoint_data(&self, state: &StateTrajectory) -> Result<(Vec<f64>, Option<ControlTrajectory>)> {
        let y_t = self.grid.to_physical(state.final_y())?;
        let term = y_t.iter().zip(&self.cost.y_d).map(|(a, b)| a - b).collect();
        let source = if self.cost.gamma > 0.0 {
            let ys = state.nodal_y()?;
            let field = psi_field_pq(&self.grid, &ys, self.cost.p_norm, self.cost.q_norm)?;
            let scaled = field
                .into_iter()
                .map(|s| s.into_iter().map(|x| self.cost.gamma * x).collect())
                .collect();
            Some(ControlTrajectory::from_slices(self.grid.clone(), self.tgrid, scaled)?)
        } else {
            None
        };
        Ok((term, source))
    }

    #[allow(non_snake_case)]
    pub fn grad_F(&self, u: &ControlTrajectory) -> Result<FirstOrder> {
        let state = self.forward(u)?;
        self.first_order_from_state(u, state)
    }

    pub fn first_order_from_state(&self, u: &ControlTrajectory, state: StateTrajectory) -> Result<FirstOrder> {
        self.check_control(u)?;
        let cost = self.breakdown_from_state(u, &state)?;
        let (term, source) = self.adjoint_data(&state)?;
        let adjoint = solve_adjoint(&state, &term, source.as_ref(), &self.solver)?;
        let p = adjoint.y_as_field()?;
        let gradient = GradientField(p.axpy(self.cost.beta2, u));
        Ok(FirstOrder {
            state,
            adjoint,
            p,
            gradient,
            cost,
        })
    }

    /// `F'(u) h` assembled from the linearized state instead of the adjoint.
    pub fn directional_via_tangent(&self, first: &FirstOrder, u: &ControlTrajectory, h: &ControlTrajectory) -> Result<f64> {
        let z = solve_linearized(&first.state, h, &self.solver)?;
        let (term, source) = self.adjoint_data(&first.state)?;
        let z_field = z.y_as_field()?;
        let mut d = self.grid.nodal_inner(&z_field.slices()[self.tgrid.steps()], &term);
        if let Some(s) = source {
            d += s.inner(&z_field);
        }
        Ok(d + self.cost.beta2 * u.inner(h))
    }

    /// `F''(u)(v, v)`.
    #[allow(non_snake_case)]
    pub fn F_second(&self, first: &FirstOrder, v: &ControlTrajectory) -> Result<f64> {
        let z = solve_linearized(&first.state, v, &self.solver)?;
        self.second_from_tangents(first, v, v, &z, &z)
    }

    /// `F''(u)(v1, v2)`.
    #[allow(non_snake_case)]
    pub fn F_second_bilinear(&self, first: &FirstOrder, v1: &ControlTrajectory, v2: &ControlTrajectory) -> Result<f64> {
        let z1 = solve_linearized(&first.state, v1, &self.solver)?;
        let z2 = solve_linearized(&first.state, v2, &self.solver)?;
        self.second_from_tangents(first, v1, v2, &z1, &z2)
    }

    fn second_from_tangents(
        &self,
        first: &FirstOrder,
        v1: &ControlTrajectory,
        v2: &ControlTrajectory,
        z1: &StateTrajectory,
        z2: &StateTrajectory,
    ) -> Result<f64> {
        let grid = &self.grid;
        let n_t = self.tgrid.steps();
        let mut val = grid.modal_inner(&z1.y()[n_t], &z2.y()[n_t]);
        if self.solver.nonlinear && self.solver.power > 1 {
            let pw = self.solver.power as i32;
            let c = (pw * (pw - 1)) as f64;
            for j in 0..self.tgrid.len() {
                let inputs: [&[f64]; 3] = [&first.state.y()[j], &z1.y()[j], &z2.y()[j]];
                let nl = grid.pointwise_modal(&inputs, |a| c * a[0].powi(pw - 2) * a[1] * a[2]);
                val -= self.tgrid.weight(j) * grid.modal_inner(&first.adjoint.y()[j], &nl);
            }
        }
        if self.cost.gamma > 0.0 {
            let ys = first.state.nodal_y()?;
            let (a, b) = (z1.nodal_y()?, z2.nodal_y()?);
            val += self.cost.gamma * psi_pq_second(grid, &self.tgrid, &ys, &a, &b, self.cost.p_norm, self.cost.q_norm)?;
        }
        Ok(val + self.cost.beta2 * v1.inner(v2))
    }

    /// `F''(u)(v, v)` through the second-order sensitivity `w = S''(u) v^2`,
    /// independent of the adjoint.
    #[allow(non_snake_case)]
    pub fn F_second_via_sensitivity(&self, first: &FirstOrder, v: &ControlTrajectory) -> Result<f64> {
        let grid = &self.grid;
        let z = solve_linearized(&first.state, v, &self.solver)?;
        let w = solve_second(&first.state, &z, &z, &self.solver)?;
        let (term, _) = self.adjoint_data(&first.state)?;
        let n_t = self.tgrid.steps();
        let z_t = grid.to_physical(&z.y()[n_t])?;
        let w_t = grid.to_physical(&w.y()[n_t])?;
        let mut val = grid.nodal_inner(&z_t, &z_t) + grid.nodal_inner(&w_t, &term);
        if self.cost.gamma > 0.0 {
            let (ys, zs, ws) = (first.state.nodal_y()?, z.nodal_y()?, w.nodal_y()?);
            let (p, q) = (self.cost.p_norm, self.cost.q_norm);
            val += self.cost.gamma
                * (psi_pq_first(grid, &self.tgrid, &ys, &ws, p, q)? + psi_pq_second(grid, &self.tgrid, &ys, &zs, &zs, p, q)?);
        }
        Ok(val + self.cost.beta2 * v.inner(v))
    }
}

/// `psi(t) = ||y(t)||_{L^12}^{-8} |y(t)|^10 y(t)`, zero on vanishing slices.
pub fn psi(state: &StateTrajectory) -> Result<Vec<Vec<f64>>> {
    psi_field_pq(state.grid(), &state.nodal_y()?, 4.0, 12.0)
}

/// `j(u) = ||u||_{L^1(L^2)}`.
pub fn eval_j(u: &ControlTrajectory) -> f64 {
    u.norm_l1l2()
}

/// Threshold below which a slice norm counts as zero.
pub fn zero_tolerance(u: &ControlTrajectory) -> f64 {
    1e-12 * (1.0 + u.max_slice_norm())
}

/// `j'(u; v) = int_{u=0} ||v|| + int_{u!=0} <v, u>/||u||`.
pub fn j_dir(u: &ControlTrajectory, v: &ControlTrajectory) -> f64 {
    let tau0 = zero_tolerance(u);
    let grid = u.grid();
    (0..u.tgrid().len())
        .map(|j| {
            let nu = u.slice_norms()[j];
            let w = u.tgrid().weight(j);
            if nu <= tau0 {
                w * v.slice_norms()[j]
            } else {
                w * grid.nodal_inner(&u.slices()[j], &v.slices()[j]) / nu
            }
        })
        .sum()
}

/// `j''(u; v^2) = int_{u!=0} ||u||^{-1} (||v||^2 - <u/||u||, v>^2)`.
///
/// Returns `+inf` if an integrand sample exceeds `cap`.
pub fn j_second(u: &ControlTrajectory, v: &ControlTrajectory, cap: f64) -> Extended {
    let tau0 = zero_tolerance(u);
    let grid = u.grid();
    let mut acc = 0.0;
    for j in 0..u.tgrid().len() {
        let nu = u.slice_norms()[j];
        if nu <= tau0 {
            continue;
        }
        let nv = v.slice_norms()[j];
        let along = grid.nodal_inner(&u.slices()[j], &v.slices()[j]) / nu;
        let val = (nv * nv - along * along).max(0.0) / nu;
        if val > cap {
            return Extended::Infinite;
        }
        acc += u.tgrid().weight(j) * val;
    }
    Extended::Finite(acc)
}

/// `(Y'(f) h, Y''(f) h^2, Y'''(f) h^3)` for `Y(f) = ||f||_{L^2}`.
pub fn upsilon2_derivs(grid: &SpaceGrid, f: &[f64], h: &[f64]) -> Result<(f64, f64, f64)> {
    check_len(grid.len(), f.len())?;
    check_len(grid.len(), h.len())?;
    let nf = grid.nodal_norm(f);
    if nf == 0.0 {
        return Err(Error::Singular("the L2 norm is not differentiable at f = 0".into()));
    }
    let fh = grid.nodal_inner(f, h);
    let hh = grid.nodal_inner(h, h);
    let d1 = fh / nf;
    let d2 = hh / nf - fh * fh / nf.powi(3);
    let d3 = 3.0 / nf.powi(3) * (fh.powi(3) / (nf * nf) - hh * fh);
    Ok((d1, d2, d3))
}

/// Coefficients `(p - q, q - 1)` of the two integrals in `Psi''`.
pub fn psi_second_coefficients(p: f64, q: f64) -> (f64, f64) {
    (p - q, q - 1.0)
}

fn check_pq(p: f64, q: f64) -> Result<()> {
    if !(q >= 2.0) || !q.is_finite() {
        return Err(Error::config("cost.q_norm", format!("requires q >= 2, got {q}")));
    }
    if !(p > 2.0 || p == q) || !p.is_finite() {
        return Err(Error::config("cost.p_norm", format!("requires p > 2 or p = q, got p = {p}, q = {q}")));
    }
    Ok(())
}

/// Max-scaled slice data: `m = max |y|`, `yhat = y/m`, `nhat = ||yhat||_q`.
struct SliceScale {
    m: f64,
    yhat: Vec<f64>,
    nhat: f64,
}

fn slice_scale(grid: &SpaceGrid, y: &[f64], q: f64) -> Option<SliceScale> {
    let m = y.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m == 0.0 {
        return None;
    }
    let yhat: Vec<f64> = y.iter().map(|x| x / m).collect();
    let s: f64 = yhat.iter().map(|x| x.abs().powf(q)).sum();
    let nhat = (grid.quadrature_weight() * s).powf(1.0 / q);
    Some(SliceScale { m, yhat, nhat })
}

fn check_slices(grid: &SpaceGrid, tgrid: &TimeGrid, fields: &[&[Vec<f64>]]) -> Result<()> {
    for f in fields {
        check_len(tgrid.len(), f.len())?;
        for s in f.iter() {
            check_len(grid.len(), s.len())?;
        }
    }
    Ok(())
}

/// `||y(t)||^{p-q} |y(t)|^{q-2} y(t)` per slice, the gradient of
/// `||y(t)||^p / p`.
pub fn psi_field_pq(grid: &SpaceGrid, y: &[Vec<f64>], p: f64, q: f64) -> Result<Vec<Vec<f64>>> {
    check_pq(p, q)?;
    y.iter()
        .map(|s| {
            check_len(grid.len(), s.len())?;
            Ok(match slice_scale(grid, s, q) {
                None => vec![0.0; s.len()],
                Some(sc) => {
                    let c = sc.m.powf(p - 1.0) * sc.nhat.powf(p - q);
                    sc.yhat.iter().map(|x| c * x.abs().powf(q - 2.0) * x).collect()
                }
            })
        })
        .collect()
}

/// `Psi(y) = (1/p) ||y||_{L^p L^q}^p`.
pub fn psi_pq(grid: &SpaceGrid, tgrid: &TimeGrid, y: &[Vec<f64>], p: f64, q: f64) -> Result<f64> {
    check_pq(p, q)?;
    check_slices(grid, tgrid, &[y])?;
    Ok(y
        .iter()
        .enumerate()
        .map(|(j, s)| match slice_scale(grid, s, q) {
            None => 0.0,
            Some(sc) => tgrid.weight(j) * (sc.m * sc.nhat).powf(p) / p,
        })
        .sum())
}

/// `Psi'(y) h = int ||y||^{p-q} <|y|^{q-2} y, h>`.
pub fn psi_pq_first(grid: &SpaceGrid, tgrid: &TimeGrid, y: &[Vec<f64>], h: &[Vec<f64>], p: f64, q: f64) -> Result<f64> {
    check_slices(grid, tgrid, &[y, h])?;
    let g = psi_field_pq(grid, y, p, q)?;
    Ok((0..tgrid.len()).map(|j| tgrid.weight(j) * grid.nodal_inner(&g[j], &h[j])).sum())
}

/// `Psi''(y)(h1, h2) = (p-q) int ||y||^{p-2q} <|y|^{q-2}y, h1><|y|^{q-2}y, h2>
///  + (q-1) int ||y||^{p-q} <|y|^{q-2}, h1 h2>`.
pub fn psi_pq_second(
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    y: &[Vec<f64>],
    h1: &[Vec<f64>],
    h2: &[Vec<f64>],
    p: f64,
    q: f64,
) -> Result<f64> {
    check_pq(p, q)?;
    check_slices(grid, tgrid, &[y, h1, h2])?;
    let (c1, c2) = psi_second_coefficients(p, q);
    let mut acc = 0.0;
    for j in 0..tgrid.len() {
        let Some(sc) = slice_scale(grid, &y[j], q) else {
            continue;
        };
        let g: Vec<f64> = sc.yhat.iter().map(|x| x.abs().powf(q - 2.0) * x).collect();
        let a1 = grid.nodal_inner(&g, &h1[j]);
        let a2 = grid.nodal_inner(&g, &h2[j]);
        let b: f64 = grid.quadrature_weight()
            * sc.yhat
                .iter()
                .zip(h1[j].iter().zip(&h2[j]))
                .map(|(x, (u, v))| x.abs().powf(q - 2.0) * u * v)
                .sum::<f64>();
        let val = sc.m.powf(p - 2.0) * (c1 * sc.nhat.powf(p - 2.0 * q) * a1 * a2 + c2 * sc.nhat.powf(p - q) * b);
        acc += tgrid.weight(j) * val;
    }
    Ok(acc)
}
