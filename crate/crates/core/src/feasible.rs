//! Admissible set `U_ad = { u : ||u(t)|| <= omega(t) }`, its projection,
//! the prox of `tau ||.|| + indicator` and the cone tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::norms::TimeGrid;
use crate::objective::{j_dir, GradientField};
use crate::solver::ControlTrajectory;

/// Radii `omega(t_j) >= 0` sampled on the time nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintProfile {
    omega: Vec<f64>,
}

impl ConstraintProfile {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if let Some(j) = omega.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config(
                "constraint.omega",
                format!("radius at node {j} must be finite and nonnegative, got {}", omega[j]),
            ));
        }
        Ok(ConstraintProfile { omega })
    }

    pub fn constant(tgrid: &TimeGrid, value: f64) -> Result<Self> {
        Self::new(vec![value; tgrid.len()])
    }

    /// `omega(t) = value (1 - t/T)`, reaching zero at the final time.
    pub fn linear_decay(tgrid: &TimeGrid, value: f64) -> Result<Self> {
        Self::new(
            tgrid
                .nodes()
                .iter()
                .map(|t| (value * (1.0 - t / tgrid.t_final())).max(0.0))
                .collect(),
        )
    }

    /// Reads a CSV with columns `t, omega` whose times match the nodes.
    pub fn from_csv(path: &Path, tgrid: &TimeGrid) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut omega = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if line.is_empty() || line.starts_with('#') || (i == 0 && cols[0].parse::<f64>().is_err()) {
                continue;
            }
            if cols.len() != 2 {
                return Err(Error::Format(format!("{}:{}: expected two columns", path.display(), i + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("{}:{}: bad number `{s}`", path.display(), i + 1)))
            };
            let (t, w) = (parse(cols[0])?, parse(cols[1])?);
            let j = omega.len();
            if j >= tgrid.len() || (t - tgrid.node(j)).abs() > 1e-9 * (1.0 + tgrid.t_final()) {
                return Err(Error::config(
                    "constraint.omega",
                    format!("row {} at t = {t} does not match time node {j}", i + 1),
                ));
            }
            omega.push(w);
        }
        check_len(tgrid.len(), omega.len())?;
        Self::new(omega)
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Classification of a time node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeSet {
    /// `||u(t)|| < omega(t)`.
    Inactive,
    /// `||u(t)|| = omega(t) > 0`.
    ActivePositive,
    /// `omega(t) = 0`.
    ActiveZero,
}

impl NodeSet {
    pub fn label(self) -> &'static str {
        match self {
            NodeSet::Inactive => "I",
            NodeSet::ActivePositive => "A+",
            NodeSet::ActiveZero => "A0",
        }
    }
}

fn scale_slice(s: &[f64], c: f64) -> Vec<f64> {
    s.iter().map(|x| c * x).collect()
}

/// Nodewise radial projection onto `{ ||v(t)|| <= omega(t) }`.
pub fn project_uad(g: &ControlTrajectory, omega: &ConstraintProfile) -> Result<ControlTrajectory> {
    prox_composite(g, 0.0, omega)
}

/// Prox of `tau ||.||_{L^2} + indicator(||.|| <= omega)` per slice:
/// `clip(||g|| - tau, 0, omega) g / ||g||`.
///
/// In the trapezoidal `L^2(L^2)` metric the node weights of the
/// quadratic and of `j` cancel, so `tau = step * beta1` at every node.
pub fn prox_composite(g: &ControlTrajectory, tau: f64, omega: &ConstraintProfile) -> Result<ControlTrajectory> {
    check_len(g.tgrid().len(), omega.len())?;
    if !(tau >= 0.0) {
        return Err(Error::config("optimizer.step", "prox threshold must be nonnegative"));
    }
    let norms = g.slice_norms().to_vec();
    Ok(g.map_slices(|j, s| {
        let n = norms[j];
        let w = omega.omega[j];
        // Slack of a few ulps keeps the projection idempotent after rescaling.
        if tau == 0.0 && n <= w * (1.0 + 4.0 * f64::EPSILON) {
            return s.to_vec();
        }
        if n == 0.0 {
            return vec![0.0; s.len()];
        }
        let r = (n - tau).clamp(0.0, w);
        if r == 0.0 {
            vec![0.0; s.len()]
        } else {
            scale_slice(s, r / n)
        }
    }))
}

/// Partitions the time nodes into `I`, `A+`, `A0`.
pub fn active_sets(u: &ControlTrajectory, omega: &ConstraintProfile, tol: f64) -> Result<Vec<NodeSet>> {
    check_len(u.tgrid().len(), omega.len())?;
    if !(tol > 0.0) {
        return Err(Error::config("kkt.tol", "active-set tolerance must be positive"));
    }
    Ok(u
        .slice_norms()
        .iter()
        .zip(&omega.omega)
        .map(|(&n, &w)| {
            if w == 0.0 {
                NodeSet::ActiveZero
            } else if (n - w).abs() <= tol * (1.0 + w) {
                NodeSet::ActivePositive
            } else {
                NodeSet::Inactive
            }
        })
        .collect())
}

/// Outcome of a cone membership test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeTest {
    pub pass: bool,
    /// Nodes where the condition fails.
    pub violations: Vec<usize>,
    /// `F'(u) v + beta1 j'(u; v)` for critical-cone tests.
    pub first_order: Option<f64>,
}

/// `<v(t), u(t)> <= 0` on `A+`, `v(t) = 0` on `A0`.
pub fn tangent_cone_test(v: &ControlTrajectory, u: &ControlTrajectory, sets: &[NodeSet], tol: f64) -> Result<ConeTest> {
    u.same_grids(v)?;
    check_len(u.tgrid().len(), sets.len())?;
    let grid = u.grid();
    let mut violations = Vec::new();
    for (j, set) in sets.iter().enumerate() {
        let bad = match set {
            NodeSet::Inactive => false,
            NodeSet::ActivePositive => grid.nodal_inner(&v.slices()[j], &u.slices()[j]) > tol * (1.0 + u.slice_norms()[j]),
            NodeSet::ActiveZero => v.slice_norms()[j] > tol,
        };
        if bad {
            violations.push(j);
        }
    }
    Ok(ConeTest {
        pass: violations.is_empty(),
        violations,
        first_order: None,
    })
}

/// Tangent-cone membership plus `|F'(u) v + beta1 j'(u; v)| <= tol`.
pub fn critical_cone_test(
    v: &ControlTrajectory,
    u: &ControlTrajectory,
    sets: &[NodeSet],
    gradient: &GradientField,
    beta1: f64,
    tol: f64,
) -> Result<ConeTest> {
    let mut t = tangent_cone_test(v, u, sets, tol)?;
    let d = gradient.apply(v) + beta1 * j_dir(u, v);
    let scale = 1.0 + v.norm_l2l2();
    t.first_order = Some(d);
    if d.abs() > tol * scale {
        t.pass = false;
    }
    Ok(t)
}
