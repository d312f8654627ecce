//! Multiplier reconstruction and first/second order optimality checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::feasible::{active_sets, critical_cone_test, project_uad, ConstraintProfile, NodeSet};
use crate::grid::SpaceGrid;
use crate::norms::TimeGrid;
use crate::objective::{j_second, upsilon2_derivs, zero_tolerance, Extended, FirstOrder, Problem, J_SECOND_CAP};
use crate::solver::ControlTrajectory;

/// Subgradient `lambda` of `j` at `u`, per node.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaField {
    pub values: Vec<Vec<f64>>,
    /// `||u(t)|| <= tau0`.
    pub zero_slice: Vec<bool>,
    /// Nodes of `A0`, where only `||lambda|| <= 1` is known.
    pub unresolved: Vec<bool>,
}

impl LambdaField {
    pub fn norms(&self, grid: &SpaceGrid) -> Vec<f64> {
        self.values.iter().map(|l| grid.nodal_norm(l)).collect()
    }
}

/// `lambda = u/||u||` on nonzero slices, `-p/beta1` on zero slices.
pub fn compute_lambda(u: &ControlTrajectory, p: &ControlTrajectory, beta1: f64, sets: &[NodeSet]) -> Result<LambdaField> {
    u.same_grids(p)?;
    check_len(u.tgrid().len(), sets.len())?;
    let tau0 = zero_tolerance(u);
    let grid = u.grid();
    let mut values = Vec::with_capacity(sets.len());
    let mut zero_slice = Vec::with_capacity(sets.len());
    let mut unresolved = Vec::with_capacity(sets.len());
    for (j, set) in sets.iter().enumerate() {
        let nu = u.slice_norms()[j];
        let zero = nu <= tau0;
        zero_slice.push(zero);
        unresolved.push(*set == NodeSet::ActiveZero);
        let lam: Vec<f64> = if !zero {
            u.slices()[j].iter().map(|x| x / nu).collect()
        } else if *set == NodeSet::ActiveZero {
            // Any element of the unit ball is admissible; report the
            // projection of -p/beta1 when defined.
            if beta1 > 0.0 {
                let l: Vec<f64> = p.slices()[j].iter().map(|x| -x / beta1).collect();
                let n = grid.nodal_norm(&l);
                if n > 1.0 {
                    l.iter().map(|x| x / n).collect()
                } else {
                    l
                }
            } else {
                vec![0.0; grid.len()]
            }
        } else if beta1 > 0.0 {
            p.slices()[j].iter().map(|x| -x / beta1).collect()
        } else {
            return Err(Error::Undefined(format!(
                "beta1 = 0 leaves the subgradient on the zero slice at node {j} undetermined"
            )));
        };
        values.push(lam);
    }
    Ok(LambdaField {
        values,
        zero_slice,
        unresolved,
    })
}

/// `mu = ||p + beta1 lambda + beta2 u||` on `A+`, `0` on `I`, undefined on `A0`.
pub fn compute_mu(
    u: &ControlTrajectory,
    p: &ControlTrajectory,
    lambda: &LambdaField,
    beta1: f64,
    beta2: f64,
    sets: &[NodeSet],
) -> Vec<Option<f64>> {
    let grid = u.grid();
    sets.iter()
        .enumerate()
        .map(|(j, set)| match set {
            NodeSet::Inactive => Some(0.0),
            NodeSet::ActiveZero => None,
            NodeSet::ActivePositive => {
                let r = residual_vector(&u.slices()[j], &p.slices()[j], &lambda.values[j], beta1, beta2);
                Some(grid.nodal_norm(&r))
            }
        })
        .collect()
}

fn residual_vector(u: &[f64], p: &[f64], lambda: &[f64], beta1: f64, beta2: f64) -> Vec<f64> {
    u.iter()
        .zip(p)
        .zip(lambda)
        .map(|((uk, pk), lk)| pk + beta1 * lk + beta2 * uk)
        .collect()
}

/// Pointwise first-order residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoncResiduals {
    /// `max_t ||p + beta1 lambda + beta2 u + mu u/||u|| ||` over `I` and `A+`.
    pub gradient_residual: f64,
    /// `max_t mu |(||u|| - omega)|` over `I` and `A+`.
    pub complementarity_residual: f64,
    /// `max_t ||p + beta1 lambda + beta2 u||` over `I`.
    pub inactive_identity: f64,
    /// `max(0, -int <p + beta1 lambda + beta2 u, v>)` over sampled tangent `v`.
    pub tangent_violation: f64,
    pub tangent_samples: usize,
}

/// Random smooth control with a few modes in space and time.
pub fn random_direction(grid: &std::sync::Arc<SpaceGrid>, tgrid: TimeGrid, rng: &mut ChaCha8Rng) -> ControlTrajectory {
    let modes = grid.len().min(4);
    let coef: Vec<[f64; 3]> = (0..modes)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.3)])
        .collect();
    let t_final = tgrid.t_final();
    let basis: Vec<Vec<f64>> = (0..modes)
        .map(|m| {
            let mut c = vec![0.0; grid.len()];
            c[m] = 1.0;
            grid.to_physical(&c).expect("basis field")
        })
        .collect();
    let slices = tgrid
        .nodes()
        .iter()
        .map(|t| {
            let mut s = vec![0.0; grid.len()];
            for (m, [a, f, ph]) in coef.iter().enumerate() {
                let amp = a * (f * t / t_final + ph).cos();
                for (sk, bk) in s.iter_mut().zip(&basis[m]) {
                    *sk += amp * bk;
                }
            }
            s
        })
        .collect();
    ControlTrajectory::from_slices(grid.clone(), tgrid, slices).expect("shapes match")
}

/// Modifies `v` so it lies in the tangent cone: the outward radial part
/// is removed on `A+` and the slice is zeroed on `A0`.
pub fn make_tangent(v: &ControlTrajectory, u: &ControlTrajectory, sets: &[NodeSet]) -> ControlTrajectory {
    let grid = u.grid().clone();
    v.map_slices(|j, s| match sets[j] {
        NodeSet::Inactive => s.to_vec(),
        NodeSet::ActiveZero => vec![0.0; s.len()],
        NodeSet::ActivePositive => {
            let nu = u.slice_norms()[j];
            if nu == 0.0 {
                return s.to_vec();
            }
            let c = grid.nodal_inner(s, &u.slices()[j]) / (nu * nu);
            if c > 0.0 {
                s.iter().zip(&u.slices()[j]).map(|(a, b)| a - 2.0 * c * b).collect()
            } else {
                s.to_vec()
            }
        }
    })
}

#[allow(clippy::too_many_arguments)]
pub fn fonc_residuals(
    u: &ControlTrajectory,
    p: &ControlTrajectory,
    lambda: &LambdaField,
    mu: &[Option<f64>],
    sets: &[NodeSet],
    omega: &ConstraintProfile,
    beta1: f64,
    beta2: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FoncResiduals> {
    u.same_grids(p)?;
    let grid = u.grid();
    let mut gradient_residual = 0.0f64;
    let mut complementarity_residual = 0.0f64;
    let mut inactive_identity = 0.0f64;
    let mut fields = Vec::with_capacity(sets.len());
    for (j, set) in sets.iter().enumerate() {
        let r = residual_vector(&u.slices()[j], &p.slices()[j], &lambda.values[j], beta1, beta2);
        match (set, mu[j]) {
            (NodeSet::ActiveZero, _) | (_, None) => {}
            (_, Some(m)) => {
                let nu = u.slice_norms()[j];
                let full: Vec<f64> = if nu > 0.0 {
                    r.iter().zip(&u.slices()[j]).map(|(a, b)| a + m * b / nu).collect()
                } else {
                    r.clone()
                };
                gradient_residual = gradient_residual.max(grid.nodal_norm(&full));
                complementarity_residual = complementarity_residual.max(m * (nu - omega.omega()[j]).abs());
                if *set == NodeSet::Inactive {
                    inactive_identity = inactive_identity.max(grid.nodal_norm(&r));
                }
            }
        }
        fields.push(r);
    }
    let g = ControlTrajectory::from_slices(grid.clone(), *u.tgrid(), fields)?;
    let mut tangent_violation = 0.0f64;
    for _ in 0..samples {
        let v = make_tangent(&random_direction(grid, *u.tgrid(), rng), u, sets);
        // A0 nodes carry no multiplier and the direction vanishes there.
        tangent_violation = tangent_violation.max(-g.inner(&v));
    }
    Ok(FoncResiduals {
        gradient_residual,
        complementarity_residual,
        inactive_identity,
        tangent_violation: tangent_violation.max(0.0),
        tangent_samples: samples,
    })
}

fn multiplier_term(u: &ControlTrajectory, mu: &[Option<f64>], sets: &[NodeSet], v: &ControlTrajectory, parallel: bool) -> f64 {
    let grid = u.grid();
    let mut acc = 0.0;
    for (j, set) in sets.iter().enumerate() {
        if *set != NodeSet::ActivePositive {
            continue;
        }
        let (Some(m), nu) = (mu[j], u.slice_norms()[j]) else {
            continue;
        };
        if nu == 0.0 {
            continue;
        }
        let nv = v.slice_norms()[j];
        let along = if parallel {
            grid.nodal_inner(&u.slices()[j], &v.slices()[j]) / nu
        } else {
            0.0
        };
        acc += u.tgrid().weight(j) * m * (nv * nv - along * along) / nu;
    }
    acc
}

/// `F''(u) v^2 + beta1 j''(u; v^2) + int_{A+} mu/||u|| (||v||^2 - <u/||u||, v>^2)`.
pub fn sonc_form(
    problem: &Problem,
    first: &FirstOrder,
    u: &ControlTrajectory,
    mu: &[Option<f64>],
    sets: &[NodeSet],
    v: &ControlTrajectory,
) -> Result<Extended> {
    let f2 = problem.F_second(first, v)?;
    let j2 = j_second(u, v, J_SECOND_CAP).scaled(problem.cost.beta1);
    Ok(j2.plus(f2 + multiplier_term(u, mu, sets, v, true)))
}

/// Variant with the quadratic penalty `int_{A+} mu ||v||^2 / ||u||`.
pub fn sonc_form_quadratic_penalty(
    problem: &Problem,
    first: &FirstOrder,
    u: &ControlTrajectory,
    mu: &[Option<f64>],
    sets: &[NodeSet],
    v: &ControlTrajectory,
) -> Result<Extended> {
    let f2 = problem.F_second(first, v)?;
    let j2 = j_second(u, v, J_SECOND_CAP).scaled(problem.cost.beta1);
    Ok(j2.plus(f2 + multiplier_term(u, mu, sets, v, false)))
}

/// Samples directions of the critical cone at a stationary point:
/// zero on zero slices and on `A0`, orthogonal to `u` on `A+`, free on
/// the remaining inactive nodes. The last two samples are indicator-masked
/// multiples of `u` on the nonzero inactive nodes.
pub fn critical_directions(u: &ControlTrajectory, sets: &[NodeSet], count: usize, rng: &mut ChaCha8Rng) -> Vec<ControlTrajectory> {
    let grid = u.grid().clone();
    let tau0 = zero_tolerance(u);
    let shape = |v: &ControlTrajectory| {
        v.map_slices(|j, s| {
            let nu = u.slice_norms()[j];
            if nu <= tau0 || sets[j] == NodeSet::ActiveZero {
                return vec![0.0; s.len()];
            }
            if sets[j] == NodeSet::ActivePositive {
                let c = grid.nodal_inner(s, &u.slices()[j]) / (nu * nu);
                return s.iter().zip(&u.slices()[j]).map(|(a, b)| a - c * b).collect();
            }
            s.to_vec()
        })
    };
    let mut out = Vec::with_capacity(count);
    let masked = count.min(2);
    for _ in 0..count - masked {
        out.push(shape(&random_direction(&grid, *u.tgrid(), rng)));
    }
    for _ in 0..masked {
        let keep: Vec<bool> = (0..sets.len()).map(|_| rng.gen_bool(0.5)).collect();
        out.push(shape(&u.map_slices(|j, s| {
            if keep[j] && sets[j] == NodeSet::Inactive {
                s.to_vec()
            } else {
                vec![0.0; s.len()]
            }
        })));
    }
    out
}

/// Empirical quadratic growth `l_r(u) - l_r(ubar) >= delta/2 ||u - ubar||^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Largest admissible `delta` per (direction, radius) probe.
    pub deltas: Vec<f64>,
    pub min_delta: f64,
    pub probes: usize,
}

/// Probes `ubar + r d` (projected onto `U_ad`) for every direction and radius.
pub fn ssoc_probe(
    problem: &Problem,
    ubar: &ControlTrajectory,
    omega: &ConstraintProfile,
    directions: &[ControlTrajectory],
    radii: &[f64],
) -> Result<GrowthReport> {
    if problem.cost.beta2 <= 0.0 {
        return Err(Error::config("cost.beta2", "the growth probe requires beta2 > 0"));
    }
    let base = problem.eval_lr(ubar)?;
    let mut deltas = Vec::new();
    for d in directions {
        let nd = d.norm_l2l2();
        if nd == 0.0 {
            continue;
        }
        for &r in radii {
            let u = project_uad(&ubar.axpy(r / nd, d), omega)?;
            let dist2 = u.sub(ubar).inner(&u.sub(ubar));
            if dist2 == 0.0 {
                continue;
            }
            deltas.push(2.0 * (problem.eval_lr(&u)? - base) / dist2);
        }
    }
    let min_delta = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GrowthReport {
        probes: deltas.len(),
        deltas,
        min_delta,
    })
}

/// Outcome of the three-part Taylor check for `Y(f) = ||f||` on the nodes `M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    /// `int (Y(f+h) - Y(f)) >= int Y'(f) h`.
    pub convexity: bool,
    /// `|int eta Y''(f) h^2| <= 2/alpha ||eta||_inf int ||h||^2`.
    pub quadratic_bound: bool,
    /// `|int eta (Y(f+h) - Y(f) - Y'h - Y''h^2/2)| <= alpha_theta^{-2} ||eta||_inf ||h||_{L^3 L^2}^3`.
    pub remainder_bound: bool,
    pub remainder: f64,
    /// `remainder / (||eta||_inf ||h||^3_{L^3 L^2})`.
    pub fitted_constant: f64,
    /// `min_M (||f|| - ||h||)`.
    pub alpha_theta: f64,
}

impl TaylorReport {
    pub fn all_pass(&self) -> bool {
        self.convexity && self.quadratic_bound && self.remainder_bound
    }
}

pub fn taylor_norm_checks(
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    f: &[Vec<f64>],
    h: &[Vec<f64>],
    eta: &[f64],
    mask: &[bool],
    alpha: f64,
) -> Result<TaylorReport> {
    for v in [f, h] {
        check_len(tgrid.len(), v.len())?;
    }
    check_len(tgrid.len(), eta.len())?;
    check_len(tgrid.len(), mask.len())?;
    if !(alpha > 0.0) {
        return Err(Error::config("taylor.alpha", "the quadratic and remainder bounds need alpha > 0"));
    }
    let eta_inf = eta.iter().zip(mask).filter(|(_, m)| **m).fold(0.0f64, |a, (e, _)| a.max(e.abs()));
    let (mut lhs_i, mut rhs_i) = (0.0, 0.0);
    let (mut quad, mut h2) = (0.0, 0.0);
    let (mut rem, mut h3) = (0.0, 0.0);
    let mut alpha_theta = f64::INFINITY;
    let mut scale = 0.0f64;
    for j in 0..tgrid.len() {
        if !mask[j] {
            continue;
        }
        let w = tgrid.weight(j);
        let nf = grid.nodal_norm(&f[j]);
        let nh = grid.nodal_norm(&h[j]);
        if nf < alpha * (1.0 - 1e-12) {
            return Err(Error::config("taylor.alpha", format!("||f|| = {nf} < alpha at node {j}")));
        }
        let fh: Vec<f64> = f[j].iter().zip(&h[j]).map(|(a, b)| a + b).collect();
        let nfh = grid.nodal_norm(&fh);
        let (d1, d2, _) = upsilon2_derivs(grid, &f[j], &h[j])?;
        lhs_i += w * (nfh - nf);
        rhs_i += w * d1;
        quad += w * eta[j] * d2;
        h2 += w * nh * nh;
        rem += w * eta[j] * (nfh - nf - d1 - 0.5 * d2);
        h3 += w * nh.powi(3);
        alpha_theta = alpha_theta.min(nf - nh);
        scale = scale.max(nf + nh);
    }
    let round = 1e-13 * (1.0 + scale) * tgrid.t_final();
    let rem = rem.abs();
    let bound_iii = if alpha_theta > 0.0 {
        eta_inf * h3 / (alpha_theta * alpha_theta)
    } else {
        f64::INFINITY
    };
    Ok(TaylorReport {
        convexity: lhs_i >= rhs_i - round,
        quadratic_bound: quad.abs() <= 2.0 / alpha * eta_inf * h2 + round,
        remainder_bound: alpha_theta > 0.0 && rem <= bound_iii + round,
        remainder: rem,
        fitted_constant: if eta_inf * h3 > 0.0 { rem / (eta_inf * h3) } else { 0.0 },
        alpha_theta,
    })
}

/// Audit options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KktOptions {
    /// Overrides the default `1e-6 (1 + ||p||_{inf,2})`.
    pub tol: Option<f64>,
    /// Relative tolerance of the active-set test.
    pub active_tol: f64,
    pub tangent_samples: usize,
    pub critical_samples: usize,
    pub seed: u64,
}

impl Default for KktOptions {
    fn default() -> Self {
        KktOptions {
            tol: None,
            active_tol: 1e-8,
            tangent_samples: 100,
            critical_samples: 20,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub t: f64,
    #[serde(rename = "||u||")]
    pub u_norm: f64,
    pub omega: f64,
    pub set: String,
    #[serde(rename = "||p||")]
    pub p_norm: f64,
    pub mu: Option<f64>,
    #[serde(rename = "||lambda||")]
    pub lambda_norm: f64,
    /// `||u|| <= tau0`.
    pub sparse: bool,
    /// `||p|| <= beta1 + tol`.
    pub certified: bool,
    /// `sparse == certified`, or the node is in `A0`.
    pub sparsity_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub id: usize,
    pub value: Extended,
    pub penalty_variant: Extended,
    /// `F'(u) v + beta1 j'(u; v)`.
    pub first_order: f64,
    pub critical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktSummary {
    pub tol_kkt: f64,
    pub tau0: f64,
    pub p_sup: f64,
    pub fonc: FoncResiduals,
    /// `max ||lambda(t)||` over zero slices outside `A0`.
    pub lambda_zero_max: f64,
    pub mu_min: f64,
    pub sparsity_consistent: bool,
    pub sonc_min: f64,
    pub counts_i_aplus_a0: [usize; 3],
    pub sparse_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KKTReport {
    pub nodes: Vec<NodeRow>,
    pub summary: KktSummary,
    pub curvature_samples: Vec<CurvatureSample>,
    #[serde(skip)]
    pub lambda: Option<LambdaField>,
    #[serde(skip)]
    pub sets: Vec<NodeSet>,
}

impl KKTReport {
    pub fn mu(&self) -> Vec<Option<f64>> {
        self.nodes.iter().map(|r| r.mu).collect()
    }
}

/// Full first and second order audit at `u` with precomputed first-order data.
pub fn audit(
    problem: &Problem,
    u: &ControlTrajectory,
    first: &FirstOrder,
    omega: &ConstraintProfile,
    opts: &KktOptions,
) -> Result<KKTReport> {
    let grid = u.grid();
    let (beta1, beta2) = (problem.cost.beta1, problem.cost.beta2);
    let p = &first.p;
    let p_sup = p.max_slice_norm();
    let tol = opts.tol.unwrap_or(1e-6 * (1.0 + p_sup));
    let tau0 = zero_tolerance(u);
    let sets = active_sets(u, omega, opts.active_tol)?;
    let lambda = compute_lambda(u, p, beta1, &sets)?;
    let mu = compute_mu(u, p, &lambda, beta1, beta2, &sets);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let fonc = fonc_residuals(u, p, &lambda, &mu, &sets, omega, beta1, beta2, opts.tangent_samples, &mut rng)?;

    let lambda_norms = lambda.norms(grid);
    let mut nodes = Vec::with_capacity(sets.len());
    let mut lambda_zero_max = 0.0f64;
    for (j, set) in sets.iter().enumerate() {
        let un = u.slice_norms()[j];
        let pn = p.slice_norms()[j];
        let sparse = un <= tau0;
        let certified = pn <= beta1 + tol;
        if sparse && *set != NodeSet::ActiveZero {
            lambda_zero_max = lambda_zero_max.max(lambda_norms[j]);
        }
        nodes.push(NodeRow {
            t: u.tgrid().node(j),
            u_norm: un,
            omega: omega.omega()[j],
            set: set.label().to_string(),
            p_norm: pn,
            mu: mu[j],
            lambda_norm: lambda_norms[j],
            sparse,
            certified,
            sparsity_flag: *set == NodeSet::ActiveZero || sparse == certified,
        });
    }

    let mut curvature_samples = Vec::new();
    for (id, v) in critical_directions(u, &sets, opts.critical_samples, &mut rng).iter().enumerate() {
        if v.norm_l2l2() == 0.0 {
            continue;
        }
        let crit = critical_cone_test(v, u, &sets, &first.gradient, beta1, tol)?;
        curvature_samples.push(CurvatureSample {
            id,
            value: sonc_form(problem, first, u, &mu, &sets, v)?,
            penalty_variant: sonc_form_quadratic_penalty(problem, first, u, &mu, &sets, v)?,
            first_order: crit.first_order.unwrap_or(0.0),
            critical: crit.pass,
        });
    }
    let sonc_min = curvature_samples.iter().map(|c| c.value.value()).fold(f64::INFINITY, f64::min);
    let counts = [NodeSet::Inactive, NodeSet::ActivePositive, NodeSet::ActiveZero].map(|s| sets.iter().filter(|x| **x == s).count());
    let summary = KktSummary {
        tol_kkt: tol,
        tau0,
        p_sup,
        fonc,
        lambda_zero_max,
        mu_min: mu.iter().flatten().copied().fold(f64::INFINITY, f64::min),
        sparsity_consistent: nodes.iter().all(|r| r.sparsity_flag),
        sonc_min,
        counts_i_aplus_a0: counts,
        sparse_nodes: nodes.iter().filter(|r| r.sparse).count(),
    };
    Ok(KKTReport {
        nodes,
        summary,
        curvature_samples,
        lambda: Some(lambda),
        sets,
    })
}
