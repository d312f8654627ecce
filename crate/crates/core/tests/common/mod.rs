#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use critwave::config::{RunConfig, Setup};
use critwave::{ControlTrajectory, CostParams, InitialData, Problem, SolverParams, SpaceGrid, TimeGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_setup(name: &str, overrides: &[&str]) -> Setup {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let path = configs_dir().join(name);
    let cfg = RunConfig::load(&path, &ov).expect("config parses");
    cfg.setup(&configs_dir()).expect("setup builds")
}

pub fn load_config(name: &str, overrides: &[&str]) -> RunConfig {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::load(&configs_dir().join(name), &ov).expect("config parses")
}

pub fn grid1(len: f64, n: usize) -> Arc<SpaceGrid> {
    Arc::new(SpaceGrid::new(1, &[len], &[n]).unwrap())
}

/// `sin(k pi x / L)` at the nodes of a 1D grid.
pub fn sine_mode(grid: &SpaceGrid, k: usize) -> Vec<f64> {
    let l = grid.extents()[0];
    grid.sample(|x| (k as f64 * PI * x[0] / l).sin())
}

pub fn gaussian(grid: &SpaceGrid, amp: f64, centre: f64, width: f64) -> Vec<f64> {
    let l = grid.extents()[0];
    grid.sample(|x| amp * (-((x[0] - centre * l) / (width * l)).powi(2)).exp())
}

pub fn problem(
    grid: &Arc<SpaceGrid>,
    tgrid: TimeGrid,
    y0: Vec<f64>,
    y1: Vec<f64>,
    solver: SolverParams,
    gamma: f64,
    beta1: f64,
    beta2: f64,
    y_d: Vec<f64>,
) -> Problem {
    Problem::new(
        grid.clone(),
        tgrid,
        InitialData { y0, y1 },
        solver,
        CostParams::new(gamma, beta1, beta2, y_d).unwrap(),
    )
    .unwrap()
}

/// Control with independent uniform nodal values.
pub fn white_noise(grid: &Arc<SpaceGrid>, tgrid: TimeGrid, rng: &mut ChaCha8Rng) -> ControlTrajectory {
    let m = grid.len();
    let slices = (0..tgrid.len()).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    ControlTrajectory::from_slices(grid.clone(), tgrid, slices).unwrap()
}

/// Dense model of the linear 1D problem on the sine grid, built from the
/// closed-form solution of the discrete scheme:
/// `y_k(T) = cos(w_k T) a_k + sin(w_k T)/w_k b_k + sum_j w_j sin(w_k (T - t_j))/w_k u_{j,k}`.
pub struct DenseLinear {
    /// Maps stacked nodal control values to nodal `y(T)`.
    pub g: DMatrix<f64>,
    /// Nodal `y(T)` of the free evolution.
    pub free: DVector<f64>,
    /// Trapezoid weight of each stacked unknown.
    pub weights: DVector<f64>,
    pub h: f64,
    pub n: usize,
    pub nt: usize,
}

impl DenseLinear {
    pub fn new(len: f64, n: usize, tgrid: &TimeGrid, y0: &[f64], y1: &[f64]) -> Self {
        let h = len / (n + 1) as f64;
        let x: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        let s = DMatrix::from_fn(n, n, |i, k| ((k + 1) as f64 * PI * x[i] / len).sin());
        // Exact analysis transform on the sine grid: c = (2 h / L) S^T f.
        let a = s.transpose() * (2.0 * h / len);
        let w: Vec<f64> = (1..=n).map(|k| k as f64 * PI / len).collect();
        let t_final = tgrid.t_final();
        let nt = tgrid.len();
        let mut g = DMatrix::zeros(n, n * nt);
        for j in 0..nt {
            let tj = tgrid.node(j);
            let wj = tgrid.weight(j);
            let d = DMatrix::from_fn(n, n, |k, l| if k == l { wj * (w[k] * (t_final - tj)).sin() / w[k] } else { 0.0 });
            let block = &s * d * &a;
            g.view_mut((0, j * n), (n, n)).copy_from(&block);
        }
        let c0 = &a * DVector::from_column_slice(y0);
        let c1 = &a * DVector::from_column_slice(y1);
        let free_modal = DVector::from_fn(n, |k, _| (w[k] * t_final).cos() * c0[k] + (w[k] * t_final).sin() / w[k] * c1[k]);
        let free = &s * free_modal;
        let weights = DVector::from_fn(n * nt, |i, _| tgrid.weight(i / n));
        DenseLinear { g, free, weights, h, n, nt }
    }

    pub fn stack(&self, u: &ControlTrajectory) -> DVector<f64> {
        DVector::from_iterator(self.n * self.nt, u.slices().iter().flatten().copied())
    }

    pub fn unstack(&self, v: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..self.nt).map(|j| v.rows(j * self.n, self.n).iter().copied().collect()).collect()
    }

    /// `1/2 ||G u + free - y_d||^2 + beta2/2 ||u||^2`, weighted.
    pub fn cost(&self, u: &DVector<f64>, y_d: &[f64], beta2: f64) -> f64 {
        let r = &self.g * u + &self.free - DVector::from_column_slice(y_d);
        let reg: f64 = u.iter().zip(self.weights.iter()).map(|(a, w)| w * a * a).sum();
        0.5 * self.h * r.dot(&r) + 0.5 * beta2 * self.h * reg
    }

    /// Unconstrained minimizer of [`DenseLinear::cost`].
    pub fn minimizer(&self, y_d: &[f64], beta2: f64) -> DVector<f64> {
        let r = &self.free - DVector::from_column_slice(y_d);
        let mut m = self.g.transpose() * &self.g;
        for i in 0..m.nrows() {
            m[(i, i)] += beta2 * self.weights[i];
        }
        let rhs = -(self.g.transpose() * r);
        m.lu().solve(&rhs).expect("positive definite normal equations")
    }

    /// Smallest eigenvalue of the Hessian in the weighted L2(L2) metric.
    pub fn hessian_lambda_min(&self, beta2: f64) -> f64 {
        let dinv = self.weights.map(|w| 1.0 / w.sqrt());
        let mut m = self.g.transpose() * &self.g;
        for i in 0..m.nrows() {
            for k in 0..m.ncols() {
                m[(i, k)] *= dinv[i] * dinv[k];
            }
            m[(i, i)] += beta2;
        }
        m.symmetric_eigenvalues().min()
    }
}
