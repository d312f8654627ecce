//! Box domain with homogeneous Dirichlet conditions, discrete sine
//! transforms and the exact linear wave propagator.
//!
//! Nodal fields live on the interior points `x_j = j L / (n + 1)`,
//! `j = 1..=n`, of every axis and are stored row-major (last axis fastest).
//! Spectral fields hold the coefficients of the product sine basis
//! `prod_i sin(k_i pi x_i / L_i)`, `k_i = 1..=n_i`, in the same
//! lexicographic layout. The pair `to_spectral` / `to_physical` is the
//! (scaled) type-I discrete sine transform and is an exact inverse pair.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

/// Default zero-padding factor for dealiased nonlinear products.
pub const DEFAULT_PADDING: usize = 2;

/// Sine-series coefficients of a field on a [`SpaceGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField(pub Vec<f64>);

impl Deref for SpectralField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for SpectralField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Spectral phase-space pair `(y, dy/dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePair {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
}

/// Type-I sine transform of a fixed length backed by a complex FFT of
/// length `2 (len + 1)`.
#[derive(Clone)]
struct SinePlan {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl SinePlan {
    fn new(planner: &mut FftPlanner<f64>, len: usize) -> Self {
        SinePlan {
            len,
            fft: planner.plan_fft_forward(2 * (len + 1)),
        }
    }

    /// `out[k-1] = sum_{j=1}^{len} input[j-1] sin(pi j k / (len + 1))`.
    ///
    /// `input` may be shorter than `len` (missing entries are zero) and
    /// `out` may be shorter than `len` (higher outputs are dropped).
    fn apply(&self, input: &[f64], out: &mut [f64], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        let m = self.len + 1;
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for (j, &x) in input.iter().enumerate() {
            buf[j + 1].re = x;
            buf[2 * m - 1 - j].re = -x;
        }
        self.fft.process_with_scratch(buf, scratch);
        for (k, o) in out.iter_mut().enumerate() {
            *o = -0.5 * buf[k + 1].im;
        }
    }

    fn buffers(&self) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
        (
            vec![Complex::new(0.0, 0.0); 2 * (self.len + 1)],
            vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()],
        )
    }
}

/// Tensor-product box `(0, L_1) x ... x (0, L_d)` with its Dirichlet
/// eigenpairs.
#[derive(Clone)]
pub struct SpaceGrid {
    dim: usize,
    extents: Vec<f64>,
    n: Vec<usize>,
    padding: usize,
    padded_n: Vec<usize>,
    eigenvalues: Vec<f64>,
    frequencies: Vec<f64>,
    native: Vec<SinePlan>,
    padded: Vec<SinePlan>,
}

impl fmt::Debug for SpaceGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpaceGrid")
            .field("dim", &self.dim)
            .field("extents", &self.extents)
            .field("n", &self.n)
            .field("padding", &self.padding)
            .finish()
    }
}

impl PartialEq for SpaceGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.extents == other.extents
            && self.n == other.n
            && self.padding == other.padding
    }
}

impl SpaceGrid {
    /// Builds a grid with the default dealiasing padding.
    pub fn new(dim: usize, extents: &[f64], n: &[usize]) -> Result<Self> {
        Self::with_padding(dim, extents, n, DEFAULT_PADDING)
    }

    pub fn with_padding(dim: usize, extents: &[f64], n: &[usize], padding: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::config("grid.dim", format!("must be 1, 2 or 3, got {dim}")));
        }
        if extents.len() != dim {
            return Err(Error::config(
                "grid.extents",
                format!("expected {dim} entries, got {}", extents.len()),
            ));
        }
        if n.len() != dim {
            return Err(Error::config("grid.n", format!("expected {dim} entries, got {}", n.len())));
        }
        if let Some(l) = extents.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::config("grid.extents", format!("extent must be positive and finite, got {l}")));
        }
        if let Some(k) = n.iter().find(|k| **k < 2) {
            return Err(Error::config("grid.n", format!("need at least 2 nodes per axis, got {k}")));
        }
        if padding < 1 {
            return Err(Error::config("grid.padding", "padding factor must be >= 1"));
        }
        let padded_n: Vec<usize> = n.iter().map(|&k| padding * (k + 1) - 1).collect();

        let total: usize = n.iter().product();
        let mut eigenvalues = Vec::with_capacity(total);
        for flat in 0..total {
            let k = unflatten(flat, n);
            let lam = (0..dim)
                .map(|i| {
                    let w = (k[i] + 1) as f64 * PI / extents[i];
                    w * w
                })
                .sum::<f64>();
            eigenvalues.push(lam);
        }
        let frequencies = eigenvalues.iter().map(|l| l.sqrt()).collect();

        let mut planner = FftPlanner::new();
        let native = n.iter().map(|&k| SinePlan::new(&mut planner, k)).collect();
        let padded = padded_n.iter().map(|&k| SinePlan::new(&mut planner, k)).collect();

        Ok(SpaceGrid {
            dim,
            extents: extents.to_vec(),
            n: n.to_vec(),
            padding,
            padded_n,
            eigenvalues,
            frequencies,
            native,
            padded,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn shape(&self) -> &[usize] {
        &self.n
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn padded_shape(&self) -> &[usize] {
        &self.padded_n
    }

    /// Number of nodes, equal to the number of retained modes.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenvalues of `-Delta` for every retained mode, lexicographic order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `sqrt(lambda_k)`.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// One-based multi-index of the mode stored at `flat`.
    pub fn mode_index(&self, flat: usize) -> Vec<usize> {
        unflatten(flat, &self.n).into_iter().take(self.dim).map(|k| k + 1).collect()
    }

    /// Flat storage position of the one-based multi-index `k`.
    pub fn mode_position(&self, k: &[usize]) -> Option<usize> {
        if k.len() != self.dim || k.iter().zip(&self.n).any(|(&ki, &ni)| ki == 0 || ki > ni) {
            return None;
        }
        Some(k.iter().zip(&self.n).fold(0, |acc, (&ki, &ni)| acc * ni + (ki - 1)))
    }

    /// Coordinates of the nodes along `axis`.
    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        let n = self.n[axis];
        let h = self.extents[axis] / (n + 1) as f64;
        (1..=n).map(|j| j as f64 * h).collect()
    }

    /// Coordinates of the node stored at `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        let idx = unflatten(flat, &self.n);
        (0..self.dim)
            .map(|i| (idx[i] + 1) as f64 * self.extents[i] / (self.n[i] + 1) as f64)
            .collect()
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|j| f(&self.node(j))).collect()
    }

    /// Nodal quadrature weight `prod_i L_i / (n_i + 1)`.
    pub fn quadrature_weight(&self) -> f64 {
        self.extents.iter().zip(&self.n).map(|(l, &k)| l / (k + 1) as f64).product()
    }

    /// Quadrature weight of the padded grid.
    pub fn padded_quadrature_weight(&self) -> f64 {
        self.extents
            .iter()
            .zip(&self.padded_n)
            .map(|(l, &k)| l / (k + 1) as f64)
            .product()
    }

    /// `prod_i L_i / 2`: the L2 inner product expressed in coefficients,
    /// `<f, g> = kappa * sum_k f_k g_k`.
    pub fn modal_weight(&self) -> f64 {
        self.extents.iter().map(|l| 0.5 * l).product()
    }

    /// L2 inner product of two spectral fields.
    pub fn modal_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.modal_weight() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// L2 inner product of two nodal fields.
    pub fn nodal_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.quadrature_weight() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn nodal_norm(&self, a: &[f64]) -> f64 {
        self.nodal_inner(a, a).sqrt()
    }

    /// Squared energy norm `||grad y||^2 + ||v||^2` of a spectral pair.
    pub fn energy_norm_sq(&self, y: &[f64], v: &[f64]) -> f64 {
        self.modal_weight()
            * y.iter()
                .zip(v)
                .zip(&self.eigenvalues)
                .map(|((a, b), lam)| lam * a * a + b * b)
                .sum::<f64>()
    }

    pub fn to_spectral(&self, field: &[f64]) -> Result<SpectralField> {
        check_len(self.len(), field.len())?;
        let scale: f64 = self.n.iter().map(|&k| 2.0 / (k + 1) as f64).product();
        let mut c = self.transform(field, &self.n, &self.n, &self.native);
        c.iter_mut().for_each(|x| *x *= scale);
        Ok(SpectralField(c))
    }

    pub fn to_physical(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), coeffs.len())?;
        Ok(self.transform(coeffs, &self.n, &self.n, &self.native))
    }

    /// Evaluates a spectral field on the padded grid.
    pub fn to_padded(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.len());
        self.transform(coeffs, &self.n, &self.padded_n, &self.padded)
    }

    /// Sine coefficients of padded nodal data, truncated to the retained modes.
    pub fn from_padded(&self, values: &[f64]) -> Vec<f64> {
        let scale: f64 = self.padded_n.iter().map(|&k| 2.0 / (k + 1) as f64).product();
        let mut c = self.transform(values, &self.padded_n, &self.n, &self.padded);
        c.iter_mut().for_each(|x| *x *= scale);
        c
    }

    /// Evaluates `f` pointwise on the padded grid at the synthesized
    /// values of `inputs` and returns the truncated coefficients of the
    /// result. This is the dealiased Galerkin evaluation of a nonlinear
    /// pointwise map.
    pub fn pointwise_modal(&self, inputs: &[&[f64]], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let padded: Vec<Vec<f64>> = inputs.iter().map(|c| self.to_padded(c)).collect();
        let len = padded.first().map_or(0, Vec::len);
        let mut args = vec![0.0; inputs.len()];
        let values: Vec<f64> = (0..len)
            .map(|j| {
                for (a, p) in args.iter_mut().zip(&padded) {
                    *a = p[j];
                }
                f(&args)
            })
            .collect();
        self.from_padded(&values)
    }

    /// Dealiased spectral coefficients of `y^power` for spectral `y`.
    pub fn power_modal(&self, y: &[f64], power: u32) -> Vec<f64> {
        let p = power as i32;
        self.pointwise_modal(&[y], |a| a[0].powi(p))
    }

    /// Pointwise odd power of a nodal field, evaluated on the padded grid
    /// and truncated back to the retained modes.
    pub fn nonlinear_apply(&self, y: &[f64], power: u32) -> Result<Vec<f64>> {
        check_power(power)?;
        let c = self.to_spectral(y)?;
        self.to_physical(&self.power_modal(&c, power))
    }

    /// Exact semigroup `e^{A dt}` acting modewise on `(y, y_t)`.
    pub fn linear_propagate(&self, xi: &StatePair, dt: f64) -> Result<StatePair> {
        check_len(self.len(), xi.y.len())?;
        check_len(self.len(), xi.v.len())?;
        let prop = Propagator::new(self, dt);
        let mut out = xi.clone();
        prop.apply(&mut out.y, &mut out.v);
        Ok(out)
    }

    /// Applies the sine transform along every axis, changing the axis
    /// lengths from `in_shape` to `out_shape`.
    fn transform(&self, data: &[f64], in_shape: &[usize], out_shape: &[usize], plans: &[SinePlan]) -> Vec<f64> {
        let mut cur_shape = in_shape.to_vec();
        let mut cur = data.to_vec();
        for axis in 0..self.dim {
            let plan = &plans[axis];
            let len_in = cur_shape[axis];
            let len_out = out_shape[axis];
            let outer: usize = cur_shape[..axis].iter().product();
            let inner: usize = cur_shape[axis + 1..].iter().product();
            let mut next = vec![0.0; outer * len_out * inner];
            let (mut buf, mut scratch) = plan.buffers();
            let mut line = vec![0.0; len_in];
            let mut res = vec![0.0; len_out];
            for o in 0..outer {
                for i in 0..inner {
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = cur[(o * len_in + j) * inner + i];
                    }
                    plan.apply(&line, &mut res, &mut buf, &mut scratch);
                    for (j, r) in res.iter().enumerate() {
                        next[(o * len_out + j) * inner + i] = *r;
                    }
                }
            }
            cur = next;
            cur_shape[axis] = len_out;
        }
        cur
    }
}

pub(crate) fn check_power(power: u32) -> Result<()> {
    if power == 0 || power % 2 == 0 {
        return Err(Error::config(
            "physics.power",
            format!("defocusing nonlinearity needs an odd power >= 1, got {power}"),
        ));
    }
    Ok(())
}

fn unflatten(mut flat: usize, n: &[usize]) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for axis in (0..n.len()).rev() {
        idx[axis] = flat % n[axis];
        flat /= n[axis];
    }
    idx
}

/// Cached modewise rotation for a fixed step `dt`.
#[derive(Clone, Debug)]
pub struct Propagator {
    cos: Vec<f64>,
    /// `sin(w dt) / w`
    sinc: Vec<f64>,
    /// `w sin(w dt)`
    wsin: Vec<f64>,
}

impl Propagator {
    pub fn new(grid: &SpaceGrid, dt: f64) -> Self {
        let mut cos = Vec::with_capacity(grid.len());
        let mut sinc = Vec::with_capacity(grid.len());
        let mut wsin = Vec::with_capacity(grid.len());
        for &w in grid.frequencies() {
            let (s, c) = (w * dt).sin_cos();
            cos.push(c);
            sinc.push(s / w);
            wsin.push(w * s);
        }
        Propagator { cos, sinc, wsin }
    }

    pub fn apply(&self, y: &mut [f64], v: &mut [f64]) {
        for k in 0..y.len() {
            let (a, b) = (y[k], v[k]);
            y[k] = self.cos[k] * a + self.sinc[k] * b;
            v[k] = -self.wsin[k] * a + self.cos[k] * b;
        }
    }
}
