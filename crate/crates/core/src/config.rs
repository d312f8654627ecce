//! Run configuration: flat dotted keys (`grid.dim = 1`), parsed as TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::ConstraintProfile;
use crate::grid::{SpaceGrid, DEFAULT_PADDING};
use crate::kkt::KktOptions;
use crate::norms::TimeGrid;
use crate::objective::{CostParams, Problem};
use crate::optimizer::OptimizeConfig;
use crate::solver::{ControlTrajectory, InitialData, SolverParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub n: Vec<usize>,
    #[serde(default = "default_padding")]
    pub padding: usize,
}

fn default_padding() -> usize {
    DEFAULT_PADDING
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub n_t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub power: u32,
    pub nonlinear: bool,
    pub blowup_threshold: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let s = SolverParams::default();
        PhysicsSection {
            power: s.power,
            nonlinear: s.nonlinear,
            blowup_threshold: s.blowup_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub y0: String,
    pub y1: String,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            y0: "zero".into(),
            y1: "zero".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    /// Control for `solve`, starting guess for `optimize`, evaluation
    /// point for `audit` and `check`.
    pub u: String,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection { u: "zero".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub y_d: String,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            gamma: 0.0,
            beta1: 0.0,
            beta2: 1e-2,
            y_d: "zero".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSection {
    pub omega: String,
}

impl Default for ConstraintSection {
    fn default() -> Self {
        ConstraintSection {
            omega: "constant value=1e6".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub constraint: ConstraintSection,
    #[serde(default)]
    pub optimizer: OptimizeConfig,
    #[serde(default)]
    pub kkt: KktOptions,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    1
}

/// Everything a command needs, built from a validated configuration.
#[derive(Clone, Debug)]
pub struct Setup {
    pub problem: Problem,
    pub omega: ConstraintProfile,
    pub control: ControlTrajectory,
}

impl RunConfig {
    /// Parses dotted-key text and applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(error_key(&e), e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(error_key(&e), e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    /// One `key = value` line per leaf, sorted by section.
    pub fn to_dotted(&self) -> String {
        let value = toml::Value::try_from(self).expect("configuration serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.join("\n") + "\n"
    }

    /// Builds grids, problem data and the control; resolves relative file
    /// references against `base`.
    pub fn setup(&self, base: &Path) -> Result<Setup> {
        let g = &self.grid;
        if g.extents.len() != g.dim {
            return Err(Error::config("grid.extents", format!("expected {} entries, got {}", g.dim, g.extents.len())));
        }
        if g.n.len() != g.dim {
            return Err(Error::config("grid.n", format!("expected {} entries, got {}", g.dim, g.n.len())));
        }
        let grid = Arc::new(SpaceGrid::with_padding(g.dim, &g.extents, &g.n, g.padding)?);
        let tgrid = TimeGrid::new(self.time.t_final, self.time.n_t)?;
        let solver = SolverParams {
            power: self.physics.power,
            nonlinear: self.physics.nonlinear,
            blowup_threshold: self.physics.blowup_threshold,
        };
        let init = InitialData {
            y0: spatial_field(&grid, &self.initial.y0, base, "initial.y0")?,
            y1: spatial_field(&grid, &self.initial.y1, base, "initial.y1")?,
        };
        let y_d = spatial_field(&grid, &self.cost.y_d, base, "cost.y_d")?;
        let cost = CostParams::new(self.cost.gamma, self.cost.beta1, self.cost.beta2, y_d)?;
        let problem = Problem::new(grid.clone(), tgrid, init, solver, cost)?;
        let omega = omega_profile(&tgrid, &self.constraint.omega, base)?;
        let control = control_field(&grid, tgrid, &self.control.u, base, "control.u")?;
        self.optimizer.validate()?;
        if !(self.kkt.active_tol > 0.0) {
            return Err(Error::config("kkt.active_tol", "must be positive"));
        }
        Ok(Setup { problem, omega, control })
    }
}

fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    // Serde reports missing fields as "missing field `name`".
    if let Some(rest) = msg.split('`').nth(1) {
        return rest.to_string();
    }
    "config".into()
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must have the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

/// `name key=value ...` builtin specification.
struct Builtin<'a> {
    name: &'a str,
    args: Vec<(&'a str, &'a str)>,
}

fn parse_builtin<'a>(spec: &'a str, field: &str) -> Result<Builtin<'a>> {
    let mut it = spec.split_whitespace();
    let name = it.next().ok_or_else(|| Error::config(field, "empty specification"))?;
    let mut args = Vec::new();
    for tok in it {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::config(field, format!("expected key=value, got `{tok}`")))?;
        args.push((k, v));
    }
    Ok(Builtin { name, args })
}

impl Builtin<'_> {
    fn num(&self, key: &str, default: f64, field: &str) -> Result<f64> {
        match self.args.iter().find(|(k, _)| *k == key) {
            None => Ok(default),
            Some((_, v)) => v
                .parse()
                .map_err(|_| Error::config(field, format!("`{key}` must be a number, got `{v}`"))),
        }
    }

    fn ints(&self, key: &str, dim: usize, field: &str) -> Result<Vec<usize>> {
        match self.args.iter().find(|(k, _)| *k == key) {
            None => Ok(vec![1; dim]),
            Some((_, v)) => {
                let ks: Vec<usize> = v
                    .split(',')
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::config(field, format!("`{key}` must be positive integers, got `{v}`")))?;
                if ks.len() != dim || ks.contains(&0) {
                    return Err(Error::config(field, format!("`{key}` needs {dim} positive entries")));
                }
                Ok(ks)
            }
        }
    }

    fn check_keys(&self, allowed: &[&str], field: &str) -> Result<()> {
        for (k, _) in &self.args {
            if !allowed.contains(k) {
                return Err(Error::config(field, format!("unknown parameter `{k}` for `{}`", self.name)));
            }
        }
        Ok(())
    }
}

fn is_path(spec: &str) -> bool {
    let first = spec.split_whitespace().next().unwrap_or("");
    first.contains('/') || first.contains('.') && !first.chars().next().is_some_and(|c| c.is_ascii_digit())
}

fn resolve(base: &Path, spec: &str) -> PathBuf {
    let p = Path::new(spec.trim());
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// `prod_i sin(k_i pi x_i / L_i)`.
fn mode_shape(grid: &SpaceGrid, k: &[usize]) -> Vec<f64> {
    let ext = grid.extents().to_vec();
    let k = k.to_vec();
    grid.sample(move |x| {
        x.iter()
            .zip(&ext)
            .zip(&k)
            .map(|((xi, l), ki)| (*ki as f64 * std::f64::consts::PI * xi / l).sin())
            .product()
    })
}

/// Builtins: `zero`, `mode amp=A k=k1,..`, `bump amp=A width=W` (centred
/// Gaussian times the boundary-vanishing factor); otherwise a text file of
/// nodal values in row-major order.
pub fn spatial_field(grid: &SpaceGrid, spec: &str, base: &Path, field: &str) -> Result<Vec<f64>> {
    if is_path(spec) {
        let path = resolve(base, spec);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let vals: Vec<f64> = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(field, format!("{} contains a non-numeric entry", path.display())))?;
        if vals.len() != grid.len() {
            return Err(Error::config(field, format!("expected {} nodal values, got {}", grid.len(), vals.len())));
        }
        return Ok(vals);
    }
    let b = parse_builtin(spec, field)?;
    match b.name {
        "zero" => {
            b.check_keys(&[], field)?;
            Ok(vec![0.0; grid.len()])
        }
        "mode" => {
            b.check_keys(&["amp", "k"], field)?;
            let amp = b.num("amp", 1.0, field)?;
            let k = b.ints("k", grid.dim(), field)?;
            Ok(mode_shape(grid, &k).into_iter().map(|v| amp * v).collect())
        }
        "bump" => {
            b.check_keys(&["amp", "width"], field)?;
            let amp = b.num("amp", 1.0, field)?;
            let width = b.num("width", 0.2, field)?;
            if !(width > 0.0) {
                return Err(Error::config(field, "bump width must be positive"));
            }
            let ext = grid.extents().to_vec();
            Ok(grid.sample(|x| {
                x.iter()
                    .zip(&ext)
                    .map(|(xi, l)| {
                        let s = xi / l;
                        let g = (-(s - 0.5).powi(2) / (2.0 * width * width)).exp();
                        4.0 * s * (1.0 - s) * g
                    })
                    .product::<f64>()
                    * amp
            }))
        }
        other => Err(Error::config(field, format!("unknown field builtin `{other}`"))),
    }
}

/// Builtins: `zero`; `separable amp=A freq=F k=..` for
/// `A cos(F t) prod sin(k pi x/L)`; `manufactured` for the forcing that
/// makes `y = sin(t) prod sin(pi x/L)` an exact quintic solution.
/// Otherwise a control checkpoint written by `optimize`.
pub fn control_field(grid: &Arc<SpaceGrid>, tgrid: TimeGrid, spec: &str, base: &Path, field: &str) -> Result<ControlTrajectory> {
    if is_path(spec) {
        let path = resolve(base, spec);
        let slices = crate::checkpoint::read_field(&path, grid, &tgrid)?;
        return ControlTrajectory::from_slices(grid.clone(), tgrid, slices);
    }
    let b = parse_builtin(spec, field)?;
    match b.name {
        "zero" => {
            b.check_keys(&[], field)?;
            Ok(ControlTrajectory::zeros(grid.clone(), tgrid))
        }
        "separable" => {
            b.check_keys(&["amp", "freq", "k"], field)?;
            let amp = b.num("amp", 1.0, field)?;
            let freq = b.num("freq", 1.0, field)?;
            let shape = mode_shape(grid, &b.ints("k", grid.dim(), field)?);
            let slices = tgrid
                .nodes()
                .iter()
                .map(|t| shape.iter().map(|s| amp * (freq * t).cos() * s).collect())
                .collect();
            ControlTrajectory::from_slices(grid.clone(), tgrid, slices)
        }
        "manufactured" => {
            b.check_keys(&["power"], field)?;
            let power = b.num("power", 5.0, field)? as i32;
            Ok(manufactured_forcing(grid, tgrid, power))
        }
        other => Err(Error::config(field, format!("unknown control builtin `{other}`"))),
    }
}

/// Forcing `(lambda_1 - 1) y + y^p` for `y = sin(t) phi_1(x)`.
pub fn manufactured_forcing(grid: &Arc<SpaceGrid>, tgrid: TimeGrid, power: i32) -> ControlTrajectory {
    let shape = mode_shape(grid, &vec![1; grid.dim()]);
    let lambda1 = grid.eigenvalues()[0];
    let slices = tgrid
        .nodes()
        .iter()
        .map(|t| {
            shape
                .iter()
                .map(|s| {
                    let y = t.sin() * s;
                    (lambda1 - 1.0) * y + y.powi(power)
                })
                .collect()
        })
        .collect();
    ControlTrajectory::from_slices(grid.clone(), tgrid, slices).expect("sampled on the grid")
}

/// Exact manufactured state `sin(t) phi_1` and its velocity at time `t`.
pub fn manufactured_state(grid: &SpaceGrid, t: f64) -> (Vec<f64>, Vec<f64>) {
    let shape = mode_shape(grid, &vec![1; grid.dim()]);
    (
        shape.iter().map(|s| t.sin() * s).collect(),
        shape.iter().map(|s| t.cos() * s).collect(),
    )
}

/// Builtins: `constant value=W`, `linear_decay value=W`; otherwise a CSV
/// with columns `t, omega`.
pub fn omega_profile(tgrid: &TimeGrid, spec: &str, base: &Path) -> Result<ConstraintProfile> {
    let field = "constraint.omega";
    if is_path(spec) {
        return ConstraintProfile::from_csv(&resolve(base, spec), tgrid);
    }
    let b = parse_builtin(spec, field)?;
    b.check_keys(&["value"], field)?;
    let value = b.num("value", 1.0, field)?;
    match b.name {
        "constant" => ConstraintProfile::constant(tgrid, value),
        "linear_decay" => ConstraintProfile::linear_decay(tgrid, value),
        other => Err(Error::config(field, format!("unknown profile `{other}`"))),
    }
}
