//! Subcommands of the `critwave` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::checkpoint::write_field;
use crate::checks::{self, CheckTable, Which};
use crate::config::{manufactured_state, RunConfig, Setup};
use crate::error::{Error, Result};
use crate::kkt::{audit, KKTReport};
use crate::norms::{energy, MixedNormReport};
use crate::optimizer::{optimize, Termination};
use crate::report::{write_json, write_text, RunManifest};
use crate::solver::{solve_forward, ControlTrajectory};

/// Outcome of a command: files written and whether all checks passed.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
    pub summary: String,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } | Error::Aborted { .. } => 3,
        Error::Singular(_) | Error::Undefined(_) => 4,
        _ => 2,
    }
}

struct Run {
    cfg: RunConfig,
    setup: Setup,
    out: PathBuf,
    started: Instant,
    files: Vec<PathBuf>,
}

impl Run {
    fn new(cfg: RunConfig, config_dir: &Path, out: Option<&Path>) -> Result<Run> {
        let started = Instant::now();
        let setup = cfg.setup(config_dir)?;
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run {
            cfg,
            setup,
            out,
            started,
            files: Vec::new(),
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.out.join(name);
        write_json(&p, value)?;
        self.files.push(p);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.out.join(name);
        write_text(&p, text)?;
        self.files.push(p);
        Ok(())
    }

    fn field(&mut self, name: &str, slices: &[Vec<f64>]) -> Result<()> {
        let p = self.out.join(format!("{name}.bin"));
        let side = write_field(&p, name, &self.setup.problem.grid, &self.setup.problem.tgrid, slices)?;
        self.files.push(p);
        self.files.push(side);
        Ok(())
    }

    fn finish(mut self, command: &str, passed: bool, summary: String) -> Result<Outcome> {
        let normalized = self.cfg.to_dotted();
        self.text("config.toml", &normalized)?;
        let manifest = RunManifest::new(
            command,
            &normalized,
            self.started.elapsed().as_secs_f64(),
            &self.out,
            &self.files,
        )?;
        let p = self.out.join("manifest.json");
        write_json(&p, &manifest)?;
        self.files.push(p);
        Ok(Outcome {
            files: self.files,
            passed,
            summary,
        })
    }
}

fn energy_csv(t: &[f64], e: &[f64]) -> String {
    let mut s = String::from("t,energy\n");
    for (a, b) in t.iter().zip(e) {
        s.push_str(&format!("{a:.16e},{b:.16e}\n"));
    }
    s
}

/// Forward solve; writes the trajectory, norms and energy history. A
/// `manufactured` control additionally produces the error ladder.
pub fn cmd_solve(cfg: RunConfig, config_dir: &Path, out: Option<&Path>) -> Result<Outcome> {
    let mut run = Run::new(cfg, config_dir, out)?;
    let problem = run.setup.problem.clone();
    let u = run.setup.control.clone();
    let traj = solve_forward(&u, &problem.init, &problem.solver)?;
    let report: MixedNormReport = traj.monitor().cloned().expect("forward solves attach the monitor");
    run.field("state_y", &traj.nodal_y()?)?;
    run.field("state_yt", &traj.nodal_yt()?)?;
    run.json("norms.json", &report)?;
    let e = energy(&traj, Some(&u), problem.solver.potential_power())?;
    run.text("energy.csv", &energy_csv(&problem.tgrid.nodes(), &e))?;
    let mut summary = format!(
        "L4L12 = {:.6e}  L5L10 = {:.6e}  LinfL6 = {:.6e}  energy drift = {:.3e}",
        report.l4l12, report.l5l10, report.linf_l6, report.energy_drift
    );
    if run.cfg.control.u.trim().starts_with("manufactured") {
        let table = manufactured_ladder(&run.setup)?;
        summary.push_str(&format!("\n{table}"));
        run.text("manufactured_errors.csv", &table)?;
    }
    run.finish("solve", true, summary)
}

/// Max nodal error against `sin(t) phi_1` on three halvings of `dt`.
pub fn manufactured_ladder(setup: &Setup) -> Result<String> {
    let problem = &setup.problem;
    let power = problem.solver.power as i32;
    let mut s = String::from("n_t,dt,max_error,observed_order\n");
    let mut prev: Option<f64> = None;
    for k in 0..3 {
        let t = problem.tgrid.refined(1 << k);
        let u = crate::config::manufactured_forcing(&problem.grid, t, power);
        let mut init = problem.init.clone();
        let (y0, y1) = manufactured_state(&problem.grid, 0.0);
        init.y0 = y0;
        init.y1 = y1;
        let traj = solve_forward(&u, &init, &problem.solver)?;
        let ys = traj.nodal_y()?;
        let mut err = 0.0f64;
        for (j, tj) in t.nodes().iter().enumerate() {
            let exact = manufactured_state(&problem.grid, *tj).0;
            for (a, b) in ys[j].iter().zip(&exact) {
                err = err.max((a - b).abs());
            }
        }
        let order = prev.map_or(f64::NAN, |p| (p / err).log2());
        s.push_str(&format!("{},{:.16e},{:.16e},{:.16e}\n", t.steps(), t.dt(), err, order));
        prev = Some(err);
    }
    Ok(s)
}

fn kkt_passes(r: &KKTReport) -> bool {
    let s = &r.summary;
    s.fonc.gradient_residual <= s.tol_kkt
        && s.fonc.complementarity_residual <= s.tol_kkt
        && s.fonc.tangent_violation <= s.tol_kkt
        && s.lambda_zero_max <= 1.0 + s.tol_kkt
        && s.mu_min >= 0.0
}

fn kkt_summary(r: &KKTReport) -> String {
    let s = &r.summary;
    format!(
        "gradient residual = {:.3e}  complementarity = {:.3e}  tangent violation = {:.3e}  max ||lambda|| on zero slices = {:.6}  sparse nodes = {}  sets I/A+/A0 = {:?}  min SONC sample = {:.3e}  (tol = {:.3e})",
        s.fonc.gradient_residual,
        s.fonc.complementarity_residual,
        s.fonc.tangent_violation,
        s.lambda_zero_max,
        s.sparse_nodes,
        s.counts_i_aplus_a0,
        s.sonc_min,
        s.tol_kkt
    )
}

/// Optimizer followed by the KKT audit.
pub fn cmd_optimize(cfg: RunConfig, config_dir: &Path, out: Option<&Path>) -> Result<Outcome> {
    let mut run = Run::new(cfg, config_dir, out)?;
    let problem = run.setup.problem.clone();
    let omega = run.setup.omega.clone();
    let res = optimize(&problem, &run.setup.control, &omega, &run.cfg.optimizer)?;
    run.text("iterates.csv", &res.log.to_csv())?;
    run.field("control", res.u.slices())?;
    run.field("state_y", &res.first_order.state.nodal_y()?)?;
    run.json("cost.json", &res.first_order.cost)?;
    let report = audit(&problem, &res.u, &res.first_order, &omega, &run.cfg.kkt)?;
    run.json("kkt.json", &report)?;
    let summary = format!(
        "termination = {:?} after {} iterations, residual = {:.3e}, l_r = {:.16e}\n{}",
        res.termination,
        res.log.records.len() - 1,
        res.residual,
        res.first_order.cost.total,
        kkt_summary(&report)
    );
    let passed = res.termination == Termination::Converged;
    run.finish("optimize", passed, summary)
}

/// KKT audit of `<out>/control.bin` if present, otherwise of `control.u`.
pub fn cmd_audit(cfg: RunConfig, config_dir: &Path, out: Option<&Path>) -> Result<Outcome> {
    let mut run = Run::new(cfg, config_dir, out)?;
    let problem = run.setup.problem.clone();
    let stored = run.out.join("control.bin");
    let u = if stored.exists() {
        let slices = crate::checkpoint::read_field(&stored, &problem.grid, &problem.tgrid)?;
        ControlTrajectory::from_slices(problem.grid.clone(), problem.tgrid, slices)?
    } else {
        run.setup.control.clone()
    };
    let first = problem.grad_F(&u)?;
    let report = audit(&problem, &u, &first, &run.setup.omega, &run.cfg.kkt)?;
    run.json("kkt.json", &report)?;
    run.json("cost.json", &first.cost)?;
    let passed = kkt_passes(&report);
    run.finish("audit", passed, kkt_summary(&report))
}

pub fn cmd_check(cfg: RunConfig, config_dir: &Path, out: Option<&Path>, which: Which) -> Result<Outcome> {
    let mut run = Run::new(cfg, config_dir, out)?;
    let table: CheckTable = checks::run(which, &run.setup, run.cfg.seed)?;
    let name = format!("check_{}.json", format!("{which:?}").to_lowercase());
    run.json(&name, &table)?;
    let passed = table.all_pass();
    run.finish("check", passed, table.render())
}
