//! Experiment drivers behind the `riskpde` binary. Each command returns a
//! serializable report or a [`CommandError`] carrying the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dynamics::{adjoint_solve, forward_solve, Problem};
use crate::objective::{gradient_from_adjoint, inner_product_u, norm_u, ObjectiveBreakdown};
use crate::optimizer::{random_control, solve, SolveReport};
use crate::oracle::{fd_directional, kkt_solve};
use crate::stochastic::{expectation, std_field, FieldRole, SpaceTimeField};

pub const GRADCHECK_PAIRS: usize = 20;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_THRESHOLD: f64 = 1e-6;
pub const ORACLE_THRESHOLD: f64 = 1e-6;
/// Optimizer tolerance used when comparing against the direct solve.
pub const ORACLE_TOL_GRAD: f64 = 1e-10;
/// Adjoint scaling applied by the `perturb_adjoint` hook.
pub const ADJOINT_PERTURBATION: f64 = 1.01;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("gradient check failed: max relative error {max_rel_error:.3e} (worst pair seed {worst_seed})")]
    GradCheck { max_rel_error: f64, worst_seed: u64 },
    #[error("optimizer and direct solve disagree: relative difference {0:.3e}")]
    OracleMismatch(f64),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Solver(_) => 3,
            CommandError::Io(_) => 4,
            CommandError::GradCheck { .. } => 5,
            CommandError::OracleMismatch(_) => 6,
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e.0)
    }
}

impl From<crate::error::Error> for CommandError {
    fn from(e: crate::error::Error) -> Self {
        CommandError::Solver(e.to_string())
    }
}

pub type CommandResult<T> = std::result::Result<T, CommandError>;

/// Contents of `report.json`. Wall-clock timings live in `timings.json` so
/// that this file is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub objective: ObjectiveBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub projected_grad_norm: f64,
    pub complementarity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub pairs: usize,
    pub h_fd: f64,
    pub max_rel_error: f64,
    pub worst_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub rel_difference: f64,
    pub u_norm_kkt: f64,
    pub optimizer_iterations: usize,
    pub optimizer_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub j_total: f64,
    pub tracking: f64,
    /// `½ ‖std(y*)‖²`, computed directly so it is defined for `α = 0` too.
    pub variance: f64,
    pub control_norm: f64,
    pub converged: bool,
}

fn io_err(path: &Path, e: std::io::Error) -> CommandError {
    CommandError::Io(format!("{}: {e}", path.display()))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CommandResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn prepare_dir(dir: &Path) -> CommandResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// `n_t` rows (levels `m = 1..=n_t`) by `n_interior` columns.
pub fn field_csv(field: &SpaceTimeField) -> String {
    let ni = field.n_interior();
    let mut out = (1..=ni).map(|i| format!("node_{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for m in 1..=field.n_t() {
        let row: Vec<String> = field.level(m).iter().map(|v| num(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn convergence_csv(report: &SolveReport) -> String {
    let mut out = String::from("iter,J,J_tracking,J_variance,J_control,proj_grad_norm,step\n");
    for (k, b) in report.breakdown_history.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{}",
            num(b.total),
            num(b.tracking),
            num(b.variance_raw),
            num(b.control),
            num(report.projected_grad_norms[k]),
            num(report.step_sizes[k]),
        );
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,J_total,tracking,variance,control_norm\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            num(r.alpha),
            num(r.j_total),
            num(r.tracking),
            num(r.variance),
            num(r.control_norm)
        );
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Runs the optimizer from `u = 0` and writes the report, convergence
/// history and mean fields into `out_dir`. A run that exhausts its iteration
/// budget still writes its files before failing with exit code 3.
pub fn cmd_solve(cfg: &RunConfig, out_dir: &Path) -> CommandResult<RunReport> {
    let start = Instant::now();
    prepare_dir(out_dir)?;
    let problem = cfg.build_problem()?;
    let (u, sr) = solve(&problem, &problem.zeros(FieldRole::Control), &cfg.solver_options())?;
    let y = forward_solve(&problem, &u)?;
    let grid = problem.grid();

    let report = RunReport {
        config: cfg.clone(),
        objective: sr.final_objective(),
        iterations: sr.iterations,
        converged: sr.converged,
        projected_grad_norm: sr.projected_grad_norms.last().copied().unwrap_or(f64::NAN),
        complementarity_residual: sr.complementarity_residual,
    };
    write_file(out_dir, "report.json", &to_json(&report))?;
    write_file(out_dir, "convergence.csv", &convergence_csv(&sr))?;
    write_file(out_dir, "u_star.csv", &field_csv(&expectation(&u, grid)?))?;
    write_file(out_dir, "mean_y.csv", &field_csv(&expectation(&y, grid)?))?;
    write_file(out_dir, "std_y.csv", &field_csv(&std_field(&y, grid)?))?;
    let timings = Timings {
        solve_seconds: sr.wall_time,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    write_file(out_dir, "timings.json", &to_json(&timings))?;

    if !report.converged {
        return Err(CommandError::Solver(format!(
            "no convergence after {} iterations (projected gradient norm {:.3e})",
            report.iterations, report.projected_grad_norm
        )));
    }
    Ok(report)
}

/// Relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares central differences of `J` with `⟨βu + λ, w⟩_U` over
/// [`GRADCHECK_PAIRS`] seeded pairs. Pair `k` draws `u` from seed
/// `seed + 2k` and `w` from `seed + 2k + 1`, and is reported by the former.
pub fn gradcheck(problem: &Problem, seed: u64, perturb_adjoint: bool) -> CommandResult<GradCheckReport> {
    let mut worst = (0.0f64, seed);
    for k in 0..GRADCHECK_PAIRS as u64 {
        let pair_seed = seed.wrapping_add(2 * k);
        let u = random_control(problem.shape(), pair_seed);
        let w = random_control(problem.shape(), pair_seed.wrapping_add(1));
        let y = forward_solve(problem, &u)?;
        let mut lambda = adjoint_solve(problem, &y)?;
        if perturb_adjoint {
            lambda = lambda.map(|v| ADJOINT_PERTURBATION * v);
        }
        let g = gradient_from_adjoint(problem, &u, &lambda)?;
        let adjoint = inner_product_u(problem, &g, &w)?;
        let fd = fd_directional(problem, &u, &w, GRADCHECK_STEP)?;
        let err = relative_error(fd, adjoint);
        if err > worst.0 || k == 0 {
            worst = (err, pair_seed);
        }
    }
    Ok(GradCheckReport {
        pairs: GRADCHECK_PAIRS,
        h_fd: GRADCHECK_STEP,
        max_rel_error: worst.0,
        worst_seed: worst.1,
    })
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> CommandResult<GradCheckReport> {
    let problem = cfg.build_problem()?;
    let report = gradcheck(&problem, cfg.seed(), cfg.perturb_adjoint)?;
    if report.max_rel_error.is_nan() || report.max_rel_error > GRADCHECK_THRESHOLD {
        return Err(CommandError::GradCheck {
            max_rel_error: report.max_rel_error,
            worst_seed: report.worst_seed,
        });
    }
    Ok(report)
}

/// Solves the unconstrained problem by projected gradient (with `tol_grad`
/// tightened to at most [`ORACLE_TOL_GRAD`]) and by the dense direct solve.
pub fn cmd_oracle_compare(cfg: &RunConfig) -> CommandResult<OracleReport> {
    if cfg.problem.constrained {
        return Err(CommandError::Config(
            "problem.constrained must be false: the direct KKT oracle only covers the unconstrained problem".into(),
        ));
    }
    let problem = cfg.build_problem()?;
    let mut opts = cfg.solver_options();
    opts.tol_grad = opts.tol_grad.min(ORACLE_TOL_GRAD);
    let (u, sr) = solve(&problem, &problem.zeros(FieldRole::Control), &opts)?;
    let kkt = kkt_solve(&problem)?;
    let u_norm_kkt = norm_u(&problem, &kkt.control)?;
    let diff = norm_u(&problem, &u.lin_comb(1.0, &kkt.control, -1.0)?)?;
    let report = OracleReport {
        rel_difference: diff / (1.0 + u_norm_kkt),
        u_norm_kkt,
        optimizer_iterations: sr.iterations,
        optimizer_converged: sr.converged,
    };
    if report.rel_difference.is_nan() || report.rel_difference > ORACLE_THRESHOLD {
        return Err(CommandError::OracleMismatch(report.rel_difference));
    }
    Ok(report)
}

pub fn parse_alphas(text: &str) -> CommandResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CommandError::Config(format!("--alphas: {s:?}: {e}")))
        })
        .collect()
}

/// One solve per `α`, each from `u = 0`.
pub fn cmd_alpha_sweep(cfg: &RunConfig, alphas: &[f64]) -> CommandResult<Vec<SweepRow>> {
    if alphas.len() < 2 {
        return Err(CommandError::Config("--alphas: need at least 2 values".into()));
    }
    if alphas.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(CommandError::Config("--alphas: values must be strictly ascending".into()));
    }
    if alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(CommandError::Config("--alphas: values must be ≥ 0".into()));
    }
    let base = cfg.build_problem()?;
    let opts = cfg.solver_options();
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut spec = base.spec().clone();
        spec.alpha = alpha;
        let problem = base.with_spec(spec)?;
        let (u, sr) = solve(&problem, &problem.zeros(FieldRole::Control), &opts)?;
        let b = sr.final_objective();
        rows.push(SweepRow {
            alpha,
            j_total: b.total,
            tracking: b.tracking,
            variance: b.state_variance,
            control_norm: norm_u(&problem, &u)?,
            converged: sr.converged,
        });
    }
    Ok(rows)
}

/// Writes `alpha_sweep.csv` and `alpha_sweep.json`.
pub fn write_sweep(cfg: &RunConfig, rows: &[SweepRow], out_dir: &Path) -> CommandResult<()> {
    #[derive(Serialize)]
    struct SweepReport<'a> {
        config: &'a RunConfig,
        rows: &'a [SweepRow],
    }
    prepare_dir(out_dir)?;
    write_file(out_dir, "alpha_sweep.csv", &sweep_csv(rows))?;
    write_file(out_dir, "alpha_sweep.json", &to_json(&SweepReport { config: cfg, rows }))
}
