//! JSON run configuration.
//!
//! Every block except `solver`, `output` and `perturb_adjoint` is required.
//! Unknown keys are rejected, and parse errors name the offending key path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Problem, ProblemSpec, TargetSpec};
use crate::optimizer::SolverOptions;
use crate::spatial::SpatialMesh;
use crate::stochastic::{CollocationGrid, RandomFieldModel};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error, PartialEq)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n_elements: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub a0: f64,
    #[serde(default)]
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points_per_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Constant { value: f64 },
    SineRamp { amplitude: f64 },
    /// CSV with a header row, `n_t` data rows and one column per interior node.
    Table { table_path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub alpha: f64,
    pub beta: f64,
    pub constrained: bool,
    pub target: TargetConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: Option<usize>,
    pub tol_grad: Option<f64>,
    pub armijo_c: Option<f64>,
    pub backtrack_factor: Option<f64>,
    pub initial_step: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub field: FieldConfig,
    pub grid: GridConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Test hook: scales the adjoint used by `gradcheck` so the check must fail.
    #[serde(default)]
    pub perturb_adjoint: bool,
}

/// Reads and validates a configuration file. Relative table paths resolve
/// against the directory holding the file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(format!("{path}: {}", e.inner()))
    })?;
    if let TargetConfig::Table { table_path } = &mut cfg.problem.target {
        if table_path.is_relative() {
            *table_path = base_dir.join(&*table_path);
        }
        // Absolute, so an echoed config re-parses the same from anywhere.
        if let Ok(abs) = table_path.canonicalize() {
            *table_path = abs;
        }
    }
    cfg.validate()?;
    cfg.fill_defaults();
    Ok(cfg)
}

fn require(ok: bool, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require(self.mesh.n_elements >= 2, "mesh.n_elements must be ≥ 2")?;
        require(self.mesh.length > 0.0 && self.mesh.length.is_finite(), "mesh.length must be > 0")?;
        require(self.time.horizon > 0.0 && self.time.horizon.is_finite(), "time.T must be > 0")?;
        require(self.time.n_t >= 1, "time.n_t must be ≥ 1")?;
        require(self.field.a0 > 0.0 && self.field.a0.is_finite(), "field.a0 must be > 0")?;
        require(
            self.field.sigmas.iter().all(|s| *s >= 0.0 && s.is_finite()),
            "field.sigmas must be ≥ 0",
        )?;
        require(
            self.field.a0 - self.field.sigmas.iter().sum::<f64>() > 0.0,
            "field.sigmas must sum to less than field.a0 (coefficient positivity)",
        )?;
        require(self.grid.points_per_dim >= 1, "grid.points_per_dim must be ≥ 1")?;
        require(self.problem.alpha >= 0.0 && self.problem.alpha.is_finite(), "problem.alpha must be ≥ 0")?;
        require(self.problem.beta > 0.0 && self.problem.beta.is_finite(), "problem.beta must be > 0")?;
        match &self.problem.target {
            TargetConfig::Constant { value } => require(value.is_finite(), "problem.target.value must be finite")?,
            TargetConfig::SineRamp { amplitude } => {
                require(amplitude.is_finite(), "problem.target.amplitude must be finite")?
            }
            TargetConfig::Table { table_path } => require(
                table_path.is_file(),
                &format!("problem.target.table_path: {} is not a file", table_path.display()),
            )?,
        }
        let s = &self.solver;
        require(s.max_iters.is_none_or(|v| v >= 1), "solver.max_iters must be ≥ 1")?;
        require(s.tol_grad.is_none_or(|v| v > 0.0), "solver.tol_grad must be > 0")?;
        require(s.armijo_c.is_none_or(|v| v > 0.0 && v < 1.0), "solver.armijo_c must lie in (0, 1)")?;
        require(
            s.backtrack_factor.is_none_or(|v| v > 0.0 && v < 1.0),
            "solver.backtrack_factor must lie in (0, 1)",
        )?;
        require(
            s.initial_step.is_none_or(|v| v > 0.0 && v.is_finite()),
            "solver.initial_step must be > 0",
        )?;
        Ok(())
    }

    fn fill_defaults(&mut self) {
        let d = SolverOptions::for_beta(self.problem.beta);
        let s = &mut self.solver;
        s.max_iters.get_or_insert(d.max_iters);
        s.tol_grad.get_or_insert(d.tol_grad);
        s.armijo_c.get_or_insert(d.armijo_c);
        s.backtrack_factor.get_or_insert(d.backtrack_factor);
        s.initial_step.get_or_insert(d.initial_step);
        s.seed.get_or_insert(DEFAULT_SEED);
    }

    pub fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::for_beta(self.problem.beta);
        let s = &self.solver;
        SolverOptions {
            max_iters: s.max_iters.unwrap_or(d.max_iters),
            tol_grad: s.tol_grad.unwrap_or(d.tol_grad),
            armijo_c: s.armijo_c.unwrap_or(d.armijo_c),
            backtrack_factor: s.backtrack_factor.unwrap_or(d.backtrack_factor),
            initial_step: s.initial_step.unwrap_or(d.initial_step),
        }
    }

    pub fn seed(&self) -> u64 {
        self.solver.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn target_spec(&self) -> Result<TargetSpec, ConfigError> {
        Ok(match &self.problem.target {
            TargetConfig::Constant { value } => TargetSpec::Constant(*value),
            TargetConfig::SineRamp { amplitude } => TargetSpec::SeparableSineRamp(*amplitude),
            TargetConfig::Table { table_path } => TargetSpec::NodalTable(read_table(table_path)?),
        })
    }

    pub fn build_problem(&self) -> Result<Problem, ConfigError> {
        let key_err = |key: &'static str| move |e: crate::error::Error| invalid(format!("{key}: {e}"));
        let spec = ProblemSpec::new(
            self.time.horizon,
            self.time.n_t,
            self.problem.alpha,
            self.problem.beta,
            self.target_spec()?,
            self.problem.constrained,
        )
        .map_err(key_err("problem"))?;
        let mesh = SpatialMesh::new(self.mesh.n_elements, self.mesh.length).map_err(key_err("mesh"))?;
        let model = RandomFieldModel::new(self.field.a0, self.field.sigmas.clone()).map_err(key_err("field"))?;
        let grid = CollocationGrid::new(model.n_modes(), self.grid.points_per_dim).map_err(key_err("grid"))?;
        Problem::new(spec, mesh, model, grid).map_err(key_err("problem.target"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn read_table(path: &Path) -> Result<Vec<Vec<f64>>, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("problem.target.table_path: cannot read {}: {e}", path.display())))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(r, line)| {
            line.split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| {
                        invalid(format!("problem.target.table_path: row {} value {v:?}: {e}", r + 1))
                    })
                })
                .collect()
        })
        .collect()
}
