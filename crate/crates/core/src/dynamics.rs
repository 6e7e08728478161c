//! Implicit-Euler state and adjoint sweeps, one independent sweep per
//! collocation node.
//!
//! State:   `(M + Δt K_q) y^m = M y^{m-1} + Δt M u^m`, `y^0 = 0`.
//! Adjoint: `(M + Δt K_q) λ^m = M λ^{m+1} + Δt M r^m`, `λ^{n_t+1} = 0`, with
//! `r = (1+α) y - α E(y) - y_d`. The adjoint sweep is the exact transpose of
//! the state sweep in the discrete control inner product.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::spatial::{assemble_mass, assemble_stiffness, SpatialMesh, SymTridiagMatrix, TridiagFactor};
use crate::stochastic::{
    expectation, realize_coefficient, CollocationGrid, FieldRole, FieldShape, RandomFieldModel,
    SpaceTimeField, SpaceTimeStochField,
};

/// Deterministic desired state.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Constant(f64),
    /// `amplitude · sin(πx/L) · t/T`.
    SeparableSineRamp(f64),
    /// Nodal values at `t_m`, one row per step `m = 1..=n_t`, one column per
    /// interior node.
    NodalTable(Vec<Vec<f64>>),
}

impl TargetSpec {
    /// Target on the `[m][i]` lattice; level `m = 0` is never read by the solvers.
    pub fn evaluate(&self, mesh: &SpatialMesh, horizon: f64, n_t: usize) -> Result<SpaceTimeField> {
        let ni = mesh.n_interior();
        let mut out = SpaceTimeField::zeros(n_t, ni);
        match self {
            TargetSpec::Constant(c) => {
                for m in 0..=n_t {
                    out.level_mut(m).fill(*c);
                }
            }
            TargetSpec::SeparableSineRamp(amp) => {
                let dt = horizon / n_t as f64;
                let shape: Vec<f64> = mesh
                    .interior_coords()
                    .iter()
                    .map(|x| (PI * x / mesh.length()).sin())
                    .collect();
                for m in 0..=n_t {
                    let ramp = amp * (m as f64 * dt) / horizon;
                    for (v, s) in out.level_mut(m).iter_mut().zip(&shape) {
                        *v = ramp * s;
                    }
                }
            }
            TargetSpec::NodalTable(rows) => {
                check_dim("target table rows", rows.len(), n_t)?;
                for (m, row) in rows.iter().enumerate() {
                    check_dim("target table columns", row.len(), ni)?;
                    out.level_mut(m + 1).copy_from_slice(row);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub horizon: f64,
    pub n_t: usize,
    pub alpha: f64,
    pub beta: f64,
    pub target: TargetSpec,
    pub constrained: bool,
}

impl ProblemSpec {
    pub fn new(
        horizon: f64,
        n_t: usize,
        alpha: f64,
        beta: f64,
        target: TargetSpec,
        constrained: bool,
    ) -> Result<Self> {
        let spec = Self {
            horizon,
            n_t,
            alpha,
            beta,
            target,
            constrained,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.n_t == 0 {
            return Err(Error::InvalidParameter("n_t must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }
}

/// A fully discretized problem: spec, mesh, coefficient model and collocation
/// grid, together with the per-node step matrices `M + Δt K_q` factored once.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ProblemSpec,
    mesh: SpatialMesh,
    model: RandomFieldModel,
    grid: CollocationGrid,
    mass: SymTridiagMatrix,
    stiffness: Vec<SymTridiagMatrix>,
    step: Vec<TridiagFactor>,
    target: SpaceTimeField,
}

impl Problem {
    pub fn new(spec: ProblemSpec, mesh: SpatialMesh, model: RandomFieldModel, grid: CollocationGrid) -> Result<Self> {
        spec.validate()?;
        check_dim("collocation grid dimension vs field modes", grid.dim(), model.n_modes())?;
        let mass = assemble_mass(&mesh);
        let dt = spec.dt();
        let stiffness = grid
            .nodes()
            .iter()
            .map(|xi| assemble_stiffness(&mesh, &realize_coefficient(&model, xi, &mesh)?))
            .collect::<Result<Vec<_>>>()?;
        let step = stiffness
            .iter()
            .map(|k| mass.combine(1.0, k, dt)?.factor())
            .collect::<Result<Vec<_>>>()?;
        let target = spec.target.evaluate(&mesh, spec.horizon, spec.n_t)?;
        Ok(Self {
            spec,
            mesh,
            model,
            grid,
            mass,
            stiffness,
            step,
            target,
        })
    }

    /// Same discretization with a different problem spec (α, β, target, ...).
    pub fn with_spec(&self, spec: ProblemSpec) -> Result<Self> {
        Self::new(spec, self.mesh, self.model.clone(), self.grid.clone())
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn model(&self) -> &RandomFieldModel {
        &self.model
    }

    pub fn grid(&self) -> &CollocationGrid {
        &self.grid
    }

    pub fn mass(&self) -> &SymTridiagMatrix {
        &self.mass
    }

    /// Stiffness matrix at collocation node `q`.
    pub fn stiffness(&self, q: usize) -> &SymTridiagMatrix {
        &self.stiffness[q]
    }

    pub fn target(&self) -> &SpaceTimeField {
        &self.target
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt()
    }

    pub fn shape(&self) -> FieldShape {
        FieldShape {
            n_nodes: self.grid.len(),
            n_t: self.spec.n_t,
            n_interior: self.mesh.n_interior(),
        }
    }

    pub fn zeros(&self, role: FieldRole) -> SpaceTimeStochField {
        SpaceTimeStochField::zeros(self.shape(), role)
    }
}

pub fn forward_solve(problem: &Problem, u: &SpaceTimeStochField) -> Result<SpaceTimeStochField> {
    let shape = problem.shape();
    u.check_shape(shape, "control")?;
    let dt = problem.dt();
    let ni = shape.n_interior;
    let mass = problem.mass();
    let mut y = problem.zeros(FieldRole::State);
    y.as_mut_slice()
        .par_chunks_exact_mut(shape.per_node())
        .enumerate()
        .for_each(|(q, yq)| {
            let uq = u.node(q);
            let factor = &problem.step[q];
            let mut work = vec![0.0; ni];
            for m in 1..=shape.n_t {
                let (prev, cur) = yq.split_at_mut(m * ni);
                let prev = &prev[(m - 1) * ni..];
                let cur = &mut cur[..ni];
                for ((w, p), f) in work.iter_mut().zip(prev).zip(&uq[m * ni..(m + 1) * ni]) {
                    *w = p + dt * f;
                }
                mass.mul_vec_into(&work, cur);
                factor.solve_in_place(cur);
            }
        });
    Ok(y)
}

/// Adjoint source `(1+α) y - α E(y) - y_d` on every node and level.
pub fn adjoint_source(problem: &Problem, y: &SpaceTimeStochField) -> Result<SpaceTimeStochField> {
    let shape = problem.shape();
    y.check_shape(shape, "state")?;
    let alpha = problem.spec.alpha;
    let mean = expectation(y, &problem.grid)?;
    let mut r = problem.zeros(FieldRole::Target);
    for (q, rq) in r.nodes_mut().enumerate() {
        let yq = y.node(q);
        for (k, v) in rq.iter_mut().enumerate() {
            *v = (1.0 + alpha) * yq[k] - alpha * mean.as_slice()[k] - problem.target.as_slice()[k];
        }
    }
    Ok(r)
}

pub fn adjoint_solve(problem: &Problem, y: &SpaceTimeStochField) -> Result<SpaceTimeStochField> {
    let source = adjoint_source(problem, y)?;
    Ok(adjoint_sweep(problem, &source))
}

/// Backward sweep for a given source field; level 0 of the result stays zero.
pub(crate) fn adjoint_sweep(problem: &Problem, source: &SpaceTimeStochField) -> SpaceTimeStochField {
    let shape = problem.shape();
    let dt = problem.dt();
    let ni = shape.n_interior;
    let n_t = shape.n_t;
    let mass = problem.mass();
    let mut lambda = problem.zeros(FieldRole::Adjoint);
    lambda
        .as_mut_slice()
        .par_chunks_exact_mut(shape.per_node())
        .enumerate()
        .for_each(|(q, lq)| {
            let rq = source.node(q);
            let factor = &problem.step[q];
            let mut work = vec![0.0; ni];
            for m in (1..=n_t).rev() {
                let (head, tail) = lq.split_at_mut((m + 1) * ni);
                let cur = &mut head[m * ni..];
                for (k, w) in work.iter_mut().enumerate() {
                    let next = if m < n_t { tail[k] } else { 0.0 };
                    *w = next + dt * rq[m * ni + k];
                }
                mass.mul_vec_into(&work, cur);
                factor.solve_in_place(cur);
            }
        });
    lambda
}
