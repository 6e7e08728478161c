//! Projected gradient with Armijo backtracking over `{u ≥ 0}` (or over the
//! whole control space when unconstrained), certified by the complementarity
//! residual `‖min(u, βu + λ)‖_∞`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{forward_solve, Problem};
use crate::error::{Error, Result};
use crate::objective::{curvature, evaluate, inner_product_u, norm_u, Evaluation, ObjectiveBreakdown};
use crate::stochastic::{FieldRole, FieldShape, SpaceTimeStochField};

/// Backtracking gives up after this many step reductions.
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub tol_grad: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
}

impl SolverOptions {
    /// Defaults with initial step `1/β`.
    pub fn for_beta(beta: f64) -> Self {
        Self {
            max_iters: 500,
            tol_grad: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0 / beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.tol_grad > 0.0) {
            return bad("tol_grad must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Number of objective/gradient evaluations, one per visited iterate.
    pub iterations: usize,
    pub objective_history: Vec<f64>,
    pub breakdown_history: Vec<ObjectiveBreakdown>,
    pub projected_grad_norms: Vec<f64>,
    /// Accepted step length leaving each iterate; 0 for the last one.
    pub step_sizes: Vec<f64>,
    pub complementarity_residual: f64,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_objective(&self) -> ObjectiveBreakdown {
        self.breakdown_history.last().copied().unwrap_or_default()
    }
}

/// Elementwise `max(0, u)`.
pub fn project_admissible(u: &SpaceTimeStochField) -> SpaceTimeStochField {
    u.map(|x| x.max(0.0))
}

/// `‖min(u, g)‖_∞`; zero exactly when `u ≥ 0`, `g ≥ 0` and `u · g = 0` pointwise.
pub fn complementarity_residual(u: &SpaceTimeStochField, g: &SpaceTimeStochField) -> Result<f64> {
    g.check_shape(u.shape(), "gradient")?;
    Ok(u
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .fold(0.0, |acc, (a, b)| acc.max(a.min(*b).abs())))
}

fn project_if(constrained: bool, u: SpaceTimeStochField) -> SpaceTimeStochField {
    if constrained {
        project_admissible(&u)
    } else {
        u
    }
}

/// Natural residual `‖u - P(u - g)‖_U`; `‖g‖_U` when unconstrained.
pub fn projected_gradient_norm(problem: &Problem, u: &SpaceTimeStochField, g: &SpaceTimeStochField) -> Result<f64> {
    let trial = project_if(problem.spec().constrained, u.lin_comb(1.0, g, -1.0)?);
    norm_u(problem, &u.lin_comb(1.0, &trial, -1.0)?)
}

/// Optimality residual reported at the end of a solve: the complementarity
/// residual when constrained, `‖g‖_∞` otherwise.
pub fn optimality_residual(problem: &Problem, u: &SpaceTimeStochField, g: &SpaceTimeStochField) -> Result<f64> {
    if problem.spec().constrained {
        complementarity_residual(u, g)
    } else {
        Ok(g.max_abs())
    }
}

/// Seeded control with entries uniform in `[-1, 1]` on levels `m ≥ 1`.
pub fn random_control(shape: FieldShape, seed: u64) -> SpaceTimeStochField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = SpaceTimeStochField::zeros(shape, FieldRole::Control);
    for q in 0..shape.n_nodes {
        for m in 1..=shape.n_t {
            for v in u.slice_mut(q, m) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
    u
}

pub fn solve(
    problem: &Problem,
    u0: &SpaceTimeStochField,
    opts: &SolverOptions,
) -> Result<(SpaceTimeStochField, SolveReport)> {
    opts.validate()?;
    u0.check_shape(problem.shape(), "initial control")?;
    let start = Instant::now();
    let constrained = problem.spec().constrained;
    let mut u = project_if(constrained, u0.clone()).with_role(FieldRole::Control);

    let mut report = SolveReport {
        iterations: 0,
        objective_history: Vec::new(),
        breakdown_history: Vec::new(),
        projected_grad_norms: Vec::new(),
        step_sizes: Vec::new(),
        complementarity_residual: f64::NAN,
        converged: false,
        wall_time: 0.0,
    };

    let mut iter = 0;
    let last: Evaluation = loop {
        let eval = evaluate(problem, &u)?;
        let residual = projected_gradient_norm(problem, &u, &eval.gradient)?;
        report.iterations += 1;
        report.objective_history.push(eval.objective.total);
        report.breakdown_history.push(eval.objective);
        report.projected_grad_norms.push(residual);
        if residual <= opts.tol_grad {
            report.converged = true;
            report.step_sizes.push(0.0);
            break eval;
        }
        if iter == opts.max_iters {
            report.step_sizes.push(0.0);
            break eval;
        }

        let mut tau = opts.initial_step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = project_if(constrained, u.lin_comb(1.0, &eval.gradient, -tau)?);
            let step = trial.lin_comb(1.0, &u, -1.0)?;
            let slope = inner_product_u(problem, &eval.gradient, &step)?;
            // J is quadratic, so the decrease is exact without cancellation.
            let dy = forward_solve(problem, &step)?;
            let decrease = slope + 0.5 * curvature(problem, &step, &dy)?;
            if slope < 0.0 && decrease <= opts.armijo_c * slope {
                accepted = Some(trial);
                break;
            }
            tau *= opts.backtrack_factor;
        }
        match accepted {
            Some(next) => {
                report.step_sizes.push(tau);
                u = next;
            }
            None => {
                return Err(Error::StepFailure {
                    iteration: iter,
                    halvings: MAX_HALVINGS,
                })
            }
        }
        iter += 1;
    };

    report.complementarity_residual = optimality_residual(problem, &u, &last.gradient)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((u, report))
}

/// Solves from `u0 = 0` and from a seeded random admissible start and returns
/// `‖u*₁ - u*₂‖_U`.
pub fn uniqueness_check(problem: &Problem, opts: &SolverOptions, seed: u64) -> Result<f64> {
    let (first, _) = solve(problem, &problem.zeros(FieldRole::Control), opts)?;
    let start = project_if(problem.spec().constrained, random_control(problem.shape(), seed));
    let (second, _) = solve(problem, &start, opts)?;
    norm_u(problem, &first.lin_comb(1.0, &second, -1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ProblemSpec, TargetSpec};
    use crate::objective::evaluate_objective;
    use crate::spatial::build_mesh;
    use crate::stochastic::{build_collocation_grid, build_field_model};

    fn problem(constrained: bool, target: TargetSpec) -> Problem {
        let spec = ProblemSpec::new(1.0, 8, 1.0, 1e-2, target, constrained).unwrap();
        Problem::new(
            spec,
            build_mesh(8, 1.0).unwrap(),
            build_field_model(1.0, vec![0.3]).unwrap(),
            build_collocation_grid(1, 3).unwrap(),
        )
        .unwrap()
    }

    fn field(values: &[f64]) -> SpaceTimeStochField {
        let shape = FieldShape { n_nodes: 1, n_t: 0, n_interior: values.len() };
        SpaceTimeStochField::from_vec(shape, FieldRole::Control, values.to_vec()).unwrap()
    }

    #[test]
    fn projection_clips_and_is_idempotent() {
        let p = project_admissible(&field(&[-1.0, 0.5, 0.0]));
        assert_eq!(p.as_slice(), &[0.0, 0.5, 0.0]);
        assert_eq!(project_admissible(&p), p);
        let pos = field(&[0.1, 2.0]);
        assert_eq!(project_admissible(&pos), pos);
    }

    #[test]
    fn complementarity_examples() {
        assert_eq!(complementarity_residual(&field(&[0.0, 0.0]), &field(&[0.3, 0.0])).unwrap(), 0.0);
        assert_eq!(complementarity_residual(&field(&[1.0, 2.0]), &field(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(complementarity_residual(&field(&[2.0]), &field(&[-0.5])).unwrap(), 0.5);
        assert!(complementarity_residual(&field(&[2.0]), &field(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn fixed_points_are_complementary_points() {
        // (u, g) pairs: fixed point of u ↦ P(u - τg) iff min(u, g) = 0.
        let cases = [
            (vec![0.0, 1.0, 0.0], vec![2.0, 0.0, 0.0], true),
            (vec![0.0, 1.0], vec![-1.0, 0.0], false),
            (vec![3.0], vec![0.5], false),
            (vec![0.0], vec![0.0], true),
        ];
        for (u, g, fixed) in cases {
            let (u, g) = (field(&u), field(&g));
            for tau in [0.1, 1.0, 10.0] {
                let image = project_admissible(&u.lin_comb(1.0, &g, -tau).unwrap());
                assert_eq!(image == u, fixed);
            }
            assert_eq!(complementarity_residual(&u, &g).unwrap() == 0.0, fixed);
        }
    }

    #[test]
    fn options_validation() {
        let ok = SolverOptions::for_beta(0.01);
        assert_eq!(ok.initial_step, 100.0);
        ok.validate().unwrap();
        assert!(SolverOptions { armijo_c: 1.0, ..ok }.validate().is_err());
        assert!(SolverOptions { backtrack_factor: 0.0, ..ok }.validate().is_err());
        assert!(SolverOptions { max_iters: 0, ..ok }.validate().is_err());
        assert!(SolverOptions { tol_grad: 0.0, ..ok }.validate().is_err());
        assert!(SolverOptions { initial_step: -1.0, ..ok }.validate().is_err());
    }

    #[test]
    fn zero_target_is_optimal_immediately() {
        let p = problem(true, TargetSpec::Constant(0.0));
        let opts = SolverOptions::for_beta(p.spec().beta);
        let (u, report) = solve(&p, &p.zeros(FieldRole::Control), &opts).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        assert_eq!(report.objective_history, vec![0.0]);
        assert!(u.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constrained_iterates_feasible_and_descending() {
        let p = problem(true, TargetSpec::SeparableSineRamp(1.0));
        let opts = SolverOptions::for_beta(p.spec().beta);
        let start = random_control(p.shape(), 9);
        let (u, report) = solve(&p, &start, &opts).unwrap();
        assert!(report.converged);
        assert!(u.as_slice().iter().all(|v| *v >= 0.0));
        for w in report.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        let g = evaluate(&p, &u).unwrap().gradient;
        assert!(complementarity_residual(&u, &g).unwrap() <= 1e-6);
        assert_eq!(report.step_sizes.len(), report.iterations);
    }

    #[test]
    fn unconstrained_solution_is_stationary() {
        let p = problem(false, TargetSpec::SeparableSineRamp(1.0));
        let opts = SolverOptions::for_beta(p.spec().beta);
        let (u, report) = solve(&p, &p.zeros(FieldRole::Control), &opts).unwrap();
        assert!(report.converged);
        let g = evaluate(&p, &u).unwrap().gradient;
        assert!(norm_u(&p, &g).unwrap() <= 10.0 * opts.tol_grad);
    }

    #[test]
    fn negated_target_activates_bound() {
        let p = problem(true, TargetSpec::SeparableSineRamp(-1.0));
        let opts = SolverOptions::for_beta(p.spec().beta);
        let (u, report) = solve(&p, &p.zeros(FieldRole::Control), &opts).unwrap();
        assert!(report.converged);
        assert!(report.complementarity_residual <= 1e-6);
        assert!(u.as_slice().iter().filter(|v| **v == 0.0).count() > 0);
    }

    #[test]
    fn heavy_penalty_shrinks_control() {
        let base = problem(false, TargetSpec::SeparableSineRamp(1.0));
        let solve_beta = |beta: f64| {
            let p = base.with_spec(ProblemSpec { beta, ..base.spec().clone() }).unwrap();
            let opts = SolverOptions { tol_grad: 1e-10, ..SolverOptions::for_beta(beta) };
            let (u, _) = solve(&p, &p.zeros(FieldRole::Control), &opts).unwrap();
            norm_u(&p, &u).unwrap()
        };
        assert!(solve_beta(1e4) <= 1e-3 * solve_beta(1e-2));
    }

    #[test]
    fn two_starts_agree() {
        let p = problem(true, TargetSpec::SeparableSineRamp(1.0));
        let opts = SolverOptions { tol_grad: 1e-10, ..SolverOptions::for_beta(p.spec().beta) };
        let diff = uniqueness_check(&p, &opts, 42).unwrap();
        let (u, _) = solve(&p, &p.zeros(FieldRole::Control), &opts).unwrap();
        assert!(diff <= 1e-6 * (1.0 + norm_u(&p, &u).unwrap()), "{diff}");
    }

    #[test]
    fn iteration_budget_is_respected() {
        let p = problem(false, TargetSpec::SeparableSineRamp(1.0));
        let opts = SolverOptions { max_iters: 1, ..SolverOptions::for_beta(p.spec().beta) };
        let (_, report) = solve(&p, &p.zeros(FieldRole::Control), &opts).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 2);
        let j0 = evaluate_objective(&p, &p.zeros(FieldRole::Control)).unwrap().total;
        assert!(report.objective_history[1] < j0);
    }
}
