//! Discrete cost functional and its adjoint gradient.
//!
//! Time integrals use the right-endpoint rule over `m = 1..=n_t`, so the
//! inner product below is exactly the one in which the adjoint sweep is the
//! transpose of the state sweep.

use serde::{Deserialize, Serialize};

use crate::dynamics::{adjoint_solve, forward_solve, Problem};
use crate::error::{check_dim, Result};
use crate::stochastic::{expectation, FieldRole, SpaceTimeField, SpaceTimeStochField};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// `½ ‖y - y_d‖²`.
    pub tracking: f64,
    /// `α/2 ‖std(y)‖²`.
    pub variance_raw: f64,
    /// `β/2 ‖u‖²`.
    pub control: f64,
    pub total: f64,
    /// `½ ‖std(y)‖²`, independent of α.
    pub state_variance: f64,
    /// Same variance term computed as `α/2 (E‖y‖² - ‖E y‖²)`.
    pub variance_uncentered: f64,
}

/// Space-time `L²` inner product of one node: `Δt Σ_{m≥1} fᵐᵀ M gᵐ`.
fn node_product(problem: &Problem, f: &[f64], g: &[f64]) -> f64 {
    let ni = problem.mesh().n_interior();
    let mass = problem.mass();
    let mut acc = 0.0;
    for m in 1..=problem.spec().n_t {
        let r = m * ni..(m + 1) * ni;
        acc += mass.bilinear(&f[r.clone()], &g[r]);
    }
    problem.dt() * acc
}

/// `Σ_q w_q Δt Σ_{m=1}^{n_t} f_qᵐᵀ M g_qᵐ`.
pub fn inner_product_u(problem: &Problem, f: &SpaceTimeStochField, g: &SpaceTimeStochField) -> Result<f64> {
    let shape = problem.shape();
    f.check_shape(shape, "inner product lhs")?;
    g.check_shape(shape, "inner product rhs")?;
    Ok(problem
        .grid()
        .weights()
        .iter()
        .enumerate()
        .fold(0.0, |acc, (q, w)| acc + w * node_product(problem, f.node(q), g.node(q))))
}

pub fn norm_u(problem: &Problem, f: &SpaceTimeStochField) -> Result<f64> {
    Ok(inner_product_u(problem, f, f)?.max(0.0).sqrt())
}

/// Deterministic space-time product `Δt Σ_{m≥1} fᵐᵀ M gᵐ`.
pub fn inner_product_w(problem: &Problem, f: &SpaceTimeField, g: &SpaceTimeField) -> Result<f64> {
    let n = problem.shape().per_node();
    check_dim("deterministic field length", f.as_slice().len(), n)?;
    check_dim("deterministic field length", g.as_slice().len(), n)?;
    Ok(node_product(problem, f.as_slice(), g.as_slice()))
}

/// Breakdown of `J(u)` for an already computed state `y = y(u)`.
pub fn objective_from_state(
    problem: &Problem,
    u: &SpaceTimeStochField,
    y: &SpaceTimeStochField,
) -> Result<ObjectiveBreakdown> {
    let shape = problem.shape();
    u.check_shape(shape, "control")?;
    y.check_shape(shape, "state")?;
    let spec = problem.spec();
    let grid = problem.grid();
    let target = problem.target().as_slice();
    let mean = expectation(y, grid)?;

    let mut tracking = 0.0;
    let mut centered = 0.0;
    let mut second_moment = 0.0;
    let mut diff = vec![0.0; shape.per_node()];
    let mut dev = vec![0.0; shape.per_node()];
    for (q, w) in grid.weights().iter().enumerate() {
        let yq = y.node(q);
        for k in 0..diff.len() {
            diff[k] = yq[k] - target[k];
            dev[k] = yq[k] - mean.as_slice()[k];
        }
        tracking += w * node_product(problem, &diff, &diff);
        centered += w * node_product(problem, &dev, &dev);
        second_moment += w * node_product(problem, yq, yq);
    }
    let mean_sq = node_product(problem, mean.as_slice(), mean.as_slice());

    let tracking = 0.5 * tracking;
    let state_variance = 0.5 * centered;
    let variance_raw = spec.alpha * state_variance;
    let control = 0.5 * spec.beta * inner_product_u(problem, u, u)?;
    Ok(ObjectiveBreakdown {
        tracking,
        variance_raw,
        control,
        total: tracking + variance_raw + control,
        state_variance,
        variance_uncentered: 0.5 * spec.alpha * (second_moment - mean_sq),
    })
}

pub fn evaluate_objective(problem: &Problem, u: &SpaceTimeStochField) -> Result<ObjectiveBreakdown> {
    let y = forward_solve(problem, u)?;
    objective_from_state(problem, u, &y)
}

/// `⟨d, H d⟩_U` for the constant Hessian of `J`, given `dy = y(d)` with zero
/// target: `‖dy‖² + α ‖std(dy)‖² + β ‖d‖²`.
pub fn curvature(problem: &Problem, direction: &SpaceTimeStochField, state_direction: &SpaceTimeStochField) -> Result<f64> {
    let shape = problem.shape();
    direction.check_shape(shape, "direction")?;
    state_direction.check_shape(shape, "state direction")?;
    let grid = problem.grid();
    let mean = expectation(state_direction, grid)?;
    let mut dev = vec![0.0; shape.per_node()];
    let mut sq = 0.0;
    let mut centered = 0.0;
    for (q, w) in grid.weights().iter().enumerate() {
        let dq = state_direction.node(q);
        for k in 0..dev.len() {
            dev[k] = dq[k] - mean.as_slice()[k];
        }
        sq += w * node_product(problem, dq, dq);
        centered += w * node_product(problem, &dev, &dev);
    }
    let spec = problem.spec();
    Ok(sq + spec.alpha * centered + spec.beta * inner_product_u(problem, direction, direction)?)
}

/// Riesz representative `β u + λ` of `J'(u)` in the control inner product.
pub fn gradient_from_adjoint(
    problem: &Problem,
    u: &SpaceTimeStochField,
    lambda: &SpaceTimeStochField,
) -> Result<SpaceTimeStochField> {
    u.check_shape(problem.shape(), "control")?;
    lambda.check_shape(problem.shape(), "adjoint")?;
    Ok(u.lin_comb(problem.spec().beta, lambda, 1.0)?.with_role(FieldRole::Gradient))
}

/// Everything one optimizer iteration needs at a control `u`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: SpaceTimeStochField,
    pub adjoint: SpaceTimeStochField,
    pub gradient: SpaceTimeStochField,
    pub objective: ObjectiveBreakdown,
}

pub fn evaluate(problem: &Problem, u: &SpaceTimeStochField) -> Result<Evaluation> {
    let state = forward_solve(problem, u)?;
    let objective = objective_from_state(problem, u, &state)?;
    let adjoint = adjoint_solve(problem, &state)?;
    let gradient = gradient_from_adjoint(problem, u, &adjoint)?;
    Ok(Evaluation {
        state,
        adjoint,
        gradient,
        objective,
    })
}

/// Directional derivatives of the four cost terms
/// `J = J₁ + J₂ - J₃ + J₄` at `u` in the direction `v - u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalTerms {
    pub tracking: f64,
    pub second_moment: f64,
    pub squared_mean: f64,
    pub control: f64,
}

impl DirectionalTerms {
    pub fn combined(&self) -> f64 {
        self.tracking + self.second_moment - self.squared_mean + self.control
    }
}

/// Uses `y'(u)(v - u) = y(v) - y(u)`, valid because the state map is linear.
pub fn directional_derivative_terms(
    problem: &Problem,
    u: &SpaceTimeStochField,
    v: &SpaceTimeStochField,
) -> Result<DirectionalTerms> {
    let alpha = problem.spec().alpha;
    let beta = problem.spec().beta;
    let yu = forward_solve(problem, u)?;
    let yv = forward_solve(problem, v)?;
    let dy = yv.lin_comb(1.0, &yu, -1.0)?;
    let target = SpaceTimeStochField::broadcast(problem.target(), problem.grid().len(), FieldRole::Target);
    let residual = yu.lin_comb(1.0, &target, -1.0)?;
    let mean = SpaceTimeStochField::broadcast(&expectation(&yu, problem.grid())?, problem.grid().len(), FieldRole::State);
    let dir = v.lin_comb(1.0, u, -1.0)?;
    Ok(DirectionalTerms {
        tracking: inner_product_u(problem, &residual, &dy)?,
        second_moment: alpha * inner_product_u(problem, &yu, &dy)?,
        squared_mean: alpha * inner_product_u(problem, &mean, &dy)?,
        control: beta * inner_product_u(problem, u, &dir)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ProblemSpec, TargetSpec};
    use crate::spatial::build_mesh;
    use crate::stochastic::{build_collocation_grid, build_field_model};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn problem(alpha: f64, sigmas: Vec<f64>, target: TargetSpec) -> Problem {
        let k = sigmas.len();
        let spec = ProblemSpec::new(1.0, 8, alpha, 0.05, target, false).unwrap();
        Problem::new(
            spec,
            build_mesh(9, 1.0).unwrap(),
            build_field_model(1.0, sigmas).unwrap(),
            build_collocation_grid(k, 3).unwrap(),
        )
        .unwrap()
    }

    fn random_field(p: &Problem, seed: u64) -> SpaceTimeStochField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..p.shape().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SpaceTimeStochField::from_vec(p.shape(), FieldRole::Control, data).unwrap()
    }

    /// Dense-matrix evaluation of `Σ_q w_q Δt Σ_m f·(M g)` as an oracle.
    fn dense_product(p: &Problem, f: &SpaceTimeStochField, g: &SpaceTimeStochField) -> f64 {
        let m = p.mass().to_dense();
        let mut total = 0.0;
        for (q, w) in p.grid().weights().iter().enumerate() {
            for t in 1..=p.spec().n_t {
                let (a, b) = (f.slice(q, t), g.slice(q, t));
                for i in 0..a.len() {
                    for j in 0..a.len() {
                        total += w * p.dt() * a[i] * m[i][j] * b[j];
                    }
                }
            }
        }
        total
    }

    #[test]
    fn inner_product_zero_and_constant() {
        let p = problem(1.0, vec![0.2], TargetSpec::Constant(0.0));
        let zero = p.zeros(FieldRole::Control);
        assert_eq!(inner_product_u(&p, &zero, &zero).unwrap(), 0.0);

        for (n, lower) in [(4usize, None), (64, Some(0.96))] {
            let spec = ProblemSpec::new(1.0, 5, 0.0, 1.0, TargetSpec::Constant(0.0), false).unwrap();
            let p = Problem::new(
                spec,
                build_mesh(n, 1.0).unwrap(),
                build_field_model(1.0, vec![]).unwrap(),
                build_collocation_grid(0, 1).unwrap(),
            )
            .unwrap();
            let mut one = p.zeros(FieldRole::Control);
            one.as_mut_slice().fill(1.0);
            let v = inner_product_u(&p, &one, &one).unwrap();
            assert_relative_eq!(v, dense_product(&p, &one, &one), max_relative = 1e-13);
            match lower {
                None => assert_relative_eq!(v, 2.0 / 3.0, max_relative = 1e-14),
                Some(l) => assert!(v >= l && v < 1.0, "{v}"),
            }
        }
    }

    #[test]
    fn inner_product_symmetric_bilinear() {
        let p = problem(1.0, vec![0.2, 0.1], TargetSpec::Constant(0.0));
        let f = random_field(&p, 1);
        let g = random_field(&p, 2);
        let fg = inner_product_u(&p, &f, &g).unwrap();
        assert!((fg - inner_product_u(&p, &g, &f).unwrap()).abs() <= 1e-13);
        let af = inner_product_u(&p, &f.map(|x| 2.5 * x), &g).unwrap();
        assert!((af - 2.5 * fg).abs() <= 1e-13);
        assert_relative_eq!(fg, dense_product(&p, &f, &g), epsilon = 1e-13);
    }

    #[test]
    fn zero_data_is_global_minimum() {
        let p = problem(1.0, vec![0.3], TargetSpec::Constant(0.0));
        let b = evaluate_objective(&p, &p.zeros(FieldRole::Control)).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn deterministic_coefficient_has_no_variance() {
        let p = problem(5.0, vec![], TargetSpec::SeparableSineRamp(1.0));
        let b = evaluate_objective(&p, &random_field(&p, 3)).unwrap();
        assert_eq!(b.variance_raw, 0.0);
        assert!(b.total > 0.0);
    }

    #[test]
    fn breakdown_sums_and_variance_forms_agree() {
        let p = problem(2.0, vec![0.3, 0.2], TargetSpec::SeparableSineRamp(1.0));
        let b = evaluate_objective(&p, &random_field(&p, 4)).unwrap();
        assert!((b.total - (b.tracking + b.variance_raw + b.control)).abs() <= 1e-14 * b.total);
        assert!(b.variance_raw > 0.0);
        assert_relative_eq!(b.variance_raw, b.variance_uncentered, max_relative = 1e-12);
        assert_relative_eq!(b.variance_raw, 2.0 * b.state_variance, max_relative = 1e-15);
    }

    #[test]
    fn tracking_of_sine_ramp_closed_form() {
        let p = problem(1.0, vec![0.3, 0.1], TargetSpec::SeparableSineRamp(1.0));
        let b = evaluate_objective(&p, &p.zeros(FieldRole::Control)).unwrap();
        let s: Vec<f64> = p.mesh().interior_coords().iter().map(|x| (PI * x).sin()).collect();
        let sms = p.mass().bilinear(&s, &s);
        let n_t = p.spec().n_t;
        let closed: f64 = (1..=n_t).map(|m| p.dt() * (m as f64 / n_t as f64).powi(2) * sms).sum();
        assert_relative_eq!(b.total, 0.5 * closed, max_relative = 1e-12);
        assert_eq!(b.total, b.tracking);
    }

    #[test]
    fn gradient_examples() {
        let p = problem(1.0, vec![0.2], TargetSpec::Constant(1.0));
        let u = random_field(&p, 5);
        let lambda = u.map(|x| -p.spec().beta * x).with_role(FieldRole::Adjoint);
        let g = gradient_from_adjoint(&p, &u, &lambda).unwrap();
        assert!(g.max_abs() <= 1e-16);
        let lambda = random_field(&p, 6).with_role(FieldRole::Adjoint);
        let g = gradient_from_adjoint(&p, &p.zeros(FieldRole::Control), &lambda).unwrap();
        assert_eq!(g.as_slice(), lambda.as_slice());
    }

    #[test]
    fn term_derivatives() {
        let p = problem(1.5, vec![0.3, 0.1], TargetSpec::SeparableSineRamp(1.0));
        let u = random_field(&p, 7);
        let t = directional_derivative_terms(&p, &u, &u).unwrap();
        assert_eq!(t.combined(), 0.0);
        assert_eq!((t.tracking, t.second_moment, t.squared_mean, t.control), (0.0, 0.0, 0.0, 0.0));

        let v = random_field(&p, 8);
        let p0 = p.with_spec(ProblemSpec { alpha: 0.0, ..p.spec().clone() }).unwrap();
        let t0 = directional_derivative_terms(&p0, &u, &v).unwrap();
        assert_eq!((t0.second_moment, t0.squared_mean), (0.0, 0.0));
    }

    #[test]
    fn term_derivatives_match_adjoint_gradient() {
        for seed in 0..5 {
            let p = problem(1.5, vec![0.3, 0.1], TargetSpec::SeparableSineRamp(1.0));
            let u = random_field(&p, 100 + seed);
            let v = random_field(&p, 200 + seed);
            let terms = directional_derivative_terms(&p, &u, &v).unwrap();
            let g = evaluate(&p, &u).unwrap().gradient;
            let dir = v.lin_comb(1.0, &u, -1.0).unwrap();
            let adj = inner_product_u(&p, &g, &dir).unwrap();
            assert_relative_eq!(terms.combined(), adj, max_relative = 1e-10);
        }
    }
}
