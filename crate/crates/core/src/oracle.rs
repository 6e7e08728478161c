//! Verification machinery that does not go through the adjoint gradient:
//! central finite differences, a dense direct solve of the unconstrained
//! optimality system, and Monte Carlo sampling of the cost.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{forward_solve, Problem};
use crate::error::{Error, Result};
use crate::objective::{evaluate_objective, inner_product_w, objective_from_state};
use crate::stochastic::{CollocationGrid, FieldRole, FieldShape, SpaceTimeField, SpaceTimeStochField};

/// Largest dense system the KKT oracle will factor.
pub const DENSE_LIMIT: usize = 6000;

/// Central difference `(J(u + h w) - J(u - h w)) / 2h`.
pub fn fd_directional(problem: &Problem, u: &SpaceTimeStochField, w: &SpaceTimeStochField, h_fd: f64) -> Result<f64> {
    if !(h_fd > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {h_fd}")));
    }
    let plus = evaluate_objective(problem, &u.lin_comb(1.0, w, h_fd)?)?.total;
    let minus = evaluate_objective(problem, &u.lin_comb(1.0, w, -h_fd)?)?.total;
    Ok((plus - minus) / (2.0 * h_fd))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktFormulation {
    /// Unknowns `(y, u, λ)`, rows: state, adjoint, stationarity `βu + λ = 0`.
    Full,
    /// `u = -λ/β` substituted into the state rows; unknowns `(y, λ)`.
    Reduced,
}

/// Dense matrix of the discrete optimality system of the unconstrained
/// problem. Unknown `(q, m, i)` with `m = 1..=n_t` maps to
/// `(q n_t + m - 1) n_interior + i` inside each block.
#[derive(Debug, Clone)]
pub struct KktSystem {
    formulation: KktFormulation,
    shape: FieldShape,
    matrix: Mat<f64>,
    rhs: Vec<f64>,
}

impl KktSystem {
    pub fn assemble(problem: &Problem, formulation: KktFormulation) -> Result<Self> {
        let shape = problem.shape();
        let block = shape.n_nodes * shape.n_t * shape.n_interior;
        let dimension = match formulation {
            KktFormulation::Full => 3 * block,
            KktFormulation::Reduced => 2 * block,
        };
        if dimension > DENSE_LIMIT {
            return Err(Error::DimensionGuard { dimension, limit: DENSE_LIMIT });
        }
        let spec = problem.spec();
        let (alpha, beta, dt) = (spec.alpha, spec.beta, problem.dt());
        let weights = problem.grid().weights();
        let (n_t, ni) = (shape.n_t, shape.n_interior);
        let mass = problem.mass().to_dense();
        let idx = |q: usize, m: usize, i: usize| (q * n_t + m - 1) * ni + i;

        let y0 = 0;
        let (lam0, u0) = match formulation {
            KktFormulation::Full => (2 * block, Some(block)),
            KktFormulation::Reduced => (block, None),
        };
        let state_row0 = 0;
        let adjoint_row0 = block;

        let mut a = Mat::<f64>::zeros(dimension, dimension);
        let mut rhs = vec![0.0; dimension];
        for q in 0..shape.n_nodes {
            let stiff = problem.stiffness(q).to_dense();
            for m in 1..=n_t {
                for i in 0..ni {
                    let srow = state_row0 + idx(q, m, i);
                    let arow = adjoint_row0 + idx(q, m, i);
                    for j in 0..ni {
                        let step = mass[i][j] + dt * stiff[i][j];
                        if step == 0.0 && mass[i][j] == 0.0 {
                            continue;
                        }
                        // (M + Δt K_q) y^m - M y^{m-1} - Δt M u^m = 0
                        a[(srow, y0 + idx(q, m, j))] += step;
                        if m > 1 {
                            a[(srow, y0 + idx(q, m - 1, j))] -= mass[i][j];
                        }
                        match u0 {
                            Some(u0) => a[(srow, u0 + idx(q, m, j))] -= dt * mass[i][j],
                            None => a[(srow, lam0 + idx(q, m, j))] += dt / beta * mass[i][j],
                        }
                        // (M + Δt K_q) λ^m - M λ^{m+1} - Δt M ((1+α) y_q^m - α Σ_p w_p y_p^m) = -Δt M y_d^m
                        a[(arow, lam0 + idx(q, m, j))] += step;
                        if m < n_t {
                            a[(arow, lam0 + idx(q, m + 1, j))] -= mass[i][j];
                        }
                        a[(arow, y0 + idx(q, m, j))] -= dt * (1.0 + alpha) * mass[i][j];
                        for (p, w) in weights.iter().enumerate() {
                            a[(arow, y0 + idx(p, m, j))] += dt * alpha * w * mass[i][j];
                        }
                        rhs[arow] -= dt * mass[i][j] * problem.target().get(m, j);
                    }
                }
            }
        }
        if let Some(u0) = u0 {
            let stat_row0 = 2 * block;
            for k in 0..block {
                a[(stat_row0 + k, u0 + k)] = beta;
                a[(stat_row0 + k, lam0 + k)] = 1.0;
            }
        }
        Ok(Self {
            formulation,
            shape,
            matrix: a,
            rhs,
        })
    }

    pub fn formulation(&self) -> KktFormulation {
        self.formulation
    }

    pub fn dimension(&self) -> usize {
        self.rhs.len()
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn solve(&self, beta: f64) -> Result<KktSolution> {
        let n = self.dimension();
        let lu = self.matrix.partial_piv_lu();
        let b = Mat::<f64>::from_fn(n, 1, |i, _| self.rhs[i]);
        let x = lu.solve(&b);
        let z: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("KKT factorization produced non-finite values".into()));
        }
        let block = n / self.blocks();
        let state = self.unpack(&z[..block], FieldRole::State);
        let (control, adjoint) = match self.formulation {
            KktFormulation::Full => (
                self.unpack(&z[block..2 * block], FieldRole::Control),
                self.unpack(&z[2 * block..], FieldRole::Adjoint),
            ),
            KktFormulation::Reduced => {
                let adjoint = self.unpack(&z[block..], FieldRole::Adjoint);
                (adjoint.map(|l| -l / beta).with_role(FieldRole::Control), adjoint)
            }
        };
        Ok(KktSolution { state, control, adjoint })
    }

    fn blocks(&self) -> usize {
        match self.formulation {
            KktFormulation::Full => 3,
            KktFormulation::Reduced => 2,
        }
    }

    fn unpack(&self, block: &[f64], role: FieldRole) -> SpaceTimeStochField {
        let mut f = SpaceTimeStochField::zeros(self.shape, role);
        let ni = self.shape.n_interior;
        for q in 0..self.shape.n_nodes {
            for m in 1..=self.shape.n_t {
                let start = (q * self.shape.n_t + m - 1) * ni;
                f.slice_mut(q, m).copy_from_slice(&block[start..start + ni]);
            }
        }
        f
    }
}

#[derive(Debug, Clone)]
pub struct KktSolution {
    pub state: SpaceTimeStochField,
    pub control: SpaceTimeStochField,
    pub adjoint: SpaceTimeStochField,
}

/// Direct solve of the unconstrained optimality system, using the full
/// three-block form when it fits under [`DENSE_LIMIT`] and the two-block form
/// otherwise.
pub fn kkt_solve(problem: &Problem) -> Result<KktSolution> {
    if problem.spec().constrained {
        return Err(Error::InvalidParameter(
            "the KKT oracle covers the unconstrained problem only".into(),
        ));
    }
    let block = problem.shape().n_nodes * problem.shape().n_t * problem.shape().n_interior;
    let formulation = if 3 * block <= DENSE_LIMIT {
        KktFormulation::Full
    } else {
        KktFormulation::Reduced
    };
    KktSystem::assemble(problem, formulation)?.solve(problem.spec().beta)
}

/// Max-norm residuals of the state, adjoint and stationarity equations at
/// `(y, u, λ)`, evaluated row by row with plain tridiagonal products.
pub fn kkt_residuals(problem: &Problem, sol: &KktSolution) -> Result<[f64; 3]> {
    let shape = problem.shape();
    sol.state.check_shape(shape, "state")?;
    sol.control.check_shape(shape, "control")?;
    sol.adjoint.check_shape(shape, "adjoint")?;
    let spec = problem.spec();
    let (alpha, beta, dt) = (spec.alpha, spec.beta, problem.dt());
    let (n_t, ni) = (shape.n_t, shape.n_interior);
    let mass = problem.mass();
    let weights = problem.grid().weights();
    let zero = vec![0.0; ni];
    let mut res = [0.0f64; 3];
    for q in 0..shape.n_nodes {
        let step = mass.combine(1.0, problem.stiffness(q), dt)?;
        for m in 1..=n_t {
            let y = sol.state.slice(q, m);
            let y_prev = if m > 1 { sol.state.slice(q, m - 1) } else { &zero[..] };
            let u = sol.control.slice(q, m);
            let l = sol.adjoint.slice(q, m);
            let l_next = if m < n_t { sol.adjoint.slice(q, m + 1) } else { &zero[..] };
            let ay = step.mul_vec(y);
            let my = mass.mul_vec(y_prev);
            let mu = mass.mul_vec(u);
            let al = step.mul_vec(l);
            let ml = mass.mul_vec(l_next);
            let mut src = vec![0.0; ni];
            for (i, s) in src.iter_mut().enumerate() {
                let mean: f64 = (0..shape.n_nodes).map(|p| weights[p] * sol.state.slice(p, m)[i]).sum();
                *s = (1.0 + alpha) * y[i] - alpha * mean - problem.target().get(m, i);
            }
            let ms = mass.mul_vec(&src);
            for i in 0..ni {
                res[0] = res[0].max((ay[i] - my[i] - dt * mu[i]).abs());
                res[1] = res[1].max((al[i] - ml[i] - dt * ms[i]).abs());
                res[2] = res[2].max((beta * u[i] + l[i]).abs());
            }
        }
    }
    Ok(res)
}

/// Dense matrix of the reduced Hessian of `J` in the coordinates of the
/// control unknowns: `Sᵀ G S + β W`, with `S` the state map obtained from the
/// state rows of the full system, `G` the mass-weighted tracking/variance
/// form and `W` the weighted mass of the control space.
pub fn reduced_hessian(problem: &Problem) -> Result<Mat<f64>> {
    let sys = KktSystem::assemble(problem, KktFormulation::Full)?;
    let shape = problem.shape();
    let n = shape.n_nodes * shape.n_t * shape.n_interior;
    let (n_t, ni) = (shape.n_t, shape.n_interior);
    let a = sys.matrix();
    let state_block = Mat::<f64>::from_fn(n, n, |r, c| a[(r, c)]);
    let control_block = Mat::<f64>::from_fn(n, n, |r, c| -a[(r, n + c)]);
    let s = state_block.partial_piv_lu().solve(&control_block);

    let spec = problem.spec();
    let (alpha, beta, dt) = (spec.alpha, spec.beta, problem.dt());
    let w = problem.grid().weights();
    let mass = problem.mass().to_dense();
    let idx = |q: usize, m: usize, i: usize| (q * n_t + m - 1) * ni + i;
    let mut g = Mat::<f64>::zeros(n, n);
    let mut wm = Mat::<f64>::zeros(n, n);
    for q in 0..shape.n_nodes {
        for m in 1..=n_t {
            for i in 0..ni {
                for j in 0..ni {
                    if mass[i][j] == 0.0 {
                        continue;
                    }
                    wm[(idx(q, m, i), idx(q, m, j))] = w[q] * dt * mass[i][j];
                    for p in 0..shape.n_nodes {
                        let coupling = if p == q { (1.0 + alpha) * w[q] } else { 0.0 } - alpha * w[q] * w[p];
                        g[(idx(q, m, i), idx(p, m, j))] = dt * coupling * mass[i][j];
                    }
                }
            }
        }
    }
    Ok(s.transpose() * &g * &s + beta * &wm)
}

/// `true` when the symmetric part of `h` admits a Cholesky factorization.
pub fn is_positive_definite(h: &Mat<f64>) -> bool {
    let n = h.nrows();
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
    sym.llt(Side::Lower).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Generator for Monte Carlo sample `index`.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Monte Carlo estimate of `J(u)` with `ξ` drawn uniformly from the parameter
/// box. The control at a sample point is the tensor Lagrange interpolant of
/// its collocation values; each sample is solved on its own one-point grid.
/// The variance term uses the sample mean with Bessel's correction.
pub fn mc_objective(problem: &Problem, u: &SpaceTimeStochField, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if n_samples < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 samples, got {n_samples}")));
    }
    u.check_shape(problem.shape(), "control")?;
    let dim = problem.grid().dim();
    let per_node = problem.shape().per_node();

    let samples = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            let xi: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let basis = problem.grid().lagrange_basis(&xi)?;
            let mut us = vec![0.0; per_node];
            for (q, l) in basis.iter().enumerate() {
                for (acc, v) in us.iter_mut().zip(u.node(q)) {
                    *acc += l * v;
                }
            }
            let sample_problem = Problem::new(
                problem.spec().clone(),
                *problem.mesh(),
                problem.model().clone(),
                CollocationGrid::single_point(xi),
            )?;
            let us = SpaceTimeStochField::from_vec(sample_problem.shape(), FieldRole::Control, us)?;
            let ys = forward_solve(&sample_problem, &us)?;
            let parts = objective_from_state(&sample_problem, &us, &ys)?;
            Ok((ys.into_vec(), parts.tracking, parts.control))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_t = problem.spec().n_t;
    let ni = problem.mesh().n_interior();
    let mut mean = vec![0.0; per_node];
    for (k, (ys, _, _)) in samples.iter().enumerate() {
        let inv = 1.0 / (k + 1) as f64;
        for (m, y) in mean.iter_mut().zip(ys) {
            *m += (y - *m) * inv;
        }
    }

    let alpha = problem.spec().alpha;
    let bessel = n_samples as f64 / (n_samples - 1) as f64;
    let (mut avg, mut m2) = (0.0, 0.0);
    for (k, (ys, tracking, control)) in samples.iter().enumerate() {
        let dev: Vec<f64> = ys.iter().zip(&mean).map(|(y, m)| y - m).collect();
        let dev = SpaceTimeField::from_vec(n_t, ni, dev)?;
        let spread = 0.5 * alpha * bessel * inner_product_w(problem, &dev, &dev)?;
        let f = tracking + spread + control;
        let delta = f - avg;
        avg += delta / (k + 1) as f64;
        m2 += delta * (f - avg);
    }
    let std_error = (m2 / (n_samples - 1) as f64).sqrt() / (n_samples as f64).sqrt();
    Ok(McEstimate {
        estimate: avg,
        std_error,
        n_samples,
    })
}
