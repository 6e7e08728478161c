//! Uncertain diffusion coefficient, collocation quadrature over its parameter
//! box, and the expectation / variance reductions over collocation nodes.
//!
//! The parameters `ξ_k` are i.i.d. uniform on `[-1, 1]`; the coefficient is the
//! affine expansion `a(x, ξ) = a0 + Σ_k σ_k cos(kπx / L) ξ_k`.

use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};
use crate::spatial::SpatialMesh;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFieldModel {
    a0: f64,
    sigmas: Vec<f64>,
}

impl RandomFieldModel {
    pub fn new(a0: f64, sigmas: Vec<f64>) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite()) {
            return Err(Error::PositivityViolation(format!("a0 must be positive, got {a0}")));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "mode amplitudes must be non-negative, got {s}"
            )));
        }
        let model = Self { a0, sigmas };
        let margin = model.positivity_margin();
        if margin <= 0.0 {
            return Err(Error::PositivityViolation(format!(
                "a0 - sum(sigmas) = {margin} must be positive"
            )));
        }
        Ok(model)
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn n_modes(&self) -> usize {
        self.sigmas.len()
    }

    /// Lower bound of the coefficient over the whole parameter box.
    pub fn positivity_margin(&self) -> f64 {
        self.a0 - self.sigmas.iter().sum::<f64>()
    }
}

pub fn build_field_model(a0: f64, sigmas: Vec<f64>) -> Result<RandomFieldModel> {
    RandomFieldModel::new(a0, sigmas)
}

/// Coefficient value on every element, sampled at the element midpoint.
pub fn realize_coefficient(model: &RandomFieldModel, xi: &[f64], mesh: &SpatialMesh) -> Result<Vec<f64>> {
    check_dim("parameter point", xi.len(), model.n_modes())?;
    if let Some(x) = xi.iter().find(|x| !(x.abs() <= 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "parameter {x} outside [-1, 1]"
        )));
    }
    let length = mesh.length();
    Ok((0..mesh.n_elements())
        .map(|e| {
            let x = mesh.element_midpoint(e);
            model
                .sigmas
                .iter()
                .zip(xi)
                .enumerate()
                .fold(model.a0, |acc, (k, (s, z))| {
                    acc + s * ((k + 1) as f64 * PI * x / length).cos() * z
                })
        })
        .collect())
}

/// Gauss–Legendre rule on `[-1, 1]` with `n` points, ascending nodes,
/// weights summing to 2.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for j in 0..n.div_ceil(2) {
        // Newton on P_n from the Chebyshev-like initial guess.
        let mut x = (PI * (j as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[j] = -x;
        nodes[n - 1 - j] = x;
        weights[j] = w;
        weights[n - 1 - j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    (p1, n * (x * p1 - p0) / (x * x - 1.0))
}

/// Tensor-product Gauss–Legendre grid over `[-1, 1]^K`, weights normalized to
/// the uniform probability measure. Node `q` enumerates multi-indices with the
/// last parameter varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    dim: usize,
    points_1d: Vec<f64>,
    multi_index: Vec<Vec<usize>>,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl CollocationGrid {
    pub fn new(dim: usize, points_per_dim: usize) -> Result<Self> {
        if points_per_dim == 0 {
            return Err(Error::InvalidParameter("points_per_dim must be at least 1".into()));
        }
        let (x1, w1) = gauss_legendre(points_per_dim);
        let n_nodes = points_per_dim.pow(dim as u32);
        let mut multi_index = Vec::with_capacity(n_nodes);
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut weights = Vec::with_capacity(n_nodes);
        for q in 0..n_nodes {
            let mut idx = vec![0; dim];
            let mut rem = q;
            for k in (0..dim).rev() {
                idx[k] = rem % points_per_dim;
                rem /= points_per_dim;
            }
            nodes.push(idx.iter().map(|&j| x1[j]).collect());
            weights.push(idx.iter().map(|&j| 0.5 * w1[j]).product());
            multi_index.push(idx);
        }
        Ok(Self {
            dim,
            points_1d: x1,
            multi_index,
            nodes,
            weights,
        })
    }

    /// Grid holding one arbitrary parameter point with weight 1.
    pub fn single_point(xi: Vec<f64>) -> Self {
        Self {
            dim: xi.len(),
            points_1d: vec![0.0],
            multi_index: vec![vec![0; xi.len()]],
            nodes: vec![xi],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Values at `xi` of the tensor Lagrange basis attached to each node.
    pub fn lagrange_basis(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_dim("parameter point", xi.len(), self.dim)?;
        let p = self.points_1d.len();
        let basis_1d: Vec<Vec<f64>> = xi
            .iter()
            .map(|&x| {
                (0..p)
                    .map(|j| {
                        (0..p)
                            .filter(|&l| l != j)
                            .map(|l| (x - self.points_1d[l]) / (self.points_1d[j] - self.points_1d[l]))
                            .product()
                    })
                    .collect()
            })
            .collect();
        Ok(self
            .multi_index
            .iter()
            .map(|idx| idx.iter().enumerate().map(|(k, &j)| basis_1d[k][j]).product())
            .collect())
    }
}

pub fn build_collocation_grid(dim: usize, points_per_dim: usize) -> Result<CollocationGrid> {
    CollocationGrid::new(dim, points_per_dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRole {
    State,
    Control,
    Adjoint,
    Gradient,
    Target,
}

/// Extents of a space-time-stochastic field: collocation nodes, time steps
/// (`n_t`, so `n_t + 1` time levels), interior spatial nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldShape {
    pub n_nodes: usize,
    pub n_t: usize,
    pub n_interior: usize,
}

impl FieldShape {
    pub fn levels(&self) -> usize {
        self.n_t + 1
    }

    pub fn per_node(&self) -> usize {
        self.levels() * self.n_interior
    }

    pub fn len(&self) -> usize {
        self.n_nodes * self.per_node()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Values indexed `[q][m][i]` for `q < n_nodes`, `m = 0..=n_t`, `i < n_interior`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeStochField {
    shape: FieldShape,
    role: FieldRole,
    data: Vec<f64>,
}

impl SpaceTimeStochField {
    pub fn zeros(shape: FieldShape, role: FieldRole) -> Self {
        Self {
            shape,
            role,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: FieldShape, role: FieldRole, data: Vec<f64>) -> Result<Self> {
        check_dim("field data length", data.len(), shape.len())?;
        Ok(Self { shape, role, data })
    }

    /// Field that repeats one deterministic space-time array on every node.
    pub fn broadcast(det: &SpaceTimeField, n_nodes: usize, role: FieldRole) -> Self {
        let shape = FieldShape {
            n_nodes,
            n_t: det.n_t(),
            n_interior: det.n_interior(),
        };
        let mut data = Vec::with_capacity(shape.len());
        for _ in 0..n_nodes {
            data.extend_from_slice(det.as_slice());
        }
        Self { shape, role, data }
    }

    pub fn shape(&self) -> FieldShape {
        self.shape
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// All time levels of node `q`, `[m][i]` row-major.
    pub fn node(&self, q: usize) -> &[f64] {
        let n = self.shape.per_node();
        &self.data[q * n..(q + 1) * n]
    }

    pub fn node_mut(&mut self, q: usize) -> &mut [f64] {
        let n = self.shape.per_node();
        &mut self.data[q * n..(q + 1) * n]
    }

    pub fn nodes_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        let n = self.shape.per_node();
        self.data.chunks_exact_mut(n)
    }

    pub fn slice(&self, q: usize, m: usize) -> &[f64] {
        let ni = self.shape.n_interior;
        let start = q * self.shape.per_node() + m * ni;
        &self.data[start..start + ni]
    }

    pub fn slice_mut(&mut self, q: usize, m: usize) -> &mut [f64] {
        let ni = self.shape.n_interior;
        let start = q * self.shape.per_node() + m * ni;
        &mut self.data[start..start + ni]
    }

    pub fn get(&self, q: usize, m: usize, i: usize) -> f64 {
        self.slice(q, m)[i]
    }

    pub fn check_shape(&self, expected: FieldShape, what: &str) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: shape {:?}, expected {:?}",
                self.shape, expected
            )))
        }
    }

    /// `a * self + b * other`, keeping `self`'s role.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        other.check_shape(self.shape, "linear combination")?;
        Ok(Self {
            shape: self.shape,
            role: self.role,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            role: self.role,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }
}

/// Deterministic space-time array `[m][i]`, `m = 0..=n_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    n_t: usize,
    n_interior: usize,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(n_t: usize, n_interior: usize) -> Self {
        Self {
            n_t,
            n_interior,
            data: vec![0.0; (n_t + 1) * n_interior],
        }
    }

    pub fn from_vec(n_t: usize, n_interior: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("space-time data length", data.len(), (n_t + 1) * n_interior)?;
        Ok(Self { n_t, n_interior, data })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn level(&self, m: usize) -> &[f64] {
        &self.data[m * self.n_interior..(m + 1) * self.n_interior]
    }

    pub fn level_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.n_interior..(m + 1) * self.n_interior]
    }

    pub fn get(&self, m: usize, i: usize) -> f64 {
        self.data[m * self.n_interior + i]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_t: self.n_t,
            n_interior: self.n_interior,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

fn check_grid(field: &SpaceTimeStochField, grid: &CollocationGrid) -> Result<()> {
    check_dim("collocation nodes", field.shape().n_nodes, grid.len())
}

/// `Σ_q w_q field[q]`, accumulated in ascending `q`.
pub fn expectation(field: &SpaceTimeStochField, grid: &CollocationGrid) -> Result<SpaceTimeField> {
    check_grid(field, grid)?;
    let shape = field.shape();
    let mut out = SpaceTimeField::zeros(shape.n_t, shape.n_interior);
    for (q, w) in grid.weights().iter().enumerate() {
        for (acc, v) in out.data.iter_mut().zip(field.node(q)) {
            *acc += w * v;
        }
    }
    Ok(out)
}

/// `E(z²) - (E z)²` without clamping; may dip below zero by roundoff.
pub fn variance_field_unclamped(field: &SpaceTimeStochField, grid: &CollocationGrid) -> Result<SpaceTimeField> {
    let mean = expectation(field, grid)?;
    let second = expectation(&field.map(|x| x * x), grid)?;
    let data = second
        .data
        .iter()
        .zip(&mean.data)
        .map(|(s, m)| s - m * m)
        .collect();
    Ok(SpaceTimeField { data, ..mean })
}

pub fn variance_field(field: &SpaceTimeStochField, grid: &CollocationGrid) -> Result<SpaceTimeField> {
    Ok(variance_field_unclamped(field, grid)?.map(|v| v.max(0.0)))
}

pub fn std_field(field: &SpaceTimeStochField, grid: &CollocationGrid) -> Result<SpaceTimeField> {
    Ok(variance_field(field, grid)?.map(f64::sqrt))
}
