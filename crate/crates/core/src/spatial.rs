//! One-dimensional P1 finite elements on a uniform mesh of `(0, length)`.
//!
//! Boundary nodes carry homogeneous Dirichlet values and are eliminated, so
//! every assembled operator acts on the `n_elements - 1` interior nodes only.

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialMesh {
    n_elements: usize,
    length: f64,
}

impl SpatialMesh {
    pub fn new(n_elements: usize, length: f64) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 elements for an interior node, got {n_elements}"
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidMesh(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n_elements, length })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.length / self.n_elements as f64
    }

    pub fn n_interior(&self) -> usize {
        self.n_elements - 1
    }

    /// Coordinate of interior node `i` in `0..n_interior` (global node `i + 1`).
    pub fn interior_coord(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h()
    }

    pub fn element_midpoint(&self, e: usize) -> f64 {
        (e as f64 + 0.5) * self.h()
    }

    pub fn interior_coords(&self) -> Vec<f64> {
        (0..self.n_interior()).map(|i| self.interior_coord(i)).collect()
    }
}

pub fn build_mesh(n_elements: usize, length: f64) -> Result<SpatialMesh> {
    SpatialMesh::new(n_elements, length)
}

/// Symmetric tridiagonal matrix; `off[i]` couples rows `i` and `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagMatrix {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagMatrix {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::DimensionMismatch("empty tridiagonal matrix".into()));
        }
        check_dim("off-diagonal length", off.len(), diag.len() - 1)?;
        Ok(Self { diag, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `out = self * x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            out[i] = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// Bilinear form `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = self.diag[i] * y[i];
            if i > 0 {
                row += self.off[i - 1] * y[i - 1];
            }
            if i + 1 < n {
                row += self.off[i] * y[i + 1];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// `a * self + b * other`, entrywise.
    pub fn combine(&self, a: f64, other: &SymTridiagMatrix, b: f64) -> Result<SymTridiagMatrix> {
        check_dim("tridiagonal combine", other.dim(), self.dim())?;
        let diag = self
            .diag
            .iter()
            .zip(&other.diag)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let off = self
            .off
            .iter()
            .zip(&other.off)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(SymTridiagMatrix { diag, off })
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            rows[i][i] = self.diag[i];
            if i + 1 < n {
                rows[i][i + 1] = self.off[i];
                rows[i + 1][i] = self.off[i];
            }
        }
        rows
    }

    /// LDLᵀ factorization; fails on a non-positive pivot.
    pub fn factor(&self) -> Result<TridiagFactor> {
        let n = self.dim();
        let mut pivots = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n.saturating_sub(1));
        let mut d = self.diag[0];
        for i in 0..n {
            if i > 0 {
                let l = self.off[i - 1] / pivots[i - 1];
                lower.push(l);
                d = self.diag[i] - l * self.off[i - 1];
            }
            if !(d > 0.0) {
                return Err(Error::SingularSystem(format!(
                    "non-positive pivot {d} at row {i}"
                )));
            }
            pivots.push(d);
        }
        Ok(TridiagFactor { pivots, lower })
    }
}

/// Factored SPD tridiagonal matrix `L D Lᵀ` with unit lower bidiagonal `L`.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    pivots: Vec<f64>,
    lower: Vec<f64>,
}

impl TridiagFactor {
    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(rhs.len(), n);
        for i in 1..n {
            rhs[i] -= self.lower[i - 1] * rhs[i - 1];
        }
        for i in 0..n {
            rhs[i] /= self.pivots[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.lower[i] * rhs[i + 1];
        }
    }
}

/// P1 mass matrix on interior nodes: `2h/3` on the diagonal, `h/6` off it.
pub fn assemble_mass(mesh: &SpatialMesh) -> SymTridiagMatrix {
    let h = mesh.h();
    let n = mesh.n_interior();
    SymTridiagMatrix {
        diag: vec![2.0 * h / 3.0; n],
        off: vec![h / 6.0; n - 1],
    }
}

/// Stiffness matrix of `-(a u')'` with `a` constant on each element.
///
/// Interior node `i` (global `i + 1`) sits between elements `i` and `i + 1`.
pub fn assemble_stiffness(mesh: &SpatialMesh, coeff_per_element: &[f64]) -> Result<SymTridiagMatrix> {
    check_dim("coefficients per element", coeff_per_element.len(), mesh.n_elements())?;
    if let Some((e, a)) = coeff_per_element
        .iter()
        .enumerate()
        .find(|(_, a)| !(**a > 0.0 && a.is_finite()))
    {
        return Err(Error::PositivityViolation(format!(
            "coefficient on element {e} is {a}"
        )));
    }
    let h = mesh.h();
    let n = mesh.n_interior();
    let diag = (0..n)
        .map(|i| (coeff_per_element[i] + coeff_per_element[i + 1]) / h)
        .collect();
    let off = (0..n - 1).map(|i| -coeff_per_element[i + 1] / h).collect();
    Ok(SymTridiagMatrix { diag, off })
}
