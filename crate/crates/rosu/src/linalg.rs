//! Dense real vectors, rank-1 retain projectors (exact and regularized),
//! orthonormal bases, and gradient-coupling diagnostics.

use crate::error::{Error, Result};

/// Flat parameter/gradient vector. Constructors reject NaN/Inf and zero length.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Vector(entries))
    }

    /// Construction without the finiteness scan, for values produced by
    /// arithmetic on already-validated inputs.
    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        debug_assert!(!entries.is_empty());
        Vector(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1);
        Vector(vec![0.0; dim])
    }

    /// Standard basis vector e_i.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Vector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector::from_raw(self.0.iter().map(|x| s * x).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// self + s * other
    pub fn axpy(&self, s: f64, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    pub fn normalized(&self) -> Vector {
        self.scale(1.0 / self.norm())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

pub fn dot(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot_unchecked(a, b))
}

pub(crate) fn dot_unchecked(a: &Vector, b: &Vector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

/// Cosine of the angle between the forget and retain gradients, clamped to
/// [-1, 1] so downstream arcsin/arccos never leave their domain.
pub fn cosine_coupling(g_f: &Vector, g_r: &Vector) -> Result<f64> {
    let nf = g_f.norm();
    let nr = g_r.norm();
    if nf == 0.0 || nr == 0.0 {
        return Err(Error::DegenerateGradient("zero-norm gradient in coupling"));
    }
    let c = dot(g_f, g_r)? / (nf * nr);
    Ok(c.clamp(-1.0, 1.0))
}

/// Rank-1 projector onto the retain-gradient direction, optionally stabilized
/// by a denominator regularizer tau.
#[derive(Debug, Clone)]
pub struct Rank1Projector {
    direction: Vector,
    tau: f64,
    denom: f64,
}

impl Rank1Projector {
    pub fn new(direction: Vector, tau: f64) -> Result<Self> {
        if direction.norm() == 0.0 {
            return Err(Error::DegenerateGradient("zero projector direction"));
        }
        if tau < 0.0 {
            return Err(Error::Config("tau must be nonnegative".into()));
        }
        let denom = direction.norm_sq() + tau;
        Ok(Rank1Projector {
            direction,
            tau,
            denom,
        })
    }

    pub fn direction(&self) -> &Vector {
        &self.direction
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn denom(&self) -> f64 {
        self.denom
    }

    /// Applies the (regularized) projector itself: (x·g) / (‖g‖²+τ) · g.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        let c = dot(x, &self.direction)? / self.denom;
        Ok(self.direction.scale(c))
    }

    /// Removes the (regularized) retain-parallel component:
    /// x − (x·g)/(‖g‖²+τ) · g. With τ=0 the result is orthogonal to g.
    pub fn project_out(&self, x: &Vector) -> Result<Vector> {
        let c = dot(x, &self.direction)? / self.denom;
        Ok(x.axpy(-c, &self.direction))
    }

    /// Exact operator-norm gap between the regularized and exact projectors:
    /// τ / (‖g‖²+τ).
    pub fn regproj_gap(&self) -> f64 {
        self.tau / self.denom
    }
}

/// Mutually orthonormal columns spanning a protected subspace.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    columns: Vec<Vector>,
    drop_tol: f64,
}

impl OrthonormalBasis {
    pub fn columns(&self) -> &[Vector] {
        &self.columns
    }

    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    pub fn dim(&self) -> usize {
        self.columns[0].dim()
    }

    pub fn drop_tol(&self) -> f64 {
        self.drop_tol
    }

    /// x − Σ_j (x·u_j) u_j.
    pub fn project_out(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let mut r = x.clone();
        for u in &self.columns {
            let c = dot_unchecked(&r, u);
            r = r.axpy(-c, u);
        }
        Ok(r)
    }
}

/// Modified Gram-Schmidt with a second re-orthogonalization pass. Inputs whose
/// residual falls below drop_tol times their original norm are discarded.
pub fn orthonormalize(vectors: &[Vector], drop_tol: f64) -> Result<OrthonormalBasis> {
    if vectors.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let dim = vectors[0].dim();
    let mut columns: Vec<Vector> = Vec::new();
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        let original_norm = v.norm();
        if original_norm == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for _pass in 0..2 {
            for u in &columns {
                let c = dot_unchecked(&r, u);
                r = r.axpy(-c, u);
            }
        }
        let rn = r.norm();
        if rn > drop_tol * original_norm {
            columns.push(r.scale(1.0 / rn));
        }
    }
    if columns.is_empty() {
        return Err(Error::EmptyBasis);
    }
    Ok(OrthonormalBasis { columns, drop_tol })
}

pub fn subspace_project_out(basis: &OrthonormalBasis, x: &Vector) -> Result<Vector> {
    basis.project_out(x)
}

pub const DEFAULT_DROP_TOL: f64 = 1e-10;
