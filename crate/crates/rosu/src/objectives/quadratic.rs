//! Quadratic objectives ½(w−c)ᵀA(w−c) + offset with exact Hessian A.

use super::{check_dim, Objective};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::matrix::{sym_eigenvalues_jacobi, sym_lambda_max, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    a: Matrix,
    c: Vector,
    offset: f64,
}

impl QuadraticObjective {
    pub fn new(a: Matrix, c: Vector, offset: f64) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() != c.dim() {
            return Err(Error::DimensionMismatch {
                expected: c.dim(),
                got: a.rows(),
            });
        }
        if a.max_symmetry_defect() > 1e-12 {
            return Err(Error::Config("quadratic matrix is not symmetric".into()));
        }
        // Eigen check is O(n^3); only affordable at audit scale.
        if a.rows() <= 64 {
            let eig = sym_eigenvalues_jacobi(&a);
            if eig[0] < -1e-10 {
                return Err(Error::Config(format!(
                    "quadratic matrix has negative eigenvalue {}",
                    eig[0]
                )));
            }
        }
        Ok(QuadraticObjective { a, c, offset })
    }

    pub fn hessian(&self) -> &Matrix {
        &self.a
    }

    pub fn minimizer(&self) -> &Vector {
        &self.c
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Exact smoothness constant λ_max(A) by power iteration.
    pub fn lambda_max(&self) -> f64 {
        sym_lambda_max(&self.a, 0x5eed)
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.c.dim()
    }

    fn loss(&self, w: &Vector) -> Result<f64> {
        check_dim(self.dim(), w.dim())?;
        let d = w.sub(&self.c);
        Ok(0.5 * crate::linalg::dot(&d, &self.a.matvec(&d)?)? + self.offset)
    }

    fn grad(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.dim(), w.dim())?;
        self.a.matvec(&w.sub(&self.c))
    }

    fn hvp(&self, w: &Vector, xi: &Vector) -> Result<Vector> {
        check_dim(self.dim(), w.dim())?;
        check_dim(self.dim(), xi.dim())?;
        self.a.matvec(xi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{fd_gradient, Objective};

    #[test]
    fn minimizer_and_identity_cases() {
        let a = Matrix::identity(2);
        let c = Vector::zeros(2);
        let q = QuadraticObjective::new(a, c.clone(), 0.0).unwrap();
        assert_eq!(q.loss(&c).unwrap(), 0.0);
        assert_eq!(q.grad(&c).unwrap().norm(), 0.0);
        let w = Vector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(q.loss(&w).unwrap(), 1.0);
        let w = Vector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(q.grad(&w).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn offset_at_minimizer() {
        let a = Matrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
        let c = Vector::new(vec![1.0, -1.0]).unwrap();
        let q = QuadraticObjective::new(a, c.clone(), 7.5).unwrap();
        assert_eq!(q.loss(&c).unwrap(), 7.5);
    }

    #[test]
    fn hvp_is_exact() {
        let a = Matrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
        let q = QuadraticObjective::new(a, Vector::zeros(2), 0.0).unwrap();
        let xi = Vector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(
            q.hvp(&Vector::zeros(2), &xi).unwrap().as_slice(),
            &[2.0, 3.0]
        );
        assert_eq!(
            q.hvp(&Vector::zeros(2), &Vector::zeros(2)).unwrap().norm(),
            0.0
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = Matrix::from_rows(vec![vec![2.0, 0.5], vec![0.5, 1.0]]);
        let q = QuadraticObjective::new(a, Vector::new(vec![0.3, -0.2]).unwrap(), 1.0).unwrap();
        let w = Vector::new(vec![0.7, 1.3]).unwrap();
        let g = q.grad(&w).unwrap();
        let gfd = fd_gradient(|x| q.loss(x), &w).unwrap();
        assert!(g.sub(&gfd).norm() <= 1e-5 * g.norm().max(1.0));
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let a = Matrix::from_rows(vec![vec![1.0, 0.1], vec![0.0, 1.0]]);
        assert!(QuadraticObjective::new(a, Vector::zeros(2), 0.0).is_err());
        let a = Matrix::from_rows(vec![vec![-1.0, 0.0], vec![0.0, 1.0]]);
        assert!(QuadraticObjective::new(a, Vector::zeros(2), 0.0).is_err());
    }
}
