//! Differentiable forget/retain objective pairs: quadratics with exact
//! Hessians, a small tanh MLP with manual backprop, representation-level
//! losses on a frozen reference, and a generator for gradient pairs with a
//! controlled coupling angle.

mod coupled;
mod mlp;
mod quadratic;
mod representation;

pub use coupled::{make_coupled_pair, CoupledPairSpec};
pub use mlp::{blobs_dataset, export_dataset_csv, MlpNetwork, MlpObjective};
pub use quadratic::QuadraticObjective;
pub use representation::RepresentationObjective;

use crate::error::Result;
use crate::linalg::Vector;

pub trait Objective {
    fn dim(&self) -> usize;
    fn loss(&self, w: &Vector) -> Result<f64>;
    fn grad(&self, w: &Vector) -> Result<Vector>;
    /// Hessian-vector product. Exact for quadratics; finite-difference of the
    /// gradient (central, step 1e-4·(1+‖w‖)/max(‖ξ‖,1e-12)) otherwise.
    fn hvp(&self, w: &Vector, xi: &Vector) -> Result<Vector>;
}

/// A forget/retain objective pair evaluated at a common parameter vector.
pub struct ObjectivePair<'a> {
    pub forget: &'a dyn Objective,
    pub retain: &'a dyn Objective,
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(crate::error::Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Central finite differences of a scalar function, step 1e-5·(1+|w_i|) per
/// coordinate. Used both as a test oracle and for outer-gradient checks.
pub fn fd_gradient<F: Fn(&Vector) -> Result<f64>>(f: F, w: &Vector) -> Result<Vector> {
    let mut g = vec![0.0; w.dim()];
    for i in 0..w.dim() {
        let h = 1e-5 * (1.0 + w[i].abs());
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[i] += h;
        wm[i] -= h;
        g[i] = (f(&wp)? - f(&wm)?) / (2.0 * h);
    }
    Vector::new(g)
}

/// Central finite differences of the gradient along xi.
pub fn fd_hvp(obj: &dyn Objective, w: &Vector, xi: &Vector) -> Result<Vector> {
    check_dim(obj.dim(), w.dim())?;
    check_dim(obj.dim(), xi.dim())?;
    let xin = xi.norm();
    if xin == 0.0 {
        return Ok(Vector::zeros(w.dim()));
    }
    let h = 1e-4 * (1.0 + w.norm()) / xin.max(1e-12);
    let gp = obj.grad(&w.axpy(h, xi))?;
    let gm = obj.grad(&w.axpy(-h, xi))?;
    Ok(gp.sub(&gm).scale(1.0 / (2.0 * h)))
}

/// Dense finite-difference Hessian built column by column from the gradient.
/// Oracle-grade: quadratic in the dimension, intended for dim ≤ 64.
pub fn fd_dense_hessian(obj: &dyn Objective, w: &Vector) -> Result<crate::matrix::Matrix> {
    let d = w.dim();
    let mut hmat = crate::matrix::Matrix::zeros(d, d);
    for j in 0..d {
        let h = 1e-5 * (1.0 + w[j].abs());
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[j] += h;
        wm[j] -= h;
        let col = obj.grad(&wp)?.sub(&obj.grad(&wm)?).scale(1.0 / (2.0 * h));
        for i in 0..d {
            hmat[(i, j)] = col[i];
        }
    }
    Ok(hmat)
}
