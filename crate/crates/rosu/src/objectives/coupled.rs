//! Constructive generator for quadratic forget/retain pairs whose gradients at
//! an anchor point meet a prescribed coupling angle exactly.

use super::QuadraticObjective;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::matrix::{cholesky_solve, Matrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct CoupledPairSpec {
    pub dim: usize,
    pub target_cos: f64,
    pub anchor: Vector,
    pub scale_f: f64,
    pub scale_r: f64,
    pub seed: u64,
}

impl CoupledPairSpec {
    pub fn new(dim: usize, target_cos: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("coupled pair needs dim >= 2".into()));
        }
        Ok(CoupledPairSpec {
            dim,
            target_cos,
            anchor: Vector::zeros(dim),
            scale_f: 1.0,
            scale_r: 1.0,
            seed,
        })
    }
}

fn random_pd_matrix(rng: &mut ChaCha8Rng, dim: usize) -> Matrix {
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).unwrap();
    let mut b = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            b[(i, j)] = normal.sample(rng);
        }
    }
    // B Bᵀ + 0.5 I keeps the spectrum away from zero
    let mut a = b.matmul(&b.transpose());
    for i in 0..dim {
        a[(i, i)] += 0.5;
    }
    // symmetrize against rounding in the product
    let at = a.transpose();
    a.add(&at).scale(0.5)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector::from_raw((0..dim).map(|_| normal.sample(rng)).collect());
        let n = v.norm();
        if n > 1e-6 {
            return v.scale(1.0 / n);
        }
    }
}

/// Builds a (forget, retain) quadratic pair with
/// g_r(anchor) = scale_r·r and g_f(anchor) = scale_f·(cosθ·r + sinθ·s)
/// for random orthonormal r, s. The achieved coupling matches target_cos to
/// solver precision (well inside 1e-9).
pub fn make_coupled_pair(
    spec: &CoupledPairSpec,
) -> Result<(QuadraticObjective, QuadraticObjective)> {
    if spec.target_cos.abs() >= 1.0 {
        return Err(Error::DegenerateCoupling);
    }
    if spec.scale_f <= 0.0 || spec.scale_r <= 0.0 {
        return Err(Error::Config("gradient scales must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;

    let r = random_unit(&mut rng, dim);
    let s = {
        // orthonormalize a second random direction against r
        loop {
            let cand = random_unit(&mut rng, dim);
            let proj = cand.axpy(-crate::linalg::dot(&cand, &r)?, &r);
            let n = proj.norm();
            if n > 1e-6 {
                break proj.scale(1.0 / n);
            }
        }
    };

    let cos = spec.target_cos;
    let sin = (1.0 - cos * cos).sqrt();
    let g_r_target = r.scale(spec.scale_r);
    let g_f_target = r.scale(spec.scale_f * cos).axpy(spec.scale_f * sin, &s);

    // gradient at the anchor is A(anchor - c), so c = anchor - A⁻¹ g_target
    let a_r = random_pd_matrix(&mut rng, dim);
    let a_f = random_pd_matrix(&mut rng, dim);
    let c_r = spec.anchor.sub(&cholesky_solve(&a_r, &g_r_target)?);
    let c_f = spec.anchor.sub(&cholesky_solve(&a_f, &g_f_target)?);

    let offset_r = rng.gen_range(0.0..1.0);
    let offset_f = rng.gen_range(0.0..1.0);
    let retain = QuadraticObjective::new(a_r, c_r, offset_r)?;
    let forget = QuadraticObjective::new(a_f, c_f, offset_f)?;
    Ok((forget, retain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine_coupling;
    use crate::objectives::Objective;

    #[test]
    fn achieves_target_coupling() {
        for &target in &[0.0, 0.9, -0.5, 0.3] {
            let spec = CoupledPairSpec::new(16, target, 123).unwrap();
            let (forget, retain) = make_coupled_pair(&spec).unwrap();
            let gf = forget.grad(&spec.anchor).unwrap();
            let gr = retain.grad(&spec.anchor).unwrap();
            let c = cosine_coupling(&gf, &gr).unwrap();
            assert!(
                (c - target).abs() <= 1e-9,
                "target {target} achieved {c}"
            );
        }
    }

    #[test]
    fn gradient_scales_respected() {
        let mut spec = CoupledPairSpec::new(8, 0.5, 7).unwrap();
        spec.scale_f = 2.0;
        spec.scale_r = 0.5;
        let (forget, retain) = make_coupled_pair(&spec).unwrap();
        assert!((forget.grad(&spec.anchor).unwrap().norm() - 2.0).abs() < 1e-9);
        assert!((retain.grad(&spec.anchor).unwrap().norm() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn deterministic_for_equal_seeds() {
        let spec = CoupledPairSpec::new(10, 0.7, 99).unwrap();
        let (f1, r1) = make_coupled_pair(&spec).unwrap();
        let (f2, r2) = make_coupled_pair(&spec).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn rejects_parallel_target() {
        let spec = CoupledPairSpec::new(4, 1.0, 1).unwrap();
        assert!(matches!(
            make_coupled_pair(&spec),
            Err(Error::DegenerateCoupling)
        ));
    }
}
