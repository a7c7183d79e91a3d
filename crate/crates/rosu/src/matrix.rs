//! Small dense matrices for desk-scale audits: operator norms by power
//! iteration, a Jacobi eigensolver used as an independent oracle, and a
//! Cholesky solve for constructing quadratic objectives.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dense audits and dense Hessians only run up to this dimension.
pub const MAX_DENSE_DIM: usize = 256;

/// Row-major dense square-or-rectangular matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// Columns assembled from vectors (each column a Vector).
    pub fn from_columns(cols: &[Vector]) -> Self {
        let r = cols[0].dim();
        let c = cols.len();
        let mut m = Matrix::zeros(r, c);
        for (j, v) in cols.iter().enumerate() {
            for i in 0..r {
                m[(i, j)] = v[i];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.dim(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            out[i] = row.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
        }
        Vector::new(out).map_err(|_| Error::NonFinite)
    }

    pub fn matvec_transpose(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: x.dim(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (j, a) in row.iter().enumerate() {
                out[j] += a * xi;
            }
        }
        Vector::new(out).map_err(|_| Error::NonFinite)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| s * a).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// a b^T rank-1 matrix.
    pub fn outer(a: &Vector, b: &Vector) -> Matrix {
        let mut m = Matrix::zeros(a.dim(), b.dim());
        for i in 0..a.dim() {
            for j in 0..b.dim() {
                m[(i, j)] = a[i] * b[j];
            }
        }
        m
    }

    pub fn max_symmetry_defect(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut d: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                d = d.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        d
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn seeded_unit(dim: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = Vector::from_raw((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let n = v.norm();
        if n > 1e-6 {
            return v.scale(1.0 / n);
        }
    }
}

/// Operator (spectral) norm via power iteration on M^T M.
pub fn operator_norm(m: &Matrix, seed: u64) -> f64 {
    let mut x = seeded_unit(m.cols, seed);
    let mut est = 0.0;
    for _ in 0..1000 {
        let y = m.matvec(&x).expect("dims");
        let z = m.matvec_transpose(&y).expect("dims");
        let zn = z.norm();
        if zn == 0.0 {
            return 0.0;
        }
        x = z.scale(1.0 / zn);
        let new_est = m.matvec(&x).expect("dims").norm();
        if (new_est - est).abs() <= 1e-14 * new_est.max(1.0) {
            return new_est;
        }
        est = new_est;
    }
    est
}

/// Exact-to-roundoff operator norm via the eigenvalues of MᵀM. Slower than
/// power iteration but free of convergence-rate error; the audits use it
/// where identities are asserted at 1e-10.
pub fn operator_norm_eig(m: &Matrix) -> f64 {
    let gram = m.transpose().matmul(m);
    sym_eigenvalues_jacobi(&gram)
        .into_iter()
        .fold(0.0f64, f64::max)
        .max(0.0)
        .sqrt()
}

/// Largest eigenvalue of a symmetric PSD matrix via power iteration.
pub fn sym_lambda_max(a: &Matrix, seed: u64) -> f64 {
    assert_eq!(a.rows, a.cols);
    let mut x = seeded_unit(a.cols, seed);
    let mut est = 0.0;
    for _ in 0..2000 {
        let y = a.matvec(&x).expect("dims");
        let yn = y.norm();
        if yn == 0.0 {
            return 0.0;
        }
        x = y.scale(1.0 / yn);
        let new_est = crate::linalg::dot(&x, &a.matvec(&x).expect("dims")).expect("dims");
        if (new_est - est).abs() <= 1e-15 * new_est.abs().max(1.0) {
            return new_est;
        }
        est = new_est;
    }
    est
}

/// Cyclic Jacobi eigensolver for symmetric matrices. Independent of the power
/// iteration path; used as the dense oracle in audits and tests.
pub fn sym_eigenvalues_jacobi(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    // scale-invariant stopping rule: off-diagonal mass relative to the
    // Frobenius norm, so tiny-magnitude matrices still get diagonalized
    let mut frob: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            frob += m[(i, j)] * m[(i, j)];
        }
    }
    let stop = 1e-14 * frob.sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// Solves A x = b for symmetric positive-definite A via Cholesky.
pub fn cholesky_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    if b.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.dim(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::DegenerateGeometry("matrix not positive definite"));
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Vector::new(x).map_err(|_| Error::NonFinite)
}
