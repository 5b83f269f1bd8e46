//! Dense symmetric positive-definite factorization with a jitter policy.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Relative jitter levels tried after a plain factorization fails, as
/// multiples of `trace(K) / n`.
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-4;
const REFINE_STEPS: usize = 3;

pub struct Cholesky {
    llt: Llt<f64>,
    jitter: f64,
}

impl std::fmt::Debug for Cholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cholesky")
            .field("n", &self.dim())
            .field("jitter", &self.jitter)
            .finish()
    }
}

impl Cholesky {
    /// Factorizes `matrix`, adding `jitter * I` only when the plain attempt
    /// fails. Jitter starts at `1e-12 * trace / n` and grows tenfold up to
    /// `1e-4 * trace / n`.
    pub fn factorize(matrix: &Mat<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 {
            return Err(Error::EmptyData("empty covariance matrix"));
        }
        for i in 0..n {
            for j in 0..n {
                if !matrix[(i, j)].is_finite() {
                    return Err(Error::NonFinite("covariance matrix"));
                }
            }
        }
        if let Ok(llt) = matrix.llt(Side::Lower) {
            return Ok(Cholesky { llt, jitter: 0.0 });
        }
        let mean_diag = (0..n).map(|i| matrix[(i, i)]).sum::<f64>() / n as f64;
        let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut level = JITTER_START;
        while level <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = level * base;
            let mut jittered = matrix.clone();
            for i in 0..n {
                jittered[(i, i)] += jitter;
            }
            if let Ok(llt) = jittered.llt(Side::Lower) {
                return Ok(Cholesky { llt, jitter });
            }
            level *= 10.0;
        }
        Err(Error::Factorization {
            size: n,
            max_jitter: JITTER_MAX * base,
        })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Diagonal jitter that was added before factorizing.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.llt.solve_in_place(b.as_mut());
        (0..rhs.len()).map(|i| b[(i, 0)]).collect()
    }

    /// Solution of `matrix x = rhs` refined against the unjittered `matrix`
    /// when the factorization needed jitter.
    pub fn solve_refined(&self, matrix: &Mat<f64>, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.solve(rhs);
        if self.jitter == 0.0 {
            return x;
        }
        for _ in 0..REFINE_STEPS {
            let n = rhs.len();
            let r: Vec<f64> = (0..n)
                .map(|i| rhs[i] - (0..n).map(|j| matrix[(i, j)] * x[j]).sum::<f64>())
                .collect();
            for (xi, d) in x.iter_mut().zip(self.solve(&r)) {
                *xi += d;
            }
        }
        x
    }

    /// Forward substitution `L v = rhs`.
    pub fn solve_lower(&self, rhs: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        let n = rhs.len();
        let mut v = rhs.to_vec();
        for i in 0..n {
            let mut s = v[i];
            for k in 0..i {
                s -= l[(i, k)] * v[k];
            }
            v[i] = s / l[(i, i)];
        }
        v
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    pub fn reconstruct(&self) -> Mat<f64> {
        self.llt.reconstruct()
    }
}
