//! Squared-exponential ARD kernel.
//!
//! `k(x, x') = signal_variance * exp(-0.5 * sum_d (x_d - x'_d)^2 / l_d^2)`

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of a single-task GP with a constant mean function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub mean_constant: f64,
}

impl KernelParams {
    /// Starting point used when the caller has no better guess. Values are
    /// in units of standardized targets and `[0, 1]`-encoded inputs.
    pub fn default_for(dim: usize) -> Self {
        KernelParams {
            lengthscales: vec![0.3; dim],
            signal_variance: 1.0,
            noise_variance: 1e-2,
            mean_constant: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidHyperparameters(msg.to_string()));
        if self.lengthscales.is_empty() {
            return bad("at least one lengthscale is required");
        }
        if self.lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad("lengthscales must be positive and finite");
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return bad("signal variance must be positive and finite");
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return bad("noise variance must be non-negative and finite");
        }
        if !self.mean_constant.is_finite() {
            return bad("mean constant must be finite");
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn se_unchecked(lengthscales: &[f64], signal_variance: f64, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum();
    signal_variance * (-0.5 * r2).exp()
}

pub(crate) fn check_input(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    Ok(())
}

pub fn kernel_eval(params: &KernelParams, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    check_input(params.dim(), x)?;
    check_input(params.dim(), x_prime)?;
    Ok(se_unchecked(
        &params.lengthscales,
        params.signal_variance,
        x,
        x_prime,
    ))
}

/// Gram matrix `K[i, j] = k(x_i, x_j)`, without the noise term.
pub fn gram(params: &KernelParams, inputs: &[Vec<f64>]) -> Result<Mat<f64>> {
    if inputs.is_empty() {
        return Err(Error::EmptyData("gram matrix needs at least one input"));
    }
    for x in inputs {
        check_input(params.dim(), x)?;
    }
    let n = inputs.len();
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = se_unchecked(
                &params.lengthscales,
                params.signal_variance,
                &inputs[i],
                &inputs[j],
            );
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dim: usize) -> KernelParams {
        KernelParams {
            lengthscales: vec![1.0; dim],
            signal_variance: 1.0,
            noise_variance: 0.0,
            mean_constant: 0.0,
        }
    }

    #[test]
    fn closed_forms() {
        let p = unit(1);
        assert_eq!(kernel_eval(&p, &[0.3], &[0.3]).unwrap(), 1.0);
        let v = kernel_eval(&p, &[0.0], &[1.0]).unwrap();
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-15);
        let mut q = unit(2);
        q.signal_variance = 2.5;
        assert_eq!(kernel_eval(&q, &[0.1, 0.2], &[0.1, 0.2]).unwrap(), 2.5);
    }

    #[test]
    fn errors() {
        let p = unit(2);
        assert!(matches!(
            kernel_eval(&p, &[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            kernel_eval(&p, &[f64::NAN, 0.0], &[0.0, 1.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn gram_matches_pairwise_evaluation() {
        let p = KernelParams {
            lengthscales: vec![0.4, 1.3],
            signal_variance: 1.7,
            noise_variance: 0.0,
            mean_constant: 0.0,
        };
        let xs = vec![vec![0.1, 0.9], vec![0.5, 0.2], vec![0.8, 0.75]];
        let k = gram(&p, &xs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                // brute force from the definition
                let r2: f64 = (0..2)
                    .map(|d| ((xs[i][d] - xs[j][d]) / p.lengthscales[d]).powi(2))
                    .sum();
                assert_eq!(k[(i, j)], 1.7 * (-0.5 * r2).exp());
            }
        }
        let one = gram(&p, &xs[..1]).unwrap();
        assert_eq!(one[(0, 0)], 1.7);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in proptest::collection::vec(-3.0f64..3.0, 3),
            b in proptest::collection::vec(-3.0f64..3.0, 3),
            sf2 in 0.01f64..10.0,
        ) {
            let mut p = unit(3);
            p.signal_variance = sf2;
            let ab = kernel_eval(&p, &a, &b).unwrap();
            let ba = kernel_eval(&p, &b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab > 0.0 && ab <= sf2);
        }
    }
}
