//! Single-task Gaussian process regression.
//!
//! Posterior mean `m(x) = mu0 + k(x)^T (K + s2 I)^-1 (y - mu0)` and variance
//! `v(x) = k(x, x) + s2 - k(x)^T (K + s2 I)^-1 k(x)`, with hyperparameters
//! fitted by maximizing the log marginal likelihood over log-transformed
//! lengthscales and variances.
//!
//! Targets are standardized to zero mean and unit variance before fitting;
//! the fitted [`KernelParams`] live in that standardized space and
//! predictions are mapped back to the original units.

use std::time::Instant;

use faer::Mat;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_input, se_unchecked, KernelParams};
use crate::linalg::Cholesky;
use crate::optimize::{maximize, AscentOptions, Bounds};
use crate::rng::{derive_seed, rng_from_seed, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Affine map between original and standardized targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub offset: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            offset: 0.0,
            scale: 1.0,
        }
    }

    /// Sample mean and population standard deviation; a degenerate spread
    /// leaves the scale at 1.
    pub fn fit(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::identity();
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
        Standardizer {
            offset: mean,
            scale,
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn mean_back(&self, m: f64) -> f64 {
        self.offset + self.scale * m
    }

    pub fn variance_back(&self, v: f64) -> f64 {
        v * self.scale * self.scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Hold the noise variance at this value (standardized units) instead of
    /// learning it.
    pub fixed_noise: Option<f64>,
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            max_iter: 200,
            tol: 1e-6,
            seed: 0,
            fixed_noise: None,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub restarts_completed: usize,
    pub initial_log_marginal_likelihood: f64,
    pub log_marginal_likelihood: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

// ---------------------------------------------------------------------------
// shared evidence machinery (also used by the transfer model)

/// Per-dimension squared input differences, reused across objective calls.
pub(crate) struct SquaredDiffs {
    pub per_dim: Vec<Mat<f64>>,
}

impl SquaredDiffs {
    pub fn new(inputs: &[Vec<f64>], dim: usize) -> Self {
        let n = inputs.len();
        let per_dim = (0..dim)
            .map(|d| {
                Mat::from_fn(n, n, |i, j| {
                    let diff = inputs[i][d] - inputs[j][d];
                    diff * diff
                })
            })
            .collect();
        SquaredDiffs { per_dim }
    }

    /// `exp(-0.5 * sum_d diff_d / l_d^2)` for every pair.
    pub fn correlation(&self, lengthscales: &[f64]) -> Mat<f64> {
        let n = self.per_dim[0].nrows();
        let inv: Vec<f64> = lengthscales.iter().map(|l| 0.5 / (l * l)).collect();
        Mat::from_fn(n, n, |i, j| {
            let r: f64 = self
                .per_dim
                .iter()
                .zip(&inv)
                .map(|(m, w)| m[(i, j)] * w)
                .sum();
            (-r).exp()
        })
    }
}

pub(crate) struct Evidence {
    pub value: f64,
    pub alpha: Vec<f64>,
    pub chol: Cholesky,
}

impl Evidence {
    /// Gaussian log evidence of residuals `resid` under covariance `cov`.
    pub fn compute(cov: &Mat<f64>, resid: &[f64]) -> Result<Self> {
        let chol = Cholesky::factorize(cov)?;
        let alpha = chol.solve(resid);
        let fit: f64 = resid.iter().zip(&alpha).map(|(r, a)| r * a).sum();
        let n = resid.len() as f64;
        let value = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n * LN_2PI;
        if !value.is_finite() {
            return Err(Error::NonFinite("log marginal likelihood"));
        }
        Ok(Evidence { value, alpha, chol })
    }

    /// `alpha alpha^T - C^-1`; the likelihood gradient for a covariance
    /// derivative `dC` is `0.5 * sum(W .* dC)`.
    pub fn weights(&self) -> Mat<f64> {
        let mut w = self.chol.inverse();
        let n = self.alpha.len();
        for j in 0..n {
            for i in 0..n {
                w[(i, j)] = self.alpha[i] * self.alpha[j] - w[(i, j)];
            }
        }
        w
    }
}

/// Sum of `a .* b`.
pub(crate) fn frobenius(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

pub(crate) fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Restart starting point for the shared block
/// `[log l_1..d, log signal, log noise, mean]`.
pub(crate) fn draw_base_theta(rng: &mut Rng, dim: usize, y_var: f64) -> Vec<f64> {
    let mut theta: Vec<f64> = (0..dim).map(|_| log_uniform(rng, 1e-2, 1e1).ln()).collect();
    theta.push((log_uniform(rng, 1e-2, 1e2) * y_var).ln());
    theta.push((log_uniform(rng, 1e-6, 1.0) * y_var).ln());
    theta.push(0.0);
    theta
}

/// Smallest learnable noise variance relative to the target variance. Lower
/// values let dense noiseless data drive the covariance to singularity.
pub(crate) const NOISE_FLOOR: f64 = 1e-6;

/// Box for the shared block, scaled to the target variance.
pub(crate) fn base_bounds(dim: usize, y_var: f64, y_abs_max: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![1e-3f64.ln(); dim];
    let mut upper = vec![1e3f64.ln(); dim];
    lower.push((1e-4 * y_var).ln());
    upper.push((1e4 * y_var).ln());
    lower.push((NOISE_FLOOR * y_var).ln());
    upper.push((10.0 * y_var).ln());
    let mean_bound = 10.0 + 10.0 * y_abs_max;
    lower.push(-mean_bound);
    upper.push(mean_bound);
    (lower, upper)
}

// ---------------------------------------------------------------------------

fn params_to_theta(p: &KernelParams) -> Vec<f64> {
    let mut theta: Vec<f64> = p.lengthscales.iter().map(|l| l.ln()).collect();
    theta.push(p.signal_variance.ln());
    theta.push(p.noise_variance.ln());
    theta.push(p.mean_constant);
    theta
}

fn theta_to_params(theta: &[f64], dim: usize) -> KernelParams {
    KernelParams {
        lengthscales: theta[..dim].iter().map(|t| t.exp()).collect(),
        signal_variance: theta[dim].exp(),
        noise_variance: theta[dim + 1].exp(),
        mean_constant: theta[dim + 2],
    }
}

fn check_training_data(inputs: &[Vec<f64>], y: &[f64], dim: usize) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::EmptyData("at least one training point is required"));
    }
    if inputs.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            found: y.len(),
        });
    }
    for x in inputs {
        check_input(dim, x)?;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training targets"));
    }
    Ok(())
}

fn lml_with_diffs(
    params: &KernelParams,
    diffs: &SquaredDiffs,
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let dim = params.dim();
    let n = y.len();
    let mut kf = diffs.correlation(&params.lengthscales);
    for j in 0..n {
        for i in 0..n {
            kf[(i, j)] *= params.signal_variance;
        }
    }
    let mut cov = kf.clone();
    for i in 0..n {
        cov[(i, i)] += params.noise_variance;
    }
    let resid: Vec<f64> = y.iter().map(|v| v - params.mean_constant).collect();
    let ev = Evidence::compute(&cov, &resid)?;
    let w = ev.weights();

    let mut grad = Vec::with_capacity(dim + 3);
    for (d, l) in params.lengthscales.iter().enumerate() {
        let sq = &diffs.per_dim[d];
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                s += w[(i, j)] * kf[(i, j)] * sq[(i, j)];
            }
        }
        grad.push(0.5 * s / (l * l));
    }
    grad.push(0.5 * frobenius(&w, &kf));
    let trace: f64 = (0..n).map(|i| w[(i, i)]).sum();
    grad.push(0.5 * params.noise_variance * trace);
    grad.push(ev.alpha.iter().sum());
    Ok((ev.value, grad))
}

/// Log marginal likelihood of raw targets `y` and its gradient with respect
/// to `[log l_1..d, log signal_variance, log noise_variance, mean_constant]`.
pub fn log_marginal_likelihood(
    params: &KernelParams,
    inputs: &[Vec<f64>],
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    check_training_data(inputs, y, params.dim())?;
    let diffs = SquaredDiffs::new(inputs, params.dim());
    lml_with_diffs(params, &diffs, y)
}

#[derive(Debug)]
pub struct GpModel {
    params: KernelParams,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    standardizer: Standardizer,
    chol: Cholesky,
    alpha: Vec<f64>,
    report: FitReport,
}

/// Fits hyperparameters by multi-restart marginal-likelihood ascent.
///
/// Restart 0 starts from `init`; the remaining restarts start from seeded
/// log-uniform draws. The best restart wins.
pub fn fit(
    inputs: &[Vec<f64>],
    y: &[f64],
    init: &KernelParams,
    opts: &FitOptions,
) -> Result<GpModel> {
    init.validate()?;
    check_training_data(inputs, y, init.dim())?;
    let started = Instant::now();
    let dim = init.dim();
    let standardizer = if opts.standardize {
        Standardizer::fit(y)
    } else {
        Standardizer::identity()
    };
    let ys: Vec<f64> = y.iter().map(|v| standardizer.forward(*v)).collect();
    let y_var = if opts.standardize {
        1.0
    } else {
        Standardizer::fit(y).scale.powi(2)
    };
    let y_abs_max = ys.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (lower, upper) = base_bounds(dim, y_var, y_abs_max);
    let bounds = Bounds { lower, upper };
    let mut free = vec![true; dim + 3];
    if opts.fixed_noise.is_some() {
        free[dim + 1] = false;
    }
    let diffs = SquaredDiffs::new(inputs, dim);
    let ascent = AscentOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
        ..Default::default()
    };

    let mut init = init.clone();
    if let Some(noise) = opts.fixed_noise {
        init.noise_variance = noise;
    }
    let mut rng = rng_from_seed(derive_seed(opts.seed, &[0x6770]));
    let mut starts = vec![params_to_theta(&init)];
    for _ in 1..opts.restarts.max(1) {
        let mut theta = draw_base_theta(&mut rng, dim, y_var);
        if let Some(noise) = opts.fixed_noise {
            theta[dim + 1] = noise.ln();
        }
        starts.push(theta);
    }

    let objective = |theta: &[f64]| lml_with_diffs(&theta_to_params(theta, dim), &diffs, &ys);
    let mut best: Option<crate::optimize::AscentOutcome> = None;
    let mut initial_lml = f64::NAN;
    let mut completed = 0;
    let mut iterations = 0;
    let mut last_err = None;
    for (r, start) in starts.iter().enumerate() {
        match maximize(objective, start, &free, &bounds, &ascent) {
            Ok(out) => {
                if r == 0 {
                    initial_lml = out.initial_value;
                }
                completed += 1;
                iterations += out.iterations;
                if best.as_ref().is_none_or(|b| out.value > b.value) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = best.ok_or_else(|| {
        Error::FitFailed(last_err.map_or_else(|| "no restarts".to_string(), |e| e.to_string()))
    })?;
    let params = theta_to_params(&best.theta, dim);
    let mut model = GpModel::from_parts(params, inputs.to_vec(), y.to_vec(), standardizer)?;
    model.report = FitReport {
        iterations,
        restarts_completed: completed,
        initial_log_marginal_likelihood: initial_lml,
        log_marginal_likelihood: best.value,
        train_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(model)
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters (in standardized units) on
    /// raw training data.
    pub fn from_parts(
        params: KernelParams,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        standardizer: Standardizer,
    ) -> Result<Self> {
        params.validate()?;
        check_training_data(&inputs, &targets, params.dim())?;
        let ys: Vec<f64> = targets.iter().map(|v| standardizer.forward(*v)).collect();
        let diffs = SquaredDiffs::new(&inputs, params.dim());
        let n = inputs.len();
        let mut cov = diffs.correlation(&params.lengthscales);
        for j in 0..n {
            for i in 0..n {
                cov[(i, j)] *= params.signal_variance;
            }
            cov[(j, j)] += params.noise_variance;
        }
        let resid: Vec<f64> = ys.iter().map(|v| v - params.mean_constant).collect();
        let ev = Evidence::compute(&cov, &resid)?;
        let alpha = ev.chol.solve_refined(&cov, &resid);
        Ok(GpModel {
            params,
            inputs,
            targets,
            standardizer,
            report: FitReport {
                initial_log_marginal_likelihood: ev.value,
                log_marginal_likelihood: ev.value,
                ..Default::default()
            },
            chol: ev.chol,
            alpha,
        })
    }

    pub(crate) fn set_report(&mut self, report: FitReport) {
        self.report = report;
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn standardizer(&self) -> Standardizer {
        self.standardizer
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        check_input(self.dim(), x)?;
        let p = &self.params;
        let k: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| se_unchecked(&p.lengthscales, p.signal_variance, x, xi))
            .collect();
        let mean: f64 = p.mean_constant + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = self.chol.solve_lower(&k);
        let explained: f64 = v.iter().map(|a| a * a).sum();
        let variance = (p.signal_variance + p.noise_variance - explained).max(0.0);
        Ok(Prediction {
            mean: self.standardizer.mean_back(mean),
            variance: self.standardizer.variance_back(variance),
        })
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gram;
    use crate::rng::rng_from_seed;

    fn random_instance(seed: u64, n: usize, d: usize) -> (KernelParams, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let params = KernelParams {
            lengthscales: (0..d).map(|_| 0.2 + rng.random::<f64>()).collect(),
            signal_variance: 0.5 + rng.random::<f64>(),
            noise_variance: 0.01 + 0.2 * rng.random::<f64>(),
            mean_constant: rng.random::<f64>() - 0.5,
        };
        let xs = (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let ys = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        (params, xs, ys)
    }

    #[test]
    fn single_point_closed_form() {
        let params = KernelParams {
            lengthscales: vec![1.0],
            signal_variance: 1.0,
            noise_variance: 0.0,
            mean_constant: 0.0,
        };
        let (v, _) = log_marginal_likelihood(&params, &[vec![0.5]], &[0.0]).unwrap();
        // log N(0 | 0, 1) = -0.5 ln(2 pi)
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..10 {
            let (params, xs, ys) = random_instance(seed, 7, 3);
            let (_, grad) = log_marginal_likelihood(&params, &xs, &ys).unwrap();
            let theta = params_to_theta(&params);
            for k in 0..theta.len() {
                let h = 1e-5;
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                let fu = log_marginal_likelihood(&theta_to_params(&up, 3), &xs, &ys).unwrap().0;
                let fd = log_marginal_likelihood(&theta_to_params(&dn, 3), &xs, &ys).unwrap().0;
                let fdg = (fu - fd) / (2.0 * h);
                let rel = (grad[k] - fdg).abs() / fdg.abs().max(1e-6);
                assert!(rel < 1e-4, "seed {seed} k {k}: {} vs {fdg}", grad[k]);
            }
        }
    }

    #[test]
    fn duplicate_rows_without_noise_are_jittered() {
        let params = KernelParams {
            lengthscales: vec![0.5],
            signal_variance: 1.0,
            noise_variance: 0.0,
            mean_constant: 0.0,
        };
        let xs = vec![vec![0.3], vec![0.3]];
        let k = gram(&params, &xs).unwrap();
        assert_eq!(k[(0, 1)], k[(0, 0)]);
        let model =
            GpModel::from_parts(params, xs, vec![1.0, 1.0], Standardizer::identity()).unwrap();
        assert!(model.cholesky().jitter() > 0.0);
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let (params, xs, ys) = random_instance(3, 5, 2);
        let model = GpModel::from_parts(params.clone(), xs, ys, Standardizer::identity()).unwrap();
        let p = model.predict(&[1e3, -1e3]).unwrap();
        assert!((p.mean - params.mean_constant).abs() < 1e-12);
        assert!((p.variance - params.signal_variance - params.noise_variance).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_fit_their_level() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
        let ys = vec![4.2; 6];
        let model = fit(&xs, &ys, &KernelParams::default_for(1), &FitOptions::default()).unwrap();
        for x in [0.0, 0.33, 0.9, 5.0] {
            assert!((model.predict(&[x]).unwrap().mean - 4.2).abs() <= 1e-3);
        }
    }

    #[test]
    fn noiseless_fit_interpolates() {
        let xs = vec![vec![0.1], vec![0.45], vec![0.8]];
        let ys: Vec<f64> = xs.iter().map(|x: &Vec<f64>| (3.0 * x[0]).sin() + x[0]).collect();
        let opts = FitOptions {
            fixed_noise: Some(0.0),
            ..Default::default()
        };
        let model = fit(&xs, &ys, &KernelParams::default_for(1), &opts).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let p = model.predict(x).unwrap();
            assert!((p.mean - y).abs() <= 1e-6, "{} vs {y}", p.mean);
            assert!(p.variance <= 1e-6);
        }
    }

    #[test]
    fn fit_is_deterministic_and_improves_objective() {
        let (_, xs, ys) = random_instance(11, 12, 2);
        let init = KernelParams::default_for(2);
        let a = fit(&xs, &ys, &init, &FitOptions::default()).unwrap();
        let b = fit(&xs, &ys, &init, &FitOptions::default()).unwrap();
        assert_eq!(a.params(), b.params());
        let r = a.report();
        assert!(r.log_marginal_likelihood >= r.initial_log_marginal_likelihood);
    }

    #[test]
    fn rejects_bad_input() {
        let p = KernelParams::default_for(2);
        assert!(matches!(
            fit(&[], &[], &p, &FitOptions::default()),
            Err(Error::EmptyData(_))
        ));
        let model = fit(&[vec![0.0, 0.0]], &[1.0], &p, &FitOptions::default()).unwrap();
        assert!(matches!(
            model.predict(&[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn posterior_variance_within_prior(seed in 0u64..1000, n in 1usize..12, d in 1usize..4) {
            let (params, xs, ys) = random_instance(seed, n, d);
            let model = GpModel::from_parts(params.clone(), xs, ys, Standardizer::identity()).unwrap();
            let mut rng = rng_from_seed(seed ^ 0xfeed);
            for _ in 0..5 {
                let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 0.5).collect();
                let p = model.predict(&x).unwrap();
                proptest::prop_assert!(p.variance >= 0.0);
                proptest::prop_assert!(p.variance <= params.signal_variance + params.noise_variance + 1e-12);
            }
        }

        #[test]
        fn training_order_does_not_matter(seed in 0u64..1000, n in 2usize..12) {
            let (params, xs, ys) = random_instance(seed, n, 2);
            let a = GpModel::from_parts(params.clone(), xs.clone(), ys.clone(), Standardizer::identity()).unwrap();
            let b = GpModel::from_parts(
                params,
                xs.iter().rev().cloned().collect(),
                ys.iter().rev().copied().collect(),
                Standardizer::identity(),
            )
            .unwrap();
            for x in [vec![0.1, 0.7], vec![0.5, 0.5], vec![1.3, -0.2]] {
                let (pa, pb) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
                proptest::prop_assert!((pa.mean - pb.mean).abs() < 1e-9);
                proptest::prop_assert!((pa.variance - pb.variance).abs() < 1e-9);
            }
        }

        #[test]
        fn standardizer_round_trips(values in proptest::collection::vec(-1e3f64..1e3, 1..30), y in -1e3f64..1e3) {
            let s = Standardizer::fit(&values);
            proptest::prop_assert!((s.mean_back(s.forward(y)) - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }
}
