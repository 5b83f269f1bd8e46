//! Two-task transfer GP.
//!
//! Source and target observations are modelled jointly with the product
//! kernel `k((t, x), (t', x')) = B[t, t'] * k_xx(x, x')`, where `k_xx` is the
//! squared-exponential ARD kernel and `B` is the task covariance
//!
//! ```text
//! B = [[1,        rho * a],
//!      [rho * a,  a^2    ]]      (rows: source, target)
//! ```
//!
//! `rho` is the learned inter-task correlation and `a` the target's
//! amplitude relative to the source. Each task has its own observation noise
//! and constant mean, and each task's targets are standardized separately.
//! Predictions for the target use the joint posterior.

use std::time::Instant;

use faer::Mat;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    base_bounds, draw_base_theta, NOISE_FLOOR, log_uniform, Evidence, FitOptions, FitReport, Prediction,
    SquaredDiffs, Standardizer,
};
use crate::kernel::{check_input, se_unchecked, KernelParams};
use crate::linalg::Cholesky;
use crate::optimize::{maximize, AscentOptions, AscentOutcome, Bounds};
use crate::rng::{derive_seed, rng_from_seed};

const RHO_LIMIT: f64 = 0.999;
/// Largest ratio between the target amplitude and its standardized value.
const TARGET_SCALE_LIMIT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Source,
    Target,
}

/// Hyperparameters of the transfer kernel, in standardized units.
///
/// `base.noise_variance` is the target noise and `base.mean_constant` the
/// target mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferKernelParams {
    pub base: KernelParams,
    pub rho: f64,
    pub noise_source: f64,
    pub mean_source: f64,
    pub target_scale: f64,
}

impl TransferKernelParams {
    pub fn default_for(dim: usize) -> Self {
        TransferKernelParams {
            base: KernelParams::default_for(dim),
            rho: 0.5,
            noise_source: 1e-2,
            mean_source: 0.0,
            target_scale: 1.0,
        }
    }

    pub fn noise_target(&self) -> f64 {
        self.base.noise_variance
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.rho.is_finite() && self.rho.abs() < 1.0) {
            return Err(Error::InvalidHyperparameters(
                "rho must lie strictly between -1 and 1".into(),
            ));
        }
        if !(self.noise_source.is_finite() && self.noise_source >= 0.0) {
            return Err(Error::InvalidHyperparameters(
                "source noise must be non-negative and finite".into(),
            ));
        }
        if !(self.target_scale.is_finite() && self.target_scale > 0.0) {
            return Err(Error::InvalidHyperparameters(
                "target scale must be positive and finite".into(),
            ));
        }
        if !self.mean_source.is_finite() {
            return Err(Error::InvalidHyperparameters("source mean must be finite".into()));
        }
        Ok(())
    }

    /// Task covariance entry `B[a, b]`.
    pub fn task_covariance(&self, a: TaskTag, b: TaskTag) -> f64 {
        match (a, b) {
            (TaskTag::Source, TaskTag::Source) => 1.0,
            (TaskTag::Target, TaskTag::Target) => self.target_scale * self.target_scale,
            _ => self.rho * self.target_scale,
        }
    }

    fn noise(&self, t: TaskTag) -> f64 {
        match t {
            TaskTag::Source => self.noise_source,
            TaskTag::Target => self.base.noise_variance,
        }
    }

    fn mean(&self, t: TaskTag) -> f64 {
        match t {
            TaskTag::Source => self.mean_source,
            TaskTag::Target => self.base.mean_constant,
        }
    }
}

/// `B[tag_a, tag_b] * k_xx(x_a, x_b)`.
pub fn transfer_kernel_eval(
    params: &TransferKernelParams,
    tag_a: TaskTag,
    x_a: &[f64],
    tag_b: TaskTag,
    x_b: &[f64],
) -> Result<f64> {
    let k = crate::kernel::kernel_eval(&params.base, x_a, x_b)?;
    Ok(params.task_covariance(tag_a, tag_b) * k)
}

/// Observations of one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TaskData {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Self {
        TaskData { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.inputs.len(),
                found: self.targets.len(),
            });
        }
        for x in &self.inputs {
            check_input(dim, x)?;
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training targets"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransferFitOptions {
    #[serde(flatten)]
    pub base: FitOptions,
    /// Diagnostic mode: hold `rho` at this value and the task covariance at
    /// `[[1, rho], [rho, 1]]` instead of learning them.
    #[serde(default)]
    pub fixed_rho: Option<f64>,
}

// theta layout: [log l_1..d, log signal, log noise_t, mean_t,
//                log noise_s, mean_s, atanh rho, log target_scale]
fn params_to_theta(p: &TransferKernelParams) -> Vec<f64> {
    let mut theta: Vec<f64> = p.base.lengthscales.iter().map(|l| l.ln()).collect();
    theta.push(p.base.signal_variance.ln());
    theta.push(p.base.noise_variance.ln());
    theta.push(p.base.mean_constant);
    theta.push(p.noise_source.ln());
    theta.push(p.mean_source);
    theta.push(p.rho.atanh());
    theta.push(p.target_scale.ln());
    theta
}

fn theta_to_params(theta: &[f64], dim: usize) -> TransferKernelParams {
    TransferKernelParams {
        base: KernelParams {
            lengthscales: theta[..dim].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[dim].exp(),
            noise_variance: theta[dim + 1].exp(),
            mean_constant: theta[dim + 2],
        },
        noise_source: theta[dim + 3].exp(),
        mean_source: theta[dim + 4],
        rho: theta[dim + 5].tanh(),
        target_scale: theta[dim + 6].exp(),
    }
}

/// Joint training set: source rows first, then target rows.
struct JointData {
    inputs: Vec<Vec<f64>>,
    tags: Vec<TaskTag>,
    ys: Vec<f64>,
}

impl JointData {
    fn new(source: &TaskData, target: &TaskData, std_s: Standardizer, std_t: Standardizer) -> Self {
        let mut inputs = source.inputs.clone();
        inputs.extend(target.inputs.iter().cloned());
        let mut tags = vec![TaskTag::Source; source.len()];
        tags.extend(std::iter::repeat_n(TaskTag::Target, target.len()));
        let mut ys: Vec<f64> = source.targets.iter().map(|v| std_s.forward(*v)).collect();
        ys.extend(target.targets.iter().map(|v| std_t.forward(*v)));
        JointData { inputs, tags, ys }
    }
}

fn joint_covariance(params: &TransferKernelParams, corr: &Mat<f64>, tags: &[TaskTag]) -> Mat<f64> {
    let n = tags.len();
    let sf2 = params.base.signal_variance;
    let mut cov = Mat::from_fn(n, n, |i, j| {
        sf2 * params.task_covariance(tags[i], tags[j]) * corr[(i, j)]
    });
    for (i, t) in tags.iter().enumerate() {
        cov[(i, i)] += params.noise(*t);
    }
    cov
}

fn joint_lml(
    params: &TransferKernelParams,
    diffs: &SquaredDiffs,
    data: &JointData,
) -> Result<(f64, Vec<f64>)> {
    let dim = params.base.dim();
    let n = data.tags.len();
    let tags = &data.tags;
    let corr = diffs.correlation(&params.base.lengthscales);
    let cov = joint_covariance(params, &corr, tags);
    let resid: Vec<f64> = data
        .ys
        .iter()
        .zip(tags)
        .map(|(y, t)| y - params.mean(*t))
        .collect();
    let ev = Evidence::compute(&cov, &resid)?;
    let w = ev.weights();

    let sf2 = params.base.signal_variance;
    let (rho, a) = (params.rho, params.target_scale);
    let mut grad_ls = vec![0.0; dim];
    // sum of W .* corr per task pair: [ss, st, tt]
    let mut by_pair = [0.0f64; 3];
    for j in 0..n {
        for i in 0..n {
            let pair = match (tags[i], tags[j]) {
                (TaskTag::Source, TaskTag::Source) => 0,
                (TaskTag::Target, TaskTag::Target) => 2,
                _ => 1,
            };
            let wc = w[(i, j)] * corr[(i, j)];
            by_pair[pair] += wc;
            let b = params.task_covariance(tags[i], tags[j]);
            for (d, g) in grad_ls.iter_mut().enumerate() {
                *g += wc * b * diffs.per_dim[d][(i, j)];
            }
        }
    }
    let mut grad: Vec<f64> = grad_ls
        .iter()
        .zip(&params.base.lengthscales)
        .map(|(g, l)| 0.5 * sf2 * g / (l * l))
        .collect();
    grad.push(0.5 * sf2 * (by_pair[0] + rho * a * by_pair[1] + a * a * by_pair[2]));
    let (mut trace_t, mut trace_s, mut alpha_t, mut alpha_s) = (0.0, 0.0, 0.0, 0.0);
    for (i, t) in tags.iter().enumerate() {
        match t {
            TaskTag::Target => {
                trace_t += w[(i, i)];
                alpha_t += ev.alpha[i];
            }
            TaskTag::Source => {
                trace_s += w[(i, i)];
                alpha_s += ev.alpha[i];
            }
        }
    }
    grad.push(0.5 * params.base.noise_variance * trace_t);
    grad.push(alpha_t);
    grad.push(0.5 * params.noise_source * trace_s);
    grad.push(alpha_s);
    grad.push(0.5 * sf2 * a * (1.0 - rho * rho) * by_pair[1]);
    grad.push(0.5 * sf2 * (2.0 * a * a * by_pair[2] + rho * a * by_pair[1]));
    Ok((ev.value, grad))
}

/// Starting points for a joint fit with source data. The source block comes
/// from a source-only fit and the shared lengthscales from either that fit
/// or, when `with_target_kernel` is set, a target-only fit. For each, the
/// target block then maximizes the likelihood of the target observations
/// conditioned on the source ones, which is cheap enough to search from
/// several starting correlations.
fn staged_starts(
    init: &TransferKernelParams,
    data: &JointData,
    n_s: usize,
    free: &[bool],
    bounds: &Bounds,
    opts: &FitOptions,
    with_target_kernel: bool,
) -> Result<Vec<Vec<f64>>> {
    let (xs, xt) = data.inputs.split_at(n_s);
    let (ys, yt) = data.ys.split_at(n_s);
    let raw = FitOptions {
        standardize: false,
        ..opts.clone()
    };
    let source_init = KernelParams {
        noise_variance: init.noise_source,
        mean_constant: init.mean_source,
        ..init.base.clone()
    };
    let source_fit = crate::gp::fit(
        xs,
        ys,
        &source_init,
        &FitOptions {
            seed: derive_seed(opts.seed, &[0x7374]),
            ..raw.clone()
        },
    )?;
    let mut kernels = vec![source_fit.params().clone()];
    if with_target_kernel {
        if let Ok(target_fit) = crate::gp::fit(
            xt,
            yt,
            &init.base,
            &FitOptions {
                seed: derive_seed(opts.seed, &[0x7467]),
                ..raw
            },
        ) {
            kernels.push(KernelParams {
                lengthscales: target_fit.params().lengthscales.clone(),
                ..source_fit.params().clone()
            });
        }
    }
    kernels
        .iter()
        .map(|shared| staged_target_block(init, shared, xs, ys, xt, yt, free, bounds, opts))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn staged_target_block(
    init: &TransferKernelParams,
    shared: &KernelParams,
    xs: &[Vec<f64>],
    ys: &[f64],
    xt: &[Vec<f64>],
    yt: &[f64],
    free: &[bool],
    bounds: &Bounds,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    let dim = init.base.dim();
    let cond = Conditional::new(shared, xs, ys, xt, yt)?;
    let mut theta = params_to_theta(init);
    for (t, l) in theta.iter_mut().zip(&shared.lengthscales) {
        *t = l.ln();
    }
    theta[dim] = shared.signal_variance.ln();
    theta[dim + 3] = shared.noise_variance.ln();
    theta[dim + 4] = shared.mean_constant;

    // target block: [log noise_t, mean_t, atanh rho, log a]
    let block = [dim + 1, dim + 2, dim + 5, dim + 6];
    let sub_free: Vec<bool> = block.iter().map(|&k| free[k]).collect();
    let sub_bounds = Bounds {
        lower: block.iter().map(|&k| bounds.lower[k]).collect(),
        upper: block.iter().map(|&k| bounds.upper[k]).collect(),
    };
    let from_init: Vec<f64> = block.iter().map(|&k| theta[k]).collect();
    let mut sub_starts = vec![from_init.clone()];
    if sub_free[2] {
        for rho in [-0.6f64, 0.0, 0.6, 0.95] {
            let mut t = from_init.clone();
            t[2] = rho.atanh();
            t[3] = 0.0f64.clamp(sub_bounds.lower[3], sub_bounds.upper[3]);
            sub_starts.push(t);
        }
    }
    let ascent = AscentOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
        ..Default::default()
    };
    let mut best: Option<AscentOutcome> = None;
    for start in &sub_starts {
        if let Ok(out) = maximize(|t| cond.lml(t), start, &sub_free, &sub_bounds, &ascent) {
            if best.as_ref().is_none_or(|b| out.value > b.value) {
                best = Some(out);
            }
        }
    }
    if let Some(best) = best {
        for (k, v) in block.iter().zip(best.theta) {
            theta[*k] = v;
        }
    }
    Ok(theta)
}

/// Target observations conditioned on the source observations under fixed
/// shared and source hyperparameters. With `m0 = K_ts S^-1 r_s`,
/// `Q = K_ts S^-1 K_st` and `P = K_tt` the conditional is
/// `N(mean_t + rho a m0, a^2 (P - rho^2 Q) + noise_t I)`.
struct Conditional {
    yt: Vec<f64>,
    m0: Vec<f64>,
    p: Mat<f64>,
    q: Mat<f64>,
}

impl Conditional {
    fn new(shared: &KernelParams, xs: &[Vec<f64>], ys: &[f64], xt: &[Vec<f64>], yt: &[f64]) -> Result<Self> {
        let ls = &shared.lengthscales;
        let sf2 = shared.signal_variance;
        let (n_s, n_t) = (xs.len(), xt.len());
        let mut s = Mat::from_fn(n_s, n_s, |i, j| se_unchecked(ls, sf2, &xs[i], &xs[j]));
        for i in 0..n_s {
            s[(i, i)] += shared.noise_variance;
        }
        let chol = Cholesky::factorize(&s)?;
        let r_s: Vec<f64> = ys.iter().map(|y| y - shared.mean_constant).collect();
        let alpha = chol.solve(&r_s);
        let mut m0 = Vec::with_capacity(n_t);
        let mut v = Vec::with_capacity(n_t);
        for x in xt {
            let k: Vec<f64> = xs.iter().map(|z| se_unchecked(ls, sf2, x, z)).collect();
            m0.push(k.iter().zip(&alpha).map(|(a, b)| a * b).sum());
            v.push(chol.solve_lower(&k));
        }
        let q = Mat::from_fn(n_t, n_t, |i, j| v[i].iter().zip(&v[j]).map(|(a, b)| a * b).sum());
        let p = Mat::from_fn(n_t, n_t, |i, j| se_unchecked(ls, sf2, &xt[i], &xt[j]));
        Ok(Conditional {
            yt: yt.to_vec(),
            m0,
            p,
            q,
        })
    }

    fn lml(&self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (noise, mean, rho, a) = (t[0].exp(), t[1], t[2].tanh(), t[3].exp());
        let n = self.yt.len();
        let a2 = a * a;
        let mut c = Mat::from_fn(n, n, |i, j| a2 * (self.p[(i, j)] - rho * rho * self.q[(i, j)]));
        for i in 0..n {
            c[(i, i)] += noise;
        }
        let resid: Vec<f64> = (0..n)
            .map(|i| self.yt[i] - mean - rho * a * self.m0[i])
            .collect();
        let ev = Evidence::compute(&c, &resid)?;
        let w = ev.weights();
        let (mut tr_w, mut w_q, mut w_pq) = (0.0, 0.0, 0.0);
        for j in 0..n {
            tr_w += w[(j, j)];
            for i in 0..n {
                w_q += w[(i, j)] * self.q[(i, j)];
                w_pq += w[(i, j)] * (self.p[(i, j)] - rho * rho * self.q[(i, j)]);
            }
        }
        let alpha_sum: f64 = ev.alpha.iter().sum();
        let alpha_m0: f64 = ev.alpha.iter().zip(&self.m0).map(|(x, y)| x * y).sum();
        let drho = 1.0 - rho * rho;
        let grad = vec![
            0.5 * noise * tr_w,
            alpha_sum,
            0.5 * (-2.0 * rho * a2 * drho) * w_q + a * drho * alpha_m0,
            0.5 * 2.0 * a2 * w_pq + rho * a * alpha_m0,
        ];
        Ok((ev.value, grad))
    }
}

/// Joint log marginal likelihood of already-standardized task data and its
/// gradient over `[log l, log signal, log noise_t, mean_t, log noise_s,
/// mean_s, atanh rho, log target_scale]`.
pub fn joint_log_marginal_likelihood(
    params: &TransferKernelParams,
    source: &TaskData,
    target: &TaskData,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let dim = params.base.dim();
    source.check(dim)?;
    target.check(dim)?;
    if source.is_empty() && target.is_empty() {
        return Err(Error::EmptyData("no observations"));
    }
    let data = JointData::new(source, target, Standardizer::identity(), Standardizer::identity());
    let diffs = SquaredDiffs::new(&data.inputs, dim);
    joint_lml(params, &diffs, &data)
}

#[derive(Debug)]
pub struct TransferGpModel {
    params: TransferKernelParams,
    source: TaskData,
    target: TaskData,
    std_source: Standardizer,
    std_target: Standardizer,
    inputs: Vec<Vec<f64>>,
    tags: Vec<TaskTag>,
    chol: Cholesky,
    alpha: Vec<f64>,
    report: FitReport,
}

/// Fits the joint model on source and target observations.
///
/// With no source observations, the task parameters are frozen and the fit
/// follows exactly the path of [`crate::gp::fit`] on the target alone.
pub fn fit_transfer(
    source: &TaskData,
    target: &TaskData,
    init: &TransferKernelParams,
    opts: &TransferFitOptions,
) -> Result<TransferGpModel> {
    init.validate()?;
    let dim = init.base.dim();
    if target.is_empty() {
        return Err(Error::EmptyData("the target set must not be empty"));
    }
    source.check(dim)?;
    target.check(dim)?;
    let started = Instant::now();
    let base_opts = &opts.base;
    let (std_s, std_t) = if base_opts.standardize {
        (Standardizer::fit(&source.targets), Standardizer::fit(&target.targets))
    } else {
        (Standardizer::identity(), Standardizer::identity())
    };
    let data = JointData::new(source, target, std_s, std_t);
    let y_var_t = if base_opts.standardize {
        1.0
    } else {
        Standardizer::fit(&target.targets).scale.powi(2)
    };
    let y_var_s = if base_opts.standardize || source.is_empty() {
        1.0
    } else {
        Standardizer::fit(&source.targets).scale.powi(2)
    };
    let y_abs_max = data.ys.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let (mut lower, mut upper) = base_bounds(dim, y_var_t, y_abs_max);
    let mean_bound = 10.0 + 10.0 * y_abs_max;
    let unit_scale = 0.5 * (y_var_t / y_var_s).ln();
    lower.extend([
        (NOISE_FLOOR * y_var_s).ln(),
        -mean_bound,
        -RHO_LIMIT.atanh(),
        unit_scale - TARGET_SCALE_LIMIT.ln(),
    ]);
    upper.extend([
        (10.0 * y_var_s).ln(),
        mean_bound,
        RHO_LIMIT.atanh(),
        unit_scale + TARGET_SCALE_LIMIT.ln(),
    ]);
    let bounds = Bounds { lower, upper };

    let mut free = vec![true; dim + 7];
    let mut init = init.clone();
    if let Some(noise) = base_opts.fixed_noise {
        init.base.noise_variance = noise;
        init.noise_source = noise;
        free[dim + 1] = false;
        free[dim + 3] = false;
    }
    if let Some(rho) = opts.fixed_rho {
        init.rho = rho.clamp(-RHO_LIMIT, RHO_LIMIT);
        init.target_scale = 1.0;
        free[dim + 5] = false;
        free[dim + 6] = false;
    }
    if source.is_empty() {
        for f in &mut free[dim + 3..] {
            *f = false;
        }
    }

    // The shared block draws from the same stream as the single-task fit so
    // that a fit without source data reproduces it exactly.
    let mut rng_base = rng_from_seed(derive_seed(base_opts.seed, &[0x6770]));
    let mut rng_task = rng_from_seed(derive_seed(base_opts.seed, &[0x7461]));
    let init_theta = params_to_theta(&init);
    let mut starts = if source.is_empty() {
        vec![init_theta.clone()]
    } else {
        let with_target_kernel = base_opts.restarts >= 2 && target.len() > dim + 1;
        staged_starts(&init, &data, source.len(), &free, &bounds, base_opts, with_target_kernel)?
    };
    // Random restarts keep their stream positions regardless of how many
    // staged starts precede them.
    let restarts = base_opts.restarts.max(starts.len());
    for r in 1..restarts {
        let mut theta = draw_base_theta(&mut rng_base, dim, y_var_t);
        theta.push((log_uniform(&mut rng_task, 1e-6, 1.0) * y_var_s).ln());
        theta.push(0.0);
        theta.push(rng_task.random_range(-0.9f64..0.9).atanh());
        theta.push(log_uniform(&mut rng_task, 0.5, 2.0).ln());
        for (k, f) in free.iter().enumerate() {
            if !f && k > dim {
                theta[k] = init_theta[k];
            }
        }
        if r >= starts.len() {
            starts.push(theta);
        }
    }

    let diffs = SquaredDiffs::new(&data.inputs, dim);
    let ascent = AscentOptions {
        max_iter: base_opts.max_iter,
        tol: base_opts.tol,
        ..Default::default()
    };
    let objective = |theta: &[f64]| joint_lml(&theta_to_params(theta, dim), &diffs, &data);
    let mut best: Option<AscentOutcome> = None;
    let mut initial = f64::NAN;
    let (mut completed, mut iterations) = (0, 0);
    let mut last_err = None;
    for (r, start) in starts.iter().enumerate() {
        match maximize(objective, start, &free, &bounds, &ascent) {
            Ok(out) => {
                if r == 0 {
                    initial = out.initial_value;
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
    let mut model =
        TransferGpModel::from_parts(params, source.clone(), target.clone(), std_s, std_t)?;
    model.report = FitReport {
        iterations,
        restarts_completed: completed,
        initial_log_marginal_likelihood: initial,
        log_marginal_likelihood: best.value,
        train_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(model)
}

impl TransferGpModel {
    /// Conditions the joint model with fixed hyperparameters on raw data.
    pub fn from_parts(
        params: TransferKernelParams,
        source: TaskData,
        target: TaskData,
        std_source: Standardizer,
        std_target: Standardizer,
    ) -> Result<Self> {
        params.validate()?;
        let dim = params.base.dim();
        if target.is_empty() {
            return Err(Error::EmptyData("the target set must not be empty"));
        }
        source.check(dim)?;
        target.check(dim)?;
        let data = JointData::new(&source, &target, std_source, std_target);
        let diffs = SquaredDiffs::new(&data.inputs, dim);
        let corr = diffs.correlation(&params.base.lengthscales);
        let cov = joint_covariance(&params, &corr, &data.tags);
        let resid: Vec<f64> = data
            .ys
            .iter()
            .zip(&data.tags)
            .map(|(y, t)| y - params.mean(*t))
            .collect();
        let ev = Evidence::compute(&cov, &resid)?;
        let alpha = ev.chol.solve_refined(&cov, &resid);
        Ok(TransferGpModel {
            params,
            source,
            target,
            std_source,
            std_target,
            inputs: data.inputs,
            tags: data.tags,
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

    pub fn params(&self) -> &TransferKernelParams {
        &self.params
    }

    pub fn source(&self) -> &TaskData {
        &self.source
    }

    pub fn target(&self) -> &TaskData {
        &self.target
    }

    pub fn standardizers(&self) -> (Standardizer, Standardizer) {
        (self.std_source, self.std_target)
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn dim(&self) -> usize {
        self.params.base.dim()
    }

    /// Posterior of the target response at `x`, including target noise.
    pub fn predict_target(&self, x: &[f64]) -> Result<Prediction> {
        check_input(self.dim(), x)?;
        let p = &self.params;
        let k: Vec<f64> = self
            .inputs
            .iter()
            .zip(&self.tags)
            .map(|(xi, t)| {
                p.task_covariance(TaskTag::Target, *t)
                    * se_unchecked(&p.base.lengthscales, p.base.signal_variance, x, xi)
            })
            .collect();
        let mean = p.base.mean_constant + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = self.chol.solve_lower(&k);
        let explained: f64 = v.iter().map(|a| a * a).sum();
        let prior = p.base.signal_variance * p.target_scale * p.target_scale + p.base.noise_variance;
        let variance = (prior - explained).max(0.0);
        Ok(Prediction {
            mean: self.std_target.mean_back(mean),
            variance: self.std_target.variance_back(variance),
        })
    }
}

/// Learned inter-task correlation.
pub fn task_correlation(model: &TransferGpModel) -> f64 {
    model.params.rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit, GpModel};
    use crate::rng::rng_from_seed;

    fn params(rho: f64) -> TransferKernelParams {
        TransferKernelParams {
            base: KernelParams {
                lengthscales: vec![1.0],
                signal_variance: 1.0,
                noise_variance: 0.0,
                mean_constant: 0.0,
            },
            rho,
            noise_source: 0.0,
            mean_source: 0.0,
            target_scale: 1.0,
        }
    }

    fn random_task(rng: &mut crate::rng::Rng, n: usize, d: usize) -> TaskData {
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let targets = inputs.iter().map(|x| (4.0 * x[0]).sin() + rng.random::<f64>() * 0.1).collect();
        TaskData::new(inputs, targets)
    }

    #[test]
    fn kernel_closed_forms() {
        let p = params(0.0);
        assert_eq!(
            transfer_kernel_eval(&p, TaskTag::Target, &[0.2], TaskTag::Target, &[0.2]).unwrap(),
            1.0
        );
        for x in [0.0, 0.5, 3.0] {
            assert_eq!(
                transfer_kernel_eval(&p, TaskTag::Source, &[x], TaskTag::Target, &[0.1]).unwrap(),
                0.0
            );
        }
        let v = transfer_kernel_eval(&params(0.9), TaskTag::Source, &[0.0], TaskTag::Target, &[1.0])
            .unwrap();
        assert!((v - 0.545_877_593_741_370_1).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rng_from_seed(5);
        for case in 0..6 {
            let source = random_task(&mut rng, 6, 2);
            let target = random_task(&mut rng, 4, 2);
            let p = TransferKernelParams {
                base: KernelParams {
                    lengthscales: vec![0.3 + rng.random::<f64>(), 0.3 + rng.random::<f64>()],
                    signal_variance: 0.5 + rng.random::<f64>(),
                    noise_variance: 0.05 + 0.1 * rng.random::<f64>(),
                    mean_constant: rng.random::<f64>() - 0.5,
                },
                rho: 1.6 * rng.random::<f64>() - 0.8,
                noise_source: 0.05 + 0.1 * rng.random::<f64>(),
                mean_source: rng.random::<f64>() - 0.5,
                target_scale: 0.5 + rng.random::<f64>(),
            };
            let (_, grad) = joint_log_marginal_likelihood(&p, &source, &target).unwrap();
            let theta = params_to_theta(&p);
            for k in 0..theta.len() {
                let h = 1e-5;
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                let f = |t: &[f64]| {
                    joint_log_marginal_likelihood(&theta_to_params(t, 2), &source, &target)
                        .unwrap()
                        .0
                };
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "case {case} k {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn conditional_is_joint_over_source_marginal() {
        let mut rng = rng_from_seed(8);
        for case in 0..5 {
            let source = random_task(&mut rng, 7, 2);
            let target = random_task(&mut rng, 4, 2);
            let p = TransferKernelParams {
                base: KernelParams {
                    lengthscales: vec![0.2 + rng.random::<f64>(), 0.2 + rng.random::<f64>()],
                    signal_variance: 0.5 + rng.random::<f64>(),
                    noise_variance: 0.01 + 0.1 * rng.random::<f64>(),
                    mean_constant: rng.random::<f64>() - 0.5,
                },
                rho: 1.6 * rng.random::<f64>() - 0.8,
                noise_source: 0.01 + 0.1 * rng.random::<f64>(),
                mean_source: rng.random::<f64>() - 0.5,
                target_scale: 0.5 + rng.random::<f64>(),
            };
            let shared = KernelParams {
                noise_variance: p.noise_source,
                mean_constant: p.mean_source,
                ..p.base.clone()
            };
            let cond = Conditional::new(&shared, &source.inputs, &source.targets, &target.inputs, &target.targets).unwrap();
            let t = [p.base.noise_variance.ln(), p.base.mean_constant, p.rho.atanh(), p.target_scale.ln()];
            let (value, grad) = cond.lml(&t).unwrap();
            let joint = joint_log_marginal_likelihood(&p, &source, &target).unwrap().0;
            let marginal = crate::gp::log_marginal_likelihood(&shared, &source.inputs, &source.targets).unwrap().0;
            assert!((value - (joint - marginal)).abs() < 1e-8, "case {case}");
            for k in 0..4 {
                let h = 1e-5;
                let mut up = t;
                up[k] += h;
                let mut dn = t;
                dn[k] -= h;
                let fd = (cond.lml(&up).unwrap().0 - cond.lml(&dn).unwrap().0) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "case {case} k {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn zero_rho_decouples_from_source() {
        let mut rng = rng_from_seed(9);
        let source = random_task(&mut rng, 7, 1);
        let target = random_task(&mut rng, 4, 1);
        let mut p = params(0.0);
        p.base.noise_variance = 0.01;
        p.noise_source = 0.02;
        p.base.lengthscales = vec![0.3];
        let std_t = Standardizer::fit(&target.targets);
        let joint = TransferGpModel::from_parts(
            p.clone(),
            source.clone(),
            target.clone(),
            Standardizer::fit(&source.targets),
            std_t,
        )
        .unwrap();
        let single =
            GpModel::from_parts(p.base.clone(), target.inputs.clone(), target.targets.clone(), std_t)
                .unwrap();
        for x in [0.0, 0.13, 0.5, 0.77, 1.2] {
            let a = joint.predict_target(&[x]).unwrap();
            let b = single.predict(&[x]).unwrap();
            assert!((a.mean - b.mean).abs() < 1e-8);
            assert!((a.variance - b.variance).abs() < 1e-8);
        }
    }

    #[test]
    fn no_source_matches_single_task_fit() {
        let mut rng = rng_from_seed(21);
        let target = random_task(&mut rng, 8, 2);
        let opts = TransferFitOptions {
            base: FitOptions {
                seed: 3,
                ..Default::default()
            },
            fixed_rho: None,
        };
        let init = TransferKernelParams::default_for(2);
        let joint = fit_transfer(&TaskData::default(), &target, &init, &opts).unwrap();
        let single = fit(&target.inputs, &target.targets, &init.base, &opts.base).unwrap();
        for _ in 0..10 {
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            let a = joint.predict_target(&x).unwrap();
            let b = single.predict(&x).unwrap();
            assert!((a.mean - b.mean).abs() < 1e-6);
            assert!((a.variance - b.variance).abs() < 1e-6);
        }
    }

    #[test]
    fn interpolates_target_points_without_noise() {
        let mut rng = rng_from_seed(2);
        let source = random_task(&mut rng, 6, 1);
        let target = random_task(&mut rng, 3, 1);
        let model = TransferGpModel::from_parts(
            TransferKernelParams {
                base: KernelParams {
                    lengthscales: vec![0.3],
                    ..params(0.5).base
                },
                noise_source: 0.01,
                ..params(0.5)
            },
            source,
            target.clone(),
            Standardizer::identity(),
            Standardizer::identity(),
        )
        .unwrap();
        for (x, y) in target.inputs.iter().zip(&target.targets) {
            assert!((model.predict_target(x).unwrap().mean - y).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_target_is_an_error() {
        let r = fit_transfer(
            &TaskData::new(vec![vec![0.0]], vec![1.0]),
            &TaskData::default(),
            &TransferKernelParams::default_for(1),
            &TransferFitOptions::default(),
        );
        assert!(matches!(r, Err(Error::EmptyData(_))));
    }

    #[test]
    fn fixed_rho_is_kept() {
        let mut rng = rng_from_seed(4);
        let source = random_task(&mut rng, 6, 1);
        let target = random_task(&mut rng, 3, 1);
        let opts = TransferFitOptions {
            fixed_rho: Some(0.0),
            ..Default::default()
        };
        let m = fit_transfer(&source, &target, &TransferKernelParams::default_for(1), &opts).unwrap();
        assert_eq!(task_correlation(&m), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn zero_rho_ignores_source(seed in 0u64..500, n_s in 0usize..8, n_t in 1usize..8) {
            let mut rng = rng_from_seed(seed);
            let source = random_task(&mut rng, n_s, 1);
            let target = random_task(&mut rng, n_t, 1);
            let base = params(0.0);
            let p = TransferKernelParams {
                base: KernelParams {
                    noise_variance: 0.01,
                    ..base.base.clone()
                },
                noise_source: 0.05,
                target_scale: 0.5 + rng.random::<f64>(),
                ..base
            };
            let joint = TransferGpModel::from_parts(
                p.clone(),
                source,
                target.clone(),
                Standardizer::identity(),
                Standardizer::identity(),
            )
            .unwrap();
            let single = GpModel::from_parts(
                KernelParams {
                    signal_variance: p.base.signal_variance * p.target_scale * p.target_scale,
                    ..p.base.clone()
                },
                target.inputs,
                target.targets,
                Standardizer::identity(),
            )
            .unwrap();
            for x in [0.0, 0.4, 0.9, 2.0] {
                let (a, b) = (joint.predict_target(&[x]).unwrap(), single.predict(&[x]).unwrap());
                proptest::prop_assert!((a.mean - b.mean).abs() < 1e-9);
                proptest::prop_assert!((a.variance - b.variance).abs() < 1e-9);
            }
        }

        #[test]
        fn task_covariance_is_positive_semidefinite(rho in -0.999f64..0.999, log_a in -3.0f64..3.0) {
            let p = TransferKernelParams {
                rho,
                target_scale: log_a.exp(),
                ..params(0.0)
            };
            let (ss, st, tt) = (
                p.task_covariance(TaskTag::Source, TaskTag::Source),
                p.task_covariance(TaskTag::Source, TaskTag::Target),
                p.task_covariance(TaskTag::Target, TaskTag::Target),
            );
            proptest::prop_assert_eq!(st, p.task_covariance(TaskTag::Target, TaskTag::Source));
            proptest::prop_assert!(ss > 0.0 && tt > 0.0);
            proptest::prop_assert!(ss * tt - st * st >= -1e-12 * ss * tt);
        }
    }
}
