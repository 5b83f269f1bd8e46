//! Simulated self-optimization loop: monitor the running configuration,
//! update the performance model, plan the next configuration, execute it.
//!
//! The ground truth is a [`ResponsePair`]. Source observations are sampled
//! once before the episode and are already paid for; every loop step costs
//! one target measurement.

use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config_space::{permutation, sample_ids};
use crate::cost::{CostParams, TrainingCost};
use crate::error::{Error, Result};
use crate::gp::{fit, FitOptions, GpModel};
use crate::kernel::KernelParams;
use crate::model::PerfModel;
use crate::rng::{derive_seed, rng_from_seed};
use crate::synthetic::{make_scenario, ResponsePair, ScenarioSpec};
use crate::transfer::{fit_transfer, TaskData, TransferFitOptions, TransferGpModel, TransferKernelParams};

/// Spaces up to this size use every configuration as a planning candidate.
pub const FULL_CANDIDATE_LIMIT: usize = 10_000;
/// Candidate count drawn from larger spaces.
pub const SAMPLED_CANDIDATES: usize = 1000;
/// Above this many training observations hyperparameters are frozen and the
/// model is only reconditioned on the grown data.
pub const REFIT_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    GreedyMean,
    Lcb,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy-mean" => Ok(PolicyKind::GreedyMean),
            "lcb" => Ok(PolicyKind::Lcb),
            other => Err(Error::InvalidSpec(format!("unknown policy `{other}`"))),
        }
    }
}

/// Planning rule. Performance is minimized: `lcb` picks the lowest
/// `mean - lcb_kappa * std`, `greedy-mean` the lowest mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Policy {
    pub kind: PolicyKind,
    pub lcb_kappa: f64,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            kind: PolicyKind::Lcb,
            lcb_kappa: 1.0,
        }
    }
}

impl Policy {
    pub fn greedy() -> Self {
        Policy {
            kind: PolicyKind::GreedyMean,
            lcb_kappa: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lcb_kappa.is_finite() || self.lcb_kappa < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "lcb_kappa must be finite and non-negative, got {}",
                self.lcb_kappa
            )));
        }
        Ok(())
    }

    fn kappa(&self) -> f64 {
        match self.kind {
            PolicyKind::GreedyMean => 0.0,
            PolicyKind::Lcb => self.lcb_kappa,
        }
    }
}

/// Ground truth for an episode plus the candidate configurations the planner
/// may choose from.
#[derive(Debug, Clone)]
pub struct Environment {
    pub pair: ResponsePair,
    pub candidates: Vec<usize>,
    pub true_min: f64,
    /// Measurement noise standard deviation as a fraction of the target's
    /// standard deviation.
    pub measurement_noise: f64,
    noise_scale: f64,
}

impl Environment {
    pub fn new(pair: ResponsePair, measurement_noise: f64, seed: u64) -> Result<Self> {
        if pair.is_empty() {
            return Err(Error::EmptyData("the environment has no configurations"));
        }
        if !measurement_noise.is_finite() || measurement_noise < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "measurement_noise must be finite and non-negative, got {measurement_noise}"
            )));
        }
        let candidates = candidate_set(pair.len(), seed);
        let true_min = candidates
            .iter()
            .map(|&i| pair.target[i])
            .fold(f64::INFINITY, f64::min);
        let (_, sd) = crate::harness::mean_std(&pair.target);
        Ok(Environment {
            pair,
            candidates,
            true_min,
            measurement_noise,
            noise_scale: sd,
        })
    }
}

/// Indices of the planning candidates for a space of `n` configurations.
pub fn candidate_set(n: usize, seed: u64) -> Vec<usize> {
    if n <= FULL_CANDIDATE_LIMIT {
        (0..n).collect()
    } else {
        let mut ids: Vec<usize> = sample_ids(n as u64, SAMPLED_CANDIDATES, derive_seed(seed, &[0x6361]))
            .into_iter()
            .map(|i| i as usize)
            .collect();
        ids.sort_unstable();
        ids
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopOptions {
    pub max_steps: usize,
    pub policy: Policy,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        let base = FitOptions::default();
        LoopOptions {
            max_steps: 20,
            policy: Policy::default(),
            restarts: 2,
            max_iter: base.max_iter,
            tol: base.tol,
        }
    }
}

impl LoopOptions {
    fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
            ..Default::default()
        }
    }
}

/// Knowledge and bookkeeping carried between loop steps.
#[derive(Debug)]
pub struct LoopState {
    pub model: PerfModel,
    pub source: Option<TaskData>,
    pub observed: Vec<usize>,
    pub measurements: Vec<f64>,
    pub step_index: usize,
    pub current: usize,
    pub cumulative_cost: f64,
}

impl LoopState {
    /// Fits the initial model on already-measured target configurations and
    /// optional source data, then plans the first configuration.
    pub fn new(
        env: &Environment,
        source: Option<TaskData>,
        observed: Vec<usize>,
        measurements: Vec<f64>,
        opts: &LoopOptions,
        seed: u64,
    ) -> Result<Self> {
        if observed.is_empty() || observed.len() != measurements.len() {
            return Err(Error::EmptyData("the initial model needs target observations"));
        }
        let source = source.filter(|s| !s.is_empty());
        let target = target_data(env, &observed, &measurements);
        let model = refit(None, source.as_ref(), target, opts, derive_seed(seed, &[0]))?;
        let current = plan(&model, env, &opts.policy)?;
        Ok(LoopState {
            model,
            source,
            observed,
            measurements,
            step_index: 0,
            current,
            cumulative_cost: 0.0,
        })
    }

    pub fn target_count(&self) -> usize {
        self.observed.len()
    }
}

fn target_data(env: &Environment, ids: &[usize], values: &[f64]) -> TaskData {
    TaskData::new(ids.iter().map(|&i| env.pair.encoded[i].clone()).collect(), values.to_vec())
}

fn refit(
    previous: Option<&PerfModel>,
    source: Option<&TaskData>,
    target: TaskData,
    opts: &LoopOptions,
    seed: u64,
) -> Result<PerfModel> {
    let total = target.len() + source.map_or(0, TaskData::len);
    match (previous, source) {
        (Some(PerfModel::Single(m)), None) if total > REFIT_LIMIT => Ok(PerfModel::Single(
            GpModel::from_parts(m.params().clone(), target.inputs, target.targets, m.standardizer())?,
        )),
        (Some(PerfModel::Transfer(m)), Some(s)) if total > REFIT_LIMIT => {
            let (std_s, std_t) = m.standardizers();
            Ok(PerfModel::Transfer(TransferGpModel::from_parts(
                m.params().clone(),
                s.clone(),
                target,
                std_s,
                std_t,
            )?))
        }
        (_, None) => {
            let dim = target.inputs[0].len();
            Ok(PerfModel::Single(fit(
                &target.inputs,
                &target.targets,
                &KernelParams::default_for(dim),
                &opts.fit_options(seed),
            )?))
        }
        (_, Some(s)) => Ok(PerfModel::Transfer(fit_transfer(
            s,
            &target,
            &TransferKernelParams::default_for(target.inputs[0].len()),
            &TransferFitOptions {
                base: opts.fit_options(seed),
                fixed_rho: None,
            },
        )?)),
    }
}

/// Candidate minimizing the policy's score under `model`. Ties go to the
/// lowest configuration id.
pub fn plan(model: &PerfModel, env: &Environment, policy: &Policy) -> Result<usize> {
    if env.candidates.is_empty() {
        return Err(Error::EmptyData("the candidate set is empty"));
    }
    let kappa = policy.kappa();
    let mut best = (f64::INFINITY, env.candidates[0]);
    for &i in &env.candidates {
        let p = model.predict(&env.pair.encoded[i])?;
        let score = p.mean - kappa * p.std();
        if score < best.0 {
            best = (score, i);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub config_id: usize,
    pub measured: f64,
    pub pred_mean: f64,
    pub pred_std: f64,
    pub cum_cost: f64,
    /// True response of the measured configuration minus the best true
    /// response among the candidates.
    pub regret: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn cumulative_regret(&self) -> f64 {
        self.rows.iter().map(|r| r.regret).sum()
    }

    /// First step whose measured configuration is within `fraction` of the
    /// true optimum.
    pub fn steps_to_within(&self, env: &Environment, fraction: f64) -> Option<usize> {
        let bound = env.true_min.abs() * fraction;
        self.rows.iter().find(|r| r.regret <= bound).map(|r| r.step)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One monitor, update, plan, execute cycle.
pub fn step(state: &mut LoopState, env: &Environment, opts: &LoopOptions, cost: &CostParams, seed: u64) -> Result<TraceRow> {
    let k = state.step_index + 1;
    let id = state.current;
    let truth = env.pair.target[id];
    let mut rng = rng_from_seed(derive_seed(seed, &[1, k as u64]));
    let eta: f64 = rng.sample(StandardNormal);
    let measured = truth + env.measurement_noise * env.noise_scale * eta;
    let before = state.model.predict(&env.pair.encoded[id])?;

    state.observed.push(id);
    state.measurements.push(measured);
    let target = target_data(env, &state.observed, &state.measurements);
    state.model = refit(
        Some(&state.model),
        state.source.as_ref(),
        target,
        opts,
        derive_seed(seed, &[0, k as u64]),
    )?;
    state.current = plan(&state.model, env, &opts.policy)?;
    state.step_index = k;
    state.cumulative_cost = k as f64 * cost.c_t;
    Ok(TraceRow {
        step: k,
        config_id: id,
        measured,
        pred_mean: before.mean,
        pred_std: before.std(),
        cum_cost: state.cumulative_cost,
        regret: truth - env.true_min,
    })
}

pub fn run_episode(
    env: &Environment,
    mut state: LoopState,
    opts: &LoopOptions,
    cost: &CostParams,
    seed: u64,
) -> Result<Trace> {
    if opts.max_steps == 0 {
        return Err(Error::InvalidSpec("max_steps must be at least 1".into()));
    }
    opts.policy.validate()?;
    let mut rows = Vec::with_capacity(opts.max_steps);
    for _ in 0..opts.max_steps {
        rows.push(step(&mut state, env, opts, cost, seed)?);
    }
    Ok(Trace { rows })
}

/// A complete episode description, as read from an adaptation spec file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub scenario: ScenarioSpec,
    /// Source samples available before the loop starts; 0 is a cold start.
    #[serde(default)]
    pub source_count: usize,
    #[serde(default = "default_initial_targets")]
    pub initial_targets: usize,
    #[serde(default)]
    pub measurement_noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit_cost")]
    pub cost: CostParams,
    #[serde(default, flatten)]
    pub loop_options: LoopOptions,
}

fn default_initial_targets() -> usize {
    3
}

fn unit_cost() -> CostParams {
    CostParams {
        c_s: 1.0,
        c_t: 1.0,
        training_cost: TrainingCost::Zero,
        budget: None,
    }
}

impl EpisodeSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Builds the environment and initial state for `spec`. The initial target
/// sample and the candidate set depend only on the seed, so a warm and a cold
/// episode with the same seed start from the same target observations.
pub fn prepare_episode(spec: &EpisodeSpec) -> Result<(Environment, LoopState)> {
    let pair = make_scenario(&spec.scenario)?;
    let env = Environment::new(pair, spec.measurement_noise, spec.seed)?;
    let n = env.pair.len();
    if spec.initial_targets == 0 || spec.initial_targets > n {
        return Err(Error::InvalidSpec(format!(
            "initial_targets must be in 1..={n}, got {}",
            spec.initial_targets
        )));
    }
    if spec.source_count > n {
        return Err(Error::SampleTooLarge {
            requested: spec.source_count,
            available: n,
        });
    }
    let order = permutation(n, derive_seed(spec.seed, &[2]));
    let observed: Vec<usize> = order[..spec.initial_targets].to_vec();
    let mut rng = rng_from_seed(derive_seed(spec.seed, &[1, 0]));
    let measurements: Vec<f64> = observed
        .iter()
        .map(|&i| {
            let eta: f64 = rng.sample(StandardNormal);
            env.pair.target[i] + env.measurement_noise * env.noise_scale * eta
        })
        .collect();
    let source = (spec.source_count > 0).then(|| {
        let ids = permutation(n, derive_seed(spec.seed, &[3]));
        TaskData::new(
            ids[..spec.source_count].iter().map(|&i| env.pair.encoded[i].clone()).collect(),
            ids[..spec.source_count].iter().map(|&i| env.pair.source[i]).collect(),
        )
    });
    let state = LoopState::new(&env, source, observed, measurements, &spec.loop_options, spec.seed)?;
    Ok((env, state))
}

pub fn run_spec(spec: &EpisodeSpec) -> Result<Trace> {
    spec.cost.validate()?;
    let (env, state) = prepare_episode(spec)?;
    run_episode(&env, state, &spec.loop_options, &spec.cost, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::Family;

    fn spec(family: Family, source_count: usize, seed: u64) -> EpisodeSpec {
        EpisodeSpec {
            scenario: ScenarioSpec::correlated(family, seed),
            source_count,
            initial_targets: 3,
            measurement_noise: 0.0,
            seed,
            cost: CostParams::new(1.0, 3.0, TrainingCost::Zero, None).unwrap(),
            loop_options: LoopOptions {
                max_steps: 4,
                restarts: 1,
                ..Default::default()
            },
        }
    }

    #[test]
    fn greedy_on_exact_model_picks_true_argmin() {
        let pair = make_scenario(&ScenarioSpec::correlated(Family::Demo1d, 0)).unwrap();
        let ids: Vec<usize> = (0..pair.len()).step_by(2).collect();
        let truth = pair.target_argmin();
        let env = Environment::new(pair, 0.0, 0).unwrap();
        let target = target_data(&env, &ids, &ids.iter().map(|&i| env.pair.target[i]).collect::<Vec<_>>());
        let model = PerfModel::Single(
            fit(&target.inputs, &target.targets, &KernelParams::default_for(1), &FitOptions::default()).unwrap(),
        );
        let chosen = plan(&model, &env, &Policy::greedy()).unwrap();
        assert_eq!(chosen, truth);
        assert_eq!(plan(&model, &env, &Policy::greedy()).unwrap(), chosen);
    }

    #[test]
    fn episodes_are_deterministic_and_consistent() {
        for source_count in [0, 18] {
            let s = spec(Family::Demo1d, source_count, 3);
            let a = run_spec(&s).unwrap();
            assert_eq!(a, run_spec(&s).unwrap());
            assert_eq!(a.rows.len(), 4);
            for (k, r) in a.rows.iter().enumerate() {
                assert!(r.regret >= 0.0);
                assert_eq!(r.step, k + 1);
                assert_eq!(r.cum_cost, (k + 1) as f64 * 3.0);
            }
        }
    }

    #[test]
    fn model_grows_by_one_target_per_step() {
        let s = spec(Family::Demo1d, 18, 1);
        let (env, mut state) = prepare_episode(&s).unwrap();
        assert_eq!(state.model.source_count(), 18);
        for k in 1..=3 {
            step(&mut state, &env, &s.loop_options, &s.cost, s.seed).unwrap();
            assert_eq!(state.model.target_count(), 3 + k);
            assert_eq!(state.model.source_count(), 18);
        }
    }

    #[test]
    fn single_step_trace() {
        let mut s = spec(Family::Demo1d, 0, 2);
        s.loop_options.max_steps = 1;
        assert_eq!(run_spec(&s).unwrap().rows.len(), 1);
        s.loop_options.max_steps = 0;
        assert!(run_spec(&s).is_err());
    }

    #[test]
    fn noisy_measurements_keep_regret_nonnegative() {
        let mut s = spec(Family::Demo1d, 0, 4);
        s.measurement_noise = 0.1;
        let trace = run_spec(&s).unwrap();
        assert!(trace.rows.iter().all(|r| r.regret >= 0.0));
        assert!(trace.rows.iter().any(|r| r.measured != 0.0));
    }

    #[test]
    fn large_spaces_sample_candidates() {
        let c = candidate_set(20_000, 5);
        assert_eq!(c.len(), SAMPLED_CANDIDATES);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(candidate_set(675, 5), (0..675).collect::<Vec<_>>());
    }

    #[test]
    fn policy_parsing_and_validation() {
        assert_eq!("lcb".parse::<PolicyKind>().unwrap(), PolicyKind::Lcb);
        assert!("random".parse::<PolicyKind>().is_err());
        let bad = Policy {
            kind: PolicyKind::Lcb,
            lcb_kappa: f64::NAN,
        };
        assert!(bad.validate().is_err());
    }
}
