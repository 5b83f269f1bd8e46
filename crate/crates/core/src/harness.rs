//! Evaluation protocol: sweeps over source/target sample sizes with
//! repetitions, reporting APE, predictive variance and timings per cell.
//!
//! Each repetition draws one evaluation set `D_o` and one random ordering of
//! each training pool; a cell with `n` samples takes the first `n` of that
//! ordering, so cells of one repetition see nested training sets. Model fits
//! are seeded from `(master_seed, n_s, n_t, repetition)`, which makes results
//! independent of scheduling.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config_space::{encode, permutation};
use crate::cost::{total_cost, Allocation, CostParams, GridPoint};
use crate::datasets::{
    holdout_indices, infer_space_from, load_csv, load_schema, split_by_environment, MeasurementTable,
};
use crate::error::{Error, Result};
use crate::gp::{fit, FitOptions};
use crate::kernel::KernelParams;
use crate::model::PerfModel;
use crate::rng::derive_seed;
use crate::synthetic::{
    correlation, make_scenario, relatedness_noise_level, Family, ScenarioSpec, RELATEDNESS_LEVELS, SOURCE_LABEL,
    TARGET_LABEL,
};
use crate::transfer::{fit_transfer, TaskData, TransferFitOptions, TransferKernelParams};

/// Absolute percentage error, `|predicted - actual| / |actual| * 100`.
pub fn ape(predicted: f64, actual: f64) -> Result<f64> {
    if actual == 0.0 {
        return Err(Error::ZeroActual { row: 0 });
    }
    Ok((predicted - actual).abs() / actual.abs() * 100.0)
}

/// Mean and population standard deviation of per-row APEs.
pub fn ape_stats(predicted: &[f64], actual: &[f64]) -> Result<(f64, f64)> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::EmptyData("no evaluation rows"));
    }
    let apes = predicted
        .iter()
        .zip(actual)
        .enumerate()
        .map(|(row, (p, a))| ape(*p, *a).map_err(|_| Error::ZeroActual { row }))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&apes))
}

/// APE statistics of `model` on encoded evaluation rows.
pub fn mean_ape(model: &PerfModel, eval_rows: &[(Vec<f64>, f64)]) -> Result<(f64, f64)> {
    let predicted = eval_rows
        .iter()
        .map(|(x, _)| model.predict(x).map(|p| p.mean))
        .collect::<Result<Vec<_>>>()?;
    let actual: Vec<f64> = eval_rows.iter().map(|(_, y)| *y).collect();
    ape_stats(&predicted, &actual)
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSpec {
    Synthetic {
        scenario: ScenarioSpec,
    },
    /// One CSV with an environment column, or separate source and target
    /// files.
    Table {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        source_path: Option<PathBuf>,
        #[serde(default)]
        target_path: Option<PathBuf>,
        #[serde(default)]
        schema: Option<PathBuf>,
        #[serde(default = "default_source_label")]
        source_label: String,
        #[serde(default = "default_target_label")]
        target_label: String,
    },
}

fn default_source_label() -> String {
    SOURCE_LABEL.to_string()
}

fn default_target_label() -> String {
    TARGET_LABEL.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepFitOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub fixed_noise: Option<f64>,
    pub fixed_rho: Option<f64>,
}

impl Default for SweepFitOptions {
    fn default() -> Self {
        let base = FitOptions::default();
        SweepFitOptions {
            restarts: base.restarts,
            max_iter: base.max_iter,
            tol: base.tol,
            fixed_noise: None,
            fixed_rho: None,
        }
    }
}

impl SweepFitOptions {
    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
            fixed_noise: self.fixed_noise,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub data: DataSpec,
    /// Source sample sizes as fractions of the source pool.
    #[serde(default)]
    pub source_fractions: Option<Vec<f64>>,
    /// Source sample sizes as counts; overrides `source_fractions`.
    #[serde(default)]
    pub source_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub target_fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub target_counts: Option<Vec<usize>>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub cost: Option<CostParams>,
    #[serde(default)]
    pub fit: SweepFitOptions,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Predictions timed per fitted model.
    #[serde(default = "default_timing_batch")]
    pub timing_batch: usize,
}

fn default_repetitions() -> usize {
    3
}

fn default_eval_fraction() -> f64 {
    0.2
}

fn default_jobs() -> usize {
    1
}

fn default_timing_batch() -> usize {
    1000
}

impl SweepSpec {
    pub fn synthetic(scenario: ScenarioSpec) -> Self {
        SweepSpec {
            data: DataSpec::Synthetic { scenario },
            source_fractions: Some(vec![0.0, 0.25, 0.5, 1.0]),
            source_counts: None,
            target_fractions: Some(vec![0.01, 0.025, 0.05, 0.1]),
            target_counts: None,
            repetitions: default_repetitions(),
            eval_fraction: default_eval_fraction(),
            master_seed: 0,
            cost: None,
            fit: SweepFitOptions::default(),
            jobs: 1,
            timing_batch: default_timing_batch(),
        }
    }

    /// Reads a spec file; relative data paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: SweepSpec = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            spec.resolve_paths(dir);
        }
        Ok(spec)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        if let DataSpec::Table {
            path,
            source_path,
            target_path,
            schema,
            ..
        } = &mut self.data
        {
            for p in [path, source_path, target_path, schema].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad("eval_fraction must lie strictly between 0 and 1");
        }
        if self.source_counts.is_none() && self.source_fractions.is_none() {
            return bad("either source_fractions or source_counts is required");
        }
        if self.target_counts.is_none() && self.target_fractions.is_none() {
            return bad("either target_fractions or target_counts is required");
        }
        if let Some(f) = &self.source_fractions {
            if f.is_empty() || f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("source fractions must lie in [0, 1]");
            }
        }
        if let Some(f) = &self.target_fractions {
            if f.is_empty() || f.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return bad("target fractions must lie in (0, 1]");
            }
        }
        if let Some(c) = &self.target_counts {
            if c.is_empty() || c.contains(&0) {
                return bad("target counts must be at least 1");
            }
        }
        if matches!(&self.source_counts, Some(c) if c.is_empty()) {
            return bad("source counts must not be empty");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if let Some(c) = &self.cost {
            c.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the spec.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Encoded observations of one environment.
#[derive(Debug, Clone)]
pub struct Observations {
    pub inputs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Configuration id of each row, used to keep training data disjoint
    /// from the evaluation set.
    pub ids: Vec<u128>,
}

impl Observations {
    fn from_table(t: &MeasurementTable) -> Result<Self> {
        let mut inputs = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut ids = Vec::with_capacity(t.len());
        for row in &t.rows {
            inputs.push(encode(&t.space, &row.config)?);
            values.push(row.performance);
            ids.push(t.space.id_of(&row.config));
        }
        Ok(Observations { inputs, values, ids })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn task(&self, rows: &[usize]) -> TaskData {
        TaskData::new(
            rows.iter().map(|&i| self.inputs[i].clone()).collect(),
            rows.iter().map(|&i| self.values[i]).collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SweepData {
    pub dim: usize,
    pub source: Observations,
    pub target: Observations,
}

pub fn load_sweep_data(data: &DataSpec) -> Result<SweepData> {
    let (source, target, dim) = match data {
        DataSpec::Synthetic { scenario } => {
            let pair = make_scenario(scenario)?;
            let ids: Vec<u128> = (0..pair.len() as u128).collect();
            let obs = |values: &[f64]| Observations {
                inputs: pair.encoded.clone(),
                values: values.to_vec(),
                ids: ids.clone(),
            };
            (obs(&pair.source), obs(&pair.target), pair.space.dim())
        }
        DataSpec::Table {
            path,
            source_path,
            target_path,
            schema,
            source_label,
            target_label,
        } => {
            let space = schema.as_deref().map(load_schema).transpose()?.map(|(s, _)| s);
            let (s, t) = match (path, source_path, target_path) {
                (Some(p), None, None) => {
                    let table = load_csv(p, space.as_ref())?;
                    split_by_environment(&table, source_label, target_label)?
                }
                (None, Some(sp), Some(tp)) => {
                    let space = match space {
                        Some(s) => s,
                        None => infer_space_from(&[sp.as_path(), tp.as_path()])?,
                    };
                    (load_csv(sp, Some(&space))?, load_csv(tp, Some(&space))?)
                }
                _ => {
                    return Err(Error::InvalidSpec(
                        "table data needs either `path` or both `source_path` and `target_path`".into(),
                    ))
                }
            };
            let dim = t.space.dim();
            (Observations::from_table(&s)?, Observations::from_table(&t)?, dim)
        }
    };
    Ok(SweepData { dim, source, target })
}

/// Evaluation set and training-pool orderings shared by every cell of one
/// repetition.
#[derive(Debug, Clone)]
pub struct RepetitionPlan {
    pub eval_rows: Vec<usize>,
    pub target_order: Vec<usize>,
    pub source_order: Vec<usize>,
}

pub fn plan_repetition(data: &SweepData, eval_fraction: f64, master_seed: u64, rep: usize) -> Result<RepetitionPlan> {
    let rep = rep as u64;
    let split = holdout_indices(data.target.len(), eval_fraction, derive_seed(master_seed, &[1, rep]))?;
    let split_len = split.eval_set.len();
    let (mut eval_rows, mut pool) = (Vec::new(), split.train_pool);
    for i in split.eval_set {
        if data.target.values[i] == 0.0 {
            pool.push(i);
        } else {
            eval_rows.push(i);
        }
    }
    let zero_rows = split_len - eval_rows.len();
    if zero_rows > 0 {
        log::warn!("moved {zero_rows} zero-valued rows from the evaluation set to the training pool");
    }
    if eval_rows.is_empty() {
        return Err(Error::InvalidSplit("every evaluation row has an actual value of zero".into()));
    }
    pool.sort_unstable();
    let excluded: HashSet<u128> = eval_rows.iter().map(|&i| data.target.ids[i]).collect();
    let target_order: Vec<usize> = permutation(pool.len(), derive_seed(master_seed, &[2, rep]))
        .into_iter()
        .map(|k| pool[k])
        .collect();
    let source_pool: Vec<usize> = (0..data.source.len())
        .filter(|&i| !excluded.contains(&data.source.ids[i]))
        .collect();
    let source_order: Vec<usize> = permutation(source_pool.len(), derive_seed(master_seed, &[3, rep]))
        .into_iter()
        .map(|k| source_pool[k])
        .collect();
    Ok(RepetitionPlan {
        eval_rows,
        target_order,
        source_order,
    })
}

fn resolve_sizes(fractions: &Option<Vec<f64>>, counts: &Option<Vec<usize>>, pool: usize, min: usize) -> Vec<usize> {
    match (counts, fractions) {
        (Some(c), _) => c.clone(),
        (None, Some(f)) => f
            .iter()
            .map(|v| ((v * pool as f64 + 0.5).floor() as usize).max(min))
            .collect(),
        (None, None) => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub mean_ape: f64,
    pub std_ape: f64,
    pub mean_pred_var: f64,
    pub train_s: f64,
    pub eval_ms: f64,
    pub task_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub n_s: usize,
    pub n_t: usize,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    pub reps: Vec<RepResult>,
    /// Mean over repetitions of the per-repetition mean APE.
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_ape: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub median_ape: f64,
    /// Standard deviation across repetitions of the per-repetition mean APE.
    #[serde(deserialize_with = "nan_if_null")]
    pub std_ape: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_pred_var: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_train_s: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub std_train_s: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_eval_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

/// Statistics of skipped cells are NaN, which JSON writes as `null`.
fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl CellReport {
    fn from_reps(n_s: usize, n_t: usize, reps: Vec<RepResult>) -> Self {
        let col = |f: fn(&RepResult) -> f64| reps.iter().map(f).collect::<Vec<_>>();
        let apes = col(|r| r.mean_ape);
        let (mean_ape, std_ape) = mean_std(&apes);
        let (mean_train_s, std_train_s) = mean_std(&col(|r| r.train_s));
        CellReport {
            n_s,
            n_t,
            skipped: false,
            skip_reason: None,
            median_ape: median(&apes),
            mean_ape,
            std_ape,
            mean_pred_var: mean_std(&col(|r| r.mean_pred_var)).0,
            mean_train_s,
            std_train_s,
            mean_eval_ms: mean_std(&col(|r| r.eval_ms)).0,
            reps,
            cost: None,
        }
    }

    fn skipped(n_s: usize, n_t: usize, reason: String) -> Self {
        CellReport {
            n_s,
            n_t,
            skipped: true,
            skip_reason: Some(reason),
            reps: Vec::new(),
            mean_ape: f64::NAN,
            median_ape: f64::NAN,
            std_ape: f64::NAN,
            mean_pred_var: f64::NAN,
            mean_train_s: f64::NAN,
            std_train_s: f64::NAN,
            mean_eval_ms: f64::NAN,
            cost: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub master_seed: u64,
    pub spec_hash: String,
    pub repetitions: usize,
    pub source_pool: usize,
    pub target_pool: usize,
    pub eval_rows: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metadata: SweepMetadata,
    pub cells: Vec<CellReport>,
}

impl SweepReport {
    pub fn cell(&self, n_s: usize, n_t: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.n_s == n_s && c.n_t == n_t)
    }

    /// Distinct source and target sizes in the order they were swept.
    pub fn axes(&self) -> (Vec<usize>, Vec<usize>) {
        let mut s = Vec::new();
        let mut t = Vec::new();
        for c in &self.cells {
            if !s.contains(&c.n_s) {
                s.push(c.n_s);
            }
            if !t.contains(&c.n_t) {
                t.push(c.n_t);
            }
        }
        (s, t)
    }
}

/// Fits and evaluates one cell of one repetition.
pub fn run_cell(
    data: &SweepData,
    plan: &RepetitionPlan,
    n_s: usize,
    n_t: usize,
    rep: usize,
    spec: &SweepSpec,
) -> Result<RepResult> {
    let seed = derive_seed(spec.master_seed, &[4, n_s as u64, n_t as u64, rep as u64]);
    let target = data.target.task(&plan.target_order[..n_t]);
    let started = Instant::now();
    let model = if n_s == 0 {
        PerfModel::Single(fit(
            &target.inputs,
            &target.targets,
            &KernelParams::default_for(data.dim),
            &spec.fit.fit_options(seed),
        )?)
    } else {
        let source = data.source.task(&plan.source_order[..n_s]);
        PerfModel::Transfer(fit_transfer(
            &source,
            &target,
            &TransferKernelParams::default_for(data.dim),
            &TransferFitOptions {
                base: spec.fit.fit_options(seed),
                fixed_rho: spec.fit.fixed_rho,
            },
        )?)
    };
    let train_s = started.elapsed().as_secs_f64();

    let eval: Vec<(Vec<f64>, f64)> = plan
        .eval_rows
        .iter()
        .map(|&i| (data.target.inputs[i].clone(), data.target.values[i]))
        .collect();
    let preds = eval
        .iter()
        .map(|(x, _)| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let actual: Vec<f64> = eval.iter().map(|(_, y)| *y).collect();
    let (mean_ape, std_ape) = ape_stats(&means, &actual)?;
    let mean_pred_var = preds.iter().map(|p| p.variance).sum::<f64>() / preds.len() as f64;

    let batch = spec.timing_batch.max(1);
    let started = Instant::now();
    let mut sink = 0.0;
    for k in 0..batch {
        sink += model.predict(&eval[k % eval.len()].0)?.mean;
    }
    let eval_ms = started.elapsed().as_secs_f64() * 1e3 / batch as f64;
    std::hint::black_box(sink);

    Ok(RepResult {
        rep,
        mean_ape,
        std_ape,
        mean_pred_var,
        train_s,
        eval_ms,
        task_correlation: match &model {
            PerfModel::Transfer(m) => Some(m.params().rho),
            PerfModel::Single(_) => None,
        },
    })
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let data = load_sweep_data(&spec.data)?;
    run_sweep_on(spec, &data)
}

/// Runs a sweep on already loaded data.
pub fn run_sweep_on(spec: &SweepSpec, data: &SweepData) -> Result<SweepReport> {
    spec.validate()?;
    let plans = (0..spec.repetitions)
        .map(|r| plan_repetition(data, spec.eval_fraction, spec.master_seed, r))
        .collect::<Result<Vec<_>>>()?;
    let target_pool = plans[0].target_order.len();
    let source_pool = plans[0].source_order.len();
    let s_sizes = resolve_sizes(&spec.source_fractions, &spec.source_counts, source_pool, 0);
    let t_sizes = resolve_sizes(&spec.target_fractions, &spec.target_counts, target_pool, 1);
    let cells: Vec<(usize, usize)> = s_sizes
        .iter()
        .flat_map(|&s| t_sizes.iter().map(move |&t| (s, t)))
        .collect();

    let runnable = |&(n_s, n_t): &(usize, usize)| -> Option<String> {
        let short_t = plans.iter().any(|p| n_t > p.target_order.len());
        let short_s = plans.iter().any(|p| n_s > p.source_order.len());
        if short_t {
            Some(format!("{n_t} target samples exceed the target pool"))
        } else if short_s {
            Some(format!("{n_s} source samples exceed the source pool"))
        } else {
            None
        }
    };
    let tasks: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| runnable(c).is_none())
        .flat_map(|(ci, _)| (0..spec.repetitions).map(move |r| (ci, r)))
        .collect();
    let exec = |&(ci, r): &(usize, usize)| {
        let (n_s, n_t) = cells[ci];
        run_cell(data, &plans[r], n_s, n_t, r, spec)
    };
    let results: Vec<Result<RepResult>> = if spec.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        pool.install(|| tasks.par_iter().map(exec).collect())
    } else {
        tasks.iter().map(exec).collect()
    };

    let mut per_cell: Vec<Vec<RepResult>> = vec![Vec::new(); cells.len()];
    for ((ci, _), res) in tasks.iter().zip(results) {
        per_cell[*ci].push(res?);
    }
    let mut out = Vec::with_capacity(cells.len());
    for (ci, &(n_s, n_t)) in cells.iter().enumerate() {
        let mut cell = match runnable(&(n_s, n_t)) {
            Some(reason) => {
                log::warn!("skipping cell ({n_s}, {n_t}): {reason}");
                CellReport::skipped(n_s, n_t, reason)
            }
            None => CellReport::from_reps(n_s, n_t, std::mem::take(&mut per_cell[ci])),
        };
        cell.cost = spec.cost.as_ref().map(|cp| total_cost(cp, n_s, n_t));
        out.push(cell);
    }
    Ok(SweepReport {
        metadata: SweepMetadata {
            master_seed: spec.master_seed,
            spec_hash: spec.hash(),
            repetitions: spec.repetitions,
            source_pool,
            target_pool,
            eval_rows: plans[0].eval_rows.len(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        cells: out,
    })
}

/// Source relatedness study: for each level, the median over seeds of the
/// source/target correlation and of the mean APE of one fixed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessSpec {
    pub family: Family,
    #[serde(default = "default_levels")]
    pub levels: Vec<u32>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    pub source_count: usize,
    pub target_count: usize,
    #[serde(default = "default_miscalibration")]
    pub miscalibration: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub fit: SweepFitOptions,
}

fn default_levels() -> Vec<u32> {
    RELATEDNESS_LEVELS.to_vec()
}

fn default_seeds() -> usize {
    20
}

fn default_miscalibration() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessRow {
    pub level: u32,
    pub noise_level: f64,
    pub median_correlation: f64,
    pub median_ape: f64,
    pub correlations: Vec<f64>,
    pub apes: Vec<f64>,
}

/// Seed `k` uses the same scenario seed and the same sample draws at every
/// level, so levels differ only in the source perturbation amplitude.
pub fn run_relatedness(spec: &RelatednessSpec) -> Result<Vec<RelatednessRow>> {
    if spec.seeds == 0 || spec.levels.is_empty() {
        return Err(Error::InvalidSpec("a relatedness study needs levels and seeds".into()));
    }
    spec.levels
        .iter()
        .map(|&level| {
            let noise_level = relatedness_noise_level(level);
            let mut correlations = Vec::with_capacity(spec.seeds);
            let mut apes = Vec::with_capacity(spec.seeds);
            for k in 0..spec.seeds as u64 {
                let scenario = ScenarioSpec {
                    family: spec.family,
                    noise_level,
                    miscalibration: spec.miscalibration,
                    misleading: false,
                    seed: derive_seed(spec.master_seed, &[5, k]),
                };
                let pair = make_scenario(&scenario)?;
                correlations.push(correlation(&pair, None, 0)?);
                let sweep = SweepSpec {
                    source_fractions: None,
                    source_counts: Some(vec![spec.source_count]),
                    target_fractions: None,
                    target_counts: Some(vec![spec.target_count]),
                    repetitions: 1,
                    eval_fraction: spec.eval_fraction,
                    master_seed: derive_seed(spec.master_seed, &[6, k]),
                    fit: spec.fit.clone(),
                    timing_batch: 1,
                    ..SweepSpec::synthetic(scenario)
                };
                let data = load_sweep_data(&sweep.data)?;
                let report = run_sweep_on(&sweep, &data)?;
                let cell = &report.cells[0];
                if cell.skipped {
                    return Err(Error::InvalidSpec(cell.skip_reason.clone().unwrap_or_default()));
                }
                apes.push(cell.mean_ape);
            }
            Ok(RelatednessRow {
                level,
                noise_level,
                median_correlation: median(&correlations),
                median_ape: median(&apes),
                correlations,
                apes,
            })
        })
        .collect()
}

pub fn write_relatedness_csv(path: &Path, rows: &[RelatednessRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["level", "noise_level", "median_correlation", "median_ape"])?;
    for r in rows {
        w.write_record([
            r.level.to_string(),
            r.noise_level.to_string(),
            r.median_correlation.to_string(),
            r.median_ape.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Annotates each evaluated cell with its cost.
pub fn summarize(report: &SweepReport, cp: &CostParams) -> Vec<Allocation> {
    report
        .cells
        .iter()
        .map(|c| {
            let mut a = Allocation::new(cp, c.n_s, c.n_t);
            if !c.skipped {
                a.achieved_error = Some(c.mean_ape);
                a.error_std = Some(c.std_ape);
            }
            a
        })
        .collect()
}

pub fn grid_points(report: &SweepReport) -> Vec<GridPoint> {
    report
        .cells
        .iter()
        .filter(|c| !c.skipped)
        .map(|c| GridPoint {
            n_s: c.n_s,
            n_t: c.n_t,
            mean_ape: c.mean_ape,
        })
        .collect()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cell and repetition; skipped cells get a single row.
pub fn write_report_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "n_s", "n_t", "rep", "mean_ape", "std_ape", "mean_pred_var", "train_s", "eval_ms", "cost", "skipped",
    ])?;
    for c in &report.cells {
        let cost = opt_num(c.cost);
        if c.skipped {
            w.write_record([
                c.n_s.to_string(),
                c.n_t.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                cost.clone(),
                "true".into(),
            ])?;
            continue;
        }
        for r in &c.reps {
            w.write_record([
                c.n_s.to_string(),
                c.n_t.to_string(),
                r.rep.to_string(),
                r.mean_ape.to_string(),
                r.std_ape.to_string(),
                r.mean_pred_var.to_string(),
                r.train_s.to_string(),
                r.eval_ms.to_string(),
                cost.clone(),
                "false".into(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_report_json(path: &Path, report: &SweepReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
