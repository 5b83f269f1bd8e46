//! Command-line front end. [`run`] parses arguments, executes one command and
//! returns the process exit code: 0 on success, 1 on a domain error, 2 on a
//! usage error. Diagnostics go to standard error prefixed with `error:`;
//! data goes to files or standard output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::adapt::{run_spec, EpisodeSpec, PolicyKind};
use crate::config_space::{enumerate_space, permutation, Configuration, ConfigurationSpace, DEFAULT_ENUMERATION_CAP};
use crate::cost::{indifference_levels, write_allocations_csv, write_pareto_csv, CostParams, TrainingCost};
use crate::datasets::{
    infer_space_from, load_schema, write_csv, write_schema, MeasurementTable, Row, TableMetadata,
    ENVIRONMENT_COLUMN, PERFORMANCE_COLUMN, REPLICATES_COLUMN,
};
use crate::error::Error;
use crate::gp::{fit, FitOptions};
use crate::harness::{
    ape, grid_points, mean_std, run_relatedness, run_sweep, summarize, write_relatedness_csv,
    write_report_csv, write_report_json, RelatednessSpec, SweepReport, SweepSpec,
};
use crate::kernel::KernelParams;
use crate::model::{load_model, predict_config, save_model, PerfModel};
use crate::recipes::{verify_recipes, VerifyOptions};
use crate::rng::derive_seed;
use crate::synthetic::{make_scenario, Family, ScenarioSpec, SOURCE_LABEL, TARGET_LABEL};
use crate::transfer::{fit_transfer, TaskData, TransferFitOptions, TransferKernelParams};

/// Environment variable consulted for the seed when neither a flag nor a
/// spec file provides one.
pub const SEED_ENV: &str = "PERFTX_SEED";

#[derive(Debug, Parser)]
#[command(name = "perftx", version, about = "Transfer-learned performance models for configurable systems")]
pub struct Cli {
    /// Random seed. Falls back to the spec file, then $PERFTX_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic source/target scenarios.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Fit a model on target (and optionally source) measurements.
    Learn(LearnArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Run a sample-size sweep.
    Sweep(SweepArgs),
    /// Cost annotation, Pareto front and indifference levels of a sweep.
    Pareto(ParetoArgs),
    /// Simulate a self-optimization loop.
    Adapt(AdaptArgs),
    /// Source relatedness study.
    Relatedness(RelatednessArgs),
    /// Reproduction recipes.
    #[command(subcommand)]
    Recipes(RecipesCommand),
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Write a scenario's response tables as measurement CSVs.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    family: Family,
    /// Source perturbation amplitude in target standard deviations.
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    miscalibration: Option<f64>,
    /// Replace the source by the constant target mean.
    #[arg(long)]
    misleading: bool,
    /// Full grid of both environments.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Space definition with the scenario's parameter scales.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Target measurements; every configuration unless --target-count is set.
    #[arg(long)]
    target_out: Option<PathBuf>,
    #[arg(long, requires = "target_out")]
    target_count: Option<usize>,
    /// Source measurements; every configuration unless --source-count is set.
    #[arg(long)]
    source_out: Option<PathBuf>,
    #[arg(long, requires = "source_out")]
    source_count: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Hold the noise variance (standardized units) fixed.
    #[arg(long)]
    fixed_noise: Option<f64>,
}

#[derive(Debug, Args)]
struct LearnArgs {
    /// Target measurements.
    #[arg(long, required_unless_present = "data", conflicts_with = "data")]
    target: Option<PathBuf>,
    /// Source measurements; without them a single-task model is fitted.
    #[arg(long, conflicts_with = "data")]
    source: Option<PathBuf>,
    /// One table with an environment column.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = SOURCE_LABEL)]
    source_label: String,
    #[arg(long, default_value = TARGET_LABEL)]
    target_label: String,
    /// Space definition; inferred from the data when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    /// Hold the task correlation fixed (diagnostic).
    #[arg(long)]
    fixed_rho: Option<f64>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("points").required(true).args(["at", "configs", "grid"])))]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON object mapping parameter names to values.
    #[arg(long)]
    at: Option<PathBuf>,
    /// CSV of configurations; a performance column adds APE columns.
    #[arg(long)]
    configs: Option<PathBuf>,
    /// Every configuration of the model's space.
    #[arg(long)]
    grid: bool,
    /// Output file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary of the APE against the performance column.
    #[arg(long, requires = "configs")]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Per-repetition CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Full JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Debug, Args)]
struct ParetoArgs {
    /// JSON report written by `sweep --json`.
    #[arg(long)]
    report: PathBuf,
    /// Cost parameters as JSON; flags below override its fields.
    #[arg(long)]
    cost: Option<PathBuf>,
    #[arg(long)]
    c_s: Option<f64>,
    #[arg(long)]
    c_t: Option<f64>,
    #[arg(long)]
    budget: Option<f64>,
    /// `zero`, `linear:A` or `cubic:A`.
    #[arg(long)]
    training: Option<String>,
    #[arg(long)]
    allocations: Option<PathBuf>,
    /// Pareto front CSV.
    #[arg(long)]
    out: PathBuf,
    /// Error levels for indifference groups.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    tol: f64,
    #[arg(long, requires = "levels")]
    indifference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Trace CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    source_count: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Debug, Args)]
struct RelatednessArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum RecipesCommand {
    /// Run every recipe and check its artifacts and assertions.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value = "recipes")]
    dir: PathBuf,
    /// Scratch directory for recipe outputs.
    #[arg(long, default_value = "recipe-runs")]
    work: PathBuf,
    /// Run only the named recipes.
    #[arg(long)]
    only: Vec<String>,
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Runs one command and returns its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("error: a subcommand is required\n\n{}", e.render());
            } else {
                let _ = e.print();
            }
            return 2;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Seed precedence: flag, then spec file, then `$PERFTX_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, from_spec: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(from_spec) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .or_else(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

/// Value of a top-level integer field of a JSON spec file, if present.
fn spec_field(path: &Path, key: &str) -> CliResult<Option<u64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(value.get(key).and_then(|v| v.as_u64()))
}

fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Synth(SynthCommand::Export(a)) => synth_export(a, resolve_seed(cli.seed, None)?),
        Command::Learn(a) => learn(a, resolve_seed(cli.seed, None)?),
        Command::Predict(a) => predict(a),
        Command::Sweep(a) => {
            let seed = resolve_seed(cli.seed, spec_field(&a.spec, "master_seed")?)?;
            sweep(a, seed)
        }
        Command::Pareto(a) => pareto(a),
        Command::Adapt(a) => {
            let seed = resolve_seed(cli.seed, spec_field(&a.spec, "seed")?)?;
            adapt(a, seed)
        }
        Command::Relatedness(a) => {
            let seed = resolve_seed(cli.seed, spec_field(&a.spec, "master_seed")?)?;
            relatedness(a, seed)
        }
        Command::Recipes(RecipesCommand::Verify(a)) => recipes_verify(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn synth_export(a: &ExportArgs, seed: u64) -> CliResult {
    if a.out.is_none() && a.schema.is_none() && a.target_out.is_none() && a.source_out.is_none() {
        return usage("nothing to write: pass --out, --schema, --target-out or --source-out");
    }
    let base = ScenarioSpec::correlated(a.family, seed);
    let spec = ScenarioSpec {
        noise_level: a.noise_level.unwrap_or(base.noise_level),
        miscalibration: a.miscalibration.unwrap_or(base.miscalibration),
        misleading: a.misleading,
        ..base
    };
    let pair = make_scenario(&spec)?;
    if let Some(path) = &a.out {
        write_csv(&pair.to_table()?, path)?;
    }
    if let Some(path) = &a.schema {
        write_schema(path, &pair.space, None)?;
    }
    let n = pair.len();
    let subset = |values: &[f64], label: &str, count: Option<usize>, tag: u64| -> CliResult<MeasurementTable> {
        let ids: Vec<usize> = match count {
            None => (0..n).collect(),
            Some(c) if c == 0 || c > n => return usage(format!("sample count must be in 1..={n}, got {c}")),
            Some(c) => permutation(n, derive_seed(seed, &[0x7378, tag]))[..c].to_vec(),
        };
        let rows = ids
            .iter()
            .map(|&i| Row {
                config: pair.configs[i].clone(),
                performance: values[i],
                environment: label.to_string(),
                replicates: 1,
            })
            .collect();
        Ok(MeasurementTable::new(
            pair.space.clone(),
            rows,
            TableMetadata {
                name: format!("{}-{label}", spec.family),
                ..Default::default()
            },
        )?)
    };
    if let Some(path) = &a.target_out {
        write_csv(&subset(&pair.target, TARGET_LABEL, a.target_count, 1)?, path)?;
    }
    if let Some(path) = &a.source_out {
        write_csv(&subset(&pair.source, SOURCE_LABEL, a.source_count, 2)?, path)?;
    }
    Ok(())
}

fn task_of(table: &MeasurementTable) -> CliResult<TaskData> {
    let inputs = table
        .rows
        .iter()
        .map(|r| crate::config_space::encode(&table.space, &r.config))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(TaskData::new(inputs, table.rows.iter().map(|r| r.performance).collect()))
}

fn learn(a: &LearnArgs, seed: u64) -> CliResult {
    let paths: Vec<&Path> = [&a.data, &a.target, &a.source].into_iter().flatten().map(|p| p.as_path()).collect();
    let space = match &a.schema {
        Some(p) => load_schema(p)?.0,
        None => infer_space_from(&paths)?,
    };
    let (source, target) = match (&a.data, &a.target) {
        (Some(d), _) => {
            let table = crate::datasets::load_csv(d, Some(&space))?;
            let pick = |label: &str| table.rows.iter().filter(|r| r.environment == label).cloned().collect::<Vec<_>>();
            let target_rows = pick(&a.target_label);
            if target_rows.is_empty() {
                return Err(Error::MissingLabel(a.target_label.clone()).into());
            }
            let target = MeasurementTable::new(space.clone(), target_rows, TableMetadata::default())?;
            let source_rows = pick(&a.source_label);
            let source = if source_rows.is_empty() {
                None
            } else {
                Some(MeasurementTable::new(space.clone(), source_rows, TableMetadata::default())?)
            };
            (source, target)
        }
        (None, Some(t)) => {
            let target = crate::datasets::load_csv(t, Some(&space))?;
            let source = a
                .source
                .as_deref()
                .map(|s| crate::datasets::load_csv(s, Some(&space)))
                .transpose()?;
            (source, target)
        }
        (None, None) => return usage("pass --target or --data"),
    };
    let target = task_of(&target)?;
    let opts = FitOptions {
        restarts: a.fit.restarts,
        max_iter: a.fit.max_iter,
        seed,
        fixed_noise: a.fit.fixed_noise,
        ..Default::default()
    };
    let model = match source {
        None => PerfModel::Single(fit(&target.inputs, &target.targets, &KernelParams::default_for(space.dim()), &opts)?),
        Some(s) => PerfModel::Transfer(fit_transfer(
            &task_of(&s)?,
            &target,
            &TransferKernelParams::default_for(space.dim()),
            &TransferFitOptions {
                base: opts,
                fixed_rho: a.fixed_rho,
            },
        )?),
    };
    log::info!(
        "fitted on {} target and {} source rows, log marginal likelihood {:.4}",
        model.target_count(),
        model.source_count(),
        model.report().log_marginal_likelihood
    );
    save_model(&a.model, &model, &space)?;
    Ok(())
}

fn json_value_text(v: &serde_json::Value) -> CliResult<String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(if *b { "on" } else { "off" }.to_string()),
        other => usage(format!("unsupported parameter value {other}")),
    }
}

fn read_point(path: &Path, space: &ConfigurationSpace) -> CliResult<Configuration> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let Some(obj) = value.as_object() else {
        return usage(format!("{} must hold a JSON object", path.display()));
    };
    let mut map = BTreeMap::new();
    for (k, v) in obj {
        map.insert(k.clone(), json_value_text(v)?);
    }
    Ok(space.config_from_map(&map)?)
}

/// Configurations of a CSV, with the performance column when present.
fn read_configs(path: &Path, space: &ConfigurationSpace) -> CliResult<Vec<(Configuration, Option<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr.headers().map_err(Error::from)?.clone();
    for h in header.iter() {
        let known = [PERFORMANCE_COLUMN, ENVIRONMENT_COLUMN, REPLICATES_COLUMN].contains(&h)
            || space.parameter_index(h).is_some();
        if !known {
            return Err(Error::UnknownColumn(h.to_string()).into());
        }
    }
    let perf = header.iter().position(|h| h == PERFORMANCE_COLUMN);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(Error::from)?;
        let mut map = BTreeMap::new();
        for (h, v) in header.iter().zip(record.iter()) {
            if space.parameter_index(h).is_some() {
                map.insert(h.to_string(), v.to_string());
            }
        }
        let config = space.config_from_map(&map)?;
        let actual = match perf.and_then(|c| record.get(c)) {
            None | Some("") => None,
            Some(t) => Some(t.parse::<f64>().map_err(|_| Error::MalformedRow {
                path: path.to_path_buf(),
                line: record.position().map_or(0, |p| p.line()),
                reason: format!("bad performance value `{t}`"),
            })?),
        };
        out.push((config, actual));
    }
    Ok(out)
}

#[derive(Serialize)]
struct PointPrediction {
    mean: f64,
    variance: f64,
}

#[derive(Serialize)]
struct PredictionSummary {
    count: usize,
    mean_ape: f64,
    std_ape: f64,
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn std::io::Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn predict(a: &PredictArgs) -> CliResult {
    let (model, space) = load_model(&a.model)?;
    if let Some(at) = &a.at {
        let config = read_point(at, &space)?;
        let p = predict_config(&model, &space, &config)?;
        let text = serde_json::to_string(&PointPrediction {
            mean: p.mean,
            variance: p.variance,
        })
        .map_err(Error::from)?;
        let mut out = output(a.out.as_deref())?;
        writeln!(out, "{text}").map_err(|e| Error::io(a.out.clone().unwrap_or_default(), e))?;
        return Ok(());
    }
    let points: Vec<(Configuration, Option<f64>)> = match &a.configs {
        Some(path) => read_configs(path, &space)?,
        None => enumerate_space(&space, DEFAULT_ENUMERATION_CAP)?
            .into_iter()
            .map(|c| (c, None))
            .collect(),
    };
    let with_actual = points.iter().all(|(_, y)| y.is_some()) && !points.is_empty();
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let mut header: Vec<String> = space.parameters().iter().map(|p| p.name.clone()).collect();
    header.extend(["mean".into(), "variance".into()]);
    if with_actual {
        header.extend(["actual".into(), "ape".into()]);
    }
    w.write_record(&header).map_err(Error::from)?;
    let mut apes = Vec::new();
    let mut skipped = 0usize;
    for (config, actual) in &points {
        let p = predict_config(&model, &space, config)?;
        let mut record: Vec<String> = space.values(config).iter().map(|v| v.to_string()).collect();
        record.extend([p.mean.to_string(), p.variance.to_string()]);
        if let (true, Some(y)) = (with_actual, actual) {
            let e = if *y == 0.0 {
                skipped += 1;
                String::new()
            } else {
                let e = ape(p.mean, *y)?;
                apes.push(e);
                e.to_string()
            };
            record.extend([y.to_string(), e]);
        }
        w.write_record(&record).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(a.out.clone().unwrap_or_default(), e))?;
    if skipped > 0 {
        log::warn!("{skipped} rows with a zero actual value have no APE");
    }
    if let Some(path) = &a.summary {
        if !with_actual {
            return usage("--summary needs a performance value on every row of --configs");
        }
        if apes.is_empty() {
            return Err(Error::EmptyData("no rows with a non-zero actual value").into());
        }
        let (mean_ape, std_ape) = mean_std(&apes);
        write_json(
            path,
            &PredictionSummary {
                count: apes.len(),
                mean_ape,
                std_ape,
            },
        )?;
    }
    Ok(())
}

fn sweep(a: &SweepArgs, seed: u64) -> CliResult {
    let mut spec = SweepSpec::from_file(&a.spec)?;
    spec.master_seed = seed;
    if let Some(j) = a.jobs {
        spec.jobs = j;
    }
    if let Some(r) = a.repetitions {
        spec.repetitions = r;
    }
    let report = run_sweep(&spec)?;
    write_report_csv(&a.out, &report)?;
    if let Some(path) = &a.json {
        write_report_json(path, &report)?;
    }
    Ok(())
}

fn parse_training(text: &str) -> CliResult<TrainingCost> {
    let (form, coeff) = text.split_once(':').unwrap_or((text, ""));
    let a = || -> CliResult<f64> {
        coeff
            .parse()
            .or_else(|_| usage(format!("training cost `{text}` needs a numeric coefficient, e.g. cubic:1e-6")))
    };
    match form {
        "zero" => Ok(TrainingCost::Zero),
        "linear" => Ok(TrainingCost::Linear { a: a()? }),
        "cubic" => Ok(TrainingCost::Cubic { a: a()? }),
        _ => usage(format!("unknown training cost form `{form}`")),
    }
}

fn pareto(a: &ParetoArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
    let report: SweepReport = serde_json::from_str(&text).map_err(Error::from)?;
    let mut cp = match &a.cost {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(serde_json::from_str::<CostParams>(&text).map_err(Error::from)?)
        }
        None => None,
    };
    if let (None, Some(c_s), Some(c_t)) = (&cp, a.c_s, a.c_t) {
        cp = Some(CostParams {
            c_s,
            c_t,
            training_cost: TrainingCost::Zero,
            budget: None,
        });
    }
    let Some(mut cp) = cp else {
        return usage("cost parameters missing: pass --cost or both --c-s and --c-t");
    };
    if let Some(v) = a.c_s {
        cp.c_s = v;
    }
    if let Some(v) = a.c_t {
        cp.c_t = v;
    }
    if let Some(b) = a.budget {
        cp.budget = Some(b);
    }
    if let Some(t) = &a.training {
        cp.training_cost = parse_training(t)?;
    }
    cp.validate()?;
    let allocations = summarize(&report, &cp);
    if let Some(path) = &a.allocations {
        write_allocations_csv(path, &allocations)?;
    }
    write_pareto_csv(&a.out, &allocations)?;
    if let Some(path) = &a.indifference {
        let groups = indifference_levels(&grid_points(&report), &a.levels, a.tol, &cp)?;
        write_json(path, &groups)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EpisodeSummary {
    steps: usize,
    cumulative_regret: f64,
    final_regret: f64,
    total_cost: f64,
    steps_to_within_10_percent: Option<usize>,
}

fn adapt(a: &AdaptArgs, seed: u64) -> CliResult {
    let mut spec = EpisodeSpec::from_file(&a.spec)?;
    spec.seed = seed;
    if let Some(n) = a.source_count {
        spec.source_count = n;
    }
    if let Some(n) = a.max_steps {
        spec.loop_options.max_steps = n;
    }
    if let Some(p) = a.policy {
        spec.loop_options.policy.kind = p;
    }
    if let Some(k) = a.kappa {
        spec.loop_options.policy.lcb_kappa = k;
    }
    let trace = run_spec(&spec)?;
    trace.write_csv(&a.out)?;
    if let Some(path) = &a.summary {
        let env = crate::adapt::prepare_episode(&spec)?.0;
        let last = trace.rows.last();
        write_json(
            path,
            &EpisodeSummary {
                steps: trace.rows.len(),
                cumulative_regret: trace.cumulative_regret(),
                final_regret: last.map_or(f64::NAN, |r| r.regret),
                total_cost: last.map_or(0.0, |r| r.cum_cost),
                steps_to_within_10_percent: trace.steps_to_within(&env, 0.1),
            },
        )?;
    }
    Ok(())
}

fn relatedness(a: &RelatednessArgs, seed: u64) -> CliResult {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let mut spec: RelatednessSpec = serde_json::from_str(&text).map_err(Error::from)?;
    spec.master_seed = seed;
    let rows = run_relatedness(&spec)?;
    write_relatedness_csv(&a.out, &rows)?;
    if let Some(path) = &a.json {
        write_json(path, &rows)?;
    }
    Ok(())
}

fn recipes_verify(a: &VerifyArgs) -> CliResult {
    let exe = std::env::current_exe().map_err(|e| Error::io("perftx", e))?;
    let report = verify_recipes(&VerifyOptions {
        dir: a.dir.clone(),
        work: a.work.clone(),
        exe,
        only: a.only.clone(),
    })?;
    for r in &report.results {
        if r.failures.is_empty() {
            println!("PASS {} [{:.1}s]", r.name, r.seconds);
        } else {
            println!("FAIL {}: {} [{:.1}s]", r.name, r.failures.join("; "), r.seconds);
        }
    }
    if let Some(missing) = &report.uncovered {
        println!("FAIL coverage: no recipe for criteria {missing:?}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::RecipeFailures(report.failed_names().join(", ")).into())
    }
}
