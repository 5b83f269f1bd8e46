//! Reproduction recipes: JSON files listing CLI invocations, the artifacts
//! they must produce and numeric assertions over those artifacts.
//!
//! ```json
//! {
//!   "name": "demo",
//!   "criteria": [5],
//!   "steps": [{"args": ["synth", "export", "--family", "demo1d", "--out", "grid.csv"]}],
//!   "artifacts": ["grid.csv"],
//!   "checks": [{"left": {"file": "a.json", "pointer": "/mean_ape"}, "op": "lt",
//!               "right": {"file": "b.json", "pointer": "/mean_ape"}}]
//! }
//! ```
//!
//! Steps run in a per-recipe work directory. The token `{recipes}` inside an
//! argument expands to the absolute recipes directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acceptance criteria the recipe set as a whole must reference.
pub const CRITERIA: std::ops::RangeInclusive<u32> = 1..=11;

/// Report fields and CSV columns holding wall-clock measurements.
pub const TIMING_FIELDS: [&str; 6] = [
    "train_s",
    "eval_ms",
    "train_seconds",
    "mean_train_s",
    "std_train_s",
    "mean_eval_ms",
];

const RECIPES_TOKEN: &str = "{recipes}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Acceptance criteria this recipe exercises.
    #[serde(default)]
    pub criteria: Vec<u32>,
    pub steps: Vec<Step>,
    /// Files, relative to the work directory, that must exist afterwards.
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub args: Vec<String>,
    /// Capture standard output into this file.
    #[serde(default)]
    pub stdout: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub left: Operand,
    pub op: CheckOp,
    pub right: Operand,
    /// Multiplies the right operand before comparing.
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Literal(f64),
    /// A number inside a JSON artifact, addressed by a JSON pointer.
    Field { file: String, pointer: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CheckOp {
    fn holds(self, l: f64, r: f64) -> bool {
        match self {
            CheckOp::Lt => l < r,
            CheckOp::Le => l <= r,
            CheckOp::Gt => l > r,
            CheckOp::Ge => l >= r,
            CheckOp::Eq => l == r,
        }
    }
}

pub fn load_recipe(path: &Path) -> Result<Recipe> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let recipe: Recipe = serde_json::from_str(&text)?;
    if recipe.steps.is_empty() {
        return Err(Error::InvalidSpec(format!("recipe `{}` has no steps", recipe.name)));
    }
    Ok(recipe)
}

/// Recipes of a directory in file-name order.
pub fn load_recipes(dir: &Path) -> Result<Vec<(PathBuf, Recipe)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| load_recipe(&p).map(|r| (p, r)))
        .collect()
}

/// Criteria in [`CRITERIA`] that no recipe references.
pub fn uncovered_criteria(recipes: &[Recipe]) -> Vec<u32> {
    let covered: BTreeSet<u32> = recipes.iter().flat_map(|r| r.criteria.iter().copied()).collect();
    CRITERIA.filter(|c| !covered.contains(c)).collect()
}

fn expand(arg: &str, recipes_dir: &Path) -> String {
    arg.replace(RECIPES_TOKEN, &recipes_dir.to_string_lossy())
}

/// Executes the steps of `recipe` inside `work`, stopping at the first failing
/// step.
pub fn run_steps(recipe: &Recipe, exe: &Path, recipes_dir: &Path, work: &Path) -> Result<()> {
    std::fs::create_dir_all(work).map_err(|e| Error::io(work, e))?;
    for (i, step) in recipe.steps.iter().enumerate() {
        let args: Vec<String> = step.args.iter().map(|a| expand(a, recipes_dir)).collect();
        log::info!("{}: perftx {}", recipe.name, args.join(" "));
        let output = Command::new(exe)
            .args(&args)
            .current_dir(work)
            .env_remove(crate::cli::SEED_ENV)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| Error::io(exe, e))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(Error::InvalidSpec(format!(
                "step {} exited with {}: {}",
                i + 1,
                output.status.code().map_or("signal".to_string(), |c| c.to_string()),
                stderr.trim()
            )));
        }
        if let Some(name) = &step.stdout {
            let path = work.join(name);
            std::fs::write(&path, &output.stdout).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn operand_value(op: &Operand, work: &Path) -> std::result::Result<f64, String> {
    match op {
        Operand::Literal(v) => Ok(*v),
        Operand::Field { file, pointer } => {
            let path = work.join(file);
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{file}: {e}"))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{file}: {e}"))?;
            value
                .pointer(pointer)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| format!("{file}: no number at {pointer}"))
        }
    }
}

fn describe(op: &Operand) -> String {
    match op {
        Operand::Literal(v) => v.to_string(),
        Operand::Field { file, pointer } => format!("{file}#{pointer}"),
    }
}

/// Missing artifacts and violated checks, one message each.
pub fn check_outputs(recipe: &Recipe, work: &Path) -> Vec<String> {
    let mut failures: Vec<String> = recipe
        .artifacts
        .iter()
        .filter(|a| !work.join(a).is_file())
        .map(|a| format!("missing artifact {a}"))
        .collect();
    for check in &recipe.checks {
        let values = operand_value(&check.left, work).and_then(|l| operand_value(&check.right, work).map(|r| (l, r)));
        match values {
            Ok((l, r)) if check.op.holds(l, check.scale * r) => {}
            Ok((l, r)) => failures.push(format!(
                "{} = {l} not {:?} {} x {} = {r}",
                describe(&check.left),
                check.op,
                check.scale,
                describe(&check.right)
            )),
            Err(e) => failures.push(e),
        }
    }
    failures
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeResult {
    pub name: String,
    pub failures: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub results: Vec<RecipeResult>,
    /// Criteria left without a recipe, when any.
    pub uncovered: Option<Vec<u32>>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.uncovered.is_none() && self.results.iter().all(|r| r.failures.is_empty())
    }

    pub fn failed_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .results
            .iter()
            .filter(|r| !r.failures.is_empty())
            .map(|r| r.name.clone())
            .collect();
        if self.uncovered.is_some() {
            names.push("coverage".to_string());
        }
        names
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub dir: PathBuf,
    /// Each recipe runs in `work/<name>`, emptied first.
    pub work: PathBuf,
    /// The `perftx` executable.
    pub exe: PathBuf,
    /// Restrict to these recipe names; empty runs all and checks coverage.
    pub only: Vec<String>,
}

pub fn verify_recipes(opts: &VerifyOptions) -> Result<VerifyReport> {
    let dir = std::path::absolute(&opts.dir).map_err(|e| Error::io(&opts.dir, e))?;
    let recipes: Vec<Recipe> = load_recipes(&dir)?.into_iter().map(|(_, r)| r).collect();
    for name in &opts.only {
        if !recipes.iter().any(|r| &r.name == name) {
            return Err(Error::InvalidSpec(format!("no recipe named `{name}`")));
        }
    }
    let mut results = Vec::new();
    for recipe in recipes.iter().filter(|r| opts.only.is_empty() || opts.only.contains(&r.name)) {
        let started = Instant::now();
        let work = opts.work.join(&recipe.name);
        if work.exists() {
            std::fs::remove_dir_all(&work).map_err(|e| Error::io(&work, e))?;
        }
        let failures = match run_steps(recipe, &opts.exe, &dir, &work) {
            Ok(()) => check_outputs(recipe, &work),
            Err(e) => vec![e.to_string()],
        };
        results.push(RecipeResult {
            name: recipe.name.clone(),
            failures,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let uncovered = if opts.only.is_empty() {
        Some(uncovered_criteria(&recipes)).filter(|u| !u.is_empty())
    } else {
        None
    };
    Ok(VerifyReport { results, uncovered })
}

fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in TIMING_FIELDS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn strip_timing_columns(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut records = rdr.records();
    let Some(header) = records.next().transpose()? else {
        return Ok(Vec::new());
    };
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !TIMING_FIELDS.contains(&&header[i]))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|&i| &header[i]))?;
    for record in records {
        let record = record?;
        w.write_record(keep.iter().filter_map(|&i| record.get(i)))?;
    }
    w.into_inner().map_err(|e| Error::io("csv buffer", e.into_error()))
}

/// Artifact contents with timing fields removed: JSON keys for `.json`
/// files, columns for `.csv` files. Other files are returned unchanged.
pub fn normalized_artifact(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let mut value: serde_json::Value = serde_json::from_slice(&bytes)?;
            strip_timing(&mut value);
            Ok(serde_json::to_vec(&value)?)
        }
        Some("csv") => strip_timing_columns(&bytes),
        _ => Ok(bytes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recipe(checks: Vec<Check>, artifacts: Vec<&str>) -> Recipe {
        Recipe {
            name: "r".into(),
            description: String::new(),
            criteria: vec![1],
            steps: vec![Step {
                args: vec!["--version".into()],
                stdout: None,
            }],
            artifacts: artifacts.into_iter().map(String::from).collect(),
            checks,
        }
    }

    #[test]
    fn checks_compare_pointers_and_literals() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), r#"{"x": {"y": [1.0, 2.5]}}"#).unwrap();
        let field = Operand::Field {
            file: "a.json".into(),
            pointer: "/x/y/1".into(),
        };
        let ok = Check {
            left: field.clone(),
            op: CheckOp::Le,
            right: Operand::Literal(2.0),
            scale: 1.25,
        };
        assert!(check_outputs(&recipe(vec![ok.clone()], vec!["a.json"]), dir.path()).is_empty());
        let bad = Check { op: CheckOp::Lt, scale: 1.0, ..ok };
        assert_eq!(check_outputs(&recipe(vec![bad], vec![]), dir.path()).len(), 1);
        let missing = Check {
            left: Operand::Field {
                file: "a.json".into(),
                pointer: "/nope".into(),
            },
            op: CheckOp::Eq,
            right: Operand::Literal(0.0),
            scale: 1.0,
        };
        assert_eq!(check_outputs(&recipe(vec![missing], vec!["b.csv"]), dir.path()).len(), 2);
    }

    #[test]
    fn recipe_json_round_trips() {
        let text = r#"{"name": "n", "criteria": [3, 4], "steps": [{"args": ["learn"], "stdout": "o.txt"}],
            "checks": [{"left": {"file": "f.json", "pointer": "/a"}, "op": "ge", "right": 0}]}"#;
        let r: Recipe = serde_json::from_str(text).unwrap();
        assert_eq!(r.checks[0].right, Operand::Literal(0.0));
        assert_eq!(r.checks[0].scale, 1.0);
        let back: Recipe = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(uncovered_criteria(&[r]), vec![1, 2, 5, 6, 7, 8, 9, 10, 11]);
    }

    #[test]
    fn timing_is_normalized_away() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        std::fs::write(&a, r#"{"cells": [{"n_s": 1, "mean_train_s": 0.5}]}"#).unwrap();
        std::fs::write(&b, r#"{"cells": [{"n_s": 1, "mean_train_s": 0.7}]}"#).unwrap();
        assert_eq!(normalized_artifact(&a).unwrap(), normalized_artifact(&b).unwrap());
        let c = dir.path().join("c.csv");
        let d = dir.path().join("d.csv");
        std::fs::write(&c, "n_s,train_s,ape\n1,0.1,3\n").unwrap();
        std::fs::write(&d, "n_s,train_s,ape\n1,0.2,3\n").unwrap();
        assert_eq!(normalized_artifact(&c).unwrap(), normalized_artifact(&d).unwrap());
        std::fs::write(&d, "n_s,train_s,ape\n1,0.2,4\n").unwrap();
        assert_ne!(normalized_artifact(&c).unwrap(), normalized_artifact(&d).unwrap());
    }
}
