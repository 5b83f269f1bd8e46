//! A fitted performance model of either kind, and its JSON file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config_space::{encode, Configuration, ConfigurationSpace, SpaceDocument};
use crate::error::{Error, Result};
use crate::gp::{FitReport, GpModel, Prediction, Standardizer};
use crate::kernel::KernelParams;
use crate::transfer::{TaskData, TaskTag, TransferGpModel, TransferKernelParams};

pub const MODEL_FORMAT: &str = "perftx-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug)]
pub enum PerfModel {
    Single(GpModel),
    Transfer(TransferGpModel),
}

impl PerfModel {
    /// Posterior of the target response at an encoded configuration.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        match self {
            PerfModel::Single(m) => m.predict(x),
            PerfModel::Transfer(m) => m.predict_target(x),
        }
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn dim(&self) -> usize {
        match self {
            PerfModel::Single(m) => m.dim(),
            PerfModel::Transfer(m) => m.dim(),
        }
    }

    pub fn report(&self) -> &FitReport {
        match self {
            PerfModel::Single(m) => m.report(),
            PerfModel::Transfer(m) => m.report(),
        }
    }

    pub fn target_count(&self) -> usize {
        match self {
            PerfModel::Single(m) => m.targets().len(),
            PerfModel::Transfer(m) => m.target().len(),
        }
    }

    pub fn source_count(&self) -> usize {
        match self {
            PerfModel::Single(_) => 0,
            PerfModel::Transfer(m) => m.source().len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelBody {
    Single {
        params: KernelParams,
        standardizer: Standardizer,
        target: TaskData,
    },
    Transfer {
        lengthscales: Vec<f64>,
        signal_variance: f64,
        rho: f64,
        target_scale: f64,
        noise_source: f64,
        noise_target: f64,
        mean_source: f64,
        mean_target: f64,
        standardizer_source: Standardizer,
        standardizer_target: Standardizer,
        rows: Vec<TaggedRow>,
    },
}

/// One training observation of the transfer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedRow {
    pub task: TaskTag,
    pub input: Vec<f64>,
    pub target: f64,
}

/// Everything needed to rebuild a model bit-for-bit: hyperparameters,
/// standardizers and training data, plus the configuration space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub space: SpaceDocument,
    #[serde(flatten)]
    pub body: ModelBody,
    pub report: FitReport,
}

impl ModelDocument {
    pub fn new(model: &PerfModel, space: &ConfigurationSpace) -> Self {
        let body = match model {
            PerfModel::Single(m) => ModelBody::Single {
                params: m.params().clone(),
                standardizer: m.standardizer(),
                target: TaskData::new(m.inputs().to_vec(), m.targets().to_vec()),
            },
            PerfModel::Transfer(m) => {
                let (s, t) = m.standardizers();
                let p = m.params();
                let tagged = |task: TaskTag, data: &TaskData| {
                    data.inputs
                        .iter()
                        .zip(&data.targets)
                        .map(move |(x, y)| TaggedRow {
                            task,
                            input: x.clone(),
                            target: *y,
                        })
                        .collect::<Vec<_>>()
                };
                let mut rows = tagged(TaskTag::Source, m.source());
                rows.extend(tagged(TaskTag::Target, m.target()));
                ModelBody::Transfer {
                    lengthscales: p.base.lengthscales.clone(),
                    signal_variance: p.base.signal_variance,
                    rho: p.rho,
                    target_scale: p.target_scale,
                    noise_source: p.noise_source,
                    noise_target: p.base.noise_variance,
                    mean_source: p.mean_source,
                    mean_target: p.base.mean_constant,
                    standardizer_source: s,
                    standardizer_target: t,
                    rows,
                }
            }
        };
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            space: space.to_document(),
            body,
            report: model.report().clone(),
        }
    }

    pub fn into_model(self) -> Result<(PerfModel, ConfigurationSpace)> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported model file {} v{}",
                self.format, self.version
            )));
        }
        let space = self.space.into_space()?;
        let model = match self.body {
            ModelBody::Single {
                params,
                standardizer,
                target,
            } => {
                let mut m = GpModel::from_parts(params, target.inputs, target.targets, standardizer)?;
                m.set_report(self.report);
                PerfModel::Single(m)
            }
            ModelBody::Transfer {
                lengthscales,
                signal_variance,
                rho,
                target_scale,
                noise_source,
                noise_target,
                mean_source,
                mean_target,
                standardizer_source,
                standardizer_target,
                rows,
            } => {
                let params = TransferKernelParams {
                    base: KernelParams {
                        lengthscales,
                        signal_variance,
                        noise_variance: noise_target,
                        mean_constant: mean_target,
                    },
                    rho,
                    noise_source,
                    mean_source,
                    target_scale,
                };
                let (mut source, mut target) = (TaskData::default(), TaskData::default());
                for row in rows {
                    let data = match row.task {
                        TaskTag::Source => &mut source,
                        TaskTag::Target => &mut target,
                    };
                    data.inputs.push(row.input);
                    data.targets.push(row.target);
                }
                let mut m = TransferGpModel::from_parts(
                    params,
                    source,
                    target,
                    standardizer_source,
                    standardizer_target,
                )?;
                m.set_report(self.report);
                PerfModel::Transfer(m)
            }
        };
        if model.dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: model.dim(),
            });
        }
        Ok((model, space))
    }
}

pub fn save_model(path: &Path, model: &PerfModel, space: &ConfigurationSpace) -> Result<()> {
    let text = serde_json::to_string_pretty(&ModelDocument::new(model, space))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(PerfModel, ConfigurationSpace)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<ModelDocument>(&text)?.into_model()
}

/// Predicts at a configuration of `space`.
pub fn predict_config(
    model: &PerfModel,
    space: &ConfigurationSpace,
    config: &Configuration,
) -> Result<Prediction> {
    model.predict(&encode(space, config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit, FitOptions};
    use crate::synthetic::{make_scenario, Family, ScenarioSpec};
    use crate::transfer::{fit_transfer, TransferFitOptions};

    #[test]
    fn saved_models_predict_identically() {
        let pair = make_scenario(&ScenarioSpec::correlated(Family::Surface2d, 2)).unwrap();
        let pick = |ids: &[usize], ys: &[f64]| {
            TaskData::new(
                ids.iter().map(|&i| pair.encoded[i].clone()).collect(),
                ids.iter().map(|&i| ys[i]).collect(),
            )
        };
        let target = pick(&[3, 100, 250, 400, 610], &pair.target);
        let source = pick(&[0, 50, 90, 200, 333, 500, 640], &pair.source);
        let opts = FitOptions {
            restarts: 2,
            ..Default::default()
        };
        let single = fit(&target.inputs, &target.targets, &KernelParams::default_for(2), &opts).unwrap();
        let joint = fit_transfer(
            &source,
            &target,
            &TransferKernelParams::default_for(2),
            &TransferFitOptions {
                base: opts,
                fixed_rho: None,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (name, model) in [("s.json", PerfModel::Single(single)), ("t.json", PerfModel::Transfer(joint))] {
            let path = dir.path().join(name);
            save_model(&path, &model, &pair.space).unwrap();
            let (back, space) = load_model(&path).unwrap();
            assert_eq!(space, pair.space);
            assert_eq!(back.report(), model.report());
            for x in pair.encoded.iter().step_by(37) {
                let a = model.predict(x).unwrap();
                let b = back.predict(x).unwrap();
                assert!((a.mean - b.mean).abs() <= 1e-10 && (a.variance - b.variance).abs() <= 1e-10);
            }
        }
    }
}
