//! Synthetic source/target response pairs with controllable relatedness.
//!
//! Two families are provided, both defined over enumerable grids:
//!
//! * `demo1d`: `t(x) = sin(x) + 0.3 x` on 200 evenly spaced points of `[0, 6]`.
//! * `surface2d`: a 25 x 27 log grid over `num_particles` in `[5, 10000]` and
//!   `num_refinement` in `[1, 100]`. With `u`, `v` the encoded coordinates in
//!   `[0, 1]`:
//!
//!   ```text
//!   t(u, v) = 12 + 45 * sigmoid((u - 0.62) / 0.07)
//!                + 28 * exp(-(v - 0.2 - 0.5 u)^2 / (2 * 0.06^2))
//!                + 20 * ((u - 0.3)^2 + (v - 0.75)^2)
//!   ```
//!
//!   a flat low region, a steep step to a high plateau, and a diagonal ridge.
//!
//! The source is `g = (1 + miscalibration) * t + noise_level * std(t) * eta`,
//! where `eta` is a smooth random field built from 64 seeded random Fourier
//! features (lengthscale 0.2 in encoded units), normalized to zero mean and
//! unit standard deviation over the grid. A misleading source is the constant
//! `mean(t)`.

use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config_space::{
    build_space, encode, enumerate_space, grid_points, sample_ids, Configuration,
    ConfigurationSpace, ParameterSpec, Scale, DEFAULT_ENUMERATION_CAP,
};
use crate::datasets::{MeasurementTable, Row, TableMetadata};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub const SOURCE_LABEL: &str = "source";
pub const TARGET_LABEL: &str = "target";

/// Relatedness study levels. Level `l` perturbs the source with
/// `noise_level = l / 10` target standard deviations.
pub const RELATEDNESS_LEVELS: [u32; 7] = [0, 5, 10, 15, 20, 25, 30];

pub fn relatedness_noise_level(level: u32) -> f64 {
    level as f64 / 10.0
}

const FEATURES: usize = 64;
const FIELD_LENGTHSCALE: f64 = 0.2;
const ROUGH_SHARE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Demo1d,
    Surface2d,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "demo1d" => Ok(Family::Demo1d),
            "surface2d" => Ok(Family::Surface2d),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Demo1d => "demo1d",
            Family::Surface2d => "surface2d",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: Family,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub miscalibration: f64,
    #[serde(default)]
    pub misleading: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    /// A source that tracks the target closely but not exactly.
    pub fn correlated(family: Family, seed: u64) -> Self {
        let noise_level = match family {
            Family::Demo1d => 0.2,
            Family::Surface2d => 0.6,
        };
        ScenarioSpec {
            family,
            noise_level,
            miscalibration: 0.3,
            misleading: false,
            seed,
        }
    }

    pub fn misleading(family: Family, seed: u64) -> Self {
        ScenarioSpec {
            family,
            noise_level: 0.0,
            miscalibration: 0.0,
            misleading: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::InvalidSpec("noise_level must be finite and >= 0".into()));
        }
        if !(self.miscalibration.is_finite() && self.miscalibration > -1.0) {
            return Err(Error::InvalidSpec("miscalibration must be finite and > -1".into()));
        }
        Ok(())
    }
}

/// Source and target responses tabulated over every configuration of the
/// space, indexed by configuration id.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePair {
    pub spec: ScenarioSpec,
    pub space: ConfigurationSpace,
    pub configs: Vec<Configuration>,
    pub encoded: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub source: Vec<f64>,
}

impl ResponsePair {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn target_of(&self, config: &Configuration) -> f64 {
        self.target[self.space.id_of(config) as usize]
    }

    pub fn source_of(&self, config: &Configuration) -> f64 {
        self.source[self.space.id_of(config) as usize]
    }

    /// Index of the configuration with the lowest target response.
    pub fn target_argmin(&self) -> usize {
        (0..self.len())
            .min_by(|&a, &b| self.target[a].total_cmp(&self.target[b]))
            .unwrap_or(0)
    }

    /// Both environments as one measurement table, source rows first.
    pub fn to_table(&self) -> Result<MeasurementTable> {
        let rows = [(SOURCE_LABEL, &self.source), (TARGET_LABEL, &self.target)]
            .into_iter()
            .flat_map(|(label, values)| {
                self.configs.iter().zip(values.iter()).map(move |(c, &v)| Row {
                    config: c.clone(),
                    performance: v,
                    environment: label.to_string(),
                    replicates: 1,
                })
            })
            .collect();
        MeasurementTable::new(
            self.space.clone(),
            rows,
            TableMetadata {
                name: self.spec.family.to_string(),
                units: None,
                provenance: Some(format!(
                    "synthetic {} noise_level={} miscalibration={} misleading={} seed={}",
                    self.spec.family,
                    self.spec.noise_level,
                    self.spec.miscalibration,
                    self.spec.misleading,
                    self.spec.seed
                )),
            },
        )
    }
}

pub fn demo1d_target(x: f64) -> f64 {
    x.sin() + 0.3 * x
}

pub fn surface2d_target(u: f64, v: f64) -> f64 {
    let sigmoid = 1.0 / (1.0 + (-(u - 0.62) / 0.07).exp());
    let ridge = v - 0.2 - 0.5 * u;
    12.0 + 45.0 * sigmoid
        + 28.0 * (-(ridge * ridge) / (2.0 * 0.06 * 0.06)).exp()
        + 20.0 * ((u - 0.3).powi(2) + (v - 0.75).powi(2))
}

pub fn family_space(family: Family) -> ConfigurationSpace {
    let specs = match family {
        Family::Demo1d => vec![ParameterSpec::range(
            "x",
            grid_points(0.0, 6.0, 200, Scale::Linear),
            Scale::Linear,
        )],
        Family::Surface2d => vec![
            ParameterSpec::range(
                "num_particles",
                grid_points(5.0, 10000.0, 25, Scale::Log),
                Scale::Log,
            ),
            ParameterSpec::range(
                "num_refinement",
                grid_points(1.0, 100.0, 27, Scale::Log),
                Scale::Log,
            ),
        ],
    };
    build_space(specs).expect("built-in scenario spaces are valid")
}

/// Zero-mean, unit-variance perturbation: a smooth random field plus an
/// independent per-configuration component carrying `ROUGH_SHARE` of the
/// variance.
fn perturbation(points: &[Vec<f64>], dim: usize, seed: u64) -> Vec<f64> {
    let smooth = fourier_field(points, dim, derive_seed(seed, &[0x5246]), FIELD_LENGTHSCALE);
    let mut rng = rng_from_seed(derive_seed(seed, &[0x574e]));
    let mixed: Vec<f64> = smooth
        .iter()
        .map(|v| {
            let e: f64 = rng.sample(StandardNormal);
            (1.0 - ROUGH_SHARE).sqrt() * v + ROUGH_SHARE.sqrt() * e
        })
        .collect();
    standardize(&mixed)
}

fn standardize(raw: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(raw);
    raw.iter()
        .map(|v| if std > 0.0 { (v - mean) / std } else { 0.0 })
        .collect()
}

/// Smooth zero-mean, unit-variance random field evaluated at `points`.
fn fourier_field(points: &[Vec<f64>], dim: usize, seed: u64, lengthscale: f64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let features: Vec<(Vec<f64>, f64)> = (0..FEATURES)
        .map(|_| {
            let w = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) / lengthscale)
                .collect();
            let b = rng.random_range(0.0..std::f64::consts::TAU);
            (w, b)
        })
        .collect();
    let raw: Vec<f64> = points
        .iter()
        .map(|x| {
            features
                .iter()
                .map(|(w, b)| (w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b).cos())
                .sum::<f64>()
        })
        .collect();
    standardize(&raw)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.iter().all(|x| *x == v[0]) {
        return (v[0], 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn make_scenario(spec: &ScenarioSpec) -> Result<ResponsePair> {
    spec.validate()?;
    let space = family_space(spec.family);
    let configs = enumerate_space(&space, DEFAULT_ENUMERATION_CAP)?;
    let encoded = configs
        .iter()
        .map(|c| encode(&space, c))
        .collect::<Result<Vec<_>>>()?;
    let target: Vec<f64> = match spec.family {
        Family::Demo1d => configs
            .iter()
            .map(|c| match space.values(c)[0] {
                crate::config_space::Value::Number(x) => demo1d_target(x),
                _ => unreachable!("demo1d has a numeric parameter"),
            })
            .collect(),
        Family::Surface2d => encoded.iter().map(|x| surface2d_target(x[0], x[1])).collect(),
    };
    let (t_mean, t_std) = mean_std(&target);
    let source = if spec.misleading {
        vec![t_mean; target.len()]
    } else {
        let eta = perturbation(&encoded, space.dim(), spec.seed);
        target
            .iter()
            .zip(&eta)
            .map(|(t, e)| (1.0 + spec.miscalibration) * t + spec.noise_level * t_std * e)
            .collect()
    };
    Ok(ResponsePair {
        spec: spec.clone(),
        space,
        configs,
        encoded,
        target,
        source,
    })
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooFewPoints(a.len()));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    if sa == 0.0 {
        return Err(Error::ZeroVariance("first response is constant"));
    }
    if sb == 0.0 {
        return Err(Error::ZeroVariance("second response is constant"));
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    Ok((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// Correlation between source and target over `n` seeded random grid points,
/// or the whole grid when `n` is `None`.
pub fn correlation(pair: &ResponsePair, n: Option<usize>, seed: u64) -> Result<f64> {
    match n {
        None => pearson(&pair.source, &pair.target),
        Some(n) => {
            if n < 2 {
                return Err(Error::TooFewPoints(n));
            }
            if n > pair.len() {
                return Err(Error::SampleTooLarge {
                    requested: n,
                    available: pair.len(),
                });
            }
            let ids = sample_ids(pair.len() as u64, n, seed);
            let s: Vec<f64> = ids.iter().map(|&i| pair.source[i as usize]).collect();
            let t: Vec<f64> = ids.iter().map(|&i| pair.target[i as usize]).collect();
            pearson(&s, &t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, noise: f64, mis: f64, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            family,
            noise_level: noise,
            miscalibration: mis,
            misleading: false,
            seed,
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(make_scenario(&spec(Family::Demo1d, 0.1, 0.0, 1)).unwrap().len(), 200);
        assert_eq!(make_scenario(&spec(Family::Surface2d, 0.1, 0.0, 1)).unwrap().len(), 675);
    }

    #[test]
    fn unperturbed_source_equals_target() {
        for f in [Family::Demo1d, Family::Surface2d] {
            let p = make_scenario(&spec(f, 0.0, 0.0, 3)).unwrap();
            assert_eq!(p.source, p.target);
            assert_eq!(correlation(&p, None, 0).unwrap(), 1.0);
        }
    }

    #[test]
    fn misleading_source_is_constant() {
        let p = make_scenario(&ScenarioSpec::misleading(Family::Demo1d, 1)).unwrap();
        let (_, s) = mean_std(&p.source);
        assert_eq!(s, 0.0);
        assert!(matches!(correlation(&p, None, 0), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn demo_endpoints_match_closed_form() {
        let p = make_scenario(&spec(Family::Demo1d, 0.2, 0.3, 1)).unwrap();
        assert!((p.target[0] - 0.0).abs() < 1e-12);
        assert!((p.target[199] - (6.0f64.sin() + 1.8)).abs() < 1e-12);
    }

    #[test]
    fn negated_target_gives_minus_one() {
        let t = [1.0, 2.0, 4.0, 3.0];
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&t, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&t[..1], &neg[..1]), Err(Error::TooFewPoints(1))));
    }

    #[test]
    fn deterministic_tables() {
        let s = ScenarioSpec::correlated(Family::Surface2d, 9);
        assert_eq!(make_scenario(&s).unwrap(), make_scenario(&s).unwrap());
        let other = make_scenario(&ScenarioSpec::correlated(Family::Surface2d, 10)).unwrap();
        assert_ne!(make_scenario(&s).unwrap().source, other.source);
    }

    #[test]
    fn correlation_falls_with_noise_level() {
        let mut good = 0;
        for seed in 0..20 {
            let rs: Vec<f64> = RELATEDNESS_LEVELS
                .iter()
                .map(|&l| {
                    let p = make_scenario(&spec(
                        Family::Surface2d,
                        relatedness_noise_level(l),
                        0.3,
                        seed,
                    ))
                    .unwrap();
                    correlation(&p, None, 0).unwrap()
                })
                .collect();
            if rs.windows(2).all(|w| w[1] < w[0]) {
                good += 1;
            }
        }
        assert!(good >= 18, "{good}");
    }

    #[test]
    fn sampled_correlation_errors() {
        let p = make_scenario(&spec(Family::Demo1d, 0.5, 0.0, 2)).unwrap();
        assert!(matches!(correlation(&p, Some(1), 0), Err(Error::TooFewPoints(1))));
        assert!(matches!(correlation(&p, Some(201), 0), Err(Error::SampleTooLarge { .. })));
        let r = correlation(&p, Some(50), 4).unwrap();
        assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(matches!("cobot".parse::<Family>(), Err(Error::UnknownFamily(_))));
        let parsed: std::result::Result<ScenarioSpec, _> =
            serde_json::from_str(r#"{"family":"cobot"}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn export_round_trips_through_csv() {
        let p = make_scenario(&ScenarioSpec::correlated(Family::Surface2d, 1)).unwrap();
        let table = p.to_table().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        crate::datasets::write_csv(&table, &path).unwrap();
        let back = crate::datasets::load_csv(&path, Some(&p.space)).unwrap();
        assert_eq!(back.rows, table.rows);
        let inferred = crate::datasets::load_csv(&path, None).unwrap();
        assert_eq!(inferred.len(), 1350);
        assert_eq!(inferred.space.cardinality(), 675);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn correlation_falls_with_noise(seed in 0u64..10_000, lo in 0.0f64..2.0, step in 0.05f64..1.0) {
            let near = make_scenario(&spec(Family::Demo1d, lo, 0.3, seed)).unwrap();
            let far = make_scenario(&spec(Family::Demo1d, lo + step, 0.3, seed)).unwrap();
            proptest::prop_assert_eq!(&near.target, &far.target);
            proptest::prop_assert!(correlation(&far, None, 0).unwrap() < correlation(&near, None, 0).unwrap());
        }
    }
}
