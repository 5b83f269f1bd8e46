//! Configuration spaces: parameter domains, enumeration, sampling and the
//! numeric encoding used as GP input.
//!
//! A configuration is stored as one domain index per parameter. Range
//! parameters carry an explicit ascending grid of admissible values;
//! categorical and binary parameters carry an ordered label list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Default cap on [`enumerate_space`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParameterKind {
    #[serde(rename = "integer-range", alias = "range", alias = "numeric")]
    Range,
    #[serde(rename = "categorical")]
    Categorical,
    #[serde(rename = "binary")]
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Range { min: f64, max: f64, grid: Vec<f64> },
    Labels(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParameterKind,
    pub domain: Domain,
    pub scale: Scale,
}

/// A single parameter value, as read from or written to data files.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Label(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Label(s) => f.write_str(s),
        }
    }
}

impl ParameterSpec {
    /// Numeric parameter whose bounds are the grid's end points.
    pub fn range(name: impl Into<String>, grid: Vec<f64>, scale: Scale) -> Self {
        let min = grid.first().copied().unwrap_or(f64::NAN);
        let max = grid.last().copied().unwrap_or(f64::NAN);
        Self::range_with_bounds(name, min, max, grid, scale)
    }

    pub fn range_with_bounds(
        name: impl Into<String>,
        min: f64,
        max: f64,
        grid: Vec<f64>,
        scale: Scale,
    ) -> Self {
        ParameterSpec {
            name: name.into(),
            kind: ParameterKind::Range,
            domain: Domain::Range { min, max, grid },
            scale,
        }
    }

    pub fn categorical(name: impl Into<String>, labels: Vec<String>) -> Self {
        ParameterSpec {
            name: name.into(),
            kind: ParameterKind::Categorical,
            domain: Domain::Labels(labels),
            scale: Scale::Linear,
        }
    }

    /// Binary parameter with the labels `off` and `on`.
    pub fn binary(name: impl Into<String>) -> Self {
        Self::binary_with_labels(name, "off", "on")
    }

    pub fn binary_with_labels(name: impl Into<String>, off: &str, on: &str) -> Self {
        ParameterSpec {
            name: name.into(),
            kind: ParameterKind::Binary,
            domain: Domain::Labels(vec![off.to_string(), on.to_string()]),
            scale: Scale::Linear,
        }
    }

    pub fn domain_size(&self) -> usize {
        match &self.domain {
            Domain::Range { grid, .. } => grid.len(),
            Domain::Labels(labels) => labels.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidParameter {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(invalid("empty name"));
        }
        match (&self.kind, &self.domain) {
            (ParameterKind::Range, Domain::Range { min, max, grid }) => {
                if grid.is_empty() {
                    return Err(invalid("empty domain"));
                }
                if !min.is_finite() || !max.is_finite() || grid.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("non-finite bound or grid value"));
                }
                if min > max {
                    return Err(invalid("min exceeds max"));
                }
                if grid.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("grid must be strictly ascending"));
                }
                if grid[0] < *min || grid[grid.len() - 1] > *max {
                    return Err(invalid("grid value outside (min, max)"));
                }
                if self.scale == Scale::Log && *min <= 0.0 {
                    return Err(invalid("log scale requires positive values"));
                }
            }
            (ParameterKind::Categorical, Domain::Labels(labels))
            | (ParameterKind::Binary, Domain::Labels(labels)) => {
                if labels.is_empty() {
                    return Err(invalid("empty domain"));
                }
                if self.kind == ParameterKind::Binary && labels.len() != 2 {
                    return Err(invalid("binary parameters take exactly two labels"));
                }
                let mut seen = HashSet::new();
                if labels.iter().any(|l| !seen.insert(l.as_str())) {
                    return Err(invalid("duplicate label"));
                }
                if self.scale == Scale::Log {
                    return Err(invalid("log scale requires a numeric domain"));
                }
            }
            _ => return Err(invalid("kind does not match domain")),
        }
        Ok(())
    }

    pub fn value(&self, index: usize) -> Value {
        match &self.domain {
            Domain::Range { grid, .. } => Value::Number(grid[index]),
            Domain::Labels(labels) => Value::Label(labels[index].clone()),
        }
    }

    /// Finds the domain index of a textual value.
    ///
    /// Numeric values match a grid point exactly or within a relative
    /// tolerance of 1e-9; binary parameters also accept `0`/`1`.
    pub fn index_of(&self, text: &str) -> Result<usize> {
        let text = text.trim();
        let not_found = || Error::NotInDomain {
            name: self.name.clone(),
            value: text.to_string(),
        };
        match &self.domain {
            Domain::Range { .. } => {
                let v: f64 = text.parse().map_err(|_| not_found())?;
                self.index_of_number(v).ok_or_else(not_found)
            }
            Domain::Labels(labels) => {
                if let Some(i) = labels.iter().position(|l| l == text) {
                    return Ok(i);
                }
                if self.kind == ParameterKind::Binary {
                    match text {
                        "0" => return Ok(0),
                        "1" => return Ok(1),
                        _ => {}
                    }
                }
                Err(not_found())
            }
        }
    }

    pub fn index_of_number(&self, v: f64) -> Option<usize> {
        let Domain::Range { grid, .. } = &self.domain else {
            return None;
        };
        if !v.is_finite() {
            return None;
        }
        let pos = grid.partition_point(|&g| g < v);
        [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter(|&i| i < grid.len())
            .find(|&i| (grid[i] - v).abs() <= 1e-9 * grid[i].abs().max(v.abs()).max(1e-300))
    }

    /// Single-coordinate encoding of a domain index into `[0, 1]`.
    pub fn encode_index(&self, index: usize) -> f64 {
        match &self.domain {
            Domain::Range { min, max, grid } => {
                let v = grid[index];
                match self.scale {
                    Scale::Linear if max > min => (v - min) / (max - min),
                    Scale::Log if max > min => (v.ln() - min.ln()) / (max.ln() - min.ln()),
                    _ => 0.0,
                }
            }
            Domain::Labels(labels) => {
                if labels.len() <= 1 {
                    0.0
                } else {
                    index as f64 / (labels.len() - 1) as f64
                }
            }
        }
    }
}

/// A point of the configuration space, stored as one domain index per
/// parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub indices: Vec<usize>,
}

impl Configuration {
    pub fn new(indices: Vec<usize>) -> Self {
        Configuration { indices }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationSpace {
    parameters: Vec<ParameterSpec>,
    cardinality: u128,
}

/// Validates the parameter specs and computes the space's cardinality.
pub fn build_space(specs: Vec<ParameterSpec>) -> Result<ConfigurationSpace> {
    let mut names = HashSet::new();
    for spec in &specs {
        spec.validate()?;
        if !names.insert(spec.name.clone()) {
            return Err(Error::DuplicateParameter(spec.name.clone()));
        }
    }
    let cardinality = specs
        .iter()
        .try_fold(1u128, |acc, s| acc.checked_mul(s.domain_size() as u128))
        .unwrap_or(u128::MAX);
    Ok(ConfigurationSpace {
        parameters: specs,
        cardinality,
    })
}

impl ConfigurationSpace {
    pub fn parameters(&self) -> &[ParameterSpec] {
        &self.parameters
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn cardinality(&self) -> u128 {
        self.cardinality
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn validate_config(&self, config: &Configuration) -> Result<()> {
        if config.indices.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: config.indices.len(),
            });
        }
        for (p, &i) in self.parameters.iter().zip(&config.indices) {
            if i >= p.domain_size() {
                return Err(Error::NotInDomain {
                    name: p.name.clone(),
                    value: format!("index {i}"),
                });
            }
        }
        Ok(())
    }

    /// Mixed-radix position of a configuration in [`enumerate_space`] order.
    pub fn id_of(&self, config: &Configuration) -> u128 {
        self.parameters
            .iter()
            .zip(&config.indices)
            .fold(0u128, |acc, (p, &i)| acc * p.domain_size() as u128 + i as u128)
    }

    pub fn config_from_id(&self, mut id: u128) -> Configuration {
        let mut indices = vec![0; self.dim()];
        for (slot, p) in indices.iter_mut().zip(&self.parameters).rev() {
            let size = p.domain_size() as u128;
            *slot = (id % size) as usize;
            id /= size;
        }
        Configuration { indices }
    }

    pub fn values(&self, config: &Configuration) -> Vec<Value> {
        self.parameters
            .iter()
            .zip(&config.indices)
            .map(|(p, &i)| p.value(i))
            .collect()
    }

    /// Builds a configuration from a `name -> value` map covering every
    /// parameter.
    pub fn config_from_map(&self, map: &BTreeMap<String, String>) -> Result<Configuration> {
        if let Some(unknown) = map.keys().find(|k| self.parameter_index(k).is_none()) {
            return Err(Error::UnknownColumn(unknown.clone()));
        }
        let indices = self
            .parameters
            .iter()
            .map(|p| {
                let text = map
                    .get(&p.name)
                    .ok_or_else(|| Error::MissingColumn(p.name.clone()))?;
                p.index_of(text)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Configuration { indices })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: SpaceDocument = serde_json::from_str(text)?;
        doc.into_space()
    }

    pub fn to_document(&self) -> SpaceDocument {
        SpaceDocument {
            parameters: self.parameters.iter().map(ParameterDef::from_spec).collect(),
        }
    }
}

/// Lists every configuration in lexicographic order of the parameter grids,
/// first parameter slowest.
pub fn enumerate_space(space: &ConfigurationSpace, cap: u128) -> Result<Vec<Configuration>> {
    if space.cardinality > cap {
        return Err(Error::CapExceeded {
            cardinality: space.cardinality,
            cap,
        });
    }
    Ok((0..space.cardinality)
        .map(|id| space.config_from_id(id))
        .collect())
}

/// Draws `n` distinct configurations uniformly without replacement.
///
/// Uses a sparse Fisher-Yates shuffle over configuration ids, so memory is
/// proportional to `n` rather than to the space's cardinality.
pub fn random_sample(space: &ConfigurationSpace, n: usize, seed: u64) -> Result<Vec<Configuration>> {
    if n as u128 > space.cardinality {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: usize::try_from(space.cardinality).unwrap_or(usize::MAX),
        });
    }
    let total = u64::try_from(space.cardinality).map_err(|_| {
        Error::InvalidSpec("configuration space too large to sample by id".to_string())
    })?;
    Ok(sample_ids(total, n, seed)
        .into_iter()
        .map(|id| space.config_from_id(id as u128))
        .collect())
}

/// `n` distinct ids from `0..total` in shuffled order.
pub(crate) fn sample_ids(total: u64, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = rng_from_seed(seed);
    let mut displaced: HashMap<u64, u64> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let j = rng.random_range(i..total);
        let at_j = *displaced.get(&j).unwrap_or(&j);
        let at_i = *displaced.get(&i).unwrap_or(&i);
        displaced.insert(j, at_i);
        out.push(at_j);
    }
    out
}

/// A seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    sample_ids(n as u64, n, seed)
        .into_iter()
        .map(|i| i as usize)
        .collect()
}

/// Numeric GP input for a configuration: one coordinate per parameter.
pub fn encode(space: &ConfigurationSpace, config: &Configuration) -> Result<Vec<f64>> {
    space.validate_config(config)?;
    Ok(space
        .parameters
        .iter()
        .zip(&config.indices)
        .map(|(p, &i)| p.encode_index(i))
        .collect())
}

// ---------------------------------------------------------------------------
// JSON space definition

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceDocument {
    pub parameters: Vec<ParameterDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub kind: ParameterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub scale: Scale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridDef {
    List(Vec<f64>),
    Shorthand {
        from: f64,
        to: f64,
        count: usize,
        #[serde(default)]
        spacing: Scale,
    },
}

impl GridDef {
    pub fn expand(&self) -> Vec<f64> {
        match *self {
            GridDef::List(ref values) => values.clone(),
            GridDef::Shorthand {
                from,
                to,
                count,
                spacing,
            } => grid_points(from, to, count, spacing),
        }
    }
}

/// `count` points from `from` to `to` inclusive, evenly spaced on the given
/// scale. End points are reproduced exactly.
pub fn grid_points(from: f64, to: f64, count: usize, spacing: Scale) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![from],
        _ => {
            let last = (count - 1) as f64;
            let mut out: Vec<f64> = (0..count)
                .map(|i| {
                    let t = i as f64 / last;
                    match spacing {
                        Scale::Linear => from + t * (to - from),
                        Scale::Log => (from.ln() + t * (to.ln() - from.ln())).exp(),
                    }
                })
                .collect();
            out[0] = from;
            out[count - 1] = to;
            out
        }
    }
}

impl ParameterDef {
    fn from_spec(spec: &ParameterSpec) -> Self {
        let (min, max, grid, labels) = match &spec.domain {
            Domain::Range { min, max, grid } => {
                (Some(*min), Some(*max), Some(GridDef::List(grid.clone())), None)
            }
            Domain::Labels(labels) => (None, None, None, Some(labels.clone())),
        };
        ParameterDef {
            name: spec.name.clone(),
            kind: spec.kind,
            min,
            max,
            grid,
            labels,
            scale: spec.scale,
        }
    }

    fn into_spec(self) -> Result<ParameterSpec> {
        let invalid = |reason: &str| Error::InvalidParameter {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        let domain = match self.kind {
            ParameterKind::Range => {
                let grid = self
                    .grid
                    .as_ref()
                    .ok_or_else(|| invalid("integer-range parameter needs a grid"))?
                    .expand();
                let min = self.min.or(grid.first().copied()).unwrap_or(f64::NAN);
                let max = self.max.or(grid.last().copied()).unwrap_or(f64::NAN);
                Domain::Range { min, max, grid }
            }
            ParameterKind::Categorical => Domain::Labels(
                self.labels
                    .clone()
                    .ok_or_else(|| invalid("categorical parameter needs labels"))?,
            ),
            ParameterKind::Binary => Domain::Labels(
                self.labels
                    .clone()
                    .unwrap_or_else(|| vec!["off".to_string(), "on".to_string()]),
            ),
        };
        Ok(ParameterSpec {
            name: self.name,
            kind: self.kind,
            domain,
            scale: self.scale,
        })
    }
}

impl SpaceDocument {
    pub fn into_space(self) -> Result<ConfigurationSpace> {
        let specs = self
            .parameters
            .into_iter()
            .map(ParameterDef::into_spec)
            .collect::<Result<Vec<_>>>()?;
        build_space(specs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    fn space_25_27() -> ConfigurationSpace {
        build_space(vec![
            ParameterSpec::range("a", grid(25), Scale::Linear),
            ParameterSpec::range("b", grid(27), Scale::Linear),
        ])
        .unwrap()
    }

    #[test]
    fn cardinality_examples() {
        assert_eq!(space_25_27().cardinality(), 675);
        let one = build_space(vec![ParameterSpec::binary("x")]).unwrap();
        assert_eq!(one.cardinality(), 2);
        let many =
            build_space((0..20).map(|i| ParameterSpec::binary(format!("o{i}"))).collect()).unwrap();
        assert_eq!(many.cardinality(), 1_048_576);
    }

    #[test]
    fn build_space_errors() {
        let dup = build_space(vec![ParameterSpec::binary("x"), ParameterSpec::binary("x")]);
        assert!(matches!(dup, Err(Error::DuplicateParameter(_))));
        let empty = build_space(vec![ParameterSpec::range("x", vec![], Scale::Linear)]);
        assert!(matches!(empty, Err(Error::InvalidParameter { .. })));
        let log0 = build_space(vec![ParameterSpec::range("x", vec![0.0, 1.0], Scale::Log)]);
        assert!(matches!(log0, Err(Error::InvalidParameter { .. })));
        let unordered = build_space(vec![ParameterSpec::range("x", vec![2.0, 1.0], Scale::Linear)]);
        assert!(unordered.is_err());
        let outside = build_space(vec![ParameterSpec::range_with_bounds(
            "x",
            0.0,
            1.0,
            vec![0.5, 2.0],
            Scale::Linear,
        )]);
        assert!(outside.is_err());
    }

    #[test]
    fn enumerate_is_lexicographic() {
        let space = build_space(vec![
            ParameterSpec::range("a", grid(2), Scale::Linear),
            ParameterSpec::range("b", grid(3), Scale::Linear),
        ])
        .unwrap();
        let all = enumerate_space(&space, DEFAULT_ENUMERATION_CAP).unwrap();
        let got: Vec<Vec<usize>> = all.into_iter().map(|c| c.indices).collect();
        assert_eq!(
            got,
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
        assert_eq!(enumerate_space(&space_25_27(), DEFAULT_ENUMERATION_CAP).unwrap().len(), 675);
        assert!(matches!(
            enumerate_space(&space_25_27(), 100),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn random_sample_examples() {
        let space = space_25_27();
        assert!(random_sample(&space, 0, 1).unwrap().is_empty());
        let a = random_sample(&space, 9, 42).unwrap();
        let b = random_sample(&space, 9, 42).unwrap();
        assert_eq!(a, b);
        let full: HashSet<_> = random_sample(&space, 675, 3).unwrap().into_iter().collect();
        let all: HashSet<_> = enumerate_space(&space, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .into_iter()
            .collect();
        assert_eq!(full, all);
        assert!(matches!(
            random_sample(&space, 676, 0),
            Err(Error::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn encode_examples() {
        let space = build_space(vec![
            ParameterSpec::binary("flag"),
            ParameterSpec::range("n", vec![5.0, (5.0f64 * 10000.0).sqrt(), 10000.0], Scale::Log),
            ParameterSpec::categorical("mode", vec!["a".into(), "b".into(), "c".into()]),
        ])
        .unwrap();
        let x = encode(&space, &Configuration::new(vec![0, 0, 0])).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 0.0]);
        let x = encode(&space, &Configuration::new(vec![1, 2, 1])).unwrap();
        assert_eq!(x[0], 1.0);
        assert!((x[1] - 1.0).abs() < 1e-15);
        assert_eq!(x[2], 0.5);
        // geometric midpoint, checked against the closed form
        let mid = encode(&space, &Configuration::new(vec![0, 1, 2])).unwrap()[1];
        let v = (5.0f64 * 10000.0).sqrt();
        let expected = (v.ln() - 5f64.ln()) / (10000f64.ln() - 5f64.ln());
        assert!((mid - expected).abs() < 1e-12);
        assert!((mid - 0.5).abs() < 1e-12);
        assert!(encode(&space, &Configuration::new(vec![0, 3, 0])).is_err());
    }

    #[test]
    fn json_shorthand_grid() {
        let space = ConfigurationSpace::from_json_str(
            r#"{"parameters":[
                {"name":"p","kind":"integer-range","grid":{"from":5,"to":10000,"count":25,"spacing":"log"},"scale":"log"},
                {"name":"f","kind":"binary"},
                {"name":"c","kind":"categorical","labels":["x","y","z"]}
            ]}"#,
        )
        .unwrap();
        assert_eq!(space.cardinality(), 25 * 2 * 3);
        let Domain::Range { grid, .. } = &space.parameters()[0].domain else {
            panic!()
        };
        assert_eq!(grid[0], 5.0);
        assert_eq!(grid[24], 10000.0);
        let text = serde_json::to_string(&space.to_document()).unwrap();
        assert_eq!(ConfigurationSpace::from_json_str(&text).unwrap(), space);
    }

    #[test]
    fn index_lookup() {
        let p = ParameterSpec::range("n", vec![0.1, 0.2, 0.3], Scale::Linear);
        assert_eq!(p.index_of("0.2").unwrap(), 1);
        assert!(p.index_of("0.25").is_err());
        let b = ParameterSpec::binary("b");
        assert_eq!(b.index_of("on").unwrap(), 1);
        assert_eq!(b.index_of("0").unwrap(), 0);
    }

    proptest! {
        #[test]
        fn samples_are_distinct_and_valid(n in 0usize..=60, seed in any::<u64>()) {
            let space = build_space(vec![
                ParameterSpec::range("a", grid(6), Scale::Linear),
                ParameterSpec::binary("b"),
                ParameterSpec::categorical("c", vec!["x".into(), "y".into(), "z".into(), "w".into(), "v".into()]),
            ]).unwrap();
            let sample = random_sample(&space, n, seed).unwrap();
            prop_assert_eq!(sample.len(), n);
            let set: HashSet<_> = sample.iter().cloned().collect();
            prop_assert_eq!(set.len(), n);
            for c in &sample {
                prop_assert!(space.validate_config(c).is_ok());
            }
        }

        #[test]
        fn encoding_is_monotone_and_injective(
            raw in proptest::collection::btree_set(1u32..1_000_000, 1..20),
            log in any::<bool>(),
        ) {
            let values: Vec<f64> = raw.into_iter().map(|v| v as f64 / 100.0).collect();
            let scale = if log { Scale::Log } else { Scale::Linear };
            let p = ParameterSpec::range("p", values.clone(), scale);
            let codes: Vec<f64> = (0..values.len()).map(|i| p.encode_index(i)).collect();
            for w in codes.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            prop_assert!(codes.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
