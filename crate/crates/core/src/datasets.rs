//! Measurement tables: CSV ingestion, environment tagging and holdout splits.
//!
//! CSV dialect: UTF-8, comma separated, `.` decimal point, a mandatory header
//! row and `#` comment lines. Columns are the parameter names, `performance`,
//! and optionally `environment` and `replicates`.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config_space::{
    build_space, Configuration, ConfigurationSpace, ParameterSpec, Scale, SpaceDocument,
};
use crate::error::{Error, Result};

pub const PERFORMANCE_COLUMN: &str = "performance";
pub const ENVIRONMENT_COLUMN: &str = "environment";
pub const REPLICATES_COLUMN: &str = "replicates";
/// Environment label given to rows of files without an `environment` column.
pub const DEFAULT_ENVIRONMENT: &str = "default";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub config: Configuration,
    pub performance: f64,
    pub environment: String,
    pub replicates: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub name: String,
    pub units: Option<String>,
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTable {
    pub space: ConfigurationSpace,
    pub rows: Vec<Row>,
    pub metadata: TableMetadata,
    /// Rows skipped at load time because their performance was missing or
    /// not finite.
    pub dropped: usize,
}

impl MeasurementTable {
    pub fn new(space: ConfigurationSpace, rows: Vec<Row>, metadata: TableMetadata) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyData("a measurement table needs at least one row"));
        }
        for row in &rows {
            space.validate_config(&row.config)?;
            if !row.performance.is_finite() {
                return Err(Error::NonFinite("performance"));
            }
        }
        Ok(MeasurementTable {
            space,
            rows,
            metadata,
            dropped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn environments(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.environment.as_str()).collect()
    }

    /// Concatenates two tables over the same space.
    pub fn merge(mut self, other: MeasurementTable) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::InvalidSpec(
                "cannot merge tables over different configuration spaces".into(),
            ));
        }
        self.rows.extend(other.rows);
        self.dropped += other.dropped;
        Ok(self)
    }

    /// Relabels every row with `environment`.
    pub fn with_environment(mut self, environment: &str) -> Self {
        for r in &mut self.rows {
            r.environment = environment.to_string();
        }
        self
    }
}

/// Schema file: a space definition plus the performance unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaDocument {
    #[serde(flatten)]
    pub space: SpaceDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance_unit: Option<String>,
}

pub fn load_schema(path: &Path) -> Result<(ConfigurationSpace, Option<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: SchemaDocument = serde_json::from_str(&text)?;
    let unit = doc.performance_unit.clone();
    Ok((doc.space.into_space()?, unit))
}

pub fn write_schema(path: &Path, space: &ConfigurationSpace, unit: Option<&str>) -> Result<()> {
    let doc = SchemaDocument {
        space: space.to_document(),
        performance_unit: unit.map(str::to_string),
    };
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

struct Columns {
    params: Vec<usize>,
    performance: usize,
    environment: Option<usize>,
    replicates: Option<usize>,
}

fn locate_columns(header: &csv::StringRecord, space: &ConfigurationSpace) -> Result<Columns> {
    let find = |name: &str| header.iter().position(|h| h == name);
    for h in header.iter() {
        let known = h == PERFORMANCE_COLUMN
            || h == ENVIRONMENT_COLUMN
            || h == REPLICATES_COLUMN
            || space.parameter_index(h).is_some();
        if !known {
            return Err(Error::UnknownColumn(h.to_string()));
        }
    }
    let params = space
        .parameters()
        .iter()
        .map(|p| find(&p.name).ok_or_else(|| Error::MissingColumn(p.name.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Columns {
        params,
        performance: find(PERFORMANCE_COLUMN)
            .ok_or_else(|| Error::MissingColumn(PERFORMANCE_COLUMN.into()))?,
        environment: find(ENVIRONMENT_COLUMN),
        replicates: find(REPLICATES_COLUMN),
    })
}

/// Derives a space from the data: numeric columns become linear grids of
/// their distinct values, anything else a categorical with sorted labels.
pub fn infer_space(path: &Path) -> Result<ConfigurationSpace> {
    infer_space_from(&[path])
}

/// Like [`infer_space`], over the union of several files with the same
/// parameter columns.
pub fn infer_space_from(paths: &[&Path]) -> Result<ConfigurationSpace> {
    let mut names: Option<Vec<String>> = None;
    let mut seen: Vec<BTreeSet<String>> = Vec::new();
    for path in paths {
        let mut rdr = reader(path)?;
        let header = rdr.headers()?.clone();
        let param_cols: Vec<(usize, String)> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| ![PERFORMANCE_COLUMN, ENVIRONMENT_COLUMN, REPLICATES_COLUMN].contains(h))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        let these: Vec<String> = param_cols.iter().map(|(_, n)| n.clone()).collect();
        match &names {
            None => {
                seen = vec![BTreeSet::new(); these.len()];
                names = Some(these);
            }
            Some(known) => {
                let mut a = known.clone();
                let mut b = these.clone();
                a.sort();
                b.sort();
                if a != b {
                    return Err(Error::InvalidSpec(format!(
                        "{} has parameter columns {these:?}, expected {known:?}",
                        path.display()
                    )));
                }
            }
        }
        let cols: Vec<usize> = names
            .iter()
            .flatten()
            .filter_map(|name| param_cols.iter().find(|(_, n)| n == name).map(|(i, _)| *i))
            .collect();
        for record in rdr.records() {
            let record = record?;
            for (k, &c) in cols.iter().enumerate() {
                if let Some(v) = record.get(c) {
                    seen[k].insert(v.to_string());
                }
            }
        }
    }
    let specs = names
        .unwrap_or_default()
        .into_iter()
        .zip(seen)
        .map(|(name, values)| {
            let numbers: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
            match numbers {
                Some(mut grid) if !grid.is_empty() => {
                    grid.sort_by(f64::total_cmp);
                    grid.dedup();
                    ParameterSpec::range(name, grid, Scale::Linear)
                }
                _ => ParameterSpec::categorical(name, values.into_iter().collect()),
            }
        })
        .collect();
    build_space(specs)
}

/// Loads and validates a measurement CSV. Without a schema the space is
/// inferred from the file.
pub fn load_csv(path: &Path, schema: Option<&ConfigurationSpace>) -> Result<MeasurementTable> {
    let space = match schema {
        Some(s) => s.clone(),
        None => infer_space(path)?,
    };
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let cols = locate_columns(&header, &space)?;
    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let indices = space
            .parameters()
            .iter()
            .zip(&cols.params)
            .map(|(p, &c)| {
                p.index_of(record.get(c).unwrap_or(""))
                    .map_err(|e| malformed(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let perf_text = record.get(cols.performance).unwrap_or("");
        let performance = if perf_text.is_empty() {
            None
        } else {
            let v: f64 = perf_text
                .parse()
                .map_err(|_| malformed(format!("bad performance value `{perf_text}`")))?;
            v.is_finite().then_some(v)
        };
        let Some(performance) = performance else {
            dropped += 1;
            continue;
        };
        let environment = cols
            .environment
            .and_then(|c| record.get(c))
            .filter(|s| !s.is_empty())
            .unwrap_or(DEFAULT_ENVIRONMENT)
            .to_string();
        let replicates = match cols.replicates.and_then(|c| record.get(c)) {
            None | Some("") => 1,
            Some(text) => match text.parse::<u32>() {
                Ok(n) if n >= 1 => n,
                _ => return Err(malformed(format!("bad replicate count `{text}`"))),
            },
        };
        rows.push(Row {
            config: Configuration::new(indices),
            performance,
            environment,
            replicates,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyData("no valid rows in measurement file"));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows without a finite performance", path.display());
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(MeasurementTable {
        space,
        rows,
        metadata: TableMetadata {
            name,
            units: None,
            provenance: Some(path.display().to_string()),
        },
        dropped,
    })
}

pub fn write_csv(table: &MeasurementTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = table.space.parameters().iter().map(|p| p.name.as_str()).collect();
    header.extend([PERFORMANCE_COLUMN, ENVIRONMENT_COLUMN, REPLICATES_COLUMN]);
    w.write_record(&header)?;
    for row in &table.rows {
        let mut fields: Vec<String> = table
            .space
            .values(&row.config)
            .iter()
            .map(|v| v.to_string())
            .collect();
        fields.push(row.performance.to_string());
        fields.push(row.environment.clone());
        fields.push(row.replicates.to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn subset(table: &MeasurementTable, label: &str) -> Result<MeasurementTable> {
    let rows: Vec<Row> = table
        .rows
        .iter()
        .filter(|r| r.environment == label)
        .cloned()
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingLabel(label.to_string()));
    }
    Ok(MeasurementTable {
        space: table.space.clone(),
        rows,
        metadata: TableMetadata {
            name: format!("{}[{label}]", table.metadata.name),
            ..table.metadata.clone()
        },
        dropped: 0,
    })
}

/// Partitions a table into its source and target environments.
pub fn split_by_environment(
    table: &MeasurementTable,
    source_label: &str,
    target_label: &str,
) -> Result<(MeasurementTable, MeasurementTable)> {
    Ok((subset(table, source_label)?, subset(table, target_label)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_pool: Vec<usize>,
    pub eval_set: Vec<usize>,
    pub seed: u64,
}

/// Seeded disjoint split of the table's rows; see [`holdout_indices`].
pub fn holdout(table: &MeasurementTable, eval_fraction: f64, seed: u64) -> Result<Split> {
    holdout_indices(table.len(), eval_fraction, seed)
}

/// Seeded disjoint split of `n` row indices. The evaluation set holds
/// `round(eval_fraction * n)` rows (halves round up), at least one, and the
/// training pool must keep at least one row.
pub fn holdout_indices(n: usize, eval_fraction: f64, seed: u64) -> Result<Split> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "eval fraction {eval_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n_eval = ((eval_fraction * n as f64) + 0.5).floor().max(1.0) as usize;
    if n_eval >= n {
        return Err(Error::InvalidSplit(format!(
            "{n} rows leave nothing to train on with eval fraction {eval_fraction}"
        )));
    }
    let perm = crate::config_space::permutation(n, seed);
    let mut eval_set = perm[..n_eval].to_vec();
    let mut train_pool = perm[n_eval..].to_vec();
    eval_set.sort_unstable();
    train_pool.sort_unstable();
    Ok(Split {
        train_pool,
        eval_set,
        seed,
    })
}

impl Split {
    pub fn is_partition_of(&self, n: usize) -> bool {
        let all: HashSet<usize> = self.train_pool.iter().chain(&self.eval_set).copied().collect();
        all.len() == n && self.train_pool.len() + self.eval_set.len() == n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn loads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "# measured on C1\nthreads,cache,performance\n1,on,10.5\n2,off,12\n4,on,9.25\n",
        );
        let t = load_csv(&p, None).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dropped, 0);
        assert_eq!(t.space.cardinality(), 6);
        assert_eq!(t.rows[0].environment, DEFAULT_ENVIRONMENT);
    }

    #[test]
    fn drops_rows_without_performance() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "a,performance\n1,3.0\n2,\n3,4.0\n");
        let t = load_csv(&p, None).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dropped, 1);
    }

    #[test]
    fn reports_malformed_rows_and_columns() {
        let dir = tempfile::tempdir().unwrap();
        let space = build_space(vec![ParameterSpec::range("a", vec![1.0, 2.0], Scale::Linear)])
            .unwrap();
        let p = write(dir.path(), "bad.csv", "a,performance\n1,3.0\n7,4.0\n");
        match load_csv(&p, Some(&space)) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "col.csv", "a,speed,performance\n1,2,3\n");
        assert!(matches!(load_csv(&p, Some(&space)), Err(Error::UnknownColumn(_))));
        let p = write(dir.path(), "none.csv", "a,performance\n1,\n");
        assert!(matches!(load_csv(&p, Some(&space)), Err(Error::EmptyData(_))));
    }

    #[test]
    fn splits_by_environment() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "e.csv",
            "a,performance,environment\n1,1,noisy\n2,2,default\n3,3,noisy\n",
        );
        let t = load_csv(&p, None).unwrap();
        let (s, tt) = split_by_environment(&t, "noisy", "default").unwrap();
        assert_eq!((s.len(), tt.len()), (2, 1));
        match split_by_environment(&t, "noisy", "real") {
            Err(Error::MissingLabel(l)) => assert_eq!(l, "real"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merged_files_keep_their_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let space = build_space(vec![ParameterSpec::binary("x"), ParameterSpec::binary("y")])
            .unwrap();
        let a = write(dir.path(), "cass10.csv", "x,y,performance\noff,off,1\noff,on,2\non,on,3\n");
        let b = write(dir.path(), "cass20.csv", "x,y,performance\noff,off,2\non,off,5\n");
        let merged = load_csv(&a, Some(&space))
            .unwrap()
            .with_environment("cass-10")
            .merge(load_csv(&b, Some(&space)).unwrap().with_environment("cass-20"))
            .unwrap();
        let (s, t) = split_by_environment(&merged, "cass-10", "cass-20").unwrap();
        assert_eq!((s.len(), t.len()), (3, 2));
    }

    #[test]
    fn holdout_sizes_and_determinism() {
        let s = holdout_indices(100, 0.2, 7).unwrap();
        assert_eq!((s.eval_set.len(), s.train_pool.len()), (20, 80));
        assert!(s.is_partition_of(100));
        assert_eq!(s, holdout_indices(100, 0.2, 7).unwrap());
        let odd = holdout_indices(101, 0.5, 1).unwrap();
        assert_eq!(odd.eval_set.len(), 51);
        assert!(holdout_indices(10, 0.0, 1).is_err());
        assert!(holdout_indices(1, 0.5, 1).is_err());
    }

    #[test]
    fn export_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "a,b,performance,environment\n0.1,x,1.0000000000000002,s\n0.3,y,2.5e-7,t\n",
        );
        let first = load_csv(&p, None).unwrap();
        let out = dir.path().join("out.csv");
        write_csv(&first, &out).unwrap();
        let second = load_csv(&out, Some(&first.space)).unwrap();
        assert_eq!(first.rows, second.rows);
    }
}
