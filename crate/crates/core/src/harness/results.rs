//! Result tables, bootstrap summaries and their files.
//!
//! A results file is JSON lines: a header `{"config": …}`, then one record per
//! (condition, seed, query index), then one `{"failure": …}` line per failed
//! cell. The aggregated CSV sits next to it with the `.csv` extension.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub condition: String,
    pub seed: u64,
    pub query_index: usize,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub condition: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub query_index: usize,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub config: ExperimentConfig,
    pub records: Vec<Record>,
    pub failures: Vec<CellFailure>,
}

impl ResultTable {
    /// Per-seed values of `condition` at `query_index`.
    pub fn values(&self, condition: &str, query_index: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.condition == condition && r.query_index == query_index)
            .map(|r| r.m)
            .collect()
    }

    /// Mean over seeds of `condition` at `query_index`.
    pub fn mean(&self, condition: &str, query_index: usize) -> Option<f64> {
        let v = self.values(condition, query_index);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean curve of `condition` over query indices.
    pub fn mean_curve(&self, condition: &str) -> Vec<f64> {
        (0..).map_while(|q| self.mean(condition, q)).collect()
    }

    /// Mean and bootstrap 95% interval per condition and query index, in condition order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let order: Vec<&str> = self.config.conditions.iter().map(|c| c.name.as_str()).collect();
        for r in &self.records {
            let ci = order.iter().position(|&n| n == r.condition).unwrap_or(order.len());
            groups.entry((ci, r.query_index)).or_default().push(r.m);
        }
        groups
            .into_iter()
            .enumerate()
            .map(|(i, ((ci, q), v))| {
                let (lo, hi) = bootstrap_interval(&v, 1000, seed::derive(self.config.seed, stream::BOOTSTRAP, i as u64));
                SummaryRow {
                    condition: order.get(ci).map_or_else(String::new, |s| s.to_string()),
                    query_index: q,
                    n: v.len(),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    ci_low: lo,
                    ci_high: hi,
                }
            })
            .collect()
    }
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_interval(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len();
    let mut rng = seed::rng(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |p: f64| means[((p * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    (at(0.025), at(0.975))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Header { config: ExperimentConfig },
    Failure { failure: CellFailure },
    Record(Record),
}

/// Path of the aggregated CSV belonging to a results file.
pub fn csv_path(jsonl: &Path) -> PathBuf {
    jsonl.with_extension("csv")
}

/// Writes the JSON-lines file at `path` and the CSV summary beside it.
pub fn write_results(table: &ResultTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, &Line::Header { config: table.config.clone() })?;
    out.write_all(b"\n")?;
    for r in &table.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    for f in &table.failures {
        serde_json::to_writer(&mut out, &Line::Failure { failure: f.clone() })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let mut csv = csv::Writer::from_path(csv_path(path)).map_err(|e| Error::Io(e.to_string()))?;
    for row in table.summary() {
        csv.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

/// Reloads a results file written by [`write_results`].
pub fn load_results(path: &Path) -> Result<ResultTable> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut config = None;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line)? {
            Line::Header { config: c } => config = Some(c),
            Line::Failure { failure } => failures.push(failure),
            Line::Record(r) => records.push(r),
        }
    }
    let config = config.ok_or_else(|| Error::Serde(format!("{} has no config header", path.display())))?;
    Ok(ResultTable {
        config,
        records,
        failures,
    })
}
