//! Cycle-aligned aggregation of run files with 95% confidence intervals.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::runs::{read_run_csv, RunRow};

pub const AGGREGATE_COLUMNS: [&str; 10] = [
    "metric",
    "cycle",
    "fraction_remaining",
    "n",
    "train_acc_mean",
    "train_acc_ci95",
    "val_acc_mean",
    "val_acc_ci95",
    "test_acc_mean",
    "test_acc_ci95",
];

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub metric: String,
    pub cycle: usize,
    pub fraction_remaining: f64,
    pub n: usize,
    pub train_acc_mean: f64,
    pub train_acc_ci95: f64,
    pub val_acc_mean: f64,
    pub val_acc_ci95: f64,
    pub test_acc_mean: f64,
    pub test_acc_ci95: f64,
}

/// Mean and `1.96·s/√n` with `s` the sample standard deviation; the half-width
/// is 0 for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Groups rows by `(metric, cycle)`. Within a group the rows are ordered by
/// run id first, so the result does not depend on input order.
pub fn aggregate_rows(rows: &[RunRow]) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<(&str, usize), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.metric.as_str(), r.cycle))
            .or_default()
            .push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((metric, cycle), mut group) in groups {
        group.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        if let Some(w) = group.windows(2).find(|w| w[0].run_id == w[1].run_id) {
            return Err(Error::MixedRuns(format!(
                "run {} appears twice at cycle {cycle}",
                w[0].run_id
            )));
        }
        let fraction = group[0].fraction_remaining;
        if let Some(r) = group
            .iter()
            .find(|r| r.fraction_remaining != fraction || r.live.len() != group[0].live.len())
        {
            return Err(Error::MixedRuns(format!(
                "{metric} cycle {cycle}: {} has fraction {} but {} has {}",
                r.run_id, r.fraction_remaining, group[0].run_id, fraction
            )));
        }
        let stat =
            |f: fn(&RunRow) -> f64| mean_ci95(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (train_acc_mean, train_acc_ci95) = stat(|r| r.train_acc);
        let (val_acc_mean, val_acc_ci95) = stat(|r| r.val_acc);
        let (test_acc_mean, test_acc_ci95) = stat(|r| r.test_acc);
        out.push(AggregateRow {
            metric: metric.to_string(),
            cycle,
            fraction_remaining: fraction,
            n: group.len(),
            train_acc_mean,
            train_acc_ci95,
            val_acc_mean,
            val_acc_ci95,
            test_acc_mean,
            test_acc_ci95,
        });
    }
    Ok(out)
}

/// Every `*.csv` below `dir`, sorted.
pub fn collect_run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

pub fn aggregate_files(paths: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    if paths.is_empty() {
        return Err(Error::InvalidConfig("no run files to aggregate".into()));
    }
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_run_csv(p)?);
    }
    aggregate_rows(&rows)
}

pub fn encode_aggregate_csv(rows: &[AggregateRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(AGGREGATE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            r.cycle.to_string(),
            r.fraction_remaining.to_string(),
            r.n.to_string(),
            r.train_acc_mean.to_string(),
            r.train_acc_ci95.to_string(),
            r.val_acc_mean.to_string(),
            r.val_acc_ci95.to_string(),
            r.test_acc_mean.to_string(),
            r.test_acc_ci95.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(AGGREGATE_COLUMNS) {
        return Err(Error::format(
            path,
            "not an aggregate file (unexpected header)",
        ));
    }
    let bad = |what: &str| Error::format(path, format!("bad {what}"));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num =
            |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(AGGREGATE_COLUMNS[i])) };
        rows.push(AggregateRow {
            metric: rec[0].to_string(),
            cycle: rec[1].parse().map_err(|_| bad("cycle"))?,
            fraction_remaining: num(2)?,
            n: rec[3].parse().map_err(|_| bad("n"))?,
            train_acc_mean: num(4)?,
            train_acc_ci95: num(5)?,
            val_acc_mean: num(6)?,
            val_acc_ci95: num(7)?,
            test_acc_mean: num(8)?,
            test_acc_ci95: num(9)?,
        });
    }
    Ok(rows)
}
