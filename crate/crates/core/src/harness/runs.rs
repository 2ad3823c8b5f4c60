//! Per-run CSV files: one row per pruning cycle.
//!
//! Columns: `run_id, seed, metric, cycle, fraction_remaining, epochs,
//! train_acc, val_acc, test_acc, train_loss, val_loss, test_loss, note,
//! live_l0, live_l1, ...`. `note` is `last` on the closing retrain and
//! `failed: <reason>` on the marker row that ends an aborted run; numeric
//! fields of the marker row are empty.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::prune::CycleRecord;

use super::config::MetricLabel;

pub const RUN_COLUMNS: [&str; 13] = [
    "run_id",
    "seed",
    "metric",
    "cycle",
    "fraction_remaining",
    "epochs",
    "train_acc",
    "val_acc",
    "test_acc",
    "train_loss",
    "val_loss",
    "test_loss",
    "note",
];

/// One parsed row of a run file (marker rows are skipped when reading).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub run_id: String,
    pub seed: u64,
    pub metric: String,
    pub cycle: usize,
    pub fraction_remaining: f64,
    pub epochs: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub last: bool,
    pub live: Vec<usize>,
}

/// Rows for `records`, taking accuracies from the fresh-initialisation
/// retrain for `+randominit` labels.
pub fn run_rows(
    run_id: &str,
    seed: u64,
    label: MetricLabel,
    records: &[CycleRecord],
) -> Vec<RunRow> {
    records
        .iter()
        .map(|r| {
            let o = match label {
                MetricLabel::RandomInit(_) => r.reinit.expect("random-init runs record a retrain"),
                _ => r.outcome,
            };
            RunRow {
                run_id: run_id.to_string(),
                seed,
                metric: label.to_string(),
                cycle: r.cycle,
                fraction_remaining: r.fraction_remaining,
                epochs: o.epochs,
                train_acc: o.train_acc,
                val_acc: o.val_acc,
                test_acc: o.test_acc,
                train_loss: o.train_loss,
                val_loss: o.val_loss,
                test_loss: o.test_loss,
                last: r.last,
                live: r.live_per_layer.clone(),
            }
        })
        .collect()
}

/// Serialises a run. `layers` fixes the number of `live_l*` columns so the
/// header is stable even for a run that failed before its first record.
pub fn encode_run_csv(
    rows: &[RunRow],
    layers: usize,
    failure: Option<(&str, u64, &str, &str)>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = RUN_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..layers).map(|i| format!("live_l{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.run_id.clone(),
            r.seed.to_string(),
            r.metric.clone(),
            r.cycle.to_string(),
            r.fraction_remaining.to_string(),
            r.epochs.to_string(),
            r.train_acc.to_string(),
            r.val_acc.to_string(),
            r.test_acc.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.test_loss.to_string(),
            if r.last { "last".into() } else { String::new() },
        ];
        rec.extend(r.live.iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    if let Some((run_id, seed, metric, reason)) = failure {
        let mut rec = vec![run_id.to_string(), seed.to_string(), metric.to_string()];
        rec.extend(std::iter::repeat_n(String::new(), 9));
        rec.push(format!("failed: {reason}"));
        rec.extend(std::iter::repeat_n(String::new(), layers));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, path: &Path) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| Error::format(path, format!("missing column {idx}")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, format!("bad {what} `{s}`")))
}

/// Reads a run file, skipping failure marker rows.
pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < RUN_COLUMNS.len() || header.iter().zip(RUN_COLUMNS).any(|(a, b)| a != b) {
        return Err(Error::format(path, "not a run file (unexpected header)"));
    }
    let layers = header.len() - RUN_COLUMNS.len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let note = field(&rec, 12, path)?;
        if note.starts_with("failed") {
            continue;
        }
        let f = |i: usize, what: &str| -> Result<f64> { parse(field(&rec, i, path)?, what, path) };
        rows.push(RunRow {
            run_id: field(&rec, 0, path)?.to_string(),
            seed: parse(field(&rec, 1, path)?, "seed", path)?,
            metric: field(&rec, 2, path)?.to_string(),
            cycle: parse(field(&rec, 3, path)?, "cycle", path)?,
            fraction_remaining: f(4, "fraction")?,
            epochs: parse(field(&rec, 5, path)?, "epochs", path)?,
            train_acc: f(6, "train_acc")?,
            val_acc: f(7, "val_acc")?,
            test_acc: f(8, "test_acc")?,
            train_loss: f(9, "train_loss")?,
            val_loss: f(10, "val_loss")?,
            test_loss: f(11, "test_loss")?,
            last: note == "last",
            live: (0..layers)
                .map(|i| {
                    parse(
                        field(&rec, RUN_COLUMNS.len() + i, path)?,
                        "live count",
                        path,
                    )
                })
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::Outcome;
    use crate::stats::Metric;

    fn record(cycle: usize, frac: f64, last: bool) -> CycleRecord {
        let o = Outcome {
            epochs: 7,
            train_acc: 0.9,
            val_acc: 0.85,
            test_acc: 0.8,
            train_loss: 0.3,
            val_loss: 0.4,
            test_loss: 0.5,
        };
        CycleRecord {
            cycle,
            fraction_remaining: frac,
            live: 4,
            live_per_layer: vec![2, 2],
            outcome: o,
            reinit: Some(Outcome { test_acc: 0.1, ..o }),
            dropped: vec![],
            last,
        }
    }

    #[test]
    fn round_trip_and_failure_marker() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs/minimum/seed_3.csv");
        let label = MetricLabel::Metric(Metric::Minimum);
        let rows = run_rows(
            "minimum/seed_3",
            3,
            label,
            &[record(0, 1.0, false), record(1, 0.75, true)],
        );
        let bytes =
            encode_run_csv(&rows, 2, Some(("minimum/seed_3", 3, "minimum", "diverged"))).unwrap();
        write_atomic(&path, &bytes).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "run_id,seed,metric,cycle,fraction_remaining,epochs,train_acc,val_acc,test_acc,train_loss,val_loss,test_loss,note,live_l0,live_l1\n"
        ));
        assert!(text.trim_end().ends_with("failed: diverged,,"));
        assert_eq!(read_run_csv(&path).unwrap(), rows);
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn random_init_rows_use_the_retrain() {
        let rows = run_rows(
            "x",
            0,
            MetricLabel::RandomInit(Metric::Minimum),
            &[record(0, 1.0, false)],
        );
        assert_eq!(rows[0].test_acc, 0.1);
        assert_eq!(rows[0].metric, "minimum+randominit");
    }

    #[test]
    fn foreign_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_run_csv(&path), Err(Error::Format { .. })));
    }
}
