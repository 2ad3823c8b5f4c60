//! Gnuplot-ready series: one whitespace-delimited file per metric.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::aggregate::AGGREGATE_COLUMNS;
use super::runs::write_atomic;

/// Writes `<out>/<metric>.dat` with lines `fraction test_acc_mean
/// test_acc_ci95`, copying the numbers verbatim from the aggregate file.
/// Returns the written paths in metric order of first appearance.
pub fn plot_data(aggregate: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut r = csv::Reader::from_path(aggregate)?;
    if r.headers()?.iter().ne(AGGREGATE_COLUMNS) {
        return Err(Error::format(
            aggregate,
            "not an aggregate file (unexpected header)",
        ));
    }
    let col = |name: &str| {
        AGGREGATE_COLUMNS
            .iter()
            .position(|c| *c == name)
            .expect("known column")
    };
    let (m, x, y, e) = (
        col("metric"),
        col("fraction_remaining"),
        col("test_acc_mean"),
        col("test_acc_ci95"),
    );
    let mut series: Vec<(String, String)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = format!("{} {} {}\n", &rec[x], &rec[y], &rec[e]);
        match series.iter_mut().find(|(name, _)| name == &rec[m]) {
            Some((_, body)) => body.push_str(&line),
            None => series.push((rec[m].to_string(), line)),
        }
    }
    if series.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} has no rows",
            aggregate.display()
        )));
    }
    let mut written = Vec::new();
    for (metric, body) in series {
        let path = out.join(format!("{metric}.dat"));
        let text = format!("# {metric}: fraction_remaining test_acc_mean test_acc_ci95\n{body}");
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
