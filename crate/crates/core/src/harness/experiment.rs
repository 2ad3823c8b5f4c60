use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::Splits;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::oracle::OracleSelector;
use crate::prune::{run_with, CycleRecord, MetricSelector, PruneConfig};
use crate::stats::Metric;

use super::aggregate::{aggregate_files, encode_aggregate_csv, AggregateRow};
use super::config::{ExperimentConfig, MetricLabel};
use super::runs::{encode_run_csv, run_rows, write_atomic};

pub struct RunResult {
    pub label: MetricLabel,
    pub seed: u64,
    /// Every completed cycle, also when the run failed later on.
    pub records: Vec<CycleRecord>,
    pub error: Option<Error>,
}

pub struct ExperimentOutput {
    /// In `(metric, seed)` order of the configuration.
    pub runs: Vec<RunResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentOutput {
    pub fn records(&self, label: MetricLabel) -> impl Iterator<Item = (u64, &[CycleRecord])> {
        self.runs
            .iter()
            .filter(move |r| r.label == label)
            .map(|r| (r.seed, r.records.as_slice()))
    }
}

pub fn run_id(label: MetricLabel, seed: u64) -> String {
    format!("{label}/seed_{seed}")
}

pub fn run_path(out: &Path, label: MetricLabel, seed: u64) -> PathBuf {
    out.join("runs")
        .join(label.to_string())
        .join(format!("seed_{seed}.csv"))
}

fn run_one(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    splits: &Splits,
    label: MetricLabel,
    seed: u64,
) -> Result<RunResult> {
    let prune = cfg
        .schedule
        .prune_config(label.metric(), seed, label.reinit());
    let mut records = Vec::new();
    let outcome = match label {
        MetricLabel::Oracle => {
            let prune = PruneConfig {
                one_at_a_time: true,
                ..prune
            };
            let mut selector = OracleSelector {
                subset: cfg.oracle_subset,
                choices: Vec::new(),
            };
            run_with(spec, splits, &prune, &mut selector, &mut |r| {
                records.push(r.clone())
            })
        }
        _ => {
            let mut selector = MetricSelector {
                metric: prune.metric,
                budget: prune.budget(),
            };
            run_with(spec, splits, &prune, &mut selector, &mut |r| {
                records.push(r.clone())
            })
        }
    };
    let id = run_id(label, seed);
    let error = outcome.err();
    let reason = error.as_ref().map(ToString::to_string);
    let rows = run_rows(&id, seed, label, &records);
    let metric = label.to_string();
    let failure = reason
        .as_deref()
        .map(|r| (id.as_str(), seed, metric.as_str(), r));
    let bytes = encode_run_csv(&rows, spec.mask_points().len(), failure)?;
    write_atomic(&run_path(&cfg.out, label, seed), &bytes)?;
    match &error {
        Some(e) => log::warn!("{id} failed after {} cycles: {e}", records.len()),
        None => log::info!(
            "{id}: {} cycles, final fraction {:.3}",
            records.len(),
            records.last().map_or(1.0, |r| r.fraction_remaining)
        ),
    }
    Ok(RunResult {
        label,
        seed,
        records,
        error,
    })
}

/// Loads the dataset and runs every `(metric, seed)` pair.
pub fn run_experiment(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let splits = cfg.dataset.load(data_dir)?;
    run_experiment_with(cfg, &splits)
}

/// Runs every `(metric, seed)` pair on `splits`, writing
/// `<out>/config.json`, `<out>/runs/<metric>/seed_<seed>.csv` and
/// `<out>/aggregate.csv`. A failed run keeps its completed rows plus a marker
/// row; the first failure is returned after all runs have finished.
pub fn run_experiment_with(cfg: &ExperimentConfig, splits: &Splits) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let spec = cfg
        .model
        .build(splits.train.sample_shape(), splits.train.classes())?;
    write_atomic(&cfg.out.join("config.json"), cfg.to_json()?.as_bytes())?;
    let jobs: Vec<(MetricLabel, u64)> = cfg
        .metrics
        .iter()
        .flat_map(|&m| cfg.seeds().into_iter().map(move |s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let runs: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(label, seed)| run_one(cfg, &spec, splits, label, seed))
            .collect::<Result<_>>()
    })?;
    // Only this experiment's files: stale runs from another configuration may
    // share the directory.
    let files: Vec<PathBuf> = jobs
        .iter()
        .map(|&(label, seed)| run_path(&cfg.out, label, seed))
        .collect();
    let aggregate = aggregate_files(&files)?;
    write_atomic(
        &cfg.out.join("aggregate.csv"),
        &encode_aggregate_csv(&aggregate)?,
    )?;
    let mut out = ExperimentOutput { runs, aggregate };
    if let Some(i) = out.runs.iter().position(|r| r.error.is_some()) {
        return Err(out.runs[i].error.take().expect("checked"));
    }
    Ok(out)
}

/// One row of the paired p-sweep table: the final cycle of a run with pruning
/// fraction `p` against the cycle of the smallest-p run with the same seed
/// whose live fraction is nearest.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedRow {
    pub p: f64,
    pub seed: u64,
    pub fraction_remaining: f64,
    pub test_acc: f64,
    pub baseline_p: f64,
    pub baseline_fraction: f64,
    pub baseline_test_acc: f64,
}

pub struct SweepOutput {
    pub experiments: Vec<(f64, ExperimentOutput)>,
    pub comparison: Vec<PairedRow>,
}

/// Index of the record whose fraction is nearest to `target` (the smaller
/// fraction wins a tie).
pub fn nearest_fraction(records: &[CycleRecord], target: f64) -> Option<usize> {
    let dist = |r: &CycleRecord| (r.fraction_remaining - target).abs();
    (0..records.len()).min_by(|&a, &b| {
        dist(&records[a]).total_cmp(&dist(&records[b])).then(
            records[a]
                .fraction_remaining
                .total_cmp(&records[b].fraction_remaining),
        )
    })
}

/// Runs the `minimum` metric once per pruning fraction in `<out>/p_<p>/` with
/// shared seeds, then writes `<out>/comparison.csv`.
pub fn sweep_p(cfg: &ExperimentConfig, ps: &[f64], splits: &Splits) -> Result<SweepOutput> {
    if ps.is_empty() {
        return Err(Error::InvalidConfig(
            "the p sweep needs at least one value".into(),
        ));
    }
    let mut experiments = Vec::new();
    for &p in ps {
        let mut sub = cfg.clone();
        sub.schedule.p = p;
        sub.schedule.one_at_a_time = false;
        sub.metrics = vec![MetricLabel::Metric(Metric::Minimum)];
        sub.out = cfg.out.join(format!("p_{p}"));
        experiments.push((p, run_experiment_with(&sub, splits)?));
    }
    let baseline_idx = (0..ps.len())
        .min_by(|&a, &b| ps[a].total_cmp(&ps[b]))
        .expect("non-empty");
    let (baseline_p, baseline) = &experiments[baseline_idx];
    let label = MetricLabel::Metric(Metric::Minimum);
    let mut comparison = Vec::new();
    for (p, exp) in &experiments {
        if p == baseline_p {
            continue;
        }
        for (seed, records) in exp.records(label) {
            let Some(last) = records.last() else { continue };
            let Some((_, base)) = baseline.records(label).find(|(s, _)| *s == seed) else {
                continue;
            };
            let Some(i) = nearest_fraction(base, last.fraction_remaining) else {
                continue;
            };
            comparison.push(PairedRow {
                p: *p,
                seed,
                fraction_remaining: last.fraction_remaining,
                test_acc: last.outcome.test_acc,
                baseline_p: *baseline_p,
                baseline_fraction: base[i].fraction_remaining,
                baseline_test_acc: base[i].outcome.test_acc,
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "p",
        "seed",
        "fraction_remaining",
        "test_acc",
        "baseline_p",
        "baseline_fraction",
        "baseline_test_acc",
    ])?;
    for r in &comparison {
        w.write_record([
            r.p.to_string(),
            r.seed.to_string(),
            r.fraction_remaining.to_string(),
            r.test_acc.to_string(),
            r.baseline_p.to_string(),
            r.baseline_fraction.to_string(),
            r.baseline_test_acc.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&cfg.out.join("comparison.csv"), &bytes)?;
    Ok(SweepOutput {
        experiments,
        comparison,
    })
}
