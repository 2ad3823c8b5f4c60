use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dropnet::data::{synthetic_blobs, BlobConfig};
use dropnet::harness::aggregate::{encode_aggregate_csv, read_aggregate_csv};
use dropnet::harness::{
    aggregate_files, collect_run_files, plot_data, run_experiment, run_experiment_with, sweep_p,
    Arch, ExperimentConfig, MetricLabel, ModelConfig,
};
use dropnet::{Error, Metric, Rng};

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn synthetic_ci(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("synthetic-ci").unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn same_seed_gives_byte_identical_trees() {
    let dir = tempfile::tempdir().unwrap();
    let a = synthetic_ci(&dir.path().join("a"));
    let b = ExperimentConfig {
        out: dir.path().join("b"),
        ..a.clone()
    };
    run_experiment(&a, None).unwrap();
    run_experiment(&b, None).unwrap();
    let (ta, tb) = (tree(&a.out), tree(&b.out));
    // config.json records the output directory, which differs by design.
    let strip = |t: BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
        t.into_iter()
            .filter(|(p, _)| p != Path::new("config.json"))
            .collect()
    };
    assert_eq!(strip(ta), strip(tb));
}

#[test]
fn one_file_per_metric_and_seed_with_shrinking_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_ci(dir.path());
    let out = run_experiment(&cfg, None).unwrap();
    let files = collect_run_files(&dir.path().join("runs")).unwrap();
    assert_eq!(files.len(), 6 * cfg.runs);
    assert_eq!(out.runs.len(), 6 * cfg.runs);
    for f in &files {
        let text = fs::read_to_string(f).unwrap();
        let fractions: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
            .collect();
        let notes: Vec<&str> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(12).unwrap())
            .collect();
        assert!(fractions.len() >= 2, "{}", f.display());
        assert!(
            fractions.windows(2).all(|w| w[1] < w[0]),
            "{}: {fractions:?}",
            f.display()
        );
        assert_eq!(notes.last(), Some(&"last"));
        assert!(fractions[fractions.len() - 1] <= 0.3 + 1e-12);
    }
    let saved = ExperimentConfig::from_file(&dir.path().join("config.json")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn aggregate_ignores_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_ci(dir.path());
    cfg.runs = 3;
    cfg.metrics = vec![
        MetricLabel::Metric(Metric::Minimum),
        MetricLabel::Metric(Metric::Random),
    ];
    run_experiment(&cfg, None).unwrap();
    let files = collect_run_files(&dir.path().join("runs")).unwrap();
    let reference = encode_aggregate_csv(&aggregate_files(&files).unwrap()).unwrap();
    let mut rng = Rng::new(4);
    for _ in 0..5 {
        let mut shuffled = files.clone();
        rng.shuffle(&mut shuffled);
        assert_eq!(
            encode_aggregate_csv(&aggregate_files(&shuffled).unwrap()).unwrap(),
            reference
        );
    }
}

#[test]
fn hand_computed_mean_and_interval() {
    let dir = tempfile::tempdir().unwrap();
    let header = "run_id,seed,metric,cycle,fraction_remaining,epochs,train_acc,val_acc,test_acc,train_loss,val_loss,test_loss,note,live_l0";
    for (i, acc) in ["0.9", "0.85", "0.8"].iter().enumerate() {
        let body = format!("{header}\nm/seed_{i},{i},m,0,1,3,{acc},{acc},{acc},0,0,0,,4\n");
        fs::write(dir.path().join(format!("seed_{i}.csv")), body).unwrap();
    }
    let rows = aggregate_files(&collect_run_files(dir.path()).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r.n, 3);
    // mean 0.85, s = 0.05, 1.96·0.05/√3
    assert!((r.test_acc_mean - 0.85).abs() < 1e-12);
    assert!((r.test_acc_ci95 - 0.056_580_326_380_583_3).abs() < 1e-12);
    assert_eq!(r.test_acc_ci95, r.val_acc_ci95);
}

#[test]
fn plot_series_match_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_ci(dir.path());
    run_experiment(&cfg, None).unwrap();
    let agg_path = dir.path().join("aggregate.csv");
    let agg = read_aggregate_csv(&agg_path).unwrap();
    let files = plot_data(&agg_path, &dir.path().join("plot")).unwrap();
    assert_eq!(files.len(), 6);
    let raw = fs::read_to_string(&agg_path).unwrap();
    for f in files {
        let metric = f.file_stem().unwrap().to_str().unwrap().to_string();
        let text = fs::read_to_string(&f).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        let expected: Vec<String> = raw
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|c| c[0] == metric)
            .map(|c| format!("{} {} {}", c[2], c[8], c[9]))
            .collect();
        assert_eq!(lines, expected);
        let xs: Vec<f64> = agg
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| r.fraction_remaining)
            .collect();
        assert!(xs.windows(2).all(|w| w[1] < w[0]), "{metric}: {xs:?}");
    }
}

#[test]
fn sweep_writes_one_experiment_per_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let splits = synthetic_blobs(&BlobConfig {
        classes: 3,
        dims: 16,
        per_class: 100,
        noise: 0.5,
        seed: 2,
        image: false,
    })
    .unwrap();
    let mut cfg = synthetic_ci(dir.path());
    cfg.model = ModelConfig {
        arch: Arch::Mlp,
        widths: vec![20, 20],
    };
    cfg.schedule.min_fraction = Some(0.1);
    cfg.schedule.max_epochs = 10;
    let out = sweep_p(&cfg, &[0.2, 0.9], &splits).unwrap();
    for p in ["p_0.2", "p_0.9"] {
        assert!(dir.path().join(p).join("aggregate.csv").is_file(), "{p}");
        assert_eq!(
            collect_run_files(&dir.path().join(p).join("runs"))
                .unwrap()
                .len(),
            cfg.runs
        );
    }
    assert!(dir.path().join("comparison.csv").is_file());
    assert_eq!(out.comparison.len(), cfg.runs);
    // 40 units: ⌊0.9·40⌋ = 36 dropped at once, so one step reaches 10%.
    let (_, one_shot) = &out.experiments[1];
    for (_, records) in one_shot.records(MetricLabel::Metric(Metric::Minimum)) {
        assert_eq!(records.len(), 2);
        assert!(records[1].fraction_remaining <= 0.1 + 1e-12);
    }
}

#[test]
fn divergence_keeps_partial_rows_and_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let splits = synthetic_blobs(&BlobConfig {
        classes: 3,
        dims: 16,
        per_class: 60,
        noise: 0.5,
        seed: 1,
        image: false,
    })
    .unwrap();
    let mut cfg = synthetic_ci(dir.path());
    cfg.runs = 1;
    cfg.metrics = vec![MetricLabel::Metric(Metric::Minimum)];
    cfg.schedule.lr = 1e30;
    let err = run_experiment_with(&cfg, &splits)
        .err()
        .expect("training should diverge");
    assert!(
        matches!(err, Error::Divergence { .. } | Error::NonFinite(_)),
        "{err}"
    );
    assert_eq!(err.exit_code(), 4);
    let text = fs::read_to_string(dir.path().join("runs/minimum/seed_0.csv")).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("minimum/seed_0,0,minimum,"), "{last}");
    assert!(last.contains("\"failed: training diverged"), "{last}");
}
