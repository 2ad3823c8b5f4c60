use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dropnet::data::{load_cifar10, load_mnist, verify_checksums, DATA_DIR_ENV};
use dropnet::harness::aggregate::encode_aggregate_csv;
use dropnet::harness::runs::write_atomic;
use dropnet::harness::{
    aggregate_files, collect_run_files, plot_data, run_experiment, sweep_p, ExperimentConfig,
    MetricLabel,
};
use dropnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dropnet",
    version,
    about = "Iterative node and filter pruning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured metric for every seed.
    Run(ExperimentArgs),
    /// Greedy oracle, one unit per cycle (plus any --metric for comparison).
    Oracle(ExperimentArgs),
    /// The minimum metric at several pruning fractions with shared seeds.
    SweepP {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Pruning fractions to compare.
        #[arg(
            long = "ps",
            value_delimiter = ',',
            default_value = "0.2,0.3,0.4,0.5,0.9"
        )]
        ps: Vec<f64>,
    },
    /// Mean and 95% confidence interval per metric and cycle.
    Aggregate {
        /// Run CSV files or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "aggregate.csv")]
        out: PathBuf,
    },
    /// Per-metric `fraction mean ci95` series from an aggregate file.
    PlotData {
        aggregate: PathBuf,
        #[arg(long, default_value = "plot")]
        out: PathBuf,
    },
    /// Check dataset files against a SHA256SUMS manifest and parse them.
    VerifyData {
        #[arg(long, value_enum, default_value = "mnist")]
        dataset: DatasetArg,
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: PathBuf,
        /// Defaults to `<data-dir>/SHA256SUMS` when that file exists.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    Cifar10,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: synthetic-ci, mnist-small, mnist-cnn-small,
    /// mnist-paper, mnist-cnn-paper, cifar10-paper.
    #[arg(long)]
    preset: Option<String>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Replaces the metric list (repeat or separate with commas).
    #[arg(long, value_delimiter = ',')]
    metric: Vec<MetricLabel>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Prune down to this live fraction instead of applying the kappa test.
    #[arg(long)]
    min_fraction: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => return Err(Error::InvalidConfig("pass --config or --preset".into())),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if !self.metric.is_empty() {
            cfg.metrics = self.metric.clone();
        }
        if let Some(p) = self.p {
            cfg.schedule.p = p;
        }
        if let Some(k) = self.kappa {
            cfg.schedule.kappa = k;
        }
        if let Some(f) = self.min_fraction {
            cfg.schedule.min_fraction = Some(f);
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if self.kappa.is_some() && cfg.schedule.min_fraction.is_some() {
            log::warn!("--kappa has no effect while a target fraction is set");
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn aggregate(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            files.extend(collect_run_files(input)?);
        } else {
            files.push(input.clone());
        }
    }
    let rows = aggregate_files(&files)?;
    write_atomic(out, &encode_aggregate_csv(&rows)?)?;
    println!(
        "{} rows from {} run files -> {}",
        rows.len(),
        files.len(),
        out.display()
    );
    Ok(())
}

fn verify(dataset: DatasetArg, dir: &Path, manifest: Option<&Path>) -> Result<()> {
    let default = dir.join("SHA256SUMS");
    let manifest = manifest
        .map(Path::to_path_buf)
        .or_else(|| default.is_file().then_some(default));
    if let Some(m) = &manifest {
        let bad = verify_checksums(dir, m)?;
        if let Some(first) = bad.first() {
            return Err(Error::Format {
                path: dir.join(first),
                detail: format!("checksum mismatch or missing ({} files)", bad.len()),
            });
        }
        println!("checksums ok ({})", m.display());
    }
    let splits = match dataset {
        DatasetArg::Mnist => load_mnist(dir)?,
        DatasetArg::Cifar10 => load_cifar10(dir)?,
    };
    println!(
        "train {} / val {} / test {} samples of shape {:?}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        splits.train.sample_shape()
    );
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let out = run_experiment(&cfg, args.data_dir.as_deref())?;
            println!("{} runs -> {}", out.runs.len(), cfg.out.display());
        }
        Command::Oracle(args) => {
            let mut cfg = args.resolve()?;
            cfg.schedule.one_at_a_time = true;
            cfg.metrics.retain(|m| *m != MetricLabel::Oracle);
            if args.metric.is_empty() {
                cfg.metrics.clear();
            }
            cfg.metrics.insert(0, MetricLabel::Oracle);
            let out = run_experiment(&cfg, args.data_dir.as_deref())?;
            println!("{} runs -> {}", out.runs.len(), cfg.out.display());
        }
        Command::SweepP { exp, ps } => {
            let cfg = exp.resolve()?;
            let splits = cfg.dataset.load(exp.data_dir.as_deref())?;
            let out = sweep_p(&cfg, &ps, &splits)?;
            for r in &out.comparison {
                println!(
                    "p={} seed={} fraction={:.3} test_acc={:.4} | p={} fraction={:.3} test_acc={:.4}",
                    r.p, r.seed, r.fraction_remaining, r.test_acc, r.baseline_p, r.baseline_fraction, r.baseline_test_acc
                );
            }
        }
        Command::Aggregate { inputs, out } => aggregate(&inputs, &out)?,
        Command::PlotData { aggregate, out } => {
            for path in plot_data(&aggregate, &out)? {
                println!("{}", path.display());
            }
        }
        Command::VerifyData {
            dataset,
            data_dir,
            manifest,
        } => verify(dataset, &data_dir, manifest.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
