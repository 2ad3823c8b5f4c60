//! The iterative pruning loop.
//!
//! Every cycle reverts the network to θ₀, applies the current mask, trains to
//! early stop, records accuracies and drops units. The loop ends once
//! validation accuracy falls to `κ·a` (with `a` the cycle-0 validation
//! accuracy) or nothing more can be dropped; the last mask is then trained once
//! more from θ₀. Setting `min_fraction` replaces the accuracy test with a
//! target live fraction, which yields complete accuracy curves.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Splits;
use crate::error::{Error, Result};
use crate::model::{Evaluation, MaskedModel, ModelSpec};
use crate::rng::Rng;
use crate::stats::{apply_drops, score, select_drops, ActivationStats, DropBudget, Metric};
use crate::train::{train_until_early_stop, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitMode {
    OriginalInit,
    /// Also retrain every cycle's architecture from fresh random parameters.
    /// The mask trajectory still comes from θ₀ reverts.
    RandomInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub metric: Metric,
    pub p: f64,
    pub kappa: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub reinit: ReinitMode,
    /// Stop once the live fraction is at or below this value. When set, the
    /// κ test is not applied.
    pub min_fraction: Option<f64>,
    /// Drop exactly one unit per cycle instead of a fraction `p`.
    pub one_at_a_time: bool,
    /// Upper bound on the number of pruning steps.
    pub max_cycles: Option<usize>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        PruneConfig {
            metric: Metric::Minimum,
            p: 0.2,
            kappa: 0.9,
            max_epochs: t.max_epochs,
            patience: t.patience,
            lr: t.lr,
            batch_size: t.batch_size,
            seed: 0,
            reinit: ReinitMode::OriginalInit,
            min_fraction: None,
            one_at_a_time: false,
            max_cycles: None,
        }
    }
}

impl PruneConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }

    pub fn budget(&self) -> DropBudget {
        if self.one_at_a_time {
            DropBudget::Count(1)
        } else {
            DropBudget::Fraction(self.p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pruning fraction p = {} outside (0, 1]",
                self.p
            )));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "kappa = {} outside (0, 1]",
                self.kappa
            )));
        }
        if let Some(f) = self.min_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!(
                    "min_fraction = {f} outside [0, 1)"
                )));
            }
        }
        self.train().validate()
    }
}

/// Accuracies of one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub epochs: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
}

impl Outcome {
    fn new(epochs: usize, train: Evaluation, val: Evaluation, test: Evaluation) -> Self {
        Outcome {
            epochs,
            train_acc: train.accuracy,
            val_acc: val.accuracy,
            test_acc: test.accuracy,
            train_loss: train.loss,
            val_loss: val.loss,
            test_loss: test.loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub fraction_remaining: f64,
    pub live: usize,
    pub live_per_layer: Vec<usize>,
    /// Trained from θ₀ under this cycle's mask.
    pub outcome: Outcome,
    /// Same mask retrained from a fresh initialisation (RandomInit only).
    pub reinit: Option<Outcome>,
    /// Units masked at the end of this cycle.
    pub dropped: Vec<usize>,
    /// The closing retrain after the loop has stopped.
    pub last: bool,
}

/// State handed to a [`DropSelector`] once a cycle's training has finished.
pub struct CycleState<'a> {
    pub cycle: usize,
    pub model: &'a MaskedModel<f32>,
    pub splits: &'a Splits,
    /// Statistics of the trained model over the training set.
    pub stats: &'a ActivationStats,
}

/// Chooses the units to drop at the end of a cycle.
pub trait DropSelector {
    fn select(&mut self, state: &CycleState<'_>, rng: &mut Rng) -> Result<BTreeSet<usize>>;
}

/// Scores live units with a [`Metric`] and drops according to a budget.
#[derive(Clone, Copy, Debug)]
pub struct MetricSelector {
    pub metric: Metric,
    pub budget: DropBudget,
}

impl DropSelector for MetricSelector {
    fn select(&mut self, state: &CycleState<'_>, rng: &mut Rng) -> Result<BTreeSet<usize>> {
        let report = score(state.stats, self.metric)?;
        select_drops(&report, self.budget, state.model.mask(), rng)
    }
}

pub struct PruneRun {
    pub records: Vec<CycleRecord>,
    /// Trained from θ₀ under the final mask.
    pub model: MaskedModel<f32>,
}

fn train_and_measure(
    model: &mut MaskedModel<f32>,
    splits: &Splits,
    cfg: &TrainConfig,
    rng: &Rng,
    cycle: usize,
    want_stats: bool,
) -> Result<(Outcome, Option<ActivationStats>)> {
    let out = train_until_early_stop(model, splits, cfg, rng, cycle)?;
    let (train, stats) = if want_stats {
        let (e, s) = model.evaluate_with_stats(&splits.train)?;
        (e, Some(s))
    } else {
        (model.evaluate(&splits.train)?, None)
    };
    let val = model.evaluate(&splits.val)?;
    let test = model.evaluate(&splits.test)?;
    Ok((Outcome::new(out.epochs, train, val, test), stats))
}

/// Steps 1 to 3 of a cycle: revert to θ₀ under the model's current mask and
/// train, plus the fresh-initialisation retrain in RandomInit mode.
fn run_cycle(
    model: &mut MaskedModel<f32>,
    splits: &Splits,
    cfg: &PruneConfig,
    root: &Rng,
    cycle: usize,
    want_stats: bool,
) -> Result<(CycleRecord, Option<ActivationStats>)> {
    let train_cfg = cfg.train();
    let mask = model.mask().clone();
    model.revert_to_initial();
    let rng = root.fork(&format!("train/{cycle}"));
    let (outcome, stats) = train_and_measure(model, splits, &train_cfg, &rng, cycle, want_stats)?;
    let reinit = match cfg.reinit {
        ReinitMode::OriginalInit => None,
        ReinitMode::RandomInit => {
            let mut fresh = MaskedModel::<f32>::build(
                model.spec().clone(),
                &root.fork(&format!("reinit/{cycle}")),
            )?;
            fresh.set_mask(mask.clone())?;
            let rng = root.fork(&format!("reinit-train/{cycle}"));
            Some(train_and_measure(&mut fresh, splits, &train_cfg, &rng, cycle, false)?.0)
        }
    };
    let record = CycleRecord {
        cycle,
        fraction_remaining: mask.fraction_remaining(),
        live: mask.live_count(),
        live_per_layer: mask.live_per_point(),
        outcome,
        reinit,
        dropped: Vec::new(),
        last: false,
    };
    Ok((record, stats))
}

/// Runs the pruning loop with an arbitrary selector. `observe` sees every
/// record as soon as it is complete, so callers keep partial progress when a
/// later cycle fails.
pub fn run_with(
    spec: &ModelSpec,
    splits: &Splits,
    cfg: &PruneConfig,
    selector: &mut dyn DropSelector,
    observe: &mut dyn FnMut(&CycleRecord),
) -> Result<PruneRun> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut model = MaskedModel::<f32>::build(spec.clone(), &root.fork("init"))?;
    let mut records = Vec::new();
    let mut baseline = None;
    let mut closing = cfg.max_cycles == Some(0);
    for cycle in 0.. {
        let (mut record, stats) = run_cycle(&mut model, splits, cfg, &root, cycle, !closing)?;
        let drops = if closing {
            BTreeSet::new()
        } else {
            let state = CycleState {
                cycle,
                model: &model,
                splits,
                stats: stats.as_ref().expect("requested"),
            };
            match selector.select(&state, &mut root.fork(&format!("select/{cycle}"))) {
                Err(Error::NoDroppableUnits) => BTreeSet::new(),
                other => other?,
            }
        };
        // With nothing left to drop, this cycle already trained the final mask.
        if drops.is_empty() {
            record.last = true;
            observe(&record);
            records.push(record);
            break;
        }
        let a = *baseline.get_or_insert(record.outcome.val_acc);
        let next = apply_drops(model.mask(), &drops)?;
        closing = match cfg.min_fraction {
            Some(f) => next.fraction_remaining() <= f,
            None => record.outcome.val_acc <= cfg.kappa * a,
        } || cfg.max_cycles.is_some_and(|m| cycle + 1 >= m);
        record.dropped = drops.into_iter().collect();
        observe(&record);
        records.push(record);
        model.set_mask(next)?;
    }
    Ok(PruneRun { records, model })
}

/// DropNet with the configured metric.
pub fn run_dropnet(spec: &ModelSpec, splits: &Splits, cfg: &PruneConfig) -> Result<PruneRun> {
    let mut selector = MetricSelector {
        metric: cfg.metric,
        budget: cfg.budget(),
    };
    run_with(spec, splits, cfg, &mut selector, &mut |_| {})
}

/// A single pruning step of fraction `cfg.p` followed by the closing retrain.
pub fn one_shot(spec: &ModelSpec, splits: &Splits, cfg: &PruneConfig) -> Result<PruneRun> {
    let cfg = PruneConfig {
        max_cycles: Some(1),
        one_at_a_time: false,
        ..cfg.clone()
    };
    run_dropnet(spec, splits, &cfg)
}
