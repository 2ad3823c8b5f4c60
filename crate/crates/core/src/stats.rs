//! Activation statistics, importance scores and drop selection.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Mask;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Accumulated post-activation values of one prunable unit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitStats {
    /// Mask point index.
    pub layer: usize,
    /// Index within the layer.
    pub unit: usize,
    /// Σ |V(a|x)| over samples and spatial positions.
    pub sum_abs: f64,
    pub zero_count: u64,
    /// Samples seen (`t`).
    pub samples: u64,
    /// Spatial positions per sample (`r`).
    pub constituents: u64,
    /// Whether the unit was live when the statistics were collected.
    pub live: bool,
}

impl UnitStats {
    /// `E(a)` for nodes, `E(f)` for filters: mean absolute value over `t·r`.
    pub fn expected_abs(&self) -> f64 {
        self.sum_abs / (self.samples * self.constituents) as f64
    }

    /// Fraction of zero post-activations (APoZ).
    pub fn zero_fraction(&self) -> f64 {
        self.zero_count as f64 / (self.samples * self.constituents) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    units: Vec<UnitStats>,
    offsets: Vec<usize>,
}

impl ActivationStats {
    /// Empty accumulators laid out like `mask`.
    pub fn new(mask: &Mask) -> Self {
        let mut units = Vec::with_capacity(mask.len());
        let mut offsets = Vec::with_capacity(mask.points().len());
        for (layer, p) in mask.points().iter().enumerate() {
            offsets.push(p.offset);
            units.extend((0..p.units).map(|unit| UnitStats {
                layer,
                unit,
                sum_abs: 0.0,
                zero_count: 0,
                samples: 0,
                constituents: p.constituents as u64,
                live: mask.is_live(p.offset + unit),
            }));
        }
        ActivationStats { units, offsets }
    }

    pub fn units(&self) -> &[UnitStats] {
        &self.units
    }

    /// Adds a `[B × units × ...]` batch of post-activation values for one
    /// mask point.
    pub(crate) fn accumulate<T: Real>(&mut self, point: usize, values: &Tensor<T>) {
        let shape = values.shape();
        let (batch, n) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let units = &mut self.units[self.offsets[point]..self.offsets[point] + n];
        for sample in values.data().chunks_exact(n * inner) {
            for (u, plane) in units.iter_mut().zip(sample.chunks_exact(inner)) {
                let mut s = 0.0f64;
                let mut zeros = 0u64;
                for &v in plane {
                    s += v.abs().as_f64();
                    zeros += u64::from(v == T::zero());
                }
                u.sum_abs += s;
                u.zero_count += zeros;
            }
        }
        for u in units {
            u.samples += batch as u64;
        }
    }

    /// Adds another shard's accumulators.
    pub fn merge(&mut self, other: &ActivationStats) -> Result<()> {
        if self.offsets != other.offsets || self.units.len() != other.units.len() {
            return Err(Error::shape("merge stats", "different unit layouts"));
        }
        for (a, b) in self.units.iter_mut().zip(&other.units) {
            a.sum_abs += b.sum_abs;
            a.zero_count += b.zero_count;
            a.samples += b.samples;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Minimum,
    Maximum,
    Random,
    MinimumLayer,
    MaximumLayer,
    RandomLayer,
    Apoz,
    ApozLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Global,
    LayerWise,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Minimum,
        Metric::Maximum,
        Metric::Random,
        Metric::MinimumLayer,
        Metric::MaximumLayer,
        Metric::RandomLayer,
        Metric::Apoz,
        Metric::ApozLayer,
    ];

    /// The six activation-magnitude metrics compared in the experiments.
    pub const STANDARD: [Metric; 6] = [
        Metric::Minimum,
        Metric::Maximum,
        Metric::Random,
        Metric::MinimumLayer,
        Metric::MaximumLayer,
        Metric::RandomLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Minimum => "minimum",
            Metric::Maximum => "maximum",
            Metric::Random => "random",
            Metric::MinimumLayer => "minimum_layer",
            Metric::MaximumLayer => "maximum_layer",
            Metric::RandomLayer => "random_layer",
            Metric::Apoz => "apoz",
            Metric::ApozLayer => "apoz_layer",
        }
    }

    pub fn scope(self) -> Scope {
        match self {
            Metric::Minimum | Metric::Maximum | Metric::Random | Metric::Apoz => Scope::Global,
            _ => Scope::LayerWise,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Importance {
    /// Global unit id (mask index).
    pub unit: usize,
    pub layer: usize,
    pub index: usize,
    pub score: f64,
}

/// Importance score of every live unit; lower scores are dropped first.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub metric: Metric,
    pub scope: Scope,
    pub entries: Vec<Importance>,
}

pub fn score(stats: &ActivationStats, metric: Metric) -> Result<ImportanceReport> {
    let mut entries = Vec::new();
    for (unit, u) in stats.units.iter().enumerate() {
        if !u.live {
            continue;
        }
        if u.samples == 0 {
            return Err(Error::EmptyDataset);
        }
        let score = match metric {
            Metric::Minimum | Metric::MinimumLayer => u.expected_abs(),
            Metric::Maximum | Metric::MaximumLayer => -u.expected_abs(),
            Metric::Random | Metric::RandomLayer => 0.0,
            Metric::Apoz | Metric::ApozLayer => -u.zero_fraction(),
        };
        if !score.is_finite() {
            return Err(Error::NonFinite("importance score"));
        }
        entries.push(Importance {
            unit,
            layer: u.layer,
            index: u.unit,
            score,
        });
    }
    Ok(ImportanceReport {
        metric,
        scope: metric.scope(),
        entries,
    })
}

/// How many units a pruning step removes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropBudget {
    /// `max(1, ⌊p·live⌋)` per scope.
    Fraction(f64),
    /// A fixed number of units, chosen globally regardless of the metric's
    /// scope.
    Count(usize),
}

impl DropBudget {
    pub fn validate(self) -> Result<Self> {
        match self {
            DropBudget::Fraction(p) if p > 0.0 && p <= 1.0 => Ok(self),
            DropBudget::Fraction(p) => Err(Error::InvalidConfig(format!(
                "pruning fraction {p} outside (0, 1]"
            ))),
            DropBudget::Count(0) => {
                Err(Error::InvalidConfig("drop count must be at least 1".into()))
            }
            DropBudget::Count(_) => Ok(self),
        }
    }
}

/// `max(1, ⌊p·live⌋)`; the epsilon absorbs products such as 0.57·100.
pub fn drop_quota(p: f64, live: usize) -> usize {
    ((p * live as f64 + 1e-9).floor() as usize).max(1)
}

/// Picks the units to drop: the lowest scores first, ties in random order,
/// never the last live unit of a layer.
pub fn select_drops(
    report: &ImportanceReport,
    budget: DropBudget,
    mask: &Mask,
    rng: &mut Rng,
) -> Result<BTreeSet<usize>> {
    budget.validate()?;
    if let Some(e) = report
        .entries
        .iter()
        .find(|e| e.unit >= mask.len() || !mask.is_live(e.unit))
    {
        return Err(Error::AlreadyDropped(e.unit));
    }
    let mut remaining = mask.live_per_point();
    let mut chosen = BTreeSet::new();
    let layer_wise = report.scope == Scope::LayerWise && matches!(budget, DropBudget::Fraction(_));
    if layer_wise {
        for (layer, live) in remaining.clone().into_iter().enumerate() {
            let DropBudget::Fraction(p) = budget else {
                unreachable!()
            };
            if live < 2 {
                continue;
            }
            let quota = drop_quota(p, live).min(live - 1);
            let ranked = rank(report.entries.iter().filter(|e| e.layer == layer), rng);
            chosen.extend(ranked.into_iter().take(quota).map(|e| e.unit));
        }
    } else {
        let quota = match budget {
            DropBudget::Fraction(p) => drop_quota(p, mask.live_count()),
            DropBudget::Count(k) => k,
        };
        for e in rank(report.entries.iter(), rng) {
            if chosen.len() == quota {
                break;
            }
            if remaining[e.layer] > 1 {
                remaining[e.layer] -= 1;
                chosen.insert(e.unit);
            }
        }
    }
    if chosen.is_empty() {
        return Err(Error::NoDroppableUnits);
    }
    Ok(chosen)
}

/// Random permutation followed by a stable sort on score, so equal scores
/// end up in random relative order.
fn rank<'a>(entries: impl Iterator<Item = &'a Importance>, rng: &mut Rng) -> Vec<&'a Importance> {
    let mut v: Vec<&Importance> = entries.collect();
    rng.shuffle(&mut v);
    v.sort_by(|a, b| a.score.total_cmp(&b.score));
    v
}

/// Masks every unit in `drops`. Fails without modifying anything if one of
/// them is already dead.
pub fn apply_drops(mask: &Mask, drops: &BTreeSet<usize>) -> Result<Mask> {
    let mut next = mask.clone();
    for &unit in drops {
        next.drop_unit(unit)?;
    }
    Ok(next)
}

/// Writes `cycle,layer_id,unit_id,metric,score,dropped` rows (with header when
/// `header` is set).
pub fn write_importance_csv<W: Write>(
    out: W,
    header: bool,
    cycle: usize,
    report: &ImportanceReport,
    drops: &BTreeSet<usize>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    if header {
        w.write_record(["cycle", "layer_id", "unit_id", "metric", "score", "dropped"])?;
    }
    for e in &report.entries {
        w.write_record([
            cycle.to_string(),
            e.layer.to_string(),
            e.index.to_string(),
            report.metric.to_string(),
            e.score.to_string(),
            u8::from(drops.contains(&e.unit)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
