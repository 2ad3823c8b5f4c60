//! Greedy oracle: drop the single live unit whose removal hurts training loss
//! the least, measured on the already-trained network without retraining.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::model::{MaskedModel, ModelSpec};
use crate::prune::{run_with, CycleState, DropSelector, PruneConfig, PruneRun};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleChoice {
    pub unit: usize,
    pub loss: f64,
    /// `(unit, training loss with that unit masked)` for every candidate, in
    /// unit order.
    pub candidates: Vec<(usize, f64)>,
}

/// Live units that are not the last live unit of their layer.
pub fn oracle_candidates(model: &MaskedModel<f32>) -> Vec<usize> {
    let mask = model.mask();
    let live = mask.live_per_point();
    (0..mask.len())
        .filter(|&u| mask.is_live(u) && live[mask.locate(u).0] > 1)
        .collect()
}

/// Evaluates every candidate on `data` and returns the argmin. Exact ties are
/// broken uniformly at random with `rng`.
pub fn oracle_select(
    model: &MaskedModel<f32>,
    data: &Dataset,
    rng: &mut Rng,
) -> Result<OracleChoice> {
    let candidates = oracle_candidates(model);
    if candidates.is_empty() {
        return Err(Error::NoDroppableUnits);
    }
    let losses: Vec<(usize, f64)> = candidates
        .par_iter()
        .map(|&u| {
            let mask = model.mask().without(u)?;
            Ok((u, model.evaluate_with(data, &mask)?.loss))
        })
        .collect::<Result<_>>()?;
    let best = losses.iter().map(|&(_, l)| l).fold(f64::INFINITY, f64::min);
    let ties: Vec<&(usize, f64)> = losses.iter().filter(|&&(_, l)| l == best).collect();
    let &(unit, loss) = ties[rng.below(ties.len())];
    Ok(OracleChoice {
        unit,
        loss,
        candidates: losses,
    })
}

/// [`DropSelector`] wrapper around [`oracle_select`]. With `subset` set, each
/// cycle draws one fixed random subset of the training set of that size and
/// evaluates every candidate on it.
#[derive(Clone, Debug, Default)]
pub struct OracleSelector {
    pub subset: Option<usize>,
    pub choices: Vec<OracleChoice>,
}

impl DropSelector for OracleSelector {
    fn select(&mut self, state: &CycleState<'_>, rng: &mut Rng) -> Result<BTreeSet<usize>> {
        let train = &state.splits.train;
        let choice = match self.subset {
            Some(k) if k < train.len() => {
                let mut order = rng.fork("subset").permutation(train.len());
                order.truncate(k);
                order.sort_unstable();
                oracle_select(state.model, &train.subset(&order), rng)?
            }
            _ => oracle_select(state.model, train, rng)?,
        };
        let unit = choice.unit;
        self.choices.push(choice);
        Ok(BTreeSet::from([unit]))
    }
}

/// The pruning loop with the oracle as selector: one unit per cycle.
pub fn run_oracle(
    spec: &ModelSpec,
    splits: &Splits,
    cfg: &PruneConfig,
    subset: Option<usize>,
) -> Result<(PruneRun, Vec<OracleChoice>)> {
    let cfg = PruneConfig {
        one_at_a_time: true,
        ..cfg.clone()
    };
    let mut selector = OracleSelector {
        subset,
        choices: Vec::new(),
    };
    let run = run_with(spec, splits, &cfg, &mut selector, &mut |_| {})?;
    Ok((run, selector.choices))
}
