//! Checks shared by the integration tests and the acceptance runner. Every
//! check computes its expectation independently of the library code paths it
//! verifies (finite differences, hand-written forward passes, exact integer
//! budgets, a χ² test).
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use dropnet::data::{synthetic_blobs, BlobConfig};
use dropnet::model::{Mask, MaskedModel, ModelSpec};
use dropnet::oracle::oracle_select;
use dropnet::prune::{run_with, CycleState, DropSelector, PruneConfig};
use dropnet::stats::{
    apply_drops, select_drops, DropBudget, Importance, ImportanceReport, Metric, Scope,
};
use dropnet::{Dataset, Error, Rng, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn from(r: Result<String, String>) -> Check {
        match r {
            Ok(detail) => Check { pass: true, detail },
            Err(detail) => Check {
                pass: false,
                detail,
            },
        }
    }
}

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// Mean softmax cross-entropy, log-sum-exp in f64.
pub fn xent(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn uniform_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform())
}

// ---- gradients -------------------------------------------------------------

/// Largest relative error between analytic and central-difference gradients
/// over every parameter element.
pub fn max_gradient_error(
    spec: ModelSpec,
    batch: usize,
    seed: u64,
) -> Result<(f64, usize), String> {
    let mut rng = Rng::new(seed);
    let mut model =
        MaskedModel::<f64>::build(spec.clone(), &rng.fork("init")).map_err(|e| e.to_string())?;
    // Non-zero biases so every bias gradient is exercised away from the
    // symmetric starting point.
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    for name in names.iter().filter(|n| n.ends_with("bias")) {
        for v in model.params_mut().get_mut(name).unwrap().data_mut() {
            *v = rng.uniform_in(-0.1, 0.1);
        }
    }
    let mut shape = vec![batch];
    shape.extend(&spec.input);
    let images = uniform_tensor(&shape, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(spec.classes)).collect();
    let (_, grads) = model
        .loss_and_grads(images.clone(), &labels)
        .map_err(|e| e.to_string())?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut count = 0;
    for name in &names {
        let len = model.params().get(name).unwrap().len();
        for i in 0..len {
            let original = model.params().get(name).unwrap().data()[i];
            let mut loss_at = |v: f64| {
                model.params_mut().get_mut(name).unwrap().data_mut()[i] = v;
                let logits = model.forward(&images).unwrap();
                xent(logits.data(), spec.classes, &labels)
            };
            let numeric = (loss_at(original + h) - loss_at(original - h)) / (2.0 * h);
            model.params_mut().get_mut(name).unwrap().data_mut()[i] = original;
            let analytic = grads
                .get(name)
                .ok_or(format!("no gradient for {name}"))?
                .data()[i];
            let scale = analytic.abs().max(numeric.abs());
            // Both effectively zero: the difference is pure rounding noise.
            let err = if scale < 1e-9 {
                0.0
            } else {
                (analytic - numeric).abs() / scale
            };
            worst = worst.max(err);
            count += 1;
        }
    }
    Ok((worst, count))
}

pub fn gradient_check() -> Check {
    Check::from((|| {
        let a = ModelSpec::model_a(&[10], [8, 8], 4).map_err(|e| e.to_string())?;
        let b = ModelSpec::model_b(&[1, 8, 8], [4, 4], 4).map_err(|e| e.to_string())?;
        let (ea, na) = max_gradient_error(a, 6, 3)?;
        let (eb, nb) = max_gradient_error(b, 3, 4)?;
        let detail =
            format!("dense max rel err {ea:.2e} over {na} params, conv {eb:.2e} over {nb}");
        if ea < 1e-4 && eb < 1e-4 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })())
}

// ---- masks ----------------------------------------------------------------

/// `(weight, bias)` elements feeding unit `unit` of the masked layer `layer`.
fn incoming(
    spec: &ModelSpec,
    layer: usize,
    unit: usize,
    weight_shape: &[usize],
) -> Vec<(String, usize)> {
    let mut v = Vec::new();
    let w = format!("{layer}.weight");
    if matches!(
        spec.layers[layer].kind,
        dropnet::model::LayerKind::Conv { .. }
    ) {
        // [filters, channels, 3, 3]
        let per = weight_shape[1] * 9;
        v.extend((unit * per..(unit + 1) * per).map(|i| (w.clone(), i)));
    } else {
        // [in, out]
        let (fin, fout) = (weight_shape[0], weight_shape[1]);
        v.extend((0..fin).map(|r| (w.clone(), r * fout + unit)));
    }
    v.push((format!("{layer}.bias"), unit));
    v
}

fn mask_invariants_for(
    spec: ModelSpec,
    dead: &[usize],
    samples: usize,
    seed: u64,
) -> Result<String, String> {
    let err = |e: Error| e.to_string();
    let mut rng = Rng::new(seed);
    let mut model = MaskedModel::<f32>::build(spec.clone(), &rng.fork("init")).map_err(err)?;
    let mut bits = vec![true; spec.unit_count()];
    for &u in dead {
        bits[u] = false;
    }
    let mask = Mask::from_bits(&spec, &bits).map_err(err)?;
    model.set_mask(mask.clone()).map_err(err)?;
    let mut shape = vec![samples];
    shape.extend(&spec.input);
    let images: Tensor<f32> = uniform_tensor(&shape, &mut rng).cast();
    let labels: Vec<usize> = (0..samples).map(|_| rng.below(spec.classes)).collect();

    // Masked outputs are exactly zero.
    let mut tape = dropnet::tape::Tape::new();
    let rec = model
        .record(&mut tape, images.clone(), &mask)
        .map_err(err)?;
    for &u in dead {
        let (point, idx) = mask.locate(u);
        let act = tape.value(rec.activations[point]);
        let per_sample = act.len() / samples;
        let units = mask.points()[point].units;
        let r = per_sample / units;
        for s in 0..samples {
            let start = s * per_sample + idx * r;
            if act.data()[start..start + r].iter().any(|&v| v != 0.0) {
                return Err(format!("unit {u} has a non-zero output for sample {s}"));
            }
        }
    }

    // Incoming weights of dead units get exactly zero gradient.
    let (_, grads) = model.loss_and_grads(images.clone(), &labels).map_err(err)?;
    let mut touched = Vec::new();
    for &u in dead {
        let (point, idx) = mask.locate(u);
        let layer = mask.points()[point].layer;
        let wshape = model
            .params()
            .get(&format!("{layer}.weight"))
            .unwrap()
            .shape()
            .to_vec();
        for (name, i) in incoming(&spec, layer, idx, &wshape) {
            if grads.get(&name).unwrap().data()[i] != 0.0 {
                return Err(format!(
                    "gradient of {name}[{i}] feeding dead unit {u} is not zero"
                ));
            }
            touched.push((name, i));
        }
    }

    // Perturbing those weights changes no output bit.
    let before = model.forward(&images).map_err(err)?;
    for (name, i) in &touched {
        model.params_mut().get_mut(name).unwrap().data_mut()[*i] +=
            rng.uniform_in(-5.0, 5.0) as f32;
    }
    let after = model.forward(&images).map_err(err)?;
    if before
        .data()
        .iter()
        .zip(after.data())
        .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err("perturbing dead units' incoming weights changed the logits".into());
    }
    Ok(format!(
        "{} dead units, {} weights perturbed",
        dead.len(),
        touched.len()
    ))
}

pub fn mask_invariants() -> Check {
    Check::from((|| {
        let a = ModelSpec::model_a(&[10], [8, 8], 4).map_err(|e| e.to_string())?;
        let b = ModelSpec::model_b(&[1, 8, 8], [4, 4], 4).map_err(|e| e.to_string())?;
        let da = mask_invariants_for(a, &[0, 3, 7, 9, 10, 14], 1000, 21)?;
        let db = mask_invariants_for(b, &[1, 4, 6], 1000, 22)?;
        Ok(format!("1000 inputs each; dense: {da}; conv: {db}"))
    })())
}

// ---- selection ------------------------------------------------------------

/// A random layered mask with scores: `(widths, live flags, scores)`. Every
/// layer keeps at least one live unit.
pub fn layered_case() -> impl Strategy<Value = (Vec<usize>, Vec<bool>, Vec<f64>)> {
    prop::collection::vec(1usize..7, 1..4).prop_flat_map(|widths| {
        let n: usize = widths.iter().sum();
        (
            Just(widths),
            prop::collection::vec(prop::bool::weighted(0.8), n),
            prop::collection::vec(-4i32..5, n),
        )
            .prop_map(|(widths, mut live, raw)| {
                let mut offset = 0;
                for &w in &widths {
                    if !live[offset..offset + w].iter().any(|&b| b) {
                        live[offset] = true;
                    }
                    offset += w;
                }
                // Coarse integer scores so ties are common.
                let scores = raw.into_iter().map(f64::from).collect();
                (widths, live, scores)
            })
    })
}

pub fn build_case(
    widths: &[usize],
    live: &[bool],
    scores: &[f64],
    metric: Metric,
) -> (Mask, ImportanceReport) {
    let spec = ModelSpec::mlp("sel", &[3], widths, 2).unwrap();
    let mask = Mask::from_bits(&spec, live).unwrap();
    let mut entries = Vec::new();
    for u in (0..live.len()).filter(|&u| live[u]) {
        let (layer, index) = mask.locate(u);
        entries.push(Importance {
            unit: u,
            layer,
            index,
            score: scores[u],
        });
    }
    (
        mask,
        ImportanceReport {
            metric,
            scope: metric.scope(),
            entries,
        },
    )
}

fn layer_of(widths: &[usize], u: usize) -> usize {
    let mut acc = 0;
    for (l, &w) in widths.iter().enumerate() {
        acc += w;
        if u < acc {
            return l;
        }
    }
    unreachable!()
}

fn live_in(widths: &[usize], live: &[bool], layer: usize) -> usize {
    (0..live.len())
        .filter(|&u| live[u] && layer_of(widths, u) == layer)
        .count()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

/// Global scope: the right number of drops, and no skipped unit that was
/// still droppable scores below a chosen one.
pub fn prop_global_argmin(
    widths: &[usize],
    live: &[bool],
    scores: &[f64],
    percent: u32,
    seed: u64,
) -> Result<(), TestCaseError> {
    let (mask, report) = build_case(widths, live, scores, Metric::Minimum);
    let p = f64::from(percent) / 100.0;
    let live_total = live.iter().filter(|&&b| b).count();
    let quota = (percent as usize * live_total / 100).max(1);
    let capacity: usize = (0..widths.len())
        .map(|l| live_in(widths, live, l) - 1)
        .sum();
    let got = select_drops(&report, DropBudget::Fraction(p), &mask, &mut Rng::new(seed));
    if capacity == 0 {
        return ensure(matches!(got, Err(Error::NoDroppableUnits)), || {
            "expected NoDroppableUnits".into()
        });
    }
    let chosen = got.map_err(|e| TestCaseError::fail(e.to_string()))?;
    ensure(chosen.len() == quota.min(capacity), || {
        format!("{} drops, expected {}", chosen.len(), quota.min(capacity))
    })?;
    let max_chosen = chosen
        .iter()
        .map(|&u| scores[u])
        .fold(f64::NEG_INFINITY, f64::max);
    for u in (0..live.len()).filter(|&u| live[u] && !chosen.contains(&u)) {
        let l = layer_of(widths, u);
        let left =
            live_in(widths, live, l) - chosen.iter().filter(|&&c| layer_of(widths, c) == l).count();
        if left > 1 {
            ensure(scores[u] >= max_chosen, || {
                format!("unit {u} ({}) skipped below {max_chosen}", scores[u])
            })?;
        }
    }
    Ok(())
}

/// Layer-wise scope: `min(max(1, ⌊p·live⌋), live − 1)` drops per layer, the
/// lowest scores of that layer.
pub fn prop_layer_budget(
    widths: &[usize],
    live: &[bool],
    scores: &[f64],
    percent: u32,
    seed: u64,
) -> Result<(), TestCaseError> {
    let (mask, report) = build_case(widths, live, scores, Metric::MinimumLayer);
    let p = f64::from(percent) / 100.0;
    let got = select_drops(&report, DropBudget::Fraction(p), &mask, &mut Rng::new(seed));
    let expected: Vec<usize> = (0..widths.len())
        .map(|l| {
            let n = live_in(widths, live, l);
            if n < 2 {
                0
            } else {
                (percent as usize * n / 100).max(1).min(n - 1)
            }
        })
        .collect();
    if expected.iter().all(|&e| e == 0) {
        return ensure(matches!(got, Err(Error::NoDroppableUnits)), || {
            "expected NoDroppableUnits".into()
        });
    }
    let chosen = got.map_err(|e| TestCaseError::fail(e.to_string()))?;
    for (l, &e) in expected.iter().enumerate() {
        let in_layer: Vec<usize> = chosen
            .iter()
            .copied()
            .filter(|&u| layer_of(widths, u) == l)
            .collect();
        ensure(in_layer.len() == e, || {
            format!("layer {l}: {} drops, expected {e}", in_layer.len())
        })?;
        let max_chosen = in_layer
            .iter()
            .map(|&u| scores[u])
            .fold(f64::NEG_INFINITY, f64::max);
        for u in
            (0..live.len()).filter(|&u| live[u] && layer_of(widths, u) == l && !chosen.contains(&u))
        {
            ensure(scores[u] >= max_chosen, || {
                format!("layer {l}: unit {u} skipped below a chosen score")
            })?;
        }
    }
    Ok(())
}

/// With distinct scores, a larger fraction drops a superset.
pub fn prop_monotone(
    widths: &[usize],
    live: &[bool],
    raw: &[f64],
    p1: u32,
    p2: u32,
    seed: u64,
    metric: Metric,
) -> Result<(), TestCaseError> {
    let (lo, hi) = (p1.min(p2), p1.max(p2));
    let scores: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(i, s)| s * 1000.0 + i as f64)
        .collect();
    let (mask, report) = build_case(widths, live, &scores, metric);
    let a = select_drops(
        &report,
        DropBudget::Fraction(f64::from(lo) / 100.0),
        &mask,
        &mut Rng::new(seed),
    );
    let b = select_drops(
        &report,
        DropBudget::Fraction(f64::from(hi) / 100.0),
        &mask,
        &mut Rng::new(seed),
    );
    match (a, b) {
        (Ok(a), Ok(b)) => ensure(a.is_subset(&b), || format!("{a:?} not within {b:?}")),
        (Err(Error::NoDroppableUnits), Err(Error::NoDroppableUnits)) => Ok(()),
        (a, b) => Err(TestCaseError::fail(format!(
            "inconsistent outcomes {a:?} / {b:?}"
        ))),
    }
}

/// Whatever the budget, every layer keeps a live unit.
pub fn prop_never_empty(
    widths: &[usize],
    live: &[bool],
    scores: &[f64],
    budget: DropBudget,
    metric: Metric,
    seed: u64,
) -> Result<(), TestCaseError> {
    let (mask, report) = build_case(widths, live, scores, metric);
    match select_drops(&report, budget, &mask, &mut Rng::new(seed)) {
        Ok(drops) => {
            let next =
                apply_drops(&mask, &drops).map_err(|e| TestCaseError::fail(e.to_string()))?;
            ensure(next.live_per_point().iter().all(|&n| n >= 1), || {
                format!("emptied a layer: {:?}", next.live_per_point())
            })
        }
        Err(Error::NoDroppableUnits) => {
            ensure(mask.live_per_point().iter().all(|&n| n == 1), || {
                "refused a droppable mask".into()
            })
        }
        Err(e) => Err(TestCaseError::fail(e.to_string())),
    }
}

/// χ² goodness of fit of the chosen unit among `tied` equal scores against the
/// uniform distribution. Returns the p-value.
pub fn tie_uniformity(tied: usize, trials: usize, metric: Metric) -> f64 {
    // Layer 0 holds the tied units, layer 1 two units with higher scores.
    let widths = [tied, 2];
    let live = vec![true; tied + 2];
    let mut scores = vec![0.5; tied];
    scores.extend([2.0, 3.0]);
    let (mask, report) = build_case(&widths, &live, &scores, metric);
    let budget = match metric.scope() {
        Scope::Global => DropBudget::Count(1),
        // ⌊0.2·5⌋ = 1 per layer; layer 1 contributes its own single drop.
        Scope::LayerWise => DropBudget::Fraction(0.2),
    };
    let mut counts = vec![0usize; tied];
    let root = Rng::new(99);
    for t in 0..trials {
        let drops = select_drops(
            &report,
            budget,
            &mask,
            &mut root.fork(&format!("trial-{t}")),
        )
        .unwrap();
        for u in drops.into_iter().filter(|&u| u < tied) {
            counts[u] += 1;
        }
    }
    let expected = trials as f64 / tied as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    1.0 - ChiSquared::new((tied - 1) as f64).unwrap().cdf(chi2)
}

fn run_prop<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

pub fn selection_properties() -> Check {
    Check::from((|| {
        let cases = 400;
        run_prop(
            "global argmin",
            cases,
            (layered_case(), 1u32..=100, any::<u64>()),
            |((w, l, s), pc, seed)| prop_global_argmin(&w, &l, &s, pc, seed),
        )?;
        run_prop(
            "layer budget",
            cases,
            (layered_case(), 1u32..=100, any::<u64>()),
            |((w, l, s), pc, seed)| prop_layer_budget(&w, &l, &s, pc, seed),
        )?;
        run_prop(
            "monotonicity",
            cases,
            (
                layered_case(),
                1u32..=100,
                1u32..=100,
                any::<u64>(),
                any::<bool>(),
            ),
            |((w, l, s), a, b, seed, layer)| {
                let metric = if layer {
                    Metric::MinimumLayer
                } else {
                    Metric::Minimum
                };
                prop_monotone(&w, &l, &s, a, b, seed, metric)
            },
        )?;
        run_prop(
            "never empty",
            cases,
            (
                layered_case(),
                1u32..=100,
                1usize..20,
                any::<u64>(),
                0usize..3,
            ),
            |((w, l, s), pc, k, seed, kind)| {
                let (budget, metric) = match kind {
                    0 => (DropBudget::Fraction(f64::from(pc) / 100.0), Metric::Minimum),
                    1 => (
                        DropBudget::Fraction(f64::from(pc) / 100.0),
                        Metric::MinimumLayer,
                    ),
                    _ => (DropBudget::Count(k), Metric::Maximum),
                };
                prop_never_empty(&w, &l, &s, budget, metric, seed)
            },
        )?;
        let pg = tie_uniformity(5, 10_000, Metric::Minimum);
        let pl = tie_uniformity(5, 10_000, Metric::MinimumLayer);
        let detail = format!(
            "4 properties × {cases} cases; tie χ² p = {pg:.3} (global), {pl:.3} (layer-wise)"
        );
        if pg > 0.01 && pl > 0.01 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })())
}

// ---- oracle ---------------------------------------------------------------

/// Mean training loss of an MLP under an arbitrary keep mask, written out
/// with plain loops in f64 from the model's weights.
pub fn mlp_loss(model: &MaskedModel<f32>, keep: &[bool], data: &Dataset) -> f64 {
    let spec = model.spec();
    let params = model.params();
    let widths: Vec<usize> = spec
        .layers
        .iter()
        .filter_map(|l| match l.kind {
            dropnet::model::LayerKind::Dense { units } => Some(units),
            _ => None,
        })
        .collect();
    let features = data.sample_shape().iter().product::<usize>();
    let mut logits = Vec::with_capacity(data.len() * spec.classes);
    for s in 0..data.len() {
        let mut x: Vec<f64> = data.pixels()[s * features..(s + 1) * features]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        let mut offset = 0;
        for (layer, &width) in widths.iter().enumerate() {
            let w = params.get(&format!("{layer}.weight")).unwrap().data();
            let b = params.get(&format!("{layer}.bias")).unwrap().data();
            let h: Vec<f64> = (0..width)
                .map(|j| {
                    if !keep[offset + j] {
                        return 0.0;
                    }
                    let z = f64::from(b[j])
                        + x.iter()
                            .enumerate()
                            .map(|(i, xi)| xi * f64::from(w[i * width + j]))
                            .sum::<f64>();
                    z.max(0.0)
                })
                .collect();
            offset += width;
            x = h;
        }
        let out = widths.len();
        let w = params.get(&format!("{out}.weight")).unwrap().data();
        let b = params.get(&format!("{out}.bias")).unwrap().data();
        for c in 0..spec.classes {
            logits.push(
                f64::from(b[c])
                    + x.iter()
                        .enumerate()
                        .map(|(i, xi)| xi * f64::from(w[i * spec.classes + c]))
                        .sum::<f64>(),
            );
        }
    }
    xent(&logits, spec.classes, data.labels())
}

/// Wraps the oracle; at every cycle enumerates all masks one unit smaller than
/// the current one that leave no layer empty and compares.
struct BruteForce {
    compared: usize,
    mismatch: Option<String>,
}

impl DropSelector for BruteForce {
    fn select(
        &mut self,
        state: &CycleState<'_>,
        rng: &mut Rng,
    ) -> dropnet::Result<BTreeSet<usize>> {
        let model = state.model;
        let train = &state.splits.train;
        let choice = oracle_select(model, train, rng)?;
        let bits = model.mask().bits().to_vec();
        let points = model.mask().points().to_vec();
        let mut brute = Vec::new();
        for u in 0..bits.len() {
            if !bits[u] {
                continue;
            }
            let mut keep = bits.clone();
            keep[u] = false;
            let empty = points
                .iter()
                .any(|p| !keep[p.offset..p.offset + p.units].iter().any(|&b| b));
            if !empty {
                brute.push((u, mlp_loss(model, &keep, train)));
            }
        }
        let cycle = state.cycle;
        let units: Vec<usize> = brute.iter().map(|b| b.0).collect();
        let oracle_units: Vec<usize> = choice.candidates.iter().map(|c| c.0).collect();
        if units != oracle_units {
            self.mismatch.get_or_insert(format!(
                "cycle {cycle}: candidates {oracle_units:?} vs {units:?}"
            ));
        }
        for (&(u, l), &(_, ol)) in brute.iter().zip(&choice.candidates) {
            if (l - ol).abs() > 1e-5 * (1.0 + l.abs()) {
                self.mismatch
                    .get_or_insert(format!("cycle {cycle}: unit {u} loss {ol} vs {l}"));
            }
        }
        let best = brute.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
        let picked = brute
            .iter()
            .find(|b| b.0 == choice.unit)
            .map_or(f64::INFINITY, |b| b.1);
        // The library evaluates in f32: only candidates within rounding of
        // the f64 minimum are interchangeable.
        if picked - best > 1e-6 * (1.0 + best.abs()) {
            self.mismatch.get_or_insert(format!(
                "cycle {cycle}: oracle picked {} ({picked}), best is {best}",
                choice.unit
            ));
        }
        self.compared += 1;
        Ok(BTreeSet::from([choice.unit]))
    }
}

pub fn oracle_equivalence() -> Check {
    Check::from((|| {
        let mut cycles = 0;
        for seed in 0..3u64 {
            let splits = synthetic_blobs(&BlobConfig {
                classes: 2,
                dims: 8,
                per_class: 120,
                noise: 0.5,
                seed,
                image: false,
            })
            .map_err(|e| e.to_string())?;
            let spec = ModelSpec::mlp("FC4-FC4", &[8], &[4, 4], 2).map_err(|e| e.to_string())?;
            let cfg = PruneConfig {
                seed,
                one_at_a_time: true,
                max_epochs: 30,
                min_fraction: Some(0.0),
                ..PruneConfig::default()
            };
            let mut bf = BruteForce {
                compared: 0,
                mismatch: None,
            };
            run_with(&spec, &splits, &cfg, &mut bf, &mut |_| {}).map_err(|e| e.to_string())?;
            if let Some(m) = bf.mismatch {
                return Err(format!("seed {seed}: {m}"));
            }
            if bf.compared != 6 {
                return Err(format!(
                    "seed {seed}: {} cycles compared, expected 6",
                    bf.compared
                ));
            }
            cycles += bf.compared;
        }
        Ok(format!(
            "{cycles} cycles over 3 seeds agree with mask enumeration"
        ))
    })())
}
