//! Model description, masks over prunable units and the masked forward pass.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::{init_params, ParamSet};
use crate::rng::Rng;
use crate::stats::ActivationStats;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Samples per forward pass when evaluating or collecting statistics.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Fully connected layer followed by ReLU.
    Dense {
        units: usize,
    },
    /// 3×3 "same" convolution followed by ReLU.
    Conv {
        filters: usize,
    },
    MaxPool,
    Flatten,
    /// Fully connected classification layer producing logits.
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Multiply the post-activation output of this layer by the unit mask.
    pub mask: bool,
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { units },
            mask: true,
        }
    }

    pub fn conv(filters: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv { filters },
            mask: true,
        }
    }

    pub fn plain(kind: LayerKind) -> Self {
        LayerSpec { kind, mask: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Per-sample input shape: `[features]` or `[channels, height, width]`.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

/// One place in the network where a mask is applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPoint {
    /// Index into [`ModelSpec::layers`].
    pub layer: usize,
    pub units: usize,
    /// Spatial positions per unit (`r`); 1 for dense nodes.
    pub constituents: usize,
    /// Global index of this point's first unit.
    pub offset: usize,
}

pub(crate) struct ParamSlot {
    pub weight_name: String,
    pub weight_shape: Vec<usize>,
    pub bias_name: String,
    pub bias_len: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        input: Vec<usize>,
        layers: Vec<LayerSpec>,
        classes: usize,
    ) -> Result<Self> {
        let spec = ModelSpec {
            name: name.into(),
            input,
            layers,
            classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Fully connected network: `FC<w0> - FC<w1> - ...` with a mask after every
    /// hidden layer. Image inputs are flattened first.
    pub fn mlp(name: &str, input: &[usize], widths: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        if input.len() > 1 {
            layers.push(LayerSpec::plain(LayerKind::Flatten));
        }
        layers.extend(widths.iter().map(|&w| LayerSpec::dense(w)));
        layers.push(LayerSpec::plain(LayerKind::Output));
        ModelSpec::new(name, input.to_vec(), layers, classes)
    }

    /// VGG-style stack: every convolution is masked and followed by 2×2 max
    /// pooling as long as the spatial dims are even, then flatten and the
    /// output layer.
    pub fn cnn(name: &str, input: &[usize], filters: &[usize], classes: usize) -> Result<Self> {
        let [_, mut h, mut w] = <[usize; 3]>::try_from(input).map_err(|_| {
            Error::InvalidSpec(format!(
                "convolutional input must be [C,H,W], got {input:?}"
            ))
        })?;
        let mut layers = Vec::new();
        for &f in filters {
            layers.push(LayerSpec::conv(f));
            if h % 2 == 0 && w % 2 == 0 {
                layers.push(LayerSpec::plain(LayerKind::MaxPool));
                h /= 2;
                w /= 2;
            }
        }
        layers.push(LayerSpec::plain(LayerKind::Flatten));
        layers.push(LayerSpec::plain(LayerKind::Output));
        ModelSpec::new(name, input.to_vec(), layers, classes)
    }

    /// Model A: two masked dense hidden layers.
    pub fn model_a(input: &[usize], widths: [usize; 2], classes: usize) -> Result<Self> {
        Self::mlp("A", input, &widths, classes)
    }

    /// Model B: two masked convolutional layers.
    pub fn model_b(input: &[usize], filters: [usize; 2], classes: usize) -> Result<Self> {
        Self::cnn("B", input, &filters, classes)
    }

    /// Model C: four masked convolutional layers.
    pub fn model_c(input: &[usize], filters: [usize; 4], classes: usize) -> Result<Self> {
        Self::cnn("C", input, &filters, classes)
    }

    /// Per-sample output shape of every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.input.is_empty() || self.input.contains(&0) {
            return bad(format!(
                "input shape {:?} must be non-empty and positive",
                self.input
            ));
        }
        let mut shape = self.input.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (&layer.kind, shape.as_slice()) {
                (LayerKind::Dense { units: 0 }, _) | (LayerKind::Conv { filters: 0 }, _) => {
                    return bad(format!("layer {i} has zero width"));
                }
                (LayerKind::Dense { units }, [_]) => vec![*units],
                (LayerKind::Output, [_]) => vec![self.classes],
                (LayerKind::Conv { filters }, [_, h, w]) => vec![*filters, *h, *w],
                (LayerKind::MaxPool, [c, h, w]) if h % 2 == 0 && w % 2 == 0 => {
                    vec![*c, h / 2, w / 2]
                }
                (LayerKind::Flatten, s) => vec![s.iter().product()],
                (kind, s) => {
                    return bad(format!(
                        "layer {i} ({kind:?}) cannot take input of shape {s:?}"
                    ))
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::InvalidSpec("class count must be positive".into()));
        }
        match self.layers.last() {
            Some(LayerSpec {
                kind: LayerKind::Output,
                mask,
            }) => {
                if *mask {
                    return Err(Error::InvalidSpec(
                        "the output layer cannot be masked".into(),
                    ));
                }
            }
            _ => {
                return Err(Error::InvalidSpec(
                    "the last layer must be the output layer".into(),
                ))
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if i + 1 < self.layers.len() && layer.kind == LayerKind::Output {
                return Err(Error::InvalidSpec(format!(
                    "output layer at position {i} is not last"
                )));
            }
            if layer.mask && !matches!(layer.kind, LayerKind::Dense { .. } | LayerKind::Conv { .. })
            {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} ({:?}) cannot carry a mask",
                    layer.kind
                )));
            }
        }
        if !self.layers.iter().any(|l| l.mask) {
            return Err(Error::InvalidSpec("no maskable layer".into()));
        }
        self.shapes().map(|_| ())
    }

    pub fn mask_points(&self) -> Vec<MaskPoint> {
        let shapes = self.shapes().expect("validated spec");
        let mut offset = 0;
        let mut points = Vec::new();
        for (i, (layer, shape)) in self.layers.iter().zip(&shapes).enumerate() {
            if layer.mask {
                let constituents = shape[1..].iter().product();
                points.push(MaskPoint {
                    layer: i,
                    units: shape[0],
                    constituents,
                    offset,
                });
                offset += shape[0];
            }
        }
        points
    }

    /// Number of prunable units `|n|`.
    pub fn unit_count(&self) -> usize {
        self.mask_points().iter().map(|p| p.units).sum()
    }

    pub(crate) fn param_layout(&self) -> Result<Vec<ParamSlot>> {
        let shapes = self.shapes()?;
        let mut prev = self.input.clone();
        let mut slots = Vec::new();
        for (i, (layer, shape)) in self.layers.iter().zip(&shapes).enumerate() {
            let slot = |weight_shape: Vec<usize>, fan_in, fan_out, bias_len| ParamSlot {
                weight_name: format!("{i}.weight"),
                weight_shape,
                bias_name: format!("{i}.bias"),
                bias_len,
                fan_in,
                fan_out,
            };
            match layer.kind {
                LayerKind::Dense { .. } | LayerKind::Output => {
                    let (fin, fout) = (prev[0], shape[0]);
                    slots.push(slot(vec![fin, fout], fin, fout, fout));
                }
                LayerKind::Conv { filters } => {
                    let c = prev[0];
                    slots.push(slot(vec![filters, c, 3, 3], c * 9, filters * 9, filters));
                }
                LayerKind::MaxPool | LayerKind::Flatten => {}
            }
            prev = shape.clone();
        }
        Ok(slots)
    }
}

/// Binary keep/drop flags over all prunable units, grouped by mask point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    points: Vec<MaskPoint>,
    live: Vec<bool>,
}

impl Mask {
    /// All units live.
    pub fn ones(spec: &ModelSpec) -> Self {
        let points = spec.mask_points();
        let n = points.iter().map(|p| p.units).sum();
        Mask {
            points,
            live: vec![true; n],
        }
    }

    pub fn from_bits(spec: &ModelSpec, bits: &[bool]) -> Result<Self> {
        let mut mask = Mask::ones(spec);
        if bits.len() != mask.live.len() {
            return Err(Error::shape(
                "mask",
                format!("{} bits for {} units", bits.len(), mask.live.len()),
            ));
        }
        mask.live.copy_from_slice(bits);
        Ok(mask)
    }

    pub fn points(&self) -> &[MaskPoint] {
        &self.points
    }

    /// Total prunable units `|n|`.
    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.live
    }

    pub fn is_live(&self, unit: usize) -> bool {
        self.live[unit]
    }

    /// `‖m‖₀`.
    pub fn live_count(&self) -> usize {
        self.live.iter().filter(|&&b| b).count()
    }

    /// `‖m‖₀ / |n|`.
    pub fn fraction_remaining(&self) -> f64 {
        self.live_count() as f64 / self.len() as f64
    }

    /// Live units per mask point.
    pub fn live_per_point(&self) -> Vec<usize> {
        self.points
            .iter()
            .map(|p| self.point_bits(p).iter().filter(|&&b| b).count())
            .collect()
    }

    fn point_bits(&self, p: &MaskPoint) -> &[bool] {
        &self.live[p.offset..p.offset + p.units]
    }

    /// Mask point index and in-layer index of a global unit id.
    pub fn locate(&self, unit: usize) -> (usize, usize) {
        let point = self.points.partition_point(|p| p.offset + p.units <= unit);
        (point, unit - self.points[point].offset)
    }

    pub fn scale<T: Real>(&self, point: usize) -> Vec<T> {
        self.point_bits(&self.points[point])
            .iter()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect()
    }

    fn point_all_live(&self, point: usize) -> bool {
        self.point_bits(&self.points[point]).iter().all(|&b| b)
    }

    /// Sets one unit to 0. Units never come back.
    pub fn drop_unit(&mut self, unit: usize) -> Result<()> {
        match self.live.get_mut(unit) {
            Some(b) if *b => {
                *b = false;
                Ok(())
            }
            Some(_) => Err(Error::AlreadyDropped(unit)),
            None => Err(Error::shape(
                "mask",
                format!("unit {unit} out of range {}", self.live.len()),
            )),
        }
    }

    pub fn without(&self, unit: usize) -> Result<Mask> {
        let mut m = self.clone();
        m.drop_unit(unit)?;
        Ok(m)
    }

    fn matches(&self, spec: &ModelSpec) -> bool {
        self.points == spec.mask_points()
    }
}

/// Loss and accuracy over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Variables recorded by a masked forward pass.
pub struct Recorded {
    pub logits: Var,
    pub params: Vec<(String, Var)>,
    /// Post-activation, post-mask output of every mask point.
    pub activations: Vec<Var>,
}

/// A model with its current parameters, its mask and the initial state `θ₀`.
#[derive(Clone, Debug)]
pub struct MaskedModel<T> {
    spec: ModelSpec,
    params: ParamSet<T>,
    mask: Mask,
    initial: ParamSet<T>,
}

impl<T: Real> MaskedModel<T> {
    /// Glorot-initialized parameters, all-ones mask, `θ₀` snapshot taken.
    pub fn build(spec: ModelSpec, rng: &Rng) -> Result<Self> {
        spec.validate()?;
        let params = init_params(&spec, rng)?;
        let mask = Mask::ones(&spec);
        Ok(MaskedModel {
            initial: params.clone(),
            spec,
            params,
            mask,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: Mask) -> Result<()> {
        if !mask.matches(&self.spec) {
            return Err(Error::shape("mask", "mask layout does not match the model"));
        }
        self.mask = mask;
        Ok(())
    }

    pub fn initial(&self) -> &ParamSet<T> {
        &self.initial
    }

    pub fn snapshot(&self) -> ParamSet<T> {
        self.params.clone()
    }

    /// Replaces the parameters. The mask is left untouched.
    pub fn restore(&mut self, snapshot: &ParamSet<T>) -> Result<()> {
        if !snapshot.same_layout(&self.params) {
            return Err(Error::shape(
                "restore",
                "snapshot layout does not match the model",
            ));
        }
        self.params.clone_from(snapshot);
        Ok(())
    }

    /// Reverts to `θ₀`.
    pub fn revert_to_initial(&mut self) {
        self.params.clone_from(&self.initial);
    }

    /// Records a forward pass with an explicit mask onto `tape`.
    pub fn record(&self, tape: &mut Tape<T>, images: Tensor<T>, mask: &Mask) -> Result<Recorded> {
        if images.shape().get(1..) != Some(self.spec.input.as_slice()) {
            return Err(Error::shape(
                "forward",
                format!("batch {:?} for input {:?}", images.shape(), self.spec.input),
            ));
        }
        if !mask.matches(&self.spec) {
            return Err(Error::shape(
                "forward",
                "mask layout does not match the model",
            ));
        }
        let batch = images.shape()[0];
        let mut x = tape.constant(images);
        let mut params = Vec::new();
        let mut activations = Vec::new();
        let mut bind = |tape: &mut Tape<T>, name: String| -> Result<Var> {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| Error::shape("forward", format!("missing {name}")))?;
            let v = tape.param(t.clone());
            params.push((name, v));
            Ok(v)
        };
        for (i, layer) in self.spec.layers.iter().enumerate() {
            x = match layer.kind {
                LayerKind::Dense { .. } | LayerKind::Output => {
                    let w = bind(tape, format!("{i}.weight"))?;
                    let b = bind(tape, format!("{i}.bias"))?;
                    let z = tape.matmul(x, w)?;
                    let z = tape.add_bias(z, b)?;
                    if layer.kind == LayerKind::Output {
                        z
                    } else {
                        tape.relu(z)
                    }
                }
                LayerKind::Conv { .. } => {
                    let k = bind(tape, format!("{i}.weight"))?;
                    let b = bind(tape, format!("{i}.bias"))?;
                    let z = tape.conv2d(x, k, b)?;
                    tape.relu(z)
                }
                LayerKind::MaxPool => tape.maxpool(x)?,
                LayerKind::Flatten => {
                    let n = tape.value(x).len() / batch;
                    tape.reshape(x, vec![batch, n])?
                }
            };
            if layer.mask {
                let point = activations.len();
                if !mask.point_all_live(point) {
                    x = tape.scale_units(x, mask.scale(point))?;
                }
                activations.push(x);
            }
        }
        Ok(Recorded {
            logits: x,
            params,
            activations,
        })
    }

    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(images, &self.mask)
    }

    /// Forward pass under a mask other than the model's own.
    pub fn forward_with(&self, images: &Tensor<T>, mask: &Mask) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, images.clone(), mask)?;
        Ok(tape.value(rec.logits).clone())
    }

    /// Mean cross-entropy on a batch and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        images: Tensor<T>,
        labels: &[usize],
    ) -> Result<(f64, ParamSet<T>)> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, images, &self.mask)?;
        let loss = tape.softmax_xent(rec.logits, labels)?;
        let value = tape.value(loss).data()[0].as_f64();
        let mut grads = tape.backward(loss)?;
        let mut out = ParamSet::new();
        for (name, v) in rec.params {
            let g = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
            out.insert(name, g);
        }
        Ok((value, out))
    }

    /// Loss and accuracy over `data`.
    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        self.evaluate_with(data, &self.mask)
    }

    pub fn evaluate_with(&self, data: &Dataset, mask: &Mask) -> Result<Evaluation> {
        Ok(self.inference_pass(data, mask, false)?.0)
    }

    /// Loss, accuracy and activation statistics in one inference pass.
    pub fn evaluate_with_stats(&self, data: &Dataset) -> Result<(Evaluation, ActivationStats)> {
        let (eval, stats) = self.inference_pass(data, &self.mask, true)?;
        Ok((eval, stats.expect("requested")))
    }

    fn inference_pass(
        &self,
        data: &Dataset,
        mask: &Mask,
        collect: bool,
    ) -> Result<(Evaluation, Option<ActivationStats>)> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut stats = collect.then(|| ActivationStats::new(mask));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for start in (0..data.len()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(data.len());
            let (images, labels) = data.range(start, end);
            let mut tape = Tape::new();
            let rec = self.record(&mut tape, images.cast(), mask)?;
            let loss = tape.softmax_xent(rec.logits, &labels)?;
            let batch_loss = tape.value(loss).data()[0].as_f64();
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite("evaluation loss"));
            }
            loss_sum += batch_loss * labels.len() as f64;
            correct += count_correct(tape.value(rec.logits), &labels);
            if let Some(stats) = stats.as_mut() {
                for (point, &v) in rec.activations.iter().enumerate() {
                    stats.accumulate(point, tape.value(v));
                }
            }
        }
        let n = data.len() as f64;
        Ok((
            Evaluation {
                loss: loss_sum / n,
                accuracy: correct as f64 / n,
            },
            stats,
        ))
    }
}

/// Activation statistics of a trained model over every sample of `data`.
pub fn forward_collect_stats<T: Real>(
    model: &MaskedModel<T>,
    data: &Dataset,
) -> Result<ActivationStats> {
    Ok(model.evaluate_with_stats(data)?.1)
}

/// Predictions take the first maximal logit.
fn count_correct<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count()
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
