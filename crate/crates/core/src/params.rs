use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Named weights and biases of a model, keyed `"<layer>.weight"` /
/// `"<layer>.bias"`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same names with the same shapes.
    pub fn same_layout(&self, other: &ParamSet<T>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Plain SGD: `p ← p − lr·g` for every parameter present in `grads`.
pub fn sgd_step<T: Real>(params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: T) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::shape("sgd_step", format!("no parameter named {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!(
                    "{name}: parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                ),
            ));
        }
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w = *w - lr * d;
        }
    }
    Ok(())
}

/// Glorot-uniform weights (`±√(6/(fan_in+fan_out))`) and zero biases.
pub fn init_params<T: Real>(spec: &ModelSpec, rng: &Rng) -> Result<ParamSet<T>> {
    let mut params = ParamSet::new();
    for slot in spec.param_layout()? {
        let mut stream = rng.fork(&slot.weight_name);
        let bound = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
        let w = Tensor::from_fn(&slot.weight_shape, |_| {
            T::of(stream.uniform_in(-bound, bound))
        });
        params.insert(slot.weight_name, w);
        params.insert(slot.bias_name, Tensor::zeros(&[slot.bias_len]));
    }
    Ok(params)
}
