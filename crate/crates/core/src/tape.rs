//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A forward pass pushes one node per operation; [`Tape::backward`] walks the
//! nodes in reverse and accumulates adjoints. The tape is rebuilt for every
//! forward pass.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    ScaleUnits {
        input: Var,
        scale: Vec<T>,
    },
    Reshape(Var),
    SoftmaxXent {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient (an input batch).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = ops::add_bias(self.value(x), self.value(bias))?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), needs))
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let out = ops::conv2d_same(self.value(input), self.value(kernels), self.value(bias))?;
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
            },
            needs,
        ))
    }

    pub fn maxpool(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2d(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::MaxPool { input, argmax }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    /// Multiplies unit `i` along axis 1 by `scale[i]`.
    pub fn scale_units(&mut self, x: Var, scale: Vec<T>) -> Result<Var> {
        let out = ops::scale_units(self.value(x), &scale)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::ScaleUnits { input: x, scale }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    /// Mean softmax cross-entropy; the result is a one-element tensor.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_xent(self.value(logits), labels)?;
        let needs = self.needs(logits);
        let op = Op::SoftmaxXent {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(out, Op::Sum(x), needs)
    }

    /// Probabilities saved by a [`Tape::softmax_xent`] node.
    pub fn probabilities(&self, loss: Var) -> Option<&Tensor<T>> {
        match &self.nodes.get(loss.0)?.op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.nodes.get(loss.0).ok_or(Error::NoForward)?;
        if root.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));

        // Leaf adjoints stay in `grads`; intermediate ones are taken and
        // dropped once propagated.
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, ops::matmul_grad_lhs(self.value(*b), &g)?)?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, ops::matmul_grad_rhs(self.value(*a), &g)?)?;
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.needs(*bias) {
                        accumulate(&mut grads, *bias, ops::sum_rows(&g))?;
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g.clone())?;
                    }
                }
                Op::Conv2d {
                    input,
                    kernels,
                    bias,
                } => {
                    let (gin, gk, gb) = ops::conv2d_same_backward(
                        self.value(*input),
                        self.value(*kernels),
                        &g,
                        self.needs(*input),
                    )?;
                    if let Some(gin) = gin {
                        accumulate(&mut grads, *input, gin)?;
                    }
                    if self.needs(*kernels) {
                        accumulate(&mut grads, *kernels, gk)?;
                    }
                    if self.needs(*bias) {
                        accumulate(&mut grads, *bias, gb)?;
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let gin = ops::maxpool2d_backward(self.value(*input).shape(), argmax, &g)?;
                    accumulate(&mut grads, *input, gin)?;
                }
                Op::Relu(x) => {
                    accumulate(&mut grads, *x, ops::relu_backward(self.value(*x), &g))?;
                }
                Op::ScaleUnits { input, scale } => {
                    accumulate(&mut grads, *input, ops::scale_units(&g, scale)?)?;
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(shape)?)?;
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    labels,
                } => {
                    let up = g.data()[0];
                    accumulate(
                        &mut grads,
                        *logits,
                        ops::softmax_xent_backward(probs, labels, up),
                    )?;
                }
                Op::Sum(x) => {
                    let up = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), up))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Adjoints of the leaves reached by a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
