//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Node ids are handed
//! out in evaluation order, so the tape order is a topological order and
//! [`Graph::backward`] simply walks it in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::conv::{self, ConvGeometry};
use super::{Real, Tensor};

pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Owns every trainable tensor of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate()
    }

    /// Total number of scalar entries over the given parameters.
    pub fn numel(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.params[id].value.len()).sum()
    }
}

/// An affine map `y = A x + c` whose linear part can be transposed.
///
/// Used to splice operators defined outside the tensor algebra (such as
/// k-space data consistency) into a graph.
pub trait AffineMap<T>: Send + Sync {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// `A^T g`.
    fn transpose_linear(&self, g: &Tensor<T>) -> Result<Tensor<T>>;
}

enum Op<T> {
    Constant,
    Param(ParamId),
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geo: ConvGeometry,
    },
    Relu(NodeId),
    Add(Vec<NodeId>),
    Scale(NodeId, T),
    /// `sum_j weights[index_j] * x_j`
    WeightedSum {
        inputs: Vec<NodeId>,
        weights: NodeId,
        indices: Vec<usize>,
    },
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    Sum(NodeId),
    L1 {
        pred: NodeId,
        target: Tensor<T>,
    },
    Affine {
        x: NodeId,
        map: Arc<dyn AffineMap<T>>,
    },
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

/// Gradient of a scalar loss with respect to every parameter in the store.
/// Parameters the loss does not reach (or that were frozen) get zeros.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn into_vec(self) -> Vec<Tensor<T>> {
        self.grads
    }
}

pub struct Graph<'s, T: Real> {
    store: &'s ParamStore<T>,
    trainable: Vec<bool>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'s, T: Real> Graph<'s, T> {
    /// A graph in which every parameter receives a gradient.
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self::with_trainable(store, vec![true; store.len()])
    }

    /// A graph where only parameters flagged in `trainable` receive
    /// gradients; the rest are treated as constants.
    pub fn with_trainable(store: &'s ParamStore<T>, trainable: Vec<bool>) -> Self {
        assert_eq!(trainable.len(), store.len(), "trainable mask length");
        Graph {
            store,
            trainable,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(pid)) => self.store.get(*pid),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Option<Tensor<T>>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, Some(value), false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id] {
            return node;
        }
        let needs = self.trainable[id];
        let node = self.push(Op::Param(id), None, needs);
        self.param_nodes[id] = Some(node);
        node
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        dilation: usize,
        groups: usize,
    ) -> Result<NodeId> {
        let geo = ConvGeometry::new(
            self.value(x).shape(),
            self.value(kernel).shape(),
            bias.map(|b| self.value(b).len()),
            dilation,
            groups,
        )?;
        let out = conv::forward_with(&geo, self.value(x), self.value(kernel), bias.map(|b| self.value(b)));
        let needs = self.needs(x) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                bias,
                geo,
            },
            Some(out),
            needs,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push(Op::Relu(x), Some(out), needs)
    }

    pub fn add(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("add of zero tensors"))?;
        let mut out = self.value(first).clone();
        for &id in &inputs[1..] {
            let v = self.value(id);
            if v.shape() != out.shape() {
                return Err(Error::invalid(format!(
                    "add shape mismatch: {:?} vs {:?}",
                    v.shape(),
                    out.shape()
                )));
            }
            out.add_assign(v);
        }
        let needs = inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(Op::Add(inputs.to_vec()), Some(out), needs))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let out = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(Op::Scale(x, factor), Some(out), needs)
    }

    /// `sum_j w[indices[j]] * inputs[j]` where `w` is a vector-valued node.
    pub fn weighted_sum(
        &mut self,
        inputs: &[NodeId],
        weights: NodeId,
        indices: &[usize],
    ) -> Result<NodeId> {
        if inputs.is_empty() || inputs.len() != indices.len() {
            return Err(Error::invalid(format!(
                "weighted sum needs one index per input ({} inputs, {} indices)",
                inputs.len(),
                indices.len()
            )));
        }
        let wlen = self.value(weights).len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= wlen) {
            return Err(Error::invalid(format!(
                "weight index {bad} out of range for {wlen} weights"
            )));
        }
        let shape = self.value(inputs[0]).shape();
        let mut out = Tensor::zeros(shape);
        for (&id, &k) in inputs.iter().zip(indices) {
            let v = self.value(id);
            if v.shape() != shape {
                return Err(Error::invalid(format!(
                    "weighted sum shape mismatch: {:?} vs {:?}",
                    v.shape(),
                    shape
                )));
            }
            let wk = self.value(weights).data()[k];
            out.axpy(wk, v);
        }
        let needs = self.needs(weights) || inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights,
                indices: indices.to_vec(),
            },
            Some(out),
            needs,
        ))
    }

    /// Softmax over all entries of `x`, treated as one vector.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let probs = softmax_slice(v.data());
        let out = Tensor::from_vec(v.shape(), probs).expect("same length");
        let needs = self.needs(x);
        self.push(Op::Softmax(x), Some(out), needs)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let [n, _, h, w] = self.value(first).shape();
        let mut channels = 0;
        for &id in inputs {
            let [n2, c2, h2, w2] = self.value(id).shape();
            if (n2, h2, w2) != (n, h, w) {
                return Err(Error::invalid(format!(
                    "concat shape mismatch: {:?} vs {:?}",
                    self.value(id).shape(),
                    self.value(first).shape()
                )));
            }
            channels += c2;
        }
        let mut data = Vec::with_capacity(n * channels * h * w);
        for b in 0..n {
            for &id in inputs {
                data.extend_from_slice(self.value(id).item(b));
            }
        }
        let out = Tensor::from_vec([n, channels, h, w], data)?;
        let needs = inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(Op::Concat(inputs.to_vec()), Some(out), needs))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(Op::Sum(x), Some(out), needs)
    }

    /// Mean absolute difference against a constant target.
    pub fn l1_loss(&mut self, pred: NodeId, target: Tensor<T>) -> Result<NodeId> {
        let value = l1_loss(self.value(pred), &target)?;
        let needs = self.needs(pred);
        Ok(self.push(Op::L1 { pred, target }, Some(Tensor::scalar(value)), needs))
    }

    pub fn affine(&mut self, x: NodeId, map: Arc<dyn AffineMap<T>>) -> Result<NodeId> {
        let out = map.apply(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(Op::Affine { x, map }, Some(out), needs))
    }

    /// Geometry of every convolution recorded so far.
    pub fn conv_geometries(&self) -> Vec<ConvGeometry> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Conv2d { geo, .. } => Some(*geo),
                _ => None,
            })
            .collect()
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut param_grads: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => param_grads[*pid] = Some(g),
                Op::Conv2d {
                    x,
                    kernel,
                    bias,
                    geo,
                } => {
                    let need_x = self.needs(*x);
                    let need_params = self.needs(*kernel) || bias.is_some_and(|b| self.needs(b));
                    let cg = conv::backward_with(
                        geo,
                        self.value(*x),
                        self.value(*kernel),
                        bias.is_some(),
                        &g,
                        need_x,
                        need_params,
                    );
                    if let Some(dx) = cg.input {
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*kernel) {
                        if let Some(dk) = cg.kernel {
                            accumulate(&mut grads, *kernel, dk);
                        }
                    }
                    if let (Some(b), Some(db)) = (bias, cg.bias) {
                        if self.needs(*b) {
                            let db = Tensor::from_vec(self.value(*b).shape(), db.into_data())?;
                            accumulate(&mut grads, *b, db);
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(inputs) => {
                    for &id in inputs {
                        if self.needs(id) {
                            accumulate(&mut grads, id, g.clone());
                        }
                    }
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::WeightedSum {
                    inputs,
                    weights,
                    indices,
                } => {
                    let w = self.value(*weights);
                    if self.needs(*weights) {
                        let mut dw = Tensor::zeros(w.shape());
                        for (&id, &k) in inputs.iter().zip(indices) {
                            let dot: T = self
                                .value(id)
                                .data()
                                .iter()
                                .zip(g.data())
                                .map(|(&a, &b)| a * b)
                                .sum();
                            dw.data_mut()[k] += dot;
                        }
                        accumulate(&mut grads, *weights, dw);
                    }
                    for (&id, &k) in inputs.iter().zip(indices) {
                        if self.needs(id) {
                            let wk = w.data()[k];
                            accumulate(&mut grads, id, g.map(|v| v * wk));
                        }
                    }
                }
                Op::Softmax(x) => {
                    let p = node.value.as_ref().expect("softmax value");
                    let dot: T = p.data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                    let mut dx = g;
                    for (d, &pv) in dx.data_mut().iter_mut().zip(p.data()) {
                        *d = pv * (*d - dot);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(inputs) => {
                    let [n, ctot, h, w] = g.shape();
                    let plane = h * w;
                    let mut offset = 0;
                    for &id in inputs {
                        let c = self.value(id).shape()[1];
                        if self.needs(id) {
                            let mut data = Vec::with_capacity(n * c * plane);
                            for b in 0..n {
                                let start = (b * ctot + offset) * plane;
                                data.extend_from_slice(&g.data()[start..start + c * plane]);
                            }
                            accumulate(&mut grads, id, Tensor::from_vec([n, c, h, w], data)?);
                        }
                        offset += c;
                    }
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), s));
                }
                Op::L1 { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = g.data()[0] / T::from_usize(pv.len()).expect("length fits");
                    let data = pv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&p, &t)| {
                            let d = p - t;
                            if d > T::zero() {
                                scale
                            } else if d < T::zero() {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::from_vec(pv.shape(), data)?);
                }
                Op::Affine { x, map } => {
                    let dx = map.transpose_linear(&g)?;
                    accumulate(&mut grads, *x, dx);
                }
            }
        }

        let grads = param_grads
            .into_iter()
            .enumerate()
            .map(|(pid, g)| g.unwrap_or_else(|| Tensor::zeros(self.store.get(pid).shape())))
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax_slice<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean absolute difference of two equally-shaped tensors.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "l1 loss shape mismatch: prediction {:?}, target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(total / T::from_usize(pred.len()).expect("length fits"))
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}
