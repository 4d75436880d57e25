//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with a boxed [`Backward`] rule. Nodes are appended in evaluation order,
//! so walking the tape backwards is a valid topological order.
//!
//! Parameters live in a [`ParamStore`] and enter a graph as named leaves via
//! [`Graph::param`]; after [`Graph::backward`] the gradient of every leaf
//! that was touched can be read back by name.

mod attention;
mod conv;
mod ops;
mod scan;

pub use attention::AttentionWindow;


use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule gets to see.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    /// `needs[i]` is false when input `i` does not require a gradient; the
    /// rule may return `None` for it.
    pub needs: Vec<bool>,
}

/// Names of every backward rule, as reported by [`Backward::name`].
pub const BACKWARD_OPS: &[&str] = &[
    "matmul", "linear", "silu", "relu", "softplus", "exp", "scale", "add", "mul", "mul_cols", "mul_rows",
    "layer_norm", "softmax", "gather_rows", "concat_cols", "reshape", "weighted_sum", "l1_loss",
    "gaussian_rbf", "attention", "conv3x3", "dwconv3x3", "selective_scan",
];

pub trait Backward: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, ctx: &BackwardCtx<'_>, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            !self.tensors.contains_key(&name),
            "parameter {name} registered twice"
        );
        self.tensors.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Round every value to the nearest `f32`, so that a checkpoint written
    /// with 32-bit storage reproduces the store bitwise.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Gradients produced by one backward pass, keyed by parameter name.
pub type ParamGrads = IndexMap<String, Tensor>;

pub struct Graph<'p> {
    nodes: Vec<Node>,
    store: Option<&'p ParamStore>,
    params: IndexMap<String, Var>,
    track: bool,
    fault: Option<&'static str>,
}

impl<'p> Graph<'p> {
    /// A graph that records backward rules for every parameter of `store`.
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            params: IndexMap::new(),
            track: true,
            fault: None,
        }
    }

    /// A forward-only graph: nothing requires a gradient and no backward
    /// rules are kept.
    pub fn inference(store: &'p ParamStore) -> Self {
        let mut g = Self::new(store);
        g.track = false;
        g
    }

    /// A graph with no parameter store, for exercising individual ops.
    pub fn detached() -> Graph<'static> {
        Graph {
            nodes: Vec::new(),
            store: None,
            params: IndexMap::new(),
            track: true,
            fault: None,
        }
    }

    /// Test hook: every backward rule named `op` has its gradients scaled by
    /// 1.5. Used as a negative control for the gradient checker.
    pub fn inject_backward_fault(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf that receives a gradient (when the graph tracks gradients).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let track = self.track;
        self.push_leaf(value, track)
    }

    /// The named parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        let v = self.leaf(value);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Parameters referenced so far, in first-use order.
    pub fn used_params(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(
        &mut self,
        value: Tensor,
        inputs: &[Var],
        op: impl Backward + 'static,
    ) -> Var {
        let requires_grad = self.track && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: if requires_grad { Some(Box::new(op)) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Fails with [`Error::NonFinite`] if any element of `v` is NaN or
    /// infinite.
    pub fn ensure_finite(&self, v: Var, stage: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(stage.to_string()))
        }
    }

    /// Reverse pass from a scalar `loss`, returning the gradient of every
    /// node (or `None` for nodes that do not depend on a tracked leaf).
    pub fn backward(&self, loss: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return grads;
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = &node.op else { continue };
            let Some(gout) = grads[idx].take() else { continue };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                needs: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect(),
            };
            let mut input_grads = op.backward(&ctx, &gout);
            if self.fault == Some(op.name()) {
                for g in input_grads.iter_mut().flatten() {
                    g.scale_assign(1.5);
                }
            }
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[input.0].value.len(), "{}", op.name());
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        grads
    }

    /// Backward pass that returns only parameter gradients. Parameters that
    /// were used but received no gradient get an explicit zero tensor.
    pub fn param_grads(&self, loss: Var) -> ParamGrads {
        let mut grads = self.backward(loss);
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
