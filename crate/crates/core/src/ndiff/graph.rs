use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::array::Array;
use crate::error::{Error, Result};

type BackwardFn = Box<dyn FnOnce(&[f64], &mut GradSink<'_>)>;

struct Node {
    value: Rc<Array>,
    requires_grad: bool,
    is_leaf: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Tape of primitive operations recorded during one forward pass.
///
/// Nodes are appended in creation order, which is a topological order, so
/// the backward pass simply walks the tape in reverse.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.borrow().len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Tensor<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

/// Accumulator handed to backward closures.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    sizes: &'a [usize],
    wants: &'a [bool],
    inputs: &'a [usize],
}

impl GradSink<'_> {
    /// Whether input `i` of the current node needs a gradient.
    pub fn wants(&self, i: usize) -> bool {
        self.inputs.get(i).is_some_and(|&id| self.wants[id])
    }

    /// Accumulation buffer for input `i`, or `None` when it needs no gradient.
    /// Out-of-range inputs (an absent optional bias) also give `None`.
    pub fn buf(&mut self, i: usize) -> Option<&mut [f64]> {
        let id = *self.inputs.get(i)?;
        if !self.wants[id] {
            return None;
        }
        let size = self.sizes[id];
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; size]).as_mut_slice())
    }
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor<'_>) -> Option<&Array> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `t`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, t: &Tensor<'_>) -> Array {
        self.get(t).cloned().unwrap_or_else(|| Array::zeros(&t.shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Force (or disable) the per-op non-finite check regardless of profile.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that participates in differentiation.
    pub fn param(&self, value: Array) -> Tensor<'_> {
        self.leaf(value, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: Array) -> Tensor<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Array, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            is_leaf: true,
            inputs: Vec::new(),
            backward: None,
        });
        Tensor { graph: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Array> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Record an operation. `backward` receives the output gradient and
    /// accumulates into the inputs' gradient buffers.
    pub fn record<'g, F>(
        &'g self,
        op: &'static str,
        value: impl Into<Rc<Array>>,
        inputs: &[Tensor<'g>],
        backward: F,
    ) -> Result<Tensor<'g>>
    where
        F: FnOnce(&[f64], &mut GradSink<'_>) + 'static,
    {
        let value = value.into();
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|t| nodes[t.id].requires_grad);
        nodes.push(Node {
            value,
            requires_grad,
            is_leaf: false,
            inputs: inputs.iter().map(|t| t.id).collect(),
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
        });
        Ok(Tensor { graph: self, id: nodes.len() - 1 })
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape's closures.
    pub fn backward(&self, loss: &Tensor<'_>) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::GraphConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        self.consumed.set(true);

        let n = loss.id + 1;
        let sizes: Vec<usize> = nodes[..n].iter().map(|nd| nd.value.len()).collect();
        let wants: Vec<bool> = nodes[..n].iter().map(|nd| nd.requires_grad).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut leaf_grads: Vec<Option<Array>> = vec![None; n];
        if wants[loss.id] {
            grads[loss.id] = Some(vec![1.0]);
        }

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            if node.is_leaf {
                leaf_grads[id] = Some(Array::from_vec(node.value.shape(), g)?);
                continue;
            }
            if let Some(back) = node.backward.take() {
                let inputs = std::mem::take(&mut node.inputs);
                let mut sink = GradSink {
                    grads: &mut grads,
                    sizes: &sizes,
                    wants: &wants,
                    inputs: &inputs,
                };
                back(&g, &mut sink);
            }
        }
        // Closures of nodes past the loss are dropped too; the tape is spent.
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

impl<'g> Tensor<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array> {
        self.graph.value(self.id)
    }

    /// Detached copy of the value.
    pub fn to_array(&self) -> Array {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Same value as a fresh constant leaf; gradients do not flow through.
    pub fn detach(&self) -> Tensor<'g> {
        self.graph.constant(self.to_array())
    }
}
