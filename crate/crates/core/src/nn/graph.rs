//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in insertion
//! order. Node inputs always refer to earlier nodes, so walking the tape
//! backwards is a valid reverse topological order.

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local derivative rule of a recorded operation.
pub trait Backward {
    fn name(&self) -> &'static str;

    /// Adds the vector-Jacobian product of `output.grad()` into `grads`,
    /// one buffer per input, each sized like that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]);

    /// Distance of the current point from the nearest non-differentiable
    /// configuration (ReLU kink, pooling or sort tie). Smooth ops return +inf.
    fn kink_margin(&self, _inputs: &[&Tensor], _output: &Tensor) -> f64 {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leaf {
    Input,
    Param(ParamId),
}

struct Node {
    inputs: Vec<Var>,
    value: Tensor,
    op: Option<Box<dyn Backward>>,
    leaf: Option<Leaf>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant (non-parameter) leaf. Its gradient is still accumulated.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Leaf::Input)
    }

    /// Leaf holding a copy of a parameter's current values.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).tensor.clone();
        value.zero_grad();
        self.push_leaf(value, Leaf::Param(id))
    }

    fn push_leaf(&mut self, mut value: Tensor, leaf: Leaf) -> Var {
        value.zero_grad();
        self.nodes.push(Node { inputs: Vec::new(), value, op: None, leaf: Some(leaf) });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation. Every input must already exist in the graph.
    pub fn push(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn Backward>) -> Var {
        let n = self.nodes.len();
        assert!(inputs.iter().all(|v| v.0 < n), "graph inputs must precede the node");
        let mut value = value;
        value.zero_grad();
        self.nodes.push(Node { inputs: inputs.to_vec(), value, op: Some(op), leaf: None });
        Var(n)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.grad()
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    /// Operation name, or `"input"` / `"param"` for leaves.
    pub fn node_name(&self, v: Var) -> &'static str {
        let node = &self.nodes[v.0];
        match (&node.op, node.leaf) {
            (Some(op), _) => op.name(),
            (None, Some(Leaf::Param(_))) => "param",
            _ => "input",
        }
    }

    pub fn leaf(&self, v: Var) -> Option<Leaf> {
        self.nodes[v.0].leaf
    }

    /// Marks every node that `root` transitively depends on (including itself).
    pub fn ancestors(&self, root: Var) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if seen[v.0] {
                continue;
            }
            seen[v.0] = true;
            stack.extend_from_slice(&self.nodes[v.0].inputs);
        }
        seen
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Back-propagates from `root`, seeding its adjoint with ones.
    ///
    /// Intermediate adjoints are reset first; leaf adjoints accumulate, so
    /// calling this on two roots leaves the sum of both gradients on leaves.
    pub fn backward(&mut self, root: Var) {
        for node in self.nodes.iter_mut().filter(|n| n.op.is_some()) {
            node.value.zero_grad();
        }
        self.nodes[root.0].value.grad_mut().iter_mut().for_each(|g| *g += 1.0);
        for n in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(n);
            let node = &rest[0];
            let Some(op) = node.op.as_ref() else { continue };
            if node.value.grad().iter().all(|&g| g == 0.0) {
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &before[v.0].value).collect();
            let mut grads: Vec<Vec<f64>> = inputs.iter().map(|t| vec![0.0; t.len()]).collect();
            op.backward(&inputs, &node.value, &mut grads);
            for (v, g) in node.inputs.iter().zip(grads) {
                let dst = before[v.0].value.grad_mut();
                for (d, x) in dst.iter_mut().zip(g) {
                    *d += x;
                }
            }
        }
    }

    /// Adds the adjoints of parameter leaves into the store's gradients.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let Some(Leaf::Param(id)) = node.leaf {
                let dst = store.get_mut(id).tensor.grad_mut();
                for (d, g) in dst.iter_mut().zip(node.value.grad()) {
                    *d += g;
                }
            }
        }
    }

    /// [`Backward::kink_margin`] of one node; infinite for leaves.
    pub fn node_kink_margin(&self, v: Var) -> f64 {
        let node = &self.nodes[v.0];
        match &node.op {
            Some(op) => {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
                op.kink_margin(&inputs, &node.value)
            }
            None => f64::INFINITY,
        }
    }

    /// Smallest [`Backward::kink_margin`] over all recorded operations.
    pub fn kink_margin(&self) -> f64 {
        (0..self.nodes.len()).map(|i| self.node_kink_margin(Var(i))).fold(f64::INFINITY, f64::min)
    }
}
