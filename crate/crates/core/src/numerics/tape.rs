use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, Op};
use super::{NumericsError, Result, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: u32,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
struct Node {
    /// `None` for leaves.
    op: Option<Op>,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
    /// Some ancestor (or the node itself) requires a gradient.
    needs_grad: bool,
}

/// Eagerly evaluated computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumer. A tape is single-threaded; independent tapes may be built in
/// parallel against shared [`Tensor`] values.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every parameter leaf.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get_mut(id.index()).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> NodeId {
        let index = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(node);
        NodeId {
            tape: self.id,
            index,
        }
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Node {
            op: None,
            inputs: Vec::new(),
            value,
            requires_grad,
            needs_grad: requires_grad,
        })
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    fn resolve(&self, id: NodeId) -> Result<usize> {
        if id.tape != self.id || id.index() >= self.nodes.len() {
            return Err(NumericsError::ForeignNode);
        }
        Ok(id.index())
    }

    /// # Panics
    /// If `id` was issued by a different tape.
    pub fn value(&self, id: NodeId) -> &Tensor {
        let i = self.resolve(id).expect("node from another tape");
        &self.nodes[i].value
    }

    pub fn try_value(&self, id: NodeId) -> Result<&Tensor> {
        self.resolve(id).map(|i| &self.nodes[i].value)
    }

    /// Evaluates `op` on the given nodes and records the result.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let idx = inputs
            .iter()
            .map(|&id| self.resolve(id))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let value = ops::forward(&op, &values)?;
        let needs_grad = idx.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(Node {
            op: Some(op),
            inputs: idx,
            value,
            requires_grad: false,
            needs_grad,
        }))
    }

    /// Reverse sweep from a scalar `root`. The tape is left untouched.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let r = self.resolve(root)?;
        if !self.nodes[r].value.is_scalar() {
            return Err(NumericsError::NotScalar(
                self.nodes[r].value.shape().to_vec(),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        adj[r] = Some(vec![1.0]);
        for i in (0..=r).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].needs_grad)
                .collect();
            let grads = ops::backward(op, &inputs, &node.value, &g, &needs);
            for (&j, grad) in node.inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !self.nodes[j].needs_grad {
                    continue;
                }
                match &mut adj[j] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(grad),
                }
            }
            // Keep leaf adjoints; drop intermediates as we go.
        }
        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                node.requires_grad.then(|| {
                    let data = adj
                        .get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| vec![0.0; node.value.len()]);
                    Tensor::from_raw(node.value.shape().to_vec(), data)
                })
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    /// Re-evaluates every recorded op from the stored input values and
    /// reports whether each result matches the stored value bit for bit.
    pub fn replay_matches(&self) -> bool {
        self.nodes.iter().all(|node| match &node.op {
            None => true,
            Some(op) => {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
                ops::forward(op, &inputs).is_ok_and(|v| v.bits_eq(&node.value))
            }
        })
    }

    /// Branch choices of every piecewise op on the tape.
    pub(crate) fn branch_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
                ops::branch_pattern(op, &inputs, &mut sig);
            }
        }
        sig
    }

    // -- shorthands -------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::AddConst(c), &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Neg, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum { axis: None }, &[a])
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::Sum { axis: Some(axis) }, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean { axis: None }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(
            Op::Reshape {
                shape: shape.to_vec(),
            },
            &[a],
        )
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Op::Slice { axis, start, len }, &[a])
    }

    pub fn maximum(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Maximum, inputs)
    }

    /// `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        self.apply(Op::SoftmaxCrossEntropy { label }, &[logits])
    }

    pub fn smooth_l1(&mut self, pred: NodeId, target: &Tensor, beta: f64) -> Result<NodeId> {
        self.apply(
            Op::SmoothL1 {
                target: target.clone(),
                beta,
            },
            &[pred],
        )
    }
}
