use std::fmt;
use std::str::FromStr;

use super::tensor::{check_shape, numel};
use super::{NumericsError, Result, Tensor};

/// A differentiable operation together with its attributes.
///
/// Elementwise binary ops (`Add`, `Sub`, `Mul`, `Div`) broadcast with
/// right-aligned extents: an axis of extent 1 (or a missing leading axis)
/// stretches to match the other operand.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    Scale(f64),
    AddConst(f64),
    Neg,
    Exp,
    Tanh,
    /// Subgradient at 0 is 0.
    Relu,
    Square,
    /// Sum over all elements (`None`, result shape `[1]`) or one axis (removed).
    Sum {
        axis: Option<usize>,
    },
    Mean {
        axis: Option<usize>,
    },
    Reshape {
        shape: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    BroadcastTo {
        shape: Vec<usize>,
    },
    /// Contiguous range `start..start + len` along `axis`.
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    /// Elementwise maximum across any number of equally shaped inputs.
    /// Gradient goes to the lowest-index input attaining the maximum.
    Maximum,
    /// `-log softmax(logits)[label]` over the flattened input; result `[1]`.
    SoftmaxCrossEntropy {
        label: usize,
    },
    /// Summed smooth-L1 distance to a fixed target; result `[1]`.
    SmoothL1 {
        target: Tensor,
        beta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Scale,
    AddConst,
    Neg,
    Exp,
    Tanh,
    Relu,
    Square,
    Sum,
    Mean,
    Reshape,
    Concat,
    BroadcastTo,
    Slice,
    Maximum,
    SoftmaxCrossEntropy,
    SmoothL1,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::MatMul,
        OpKind::Scale,
        OpKind::AddConst,
        OpKind::Neg,
        OpKind::Exp,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::Square,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Reshape,
        OpKind::Concat,
        OpKind::BroadcastTo,
        OpKind::Slice,
        OpKind::Maximum,
        OpKind::SoftmaxCrossEntropy,
        OpKind::SmoothL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Scale => "scale",
            OpKind::AddConst => "add_const",
            OpKind::Neg => "neg",
            OpKind::Exp => "exp",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::BroadcastTo => "broadcast_to",
            OpKind::Slice => "slice",
            OpKind::Maximum => "maximum",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::SmoothL1 => "smooth_l1",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = NumericsError;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NumericsError::UnknownOp(s.to_string()))
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Div => OpKind::Div,
            Op::MatMul => OpKind::MatMul,
            Op::Scale(_) => OpKind::Scale,
            Op::AddConst(_) => OpKind::AddConst,
            Op::Neg => OpKind::Neg,
            Op::Exp => OpKind::Exp,
            Op::Tanh => OpKind::Tanh,
            Op::Relu => OpKind::Relu,
            Op::Square => OpKind::Square,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Concat { .. } => OpKind::Concat,
            Op::BroadcastTo { .. } => OpKind::BroadcastTo,
            Op::Slice { .. } => OpKind::Slice,
            Op::Maximum => OpKind::Maximum,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::SmoothL1 { .. } => OpKind::SmoothL1,
        }
    }

    fn name(&self) -> &'static str {
        self.kind().name()
    }
}

// ---------------------------------------------------------------------------
// shape helpers

fn incompatible(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Incompatible { op, detail }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index of the broadcast source with
/// shape `inp`. `None` when no broadcasting happens.
fn broadcast_index(out: &[usize], inp: &[usize]) -> Option<Vec<usize>> {
    if out == inp {
        return None;
    }
    let rank = out.len();
    let offset = rank - inp.len();
    let mut strides = [0usize; 4];
    let mut dims = [1usize; 4];
    let mut stride = 1;
    for i in (0..rank).rev() {
        let extent = if i < offset { 1 } else { inp[i - offset] };
        // pad to 4 axes on the left
        let slot = 4 - rank + i;
        dims[slot] = out[i];
        strides[slot] = if extent == 1 { 0 } else { stride };
        stride *= extent;
    }
    let mut idx = Vec::with_capacity(numel(out));
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            for c in 0..dims[2] {
                let base = a * strides[0] + b * strides[1] + c * strides[2];
                for d in 0..dims[3] {
                    idx.push(base + d * strides[3]);
                }
            }
        }
    }
    Some(idx)
}

fn at(idx: &Option<Vec<usize>>, i: usize) -> usize {
    idx.as_ref().map_or(i, |v| v[i])
}

/// Sums `local` (laid out like the broadcast output) back into the source shape.
fn reduce_broadcast(idx: &Option<Vec<usize>>, local: Vec<f64>, len: usize) -> Vec<f64> {
    match idx {
        None => local,
        Some(map) => {
            let mut acc = vec![0.0; len];
            for (&j, v) in map.iter().zip(local) {
                acc[j] += v;
            }
            acc
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(NumericsError::AxisOutOfRange { op, axis, rank });
    }
    Ok(())
}

fn arity(op: &Op, inputs: usize) -> Result<()> {
    let (ok, expected) = match op {
        Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul => (inputs == 2, "2"),
        Op::Concat { .. } | Op::Maximum => (inputs >= 1, "at least 1"),
        _ => (inputs == 1, "1"),
    };
    if ok {
        Ok(())
    } else {
        Err(NumericsError::Arity {
            op: op.name(),
            expected,
            actual: inputs,
        })
    }
}

fn smooth_l1_term(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    }
}

/// Summed smooth-L1 distance between equally long slices.
pub fn smooth_l1_sum(pred: &[f64], target: &[f64], beta: f64) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| smooth_l1_term(p - t, beta))
        .sum()
}

/// Index of the first maximal element.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax over `logits`, stabilized by subtracting the maximum.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[label]`, accurate down to subnormal losses.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let top = argmax_first(logits);
    let m = logits[top];
    let tail: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &z)| (z - m).exp())
        .sum();
    (m - logits[label]) + tail.ln_1p()
}

// ---------------------------------------------------------------------------
// forward

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    arity(op, inputs.len())?;
    let out = forward_unchecked(op, inputs)?;
    if !out.all_finite() {
        return Err(NumericsError::NonFiniteResult { op: op.name() });
    }
    Ok(out)
}

fn elementwise(op: &Op, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| incompatible(op.name(), format!("{:?} vs {:?}", a.shape(), b.shape())))?;
    let ia = broadcast_index(&shape, a.shape());
    let ib = broadcast_index(&shape, b.shape());
    let (ad, bd) = (a.data(), b.data());
    let data = (0..numel(&shape))
        .map(|i| f(ad[at(&ia, i)], bd[at(&ib, i)]))
        .collect();
    Ok(Tensor::from_raw(shape, data))
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_raw(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn forward_unchecked(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    let x = inputs[0];
    Ok(match op {
        Op::Add => elementwise(op, x, inputs[1], |a, b| a + b)?,
        Op::Sub => elementwise(op, x, inputs[1], |a, b| a - b)?,
        Op::Mul => elementwise(op, x, inputs[1], |a, b| a * b)?,
        Op::Div => elementwise(op, x, inputs[1], |a, b| a / b)?,
        Op::MatMul => matmul(x, inputs[1])?,
        Op::Scale(c) => unary(x, |v| c * v),
        Op::AddConst(c) => unary(x, |v| v + c),
        Op::Neg => unary(x, |v| -v),
        Op::Exp => unary(x, f64::exp),
        Op::Tanh => unary(x, f64::tanh),
        Op::Relu => unary(x, |v| if v > 0.0 { v } else { 0.0 }),
        Op::Square => unary(x, |v| v * v),
        Op::Sum { axis } | Op::Mean { axis } => {
            let mean = matches!(op, Op::Mean { .. });
            match axis {
                None => {
                    let s: f64 = x.data().iter().sum();
                    let n = x.len() as f64;
                    Tensor::from_raw(vec![1], vec![if mean { s / n } else { s }])
                }
                Some(axis) => {
                    check_axis(op.name(), *axis, x.rank())?;
                    let (outer, n, inner) = split_axis(x.shape(), *axis);
                    let mut out = vec![0.0; outer * inner];
                    let d = x.data();
                    for o in 0..outer {
                        for j in 0..n {
                            let row = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                            for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                    if mean {
                        out.iter_mut().for_each(|v| *v /= n as f64);
                    }
                    Tensor::from_raw(without_axis(x.shape(), *axis), out)
                }
            }
        }
        Op::Reshape { shape } => {
            check_shape(shape)?;
            if numel(shape) != x.len() {
                return Err(incompatible(
                    op.name(),
                    format!("{:?} -> {:?}", x.shape(), shape),
                ));
            }
            x.reshape(shape)?
        }
        Op::BroadcastTo { shape } => {
            check_shape(shape)?;
            if broadcast_shape(x.shape(), shape).as_deref() != Some(shape.as_slice()) {
                return Err(incompatible(
                    op.name(),
                    format!("{:?} -> {:?}", x.shape(), shape),
                ));
            }
            let idx = broadcast_index(shape, x.shape());
            let d = x.data();
            let data = (0..numel(shape)).map(|i| d[at(&idx, i)]).collect();
            Tensor::from_raw(shape.clone(), data)
        }
        Op::Concat { axis } => {
            check_axis(op.name(), *axis, x.rank())?;
            let mut shape = x.shape().to_vec();
            shape[*axis] = 0;
            for t in inputs {
                let same = t.rank() == x.rank()
                    && (0..x.rank()).all(|i| i == *axis || t.shape()[i] == x.shape()[i]);
                if !same {
                    return Err(incompatible(
                        op.name(),
                        format!("{:?} vs {:?}", x.shape(), t.shape()),
                    ));
                }
                shape[*axis] += t.shape()[*axis];
            }
            let (outer, _, inner) = split_axis(x.shape(), *axis);
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for t in inputs {
                    let block = t.shape()[*axis] * inner;
                    data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Tensor::from_raw(shape, data)
        }
        Op::Slice { axis, start, len } => {
            check_axis(op.name(), *axis, x.rank())?;
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            if *len == 0 || start + len > n {
                return Err(NumericsError::InvalidAttr {
                    op: op.name(),
                    detail: format!("range {start}..{} exceeds extent {n}", start + len),
                });
            }
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                data.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = *len;
            Tensor::from_raw(shape, data)
        }
        Op::Maximum => {
            for t in inputs {
                if t.shape() != x.shape() {
                    return Err(incompatible(
                        op.name(),
                        format!("{:?} vs {:?}", x.shape(), t.shape()),
                    ));
                }
            }
            let mut data = x.data().to_vec();
            for t in &inputs[1..] {
                for (acc, &v) in data.iter_mut().zip(t.data()) {
                    if v > *acc {
                        *acc = v;
                    }
                }
            }
            Tensor::from_raw(x.shape().to_vec(), data)
        }
        Op::SoftmaxCrossEntropy { label } => {
            if *label >= x.len() {
                return Err(NumericsError::LabelOutOfRange {
                    label: *label,
                    classes: x.len(),
                });
            }
            Tensor::from_raw(vec![1], vec![cross_entropy(x.data(), *label)])
        }
        Op::SmoothL1 { target, beta } => {
            if beta.is_nan() || *beta <= 0.0 {
                return Err(NumericsError::InvalidAttr {
                    op: op.name(),
                    detail: format!("beta must be positive, got {beta}"),
                });
            }
            if target.shape() != x.shape() {
                return Err(incompatible(
                    op.name(),
                    format!("{:?} vs target {:?}", x.shape(), target.shape()),
                ));
            }
            let s = smooth_l1_sum(x.data(), target.data(), *beta);
            Tensor::from_raw(vec![1], vec![s])
        }
    })
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(incompatible(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Ok(Tensor::from_raw(
        vec![m, n],
        matmul_raw(a.data(), b.data(), m, k, n),
    ))
}

/// Row-major `[m, k] x [k, n]`.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// reverse

/// Vector-Jacobian product: gradients for each input whose `needs` flag is set.
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let x = inputs[0];
    let unary_grad = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> {
        vec![Some((0..g.len()).map(f).collect())]
    };
    match op {
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            let b = inputs[1];
            let shape = out.shape();
            let ia = broadcast_index(shape, x.shape());
            let ib = broadcast_index(shape, b.shape());
            let (ad, bd) = (x.data(), b.data());
            let ga = needs[0].then(|| {
                let local: Vec<f64> = match op {
                    Op::Add | Op::Sub => g.to_vec(),
                    Op::Mul => (0..g.len()).map(|i| g[i] * bd[at(&ib, i)]).collect(),
                    _ => (0..g.len()).map(|i| g[i] / bd[at(&ib, i)]).collect(),
                };
                reduce_broadcast(&ia, local, x.len())
            });
            let gb = needs[1].then(|| {
                let local: Vec<f64> = match op {
                    Op::Add => g.to_vec(),
                    Op::Sub => g.iter().map(|v| -v).collect(),
                    Op::Mul => (0..g.len()).map(|i| g[i] * ad[at(&ia, i)]).collect(),
                    _ => (0..g.len())
                        .map(|i| {
                            let bv = bd[at(&ib, i)];
                            -g[i] * ad[at(&ia, i)] / (bv * bv)
                        })
                        .collect(),
                };
                reduce_broadcast(&ib, local, b.len())
            });
            vec![ga, gb]
        }
        Op::MatMul => {
            let b = inputs[1];
            let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
            let ga = needs[0].then(|| {
                // g [m,n] x b^T [n,k]
                let mut out = vec![0.0; m * k];
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b.data()[p * n..(p + 1) * n];
                        out[i * k + p] = gi.iter().zip(brow).map(|(u, v)| u * v).sum();
                    }
                }
                out
            });
            let gb = needs[1].then(|| {
                // a^T [k,m] x g [m,n]
                let mut out = vec![0.0; k * n];
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = x.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(gi) {
                            *o += aip * gv;
                        }
                    }
                }
                out
            });
            vec![ga, gb]
        }
        Op::Scale(c) => unary_grad(&|i| c * g[i]),
        Op::AddConst(_) => vec![Some(g.to_vec())],
        Op::Neg => unary_grad(&|i| -g[i]),
        Op::Exp => unary_grad(&|i| g[i] * out.data()[i]),
        Op::Tanh => unary_grad(&|i| {
            let y = out.data()[i];
            g[i] * (1.0 - y * y)
        }),
        Op::Relu => unary_grad(&|i| if x.data()[i] > 0.0 { g[i] } else { 0.0 }),
        Op::Square => unary_grad(&|i| 2.0 * x.data()[i] * g[i]),
        Op::Sum { axis } | Op::Mean { axis } => {
            let mean = matches!(op, Op::Mean { .. });
            match axis {
                None => {
                    let v = if mean { g[0] / x.len() as f64 } else { g[0] };
                    vec![Some(vec![v; x.len()])]
                }
                Some(axis) => {
                    let (outer, n, inner) = split_axis(x.shape(), *axis);
                    let div = if mean { n as f64 } else { 1.0 };
                    let mut grad = Vec::with_capacity(x.len());
                    for o in 0..outer {
                        for _ in 0..n {
                            grad.extend(g[o * inner..(o + 1) * inner].iter().map(|v| v / div));
                        }
                    }
                    vec![Some(grad)]
                }
            }
        }
        Op::Reshape { .. } => vec![Some(g.to_vec())],
        Op::BroadcastTo { shape } => {
            let idx = broadcast_index(shape, x.shape());
            vec![Some(reduce_broadcast(&idx, g.to_vec(), x.len()))]
        }
        Op::Concat { axis } => {
            let (outer, _, inner) = split_axis(x.shape(), *axis);
            let total = out.shape()[*axis] * inner;
            let mut offset = 0;
            inputs
                .iter()
                .zip(needs)
                .map(|(t, &need)| {
                    let block = t.shape()[*axis] * inner;
                    let grad = need.then(|| {
                        let mut v = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let base = o * total + offset;
                            v.extend_from_slice(&g[base..base + block]);
                        }
                        v
                    });
                    offset += block;
                    grad
                })
                .collect()
        }
        Op::Slice { axis, start, len } => {
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let mut grad = vec![0.0; x.len()];
            for o in 0..outer {
                let src = &g[o * len * inner..(o + 1) * len * inner];
                let base = (o * n + start) * inner;
                grad[base..base + len * inner].copy_from_slice(src);
            }
            vec![Some(grad)]
        }
        Op::Maximum => {
            let mut grads: Vec<Option<Vec<f64>>> = needs
                .iter()
                .map(|&need| need.then(|| vec![0.0; x.len()]))
                .collect();
            for i in 0..x.len() {
                let mut best = 0;
                for (j, t) in inputs.iter().enumerate().skip(1) {
                    if t.data()[i] > inputs[best].data()[i] {
                        best = j;
                    }
                }
                if let Some(gr) = grads[best].as_mut() {
                    gr[i] = g[i];
                }
            }
            grads
        }
        Op::SoftmaxCrossEntropy { label } => {
            let mut p = softmax(x.data());
            p[*label] -= 1.0;
            p.iter_mut().for_each(|v| *v *= g[0]);
            vec![Some(p)]
        }
        Op::SmoothL1 { target, beta } => {
            let grad = x
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| {
                    let d = p - t;
                    let local = if d.abs() < *beta {
                        d / beta
                    } else {
                        d.signum()
                    };
                    g[0] * local
                })
                .collect();
            vec![Some(grad)]
        }
    }
}

/// Discrete branch choices taken by piecewise ops; a change between two
/// evaluations means a kink was crossed.
pub(crate) fn branch_pattern(op: &Op, inputs: &[&Tensor], sink: &mut Vec<u32>) {
    match op {
        Op::Relu => sink.extend(inputs[0].data().iter().map(|&v| u32::from(v > 0.0))),
        Op::Maximum => {
            for i in 0..inputs[0].len() {
                let mut best = 0;
                for (j, t) in inputs.iter().enumerate().skip(1) {
                    if t.data()[i] > inputs[best].data()[i] {
                        best = j;
                    }
                }
                sink.push(best as u32);
            }
        }
        Op::SmoothL1 { target, beta } => sink.extend(
            inputs[0]
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| u32::from((p - t).abs() < *beta)),
        ),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 7, 7], &[7, 7]), Some(vec![3, 7, 7]));
        assert_eq!(broadcast_shape(&[7, 7], &[1]), Some(vec![7, 7]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[3, 2]), None);
    }

    #[test]
    fn elementwise_broadcast_over_leading_axis() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let m = t(&[2], &[10.0, 100.0]);
        let y = forward(&Op::Mul, &[&x, &m]).unwrap();
        assert_eq!(y.data(), &[10.0, 200.0, 30.0, 400.0]);
    }

    #[test]
    fn axis_reductions() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s0 = forward(&Op::Sum { axis: Some(0) }, &[&x]).unwrap();
        assert_eq!(s0.shape(), &[3]);
        assert_eq!(s0.data(), &[5.0, 7.0, 9.0]);
        let m1 = forward(&Op::Mean { axis: Some(1) }, &[&x]).unwrap();
        assert_eq!(m1.data(), &[2.0, 5.0]);
        let all = forward(&Op::Sum { axis: None }, &[&x]).unwrap();
        assert_eq!(all.shape(), &[1]);
        assert_eq!(all.item(), 21.0);
        assert!(matches!(
            forward(&Op::Sum { axis: Some(2) }, &[&x]),
            Err(NumericsError::AxisOutOfRange { .. })
        ));
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = forward(&Op::Concat { axis: 1 }, &[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = forward(
            &Op::Slice {
                axis: 1,
                start: 1,
                len: 2,
            },
            &[&c],
        )
        .unwrap();
        assert_eq!(s, b);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let uniform = cross_entropy(&[0.0; 4], 2);
        assert!((uniform - 4f64.ln()).abs() < 1e-15);
        let saturated = cross_entropy(&[100.0, 0.0, 0.0, 0.0], 0);
        assert!((0.0..1e-40).contains(&saturated));
        // -ln(e^3 / (e + e^2 + e^3)), evaluated independently.
        let direct = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((cross_entropy(&[1.0, 2.0, 3.0], 2) - direct).abs() < 1e-15);
        assert!((direct - 0.407_605_964).abs() < 1e-9);
    }

    #[test]
    fn smooth_l1_closed_forms() {
        let target = Tensor::zeros(&[4]);
        let op = |beta| Op::SmoothL1 {
            target: target.clone(),
            beta,
        };
        let eval = |d: [f64; 4], beta| forward(&op(beta), &[&t(&[4], &d)]).map(|v| v.item());
        assert_eq!(eval([0.0; 4], 1.0).unwrap(), 0.0);
        assert_eq!(eval([0.5, 0.0, 0.0, 0.0], 1.0).unwrap(), 0.125);
        assert_eq!(eval([2.0, 0.0, 0.0, 0.0], 1.0).unwrap(), 1.5);
        assert!(matches!(
            eval([0.0; 4], 0.0),
            Err(NumericsError::InvalidAttr { .. })
        ));
    }

    #[test]
    fn op_names_roundtrip() {
        for k in OpKind::ALL {
            assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
        }
        assert_eq!(
            "conv2d".parse::<OpKind>(),
            Err(NumericsError::UnknownOp("conv2d".into()))
        );
    }

    #[test]
    fn arity_and_shape_errors() {
        let a = t(&[2, 3], &[0.0; 6]);
        assert!(matches!(
            forward(&Op::MatMul, &[&a, &a]),
            Err(NumericsError::Incompatible { .. })
        ));
        assert!(matches!(
            forward(&Op::Add, &[&a]),
            Err(NumericsError::Arity { .. })
        ));
        assert!(matches!(
            forward(&Op::Reshape { shape: vec![4] }, &[&a]),
            Err(NumericsError::Incompatible { .. })
        ));
        let big = t(&[1], &[800.0]);
        assert_eq!(
            forward(&Op::Exp, &[&big]),
            Err(NumericsError::NonFiniteResult { op: "exp" })
        );
    }
}
