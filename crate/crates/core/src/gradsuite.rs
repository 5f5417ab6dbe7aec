//! Finite-difference check of every primitive op plus the full training loss.

use crate::data::{encode_box_target, gen_dataset, TaskConfig};
use crate::model::{forward, total_loss, Bound, LgaConfig, ModelError, ParamGroup, Variant};
use crate::numerics::{
    grad_check, GradCheckReport, NodeId, NumericsError, Op, OpKind, Result, Tape, Tensor,
};
use crate::rng::{derive_seed, Rng};

/// Central-difference step used by the suite.
pub const STEP: f64 = 1e-5;

/// Name of the end-to-end row.
pub const END_TO_END: &str = "total_loss";

#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub name: String,
    pub report: GradCheckReport,
}

/// One row per [`OpKind`] (in [`OpKind::ALL`] order) and a final
/// [`END_TO_END`] row for the loss of a tiny model (C=4, k=2, 3 classes).
pub fn run(seed: u64, tolerance: f64) -> std::result::Result<Vec<SuiteRow>, ModelError> {
    let mut rows = Vec::with_capacity(OpKind::ALL.len() + 1);
    for (i, kind) in OpKind::ALL.into_iter().enumerate() {
        let mut rng = Rng::seed(derive_seed(seed, i as u64));
        let report = check_op(kind, &mut rng, tolerance)?;
        rows.push(SuiteRow {
            name: kind.name().to_string(),
            report,
        });
    }
    rows.push(SuiteRow {
        name: END_TO_END.to_string(),
        report: check_end_to_end(seed, tolerance)?,
    });
    Ok(rows)
}

fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Slices `len` elements of the flat point starting at `start`, as `shape`.
fn part(tape: &mut Tape, p: NodeId, start: usize, shape: &[usize]) -> Result<NodeId> {
    let len = shape.iter().product();
    let s = tape.slice(p, 0, start, len)?;
    tape.reshape(s, shape)
}

/// Contracts a node with fixed random weights so every output element
/// receives a distinct upstream gradient.
fn contract(tape: &mut Tape, out: NodeId, weights: &[f64]) -> Result<NodeId> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(Tensor::new(
        &shape,
        weights[..tape.value(out).len()].to_vec(),
    )?);
    let y = tape.mul(out, w)?;
    tape.sum(y)
}

fn check_op(kind: OpKind, rng: &mut Rng, tolerance: f64) -> Result<GradCheckReport> {
    let mut point = normals(rng, 12);
    let weights = normals(rng, 12);
    if kind == OpKind::Div {
        // keep denominators away from zero
        for v in &mut point[6..9] {
            *v = v.abs() + 0.5;
        }
    }
    let target = Tensor::new(&[6], normals(rng, 6))?;
    let build = |tape: &mut Tape, p: NodeId| -> Result<NodeId> {
        let out = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let a = part(tape, p, 0, &[2, 3])?;
                let b = part(tape, p, 6, &[3])?;
                let op = match kind {
                    OpKind::Add => Op::Add,
                    OpKind::Sub => Op::Sub,
                    OpKind::Mul => Op::Mul,
                    _ => Op::Div,
                };
                tape.apply(op, &[a, b])?
            }
            OpKind::MatMul => {
                let a = part(tape, p, 0, &[2, 3])?;
                let b = part(tape, p, 6, &[3, 2])?;
                tape.matmul(a, b)?
            }
            OpKind::Scale => tape.scale(p, 1.7)?,
            OpKind::AddConst => tape.add_const(p, 0.3)?,
            OpKind::Neg => tape.neg(p)?,
            OpKind::Exp => tape.exp(p)?,
            OpKind::Tanh => tape.tanh(p)?,
            OpKind::Relu => tape.relu(p)?,
            OpKind::Square => tape.square(p)?,
            OpKind::Sum => {
                let a = part(tape, p, 0, &[3, 4])?;
                tape.apply(Op::Sum { axis: Some(1) }, &[a])?
            }
            OpKind::Mean => {
                let a = part(tape, p, 0, &[3, 4])?;
                tape.apply(Op::Mean { axis: Some(0) }, &[a])?
            }
            OpKind::Reshape => tape.reshape(p, &[4, 3])?,
            OpKind::Concat => {
                let a = part(tape, p, 0, &[2, 3])?;
                let b = part(tape, p, 6, &[2, 1])?;
                tape.apply(Op::Concat { axis: 1 }, &[a, b])?
            }
            OpKind::BroadcastTo => {
                let a = part(tape, p, 0, &[1, 3])?;
                tape.apply(Op::BroadcastTo { shape: vec![4, 3] }, &[a])?
            }
            OpKind::Slice => {
                let a = part(tape, p, 0, &[3, 4])?;
                tape.slice(a, 1, 1, 2)?
            }
            OpKind::Maximum => {
                let a = part(tape, p, 0, &[4])?;
                let b = part(tape, p, 4, &[4])?;
                let c = part(tape, p, 8, &[4])?;
                tape.maximum(&[a, b, c])?
            }
            OpKind::SoftmaxCrossEntropy => {
                let a = part(tape, p, 0, &[5])?;
                tape.softmax_cross_entropy(a, 2)?
            }
            OpKind::SmoothL1 => {
                let a = part(tape, p, 0, &[6])?;
                tape.smooth_l1(a, &target, 1.0)?
            }
        };
        contract(tape, out, &weights)
    };
    grad_check(build, &Tensor::new(&[12], point)?, STEP, tolerance)
}

fn check_end_to_end(seed: u64, tolerance: f64) -> std::result::Result<GradCheckReport, ModelError> {
    let task = TaskConfig {
        channels: 4,
        classes: 3,
        ..TaskConfig::default()
    };
    let mut config = LgaConfig::new(4, 3);
    config.masks = 2;
    config.hidden = 8;
    let data = gen_dataset(seed, 1, &task).map_err(|e| ModelError::Config(e.to_string()))?;
    let inst = &data.instances[0];
    let box_target =
        encode_box_target(inst, &task).map_err(|e| ModelError::Config(e.to_string()))?;

    // Random weights everywhere so the attention heads are off their
    // zero init; a positive sigma bias keeps the relu away from its kink.
    let mut rng = Rng::seed(derive_seed(seed, u64::MAX - 1));
    let shapes: Vec<Vec<usize>> = ParamGroup::ALL.iter().map(|g| g.shape(&config)).collect();
    let mut point = Vec::new();
    for (g, shape) in ParamGroup::ALL.iter().zip(&shapes) {
        let n: usize = shape.iter().product();
        for _ in 0..n {
            point.push(match g {
                ParamGroup::SigmaB => 0.5,
                _ => rng.uniform_in(-0.3, 0.3),
            });
        }
    }
    let n = point.len();
    let build = |tape: &mut Tape, p: NodeId| -> Result<NodeId> {
        let mut ids = Vec::with_capacity(shapes.len());
        let mut start = 0;
        for shape in &shapes {
            ids.push(part(tape, p, start, shape)?);
            start += shape.iter().product::<usize>();
        }
        let bound = Bound::new(config.clone(), ids.try_into().expect("one node per group"));
        let x = tape.constant(inst.features.clone());
        let err = |e: ModelError| match e {
            ModelError::Numerics(e) => e,
            other => NumericsError::InvalidAttr {
                op: "forward",
                detail: other.to_string(),
            },
        };
        let result = forward(&bound, tape, x, Variant::Lga).map_err(err)?;
        let loss = total_loss(tape, &result, inst.label, &box_target, &config).map_err(err)?;
        Ok(loss.total)
    };
    Ok(grad_check(
        build,
        &Tensor::new(&[n], point)?,
        STEP,
        tolerance,
    )?)
}
