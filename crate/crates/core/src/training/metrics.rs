use super::{check_compatible, Result, TrainError};
use crate::data::{encode_box, Dataset};
use crate::model::{forward, GaussianParams, LgaModel, Variant};
use crate::numerics::{argmax_first, cross_entropy, smooth_l1_sum, Tape};
use crate::parallel::{self, Execution};

pub const METRICS_HEADER: &str =
    "epoch,split,loss_total,loss_cls,loss_reg,loss_lga,acc_main,acc_aux,mask_dist,box_l1";

/// Dataset-level evaluation record. Attention-only fields are `None` for the
/// baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub acc_main: f64,
    pub acc_aux: Option<f64>,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_reg: f64,
    pub loss_lga: Option<f64>,
    /// Mean over instances of the smallest center-to-patch distance among the masks.
    pub mask_dist: Option<f64>,
    /// Mean over instances of the summed absolute box-target error.
    pub box_l1: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Metrics {
    /// CSV row matching [`METRICS_HEADER`] (empty cells for absent values).
    pub fn csv_row(&self, epoch: &str, split: &str) -> String {
        format!(
            "{epoch},{split},{},{},{},{},{},{},{},{}",
            self.loss_total,
            self.loss_cls,
            self.loss_reg,
            opt(self.loss_lga),
            self.acc_main,
            opt(self.acc_aux),
            opt(self.mask_dist),
            self.box_l1
        )
    }
}

/// Raw outputs of a head on one RoI.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub main_logits: Vec<f64>,
    pub aux_logits: Option<Vec<f64>>,
    pub box_pred: [f64; 4],
    pub params: Option<GaussianParams>,
}

/// Anything that maps a RoI feature to predictions.
pub trait RoiHead: Sync {
    fn predict(&self, features: &crate::numerics::Tensor) -> Result<Prediction>;
    fn classes(&self) -> usize;
    /// `(lambda_reg, lambda_lga)`.
    fn loss_weights(&self) -> (f64, f64);
    fn check(&self, _dataset: &Dataset) -> Result<()> {
        Ok(())
    }
}

/// A model run as a particular variant.
#[derive(Clone, Copy, Debug)]
pub struct Head<'a> {
    pub model: &'a LgaModel,
    pub variant: Variant,
}

impl RoiHead for Head<'_> {
    fn predict(&self, features: &crate::numerics::Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let r = forward(&bound, &mut tape, x, self.variant)?;
        let b = tape.value(r.box_pred).data();
        Ok(Prediction {
            main_logits: tape.value(r.main_logits).data().to_vec(),
            aux_logits: r.aux_logits.map(|id| tape.value(id).data().to_vec()),
            box_pred: [b[0], b[1], b[2], b[3]],
            params: r.attention.map(|a| a.params.values(&tape)),
        })
    }

    fn classes(&self) -> usize {
        self.model.config().classes
    }

    fn loss_weights(&self) -> (f64, f64) {
        let c = self.model.config();
        (c.lambda_reg, c.lambda_lga)
    }

    fn check(&self, dataset: &Dataset) -> Result<()> {
        check_compatible(self.model.config(), &dataset.config)
    }
}

pub fn evaluate(model: &LgaModel, variant: Variant, dataset: &Dataset) -> Result<Metrics> {
    evaluate_with(&Head { model, variant }, dataset, Execution::default())
}

struct Sample {
    correct: bool,
    aux_correct: Option<bool>,
    cls: f64,
    reg: f64,
    lga: Option<f64>,
    dist: Option<f64>,
    box_l1: f64,
}

/// Evaluates `head` on every instance; the head is only read.
pub fn evaluate_with(head: &impl RoiHead, dataset: &Dataset, exec: Execution) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    head.check(dataset)?;
    let (lambda_reg, lambda_lga) = head.loss_weights();
    let samples = parallel::map_indexed(exec, &dataset.instances, |_, inst| -> Result<Sample> {
        let p = head.predict(&inst.features)?;
        if p.main_logits.len() != head.classes() {
            return Err(TrainError::Mismatch(format!(
                "head produced {} logits for {} classes",
                p.main_logits.len(),
                head.classes()
            )));
        }
        let target = encode_box(inst.patch_box, &dataset.config)?;
        let dist = p.params.as_ref().map(|g| {
            g.centers
                .iter()
                .map(|&(y, x)| (y - inst.patch_center.0).hypot(x - inst.patch_center.1))
                .fold(f64::INFINITY, f64::min)
        });
        Ok(Sample {
            correct: argmax_first(&p.main_logits) == inst.label,
            aux_correct: p.aux_logits.as_ref().map(|a| argmax_first(a) == inst.label),
            cls: cross_entropy(&p.main_logits, inst.label),
            reg: smooth_l1_sum(&p.box_pred, &target, crate::model::BOX_BETA),
            lga: p.aux_logits.as_ref().map(|a| cross_entropy(a, inst.label)),
            dist,
            box_l1: p
                .box_pred
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs())
                .sum(),
        })
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&Sample) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&Sample) -> Option<f64>| {
        samples
            .iter()
            .map(f)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n)
    };
    let loss_cls = mean(&|s| s.cls);
    let loss_reg = mean(&|s| s.reg);
    let loss_lga = mean_opt(&|s| s.lga);
    Ok(Metrics {
        count: samples.len(),
        acc_main: mean(&|s| f64::from(u8::from(s.correct))),
        acc_aux: mean_opt(&|s| s.aux_correct.map(|c| f64::from(u8::from(c)))),
        loss_total: loss_cls + lambda_reg * loss_reg + lambda_lga * loss_lga.unwrap_or(0.0),
        loss_cls,
        loss_reg,
        loss_lga,
        mask_dist: mean_opt(&|s| s.dist),
        box_l1: mean(&|s| s.box_l1),
    })
}
