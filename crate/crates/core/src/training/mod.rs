//! Optimizer, training and evaluation loops, metrics and the ablation harness.

mod ablation;
mod adam;
mod metrics;

pub use ablation::{
    ablation_compare, AblationArms, AblationReport, AblationRow, AblationSetup, ABLATION_HEADER,
};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{evaluate, evaluate_with, Head, Metrics, Prediction, RoiHead, METRICS_HEADER};

use thiserror::Error;

use crate::data::{encode_box_target, DataError, Dataset, TaskConfig};
use crate::model::{forward, total_loss, LgaConfig, LgaModel, ModelError, Variant};
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::parallel::{self, Execution};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration mismatch: {0}")]
    Mismatch(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient in weight group {group}")]
    NonFiniteGradient { group: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// `false` trains the baseline: no masks, `fused = x`, no auxiliary loss.
    pub lga_enabled: bool,
    pub lambda_reg: Option<f64>,
    pub lambda_lga: Option<f64>,
    /// Evaluate every split after every epoch (and once before training).
    pub track_metrics: bool,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            lga_enabled: true,
            lambda_reg: None,
            lambda_lga: None,
            track_metrics: true,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        let a = &self.adam;
        if !(a.lr > 0.0
            && a.eps > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2))
        {
            return Err(TrainError::Config(
                "lr and eps must be positive, betas in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        if self.lga_enabled {
            Variant::Lga
        } else {
            Variant::Baseline
        }
    }
}

/// Metrics of one split after one epoch; epoch 0 is before any update.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Mean training loss over each epoch's mini-batches.
    pub epoch_loss: Vec<f64>,
    /// Mean loss of every mini-batch, in order.
    pub batch_loss: Vec<f64>,
    pub skipped_steps: usize,
}

impl TrainLog {
    /// Metrics log as CSV with [`METRICS_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.metrics.csv_row(&r.epoch.to_string(), &r.split));
            out.push('\n');
        }
        out
    }
}

/// Checks that a dataset can feed a model.
pub fn check_compatible(model: &LgaConfig, task: &TaskConfig) -> Result<()> {
    let pairs = [
        ("channels", model.channels, task.channels),
        ("height", model.height, task.height),
        ("width", model.width, task.width),
        ("classes", model.classes, task.classes),
    ];
    for (name, m, t) in pairs {
        if m != t {
            return Err(TrainError::Mismatch(format!(
                "{name}: model has {m}, data has {t}"
            )));
        }
    }
    Ok(())
}

/// Summed per-group gradients and summed loss over a batch of instances.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    /// One tensor per parameter group, in `ParamGroup::ALL` order.
    pub grads: Vec<Tensor>,
    pub loss: f64,
}

fn instance_gradient(
    model: &LgaModel,
    variant: Variant,
    features: &Tensor,
    label: usize,
    target: &Tensor,
) -> Result<(Vec<Tensor>, f64)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let x = tape.constant(features.clone());
    let result = forward(&bound, &mut tape, x, variant)?;
    let loss = total_loss(&mut tape, &result, label, target, model.config())?;
    let mut grads = tape.backward(loss.total)?;
    let per_group = bound
        .ids()
        .iter()
        .map(|&id| grads.take(id).expect("bound weights are parameters"))
        .collect();
    Ok((per_group, tape.value(loss.total).item()))
}

/// Instances per reduction chunk. Chunks are folded in index order and their
/// sums added in chunk order, so the result does not depend on the thread count.
const REDUCE_CHUNK: usize = 4;

fn add_into(acc: &mut BatchGradient, (grads, loss): (Vec<Tensor>, f64)) {
    for (a, g) in acc.grads.iter_mut().zip(grads) {
        a.data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(x, y)| *x += y);
    }
    acc.loss += loss;
}

/// Summed gradient of `total_loss` over `batch` (indices into `dataset`).
/// Bit-identical for both execution modes.
pub fn batch_gradient(
    model: &LgaModel,
    variant: Variant,
    dataset: &Dataset,
    batch: &[usize],
    exec: Execution,
) -> Result<BatchGradient> {
    check_compatible(model.config(), &dataset.config)?;
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= dataset.len()) {
        return Err(TrainError::Config(format!(
            "batch index {i} out of range for {} instances",
            dataset.len()
        )));
    }
    let targets = dataset
        .instances
        .iter()
        .map(|inst| encode_box_target(inst, &dataset.config))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    reduce_batch(model, variant, dataset, &targets, batch, exec)
}

/// Per-instance forward/backward with a deterministic chunked reduction.
fn reduce_batch(
    model: &LgaModel,
    variant: Variant,
    dataset: &Dataset,
    targets: &[Tensor],
    batch: &[usize],
    exec: Execution,
) -> Result<BatchGradient> {
    let one = |i: usize| {
        let inst = &dataset.instances[i];
        instance_gradient(model, variant, &inst.features, inst.label, &targets[i])
    };
    let chunks: Vec<&[usize]> = batch.chunks(REDUCE_CHUNK).collect();
    let parts = parallel::map_indexed(exec, &chunks, |_, chunk| -> Result<BatchGradient> {
        let (grads, loss) = one(chunk[0])?;
        let mut acc = BatchGradient { grads, loss };
        for &i in &chunk[1..] {
            add_into(&mut acc, one(i)?);
        }
        Ok(acc)
    });
    let mut iter = parts.into_iter();
    let mut total = iter.next().expect("non-empty batch")?;
    for part in iter {
        let part = part?;
        add_into(&mut total, (part.grads, part.loss));
    }
    Ok(total)
}

/// Mini-batch training with Adam on a seeded shuffle.
///
/// Loss-weight overrides in `cfg` are written into the model's config. The
/// returned log holds one metrics record per split per epoch (epoch 0 is the
/// untrained model) when `cfg.track_metrics` is set, otherwise only the
/// final epoch's records.
pub fn train(
    model: &mut LgaModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_compatible(model.config(), &train_set.config)?;
    if let Some(v) = val_set {
        check_compatible(model.config(), &v.config)?;
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let lambda_reg = cfg.lambda_reg.unwrap_or(model.config().lambda_reg);
    let lambda_lga = cfg.lambda_lga.unwrap_or(model.config().lambda_lga);
    model.set_loss_weights(lambda_reg, lambda_lga)?;

    let variant = cfg.variant();
    let targets = train_set
        .instances
        .iter()
        .map(|inst| encode_box_target(inst, &train_set.config))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut state = AdamState::new(model.weights());
    let mut rng = Rng::seed(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut log = TrainLog::default();

    let record = |log: &mut TrainLog, model: &LgaModel, epoch: usize| -> Result<()> {
        let head = Head { model, variant };
        let mut splits = vec![("train", train_set)];
        if let Some(v) = val_set {
            splits.push(("val", v));
        }
        for (split, data) in splits {
            log.records.push(EpochRecord {
                epoch,
                split: split.to_string(),
                metrics: evaluate_with(&head, data, cfg.exec)?,
            });
        }
        Ok(())
    };

    if cfg.track_metrics {
        record(&mut log, model, 0)?;
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut bg = reduce_batch(model, variant, train_set, &targets, batch, cfg.exec)?;
            let inv = 1.0 / batch.len() as f64;
            for g in &mut bg.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            epoch_loss += bg.loss;
            log.batch_loss.push(bg.loss * inv);
            match adam_step(model.weights_mut(), &bg.grads, &mut state, &cfg.adam) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGradient { .. }) => log.skipped_steps += 1,
                Err(e) => return Err(e),
            }
        }
        log.epoch_loss.push(epoch_loss / train_set.len() as f64);
        if cfg.track_metrics || epoch == cfg.epochs {
            record(&mut log, model, epoch)?;
        }
    }
    Ok(log)
}
