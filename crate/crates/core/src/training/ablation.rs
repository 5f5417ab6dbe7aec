use super::{evaluate_with, train, Head, Metrics, Result, TrainConfig, TrainError};
use crate::data::{gen_dataset_with, TaskConfig};
use crate::model::{LgaConfig, LgaModel, Variant};
use crate::rng::derive_seed;

pub const ABLATION_HEADER: &str =
    "seed,variant,acc_main,acc_aux,mask_dist,loss_total,box_l1,center_dist";

/// The two variants compared per seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationArms {
    pub treatment: Variant,
    pub control: Variant,
}

impl Default for AblationArms {
    fn default() -> Self {
        Self {
            treatment: Variant::Lga,
            control: Variant::Baseline,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSetup {
    pub seeds: Vec<u64>,
    pub task: TaskConfig,
    pub model: LgaConfig,
    /// `seed` and `lga_enabled` are overridden per run.
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub arms: AblationArms,
}

impl AblationSetup {
    pub fn new(seeds: Vec<u64>, task: TaskConfig) -> Self {
        Self {
            seeds,
            model: LgaConfig::new(task.channels, task.classes),
            task,
            train: TrainConfig {
                track_metrics: false,
                ..TrainConfig::default()
            },
            n_train: 2000,
            n_val: 500,
            arms: AblationArms::default(),
        }
    }
}

/// Validation metrics of one trained arm.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: Variant,
    pub metrics: Metrics,
    /// Mask distance of the untrained (zero-head, centered) model on the same split.
    pub center_dist: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub arms: AblationArms,
    /// Treatment then control for each seed, in seed order.
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    fn pairs(&self) -> impl Iterator<Item = (&AblationRow, &AblationRow)> {
        self.rows.chunks(2).map(|p| (&p[0], &p[1]))
    }

    pub fn acc_differences(&self) -> Vec<f64> {
        self.pairs()
            .map(|(t, c)| t.metrics.acc_main - c.metrics.acc_main)
            .collect()
    }

    pub fn mean_acc_difference(&self) -> f64 {
        mean(&self.acc_differences())
    }

    /// Mean treatment mask distance, if the treatment has masks.
    pub fn treatment_mask_dist(&self) -> Option<f64> {
        self.pairs()
            .map(|(t, _)| t.metrics.mask_dist)
            .collect::<Option<Vec<_>>>()
            .map(|v| mean(&v))
    }

    pub fn center_dist(&self) -> f64 {
        mean(&self.pairs().map(|(t, _)| t.center_dist).collect::<Vec<_>>())
    }

    /// One row per arm per seed plus a `mean` summary row holding the mean
    /// accuracy difference and the treatment's mean mask distance.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = format!("{ABLATION_HEADER}\n");
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.seed,
                r.variant.name(),
                m.acc_main,
                opt(m.acc_aux),
                opt(m.mask_dist),
                m.loss_total,
                m.box_l1,
                r.center_dist
            ));
        }
        out.push_str(&format!(
            "mean,{}-{},{},,{},,,{}\n",
            self.arms.treatment.name(),
            self.arms.control.name(),
            self.mean_acc_difference(),
            opt(self.treatment_mask_dist()),
            self.center_dist()
        ));
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains both arms per seed from the same initial weights on the same data
/// and evaluates them on a held-out split.
pub fn ablation_compare(setup: &AblationSetup) -> Result<AblationReport> {
    if setup.seeds.len() < 2 {
        return Err(TrainError::Config("ablation needs at least 2 seeds".into()));
    }
    let mut sorted = setup.seeds.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(TrainError::Config("ablation seeds must be distinct".into()));
    }
    setup.train.validate()?;
    let exec = setup.train.exec;
    let mut rows = Vec::with_capacity(2 * setup.seeds.len());
    for &seed in &setup.seeds {
        let train_set = gen_dataset_with(exec, seed, setup.n_train, &setup.task)?;
        let val_set = gen_dataset_with(exec, derive_seed(seed, 1), setup.n_val, &setup.task)?;
        let init = LgaModel::init(setup.model.clone(), seed)?;
        let center = evaluate_with(
            &Head {
                model: &init,
                variant: Variant::Lga,
            },
            &val_set,
            exec,
        )?
        .mask_dist
        .expect("lga variant reports mask distance");
        for variant in [setup.arms.treatment, setup.arms.control] {
            let mut model = init.clone();
            let cfg = TrainConfig {
                seed,
                lga_enabled: variant == Variant::Lga,
                track_metrics: false,
                ..setup.train.clone()
            };
            train(&mut model, &train_set, None, &cfg)?;
            rows.push(AblationRow {
                seed,
                variant,
                metrics: evaluate_with(
                    &Head {
                        model: &model,
                        variant,
                    },
                    &val_set,
                    exec,
                )?,
                center_dist: center,
            });
        }
    }
    Ok(AblationReport {
        arms: setup.arms,
        rows,
    })
}
