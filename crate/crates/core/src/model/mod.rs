//! Loss-guided attention head over RoI feature volumes.
//!
//! A downsampling net `f_d` feeds two linear heads that predict, for each of
//! `k` masks, a center `mu = (S/2)(tanh(z_mu) + 1)` in `[0, S]^2` and a scale
//! `sigma = relu(z_sigma) + 1 >= 1`. The rendered Gaussian masks are merged by
//! elementwise maximum, multiplied into the RoI feature, and the masked
//! feature is added back onto the original (`x * (1 + M)`). The main
//! classifier and the box regressor read the fused feature through a shared
//! hidden layer; an auxiliary linear classifier reads the masked feature
//! only, and its loss is what steers the masks.

mod attention;
mod forward;
mod io;

pub use attention::{
    apply_mask, combine_masks, fuse, predict_params, render_mask, GaussianNodes, GaussianParams,
};
pub use forward::{forward, total_loss, AttentionOutputs, ForwardResult, LossNodes, BOX_BETA};
pub use io::{load_model, read_model, save_model, write_model};

use thiserror::Error;

use crate::numerics::{NodeId, NumericsError, Tape, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("gaussian scale {0} is below 1")]
    SigmaBelowOne(f64),
    #[error("no masks to combine")]
    NoMasks,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which head architecture a forward pass runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Gaussian masks, fusion and auxiliary loss.
    Lga,
    /// Same heads reading the raw feature (`fused = x`), no masks, no
    /// auxiliary loss. Never touches `f_d`, `f_mu` or `f_sigma`.
    Baseline,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lga => "lga",
            Variant::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgaConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of Gaussian masks `k`.
    pub masks: usize,
    /// Center scaling; must equal the grid side so centers span `[0, side]`.
    pub s_ratio: f64,
    pub down_channels: usize,
    pub hidden: usize,
    pub classes: usize,
    pub lambda_reg: f64,
    pub lambda_lga: f64,
}

impl Default for LgaConfig {
    fn default() -> Self {
        Self::new(32, 4)
    }
}

impl LgaConfig {
    /// Defaults for a 7x7 grid: `k = 4`, `C_d = C / 4`, 128 hidden units,
    /// unit loss weights.
    pub fn new(channels: usize, classes: usize) -> Self {
        Self {
            channels,
            height: 7,
            width: 7,
            masks: 4,
            s_ratio: 7.0,
            down_channels: (channels / 4).max(1),
            hidden: 128,
            classes,
            lambda_reg: 1.0,
            lambda_lga: 1.0,
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.channels == 0 || self.down_channels == 0 || self.hidden == 0 {
            return fail("channels, down_channels and hidden must be at least 1");
        }
        if self.masks == 0 {
            return fail("masks must be at least 1");
        }
        if self.classes < 2 {
            return fail("classes must be at least 2");
        }
        if self.height == 0 || self.height != self.width {
            return fail("grid must be square and non-empty");
        }
        if self.s_ratio != self.height as f64 {
            return fail("s_ratio must equal the grid side");
        }
        for (name, v) in [
            ("lambda_reg", self.lambda_reg),
            ("lambda_lga", self.lambda_lga),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::Config(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Learnable weight groups, in storage and serialization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    DownW,
    DownB,
    MuW,
    MuB,
    SigmaW,
    SigmaB,
    HiddenW,
    HiddenB,
    ClassW,
    ClassB,
    AuxW,
    AuxB,
    BoxW,
    BoxB,
}

pub const PARAM_GROUPS: usize = 14;

impl ParamGroup {
    pub const ALL: [ParamGroup; PARAM_GROUPS] = [
        ParamGroup::DownW,
        ParamGroup::DownB,
        ParamGroup::MuW,
        ParamGroup::MuB,
        ParamGroup::SigmaW,
        ParamGroup::SigmaB,
        ParamGroup::HiddenW,
        ParamGroup::HiddenB,
        ParamGroup::ClassW,
        ParamGroup::ClassB,
        ParamGroup::AuxW,
        ParamGroup::AuxB,
        ParamGroup::BoxW,
        ParamGroup::BoxB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::DownW => "down_w",
            ParamGroup::DownB => "down_b",
            ParamGroup::MuW => "mu_w",
            ParamGroup::MuB => "mu_b",
            ParamGroup::SigmaW => "sigma_w",
            ParamGroup::SigmaB => "sigma_b",
            ParamGroup::HiddenW => "hidden_w",
            ParamGroup::HiddenB => "hidden_b",
            ParamGroup::ClassW => "class_w",
            ParamGroup::ClassB => "class_b",
            ParamGroup::AuxW => "aux_w",
            ParamGroup::AuxB => "aux_b",
            ParamGroup::BoxW => "box_w",
            ParamGroup::BoxB => "box_b",
        }
    }

    /// Groups only the attention branch reads.
    pub fn is_attention(self) -> bool {
        matches!(
            self,
            ParamGroup::DownW
                | ParamGroup::DownB
                | ParamGroup::MuW
                | ParamGroup::MuB
                | ParamGroup::SigmaW
                | ParamGroup::SigmaB
        )
    }

    pub fn shape(self, c: &LgaConfig) -> Vec<usize> {
        let down_flat = c.down_channels * c.cells();
        let flat = c.channels * c.cells();
        match self {
            ParamGroup::DownW => vec![c.down_channels, c.channels],
            ParamGroup::DownB => vec![c.down_channels, 1],
            ParamGroup::MuW => vec![down_flat, 2 * c.masks],
            ParamGroup::MuB => vec![1, 2 * c.masks],
            ParamGroup::SigmaW => vec![down_flat, c.masks],
            ParamGroup::SigmaB => vec![1, c.masks],
            ParamGroup::HiddenW => vec![flat, c.hidden],
            ParamGroup::HiddenB => vec![1, c.hidden],
            ParamGroup::ClassW => vec![c.hidden, c.classes],
            ParamGroup::ClassB => vec![1, c.classes],
            ParamGroup::AuxW => vec![flat, c.classes],
            ParamGroup::AuxB => vec![1, c.classes],
            ParamGroup::BoxW => vec![c.hidden, 4],
            ParamGroup::BoxB => vec![1, 4],
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// All learnable weights plus the config they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct LgaModel {
    config: LgaConfig,
    weights: Vec<Tensor>,
}

impl LgaModel {
    /// Glorot-uniform weights from `seed`, zero biases, and zero `f_mu` /
    /// `f_sigma` heads so every mask starts at the grid center with unit scale.
    pub fn init(config: LgaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed(seed);
        let weights = ParamGroup::ALL
            .iter()
            .map(|&g| {
                let shape = g.shape(&config);
                let n: usize = shape.iter().product();
                let glorot = matches!(
                    g,
                    ParamGroup::DownW
                        | ParamGroup::HiddenW
                        | ParamGroup::ClassW
                        | ParamGroup::AuxW
                        | ParamGroup::BoxW
                );
                let data = if glorot {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.uniform_in(-a, a)).collect()
                } else {
                    vec![0.0; n]
                };
                Tensor::new(&shape, data).map_err(ModelError::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, weights })
    }

    /// Assembles a model from explicit weights, checking every shape.
    pub fn from_weights(config: LgaConfig, weights: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if weights.len() != PARAM_GROUPS {
            return Err(ModelError::Config(format!(
                "expected {PARAM_GROUPS} weight groups, got {}",
                weights.len()
            )));
        }
        for (g, w) in ParamGroup::ALL.iter().zip(&weights) {
            let expected = g.shape(&config);
            if w.shape() != expected.as_slice() {
                return Err(ModelError::ShapeMismatch {
                    expected,
                    actual: w.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &LgaConfig {
        &self.config
    }

    /// Loss weights may change between runs without touching the weights.
    pub fn set_loss_weights(&mut self, lambda_reg: f64, lambda_lga: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.lambda_reg = lambda_reg;
        c.lambda_lga = lambda_lga;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn weight(&self, group: ParamGroup) -> &Tensor {
        &self.weights[group.index()]
    }

    /// Replaces one group's weights; the shape must not change.
    pub fn set_weight(&mut self, group: ParamGroup, value: Tensor) -> Result<()> {
        let expected = group.shape(&self.config);
        if value.shape() != expected.as_slice() {
            return Err(ModelError::ShapeMismatch {
                expected,
                actual: value.shape().to_vec(),
            });
        }
        self.weights[group.index()] = value;
        Ok(())
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum()
    }

    /// Places every weight group on `tape`, as parameters when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let ids = self
            .weights
            .iter()
            .map(|w| {
                if trainable {
                    tape.param(w.clone())
                } else {
                    tape.constant(w.clone())
                }
            })
            .collect::<Vec<_>>()
            .try_into()
            .expect("fixed group count");
        Bound {
            config: self.config.clone(),
            ids,
        }
    }

    /// Bit-level equality of config and all weights.
    pub fn bits_eq(&self, other: &LgaModel) -> bool {
        self.config == other.config
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.bits_eq(b))
    }
}

/// A model's weights as nodes on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    pub config: LgaConfig,
    ids: [NodeId; PARAM_GROUPS],
}

impl Bound {
    /// Uses caller-made nodes, in [`ParamGroup::ALL`] order, as the weights.
    pub fn new(config: LgaConfig, ids: [NodeId; PARAM_GROUPS]) -> Self {
        Self { config, ids }
    }

    pub fn id(&self, group: ParamGroup) -> NodeId {
        self.ids[group.index()]
    }

    pub fn ids(&self) -> &[NodeId; PARAM_GROUPS] {
        &self.ids
    }
}

/// Dense layer `x [1, in] -> [1, out]`.
pub(crate) fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, b)?)
}
