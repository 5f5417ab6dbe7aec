//! Synthetic "camouflage" RoI benchmark.
//!
//! Every instance is a `C x H x W` feature volume whose classes share the same
//! global statistics. The only class evidence is a small `p x p` block
//! carrying the label's signature vector at a uniformly random position. A
//! class-independent distractor block and white noise sit on top of a
//! per-instance random background.
//!
//! Signatures are orthonormal channel vectors. The background and the
//! distractor project equally onto every signature, so with zero noise the
//! inner product of the true block with each signature recovers the label
//! exactly, while the global channel mean carries only a diluted signal.

mod io;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};

use thiserror::Error;

use crate::binio::FormatError;
use crate::numerics::Tensor;
use crate::parallel::{self, Execution};
use crate::rng::{derive_seed, Rng};

/// Standard deviation of the per-cell background field.
pub const BACKGROUND_SCALE: f64 = 0.25;

const SIGNATURE_STREAM: u64 = 0x4C47_4153_4947;
const LABEL_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid task config: {0}")]
    Config(String),
    #[error("dataset must contain at least one instance")]
    Empty,
    #[error("degenerate box: height and width must be positive")]
    DegenerateBox,
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Side of the signature block, in cells.
    pub patch: usize,
    /// Signature strength `s`.
    pub strength: f64,
    /// White-noise standard deviation `eta`.
    pub noise: f64,
    pub distractors: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            height: 7,
            width: 7,
            classes: 4,
            patch: 2,
            strength: 1.0,
            noise: 0.3,
            distractors: 1,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::Config(m));
        if self.height == 0 || self.width == 0 {
            return fail("grid must be non-empty".into());
        }
        if self.patch == 0 || self.patch > self.height.min(self.width) {
            return fail(format!(
                "patch must be in 1..={}, got {}",
                self.height.min(self.width),
                self.patch
            ));
        }
        if self.classes < 2 || self.classes > self.channels {
            return fail(format!(
                "classes must be in 2..=channels ({}), got {}",
                self.channels, self.classes
            ));
        }
        if !(self.strength.is_finite() && self.strength > 0.0) {
            return fail(format!("strength must be positive, got {}", self.strength));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail(format!("noise must be >= 0, got {}", self.noise));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    /// `C x H x W`, channel-major.
    pub features: Tensor,
    pub label: usize,
    /// `(cy, cx)` in grid units.
    pub patch_center: (f64, f64),
    /// `(cy, cx, h, w)` in grid units.
    pub patch_box: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: TaskConfig,
    pub seed: u64,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn bits_eq(&self, other: &Dataset) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.instances.len() == other.instances.len()
            && self.instances.iter().zip(&other.instances).all(|(a, b)| {
                a.label == b.label
                    && a.patch_center.0.to_bits() == b.patch_center.0.to_bits()
                    && a.patch_center.1.to_bits() == b.patch_center.1.to_bits()
                    && a.patch_box
                        .iter()
                        .zip(&b.patch_box)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.features.bits_eq(&b.features)
            })
    }
}

/// Orthonormal class signatures: Gram-Schmidt over Gaussian vectors drawn
/// from a seed fixed by `(channels, classes)`.
pub fn signatures(config: &TaskConfig) -> Vec<Vec<f64>> {
    let mut rng = Rng::seed(derive_seed(
        SIGNATURE_STREAM,
        ((config.channels as u64) << 32) | config.classes as u64,
    ));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(config.classes);
    while basis.len() < config.classes {
        let mut v: Vec<f64> = (0..config.channels).map(|_| rng.normal()).collect();
        for b in &basis {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Instance generator with the config-derived signatures precomputed.
#[derive(Clone, Debug)]
pub struct Generator {
    config: TaskConfig,
    signatures: Vec<Vec<f64>>,
    /// Unit vector with equal projection onto every signature.
    common: Vec<f64>,
}

impl Generator {
    pub fn new(config: TaskConfig) -> Result<Self> {
        config.validate()?;
        let signatures = signatures(&config);
        let k = config.classes as f64;
        let common = (0..config.channels)
            .map(|c| signatures.iter().map(|s| s[c]).sum::<f64>() / k.sqrt())
            .collect();
        Ok(Self {
            config,
            signatures,
            common,
        })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn signatures(&self) -> &[Vec<f64>] {
        &self.signatures
    }

    /// Draws a block position, then distractor positions, then the
    /// background, then noise, in that order.
    pub fn instance(&self, rng: &mut Rng, label: usize) -> Instance {
        let cfg = &self.config;
        assert!(label < cfg.classes, "label out of range");
        let (h, w, p, cells) = (cfg.height, cfg.width, cfg.patch, cfg.cells());
        let positions = ((h - p + 1) as u64, (w - p + 1) as u64);
        let draw = |rng: &mut Rng| {
            (
                rng.below(positions.0) as usize,
                rng.below(positions.1) as usize,
            )
        };
        let block = draw(rng);
        let distractors: Vec<(usize, usize)> = (0..cfg.distractors)
            .map(|_| loop {
                let pos = draw(rng);
                if pos != block || positions == (1, 1) {
                    break pos;
                }
            })
            .collect();

        // cell-major scratch: cell * C + channel
        let mut v = vec![0.0; cells * cfg.channels];
        for cell in v.chunks_mut(cfg.channels) {
            cell.iter_mut()
                .for_each(|x| *x = BACKGROUND_SCALE * rng.normal());
            let proj: Vec<f64> = self.signatures.iter().map(|s| dot(cell, s)).collect();
            let mean = proj.iter().sum::<f64>() / proj.len() as f64;
            for (s, a) in self.signatures.iter().zip(&proj) {
                cell.iter_mut()
                    .zip(s)
                    .for_each(|(x, y)| *x -= (a - mean) * y);
            }
        }
        let mut stamp = |(by, bx): (usize, usize), vector: &[f64]| {
            for i in by..by + p {
                for j in bx..bx + p {
                    let cell = &mut v[(i * w + j) * cfg.channels..(i * w + j + 1) * cfg.channels];
                    cell.iter_mut()
                        .zip(vector)
                        .for_each(|(x, y)| *x += cfg.strength * y);
                }
            }
        };
        stamp(block, &self.signatures[label]);
        for &d in &distractors {
            stamp(d, &self.common);
        }
        if cfg.noise > 0.0 {
            v.iter_mut().for_each(|x| *x += cfg.noise * rng.normal());
        }

        let mut features = vec![0.0; v.len()];
        for cell in 0..cells {
            for c in 0..cfg.channels {
                features[c * cells + cell] = v[cell * cfg.channels + c];
            }
        }
        let half = p as f64 / 2.0;
        let center = (block.0 as f64 + half, block.1 as f64 + half);
        Instance {
            features: Tensor::new(&[cfg.channels, h, w], features).expect("finite features"),
            label,
            patch_center: center,
            patch_box: [center.0, center.1, p as f64, p as f64],
        }
    }
}

/// One instance with a uniformly drawn label.
pub fn gen_instance(rng: &mut Rng, config: &TaskConfig) -> Result<Instance> {
    let g = Generator::new(config.clone())?;
    let label = rng.below(config.classes as u64) as usize;
    Ok(g.instance(rng, label))
}

pub fn gen_dataset(seed: u64, n: usize, config: &TaskConfig) -> Result<Dataset> {
    gen_dataset_with(Execution::default(), seed, n, config)
}

/// Labels are assigned round-robin and shuffled; instance `i` is drawn from
/// its own sub-seed, so the result does not depend on `exec`.
pub fn gen_dataset_with(
    exec: Execution,
    seed: u64,
    n: usize,
    config: &TaskConfig,
) -> Result<Dataset> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    let generator = Generator::new(config.clone())?;
    let mut labels: Vec<usize> = (0..n).map(|i| i % config.classes).collect();
    Rng::seed(derive_seed(seed, LABEL_STREAM)).shuffle(&mut labels);
    let instances = parallel::map_indexed(exec, &labels, |i, &label| {
        let mut rng = Rng::seed(derive_seed(seed, i as u64));
        generator.instance(&mut rng, label)
    });
    Ok(Dataset {
        config: config.clone(),
        seed,
        instances,
    })
}

/// `((cy - H/2) / H, (cx - W/2) / W, ln(h / H), ln(w / W))`.
pub fn encode_box(patch_box: [f64; 4], config: &TaskConfig) -> Result<[f64; 4]> {
    let [cy, cx, h, w] = patch_box;
    if !(h > 0.0 && w > 0.0) {
        return Err(DataError::DegenerateBox);
    }
    let (gh, gw) = (config.height as f64, config.width as f64);
    Ok([
        (cy - gh / 2.0) / gh,
        (cx - gw / 2.0) / gw,
        (h / gh).ln(),
        (w / gw).ln(),
    ])
}

pub fn decode_box(t: [f64; 4], config: &TaskConfig) -> [f64; 4] {
    let (gh, gw) = (config.height as f64, config.width as f64);
    [
        t[0] * gh + gh / 2.0,
        t[1] * gw + gw / 2.0,
        t[2].exp() * gh,
        t[3].exp() * gw,
    ]
}

/// Regression target for an instance's signature block.
pub fn encode_box_target(instance: &Instance, config: &TaskConfig) -> Result<Tensor> {
    let t = encode_box(instance.patch_box, config)?;
    Ok(Tensor::new(&[4], t.to_vec()).expect("finite target"))
}
