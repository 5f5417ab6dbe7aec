use super::{linear, Bound, ModelError, ParamGroup, Result};
use crate::numerics::{NodeId, Tape, Tensor};

/// Per-RoI mask parameters in grid units.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    /// `(mu_y, mu_x)` per mask.
    pub centers: Vec<(f64, f64)>,
    pub scales: Vec<f64>,
}

/// Mask parameters as tape nodes: `mu` holds the `k` row coordinates
/// followed by the `k` column coordinates, `sigma` the `k` scales.
#[derive(Clone, Copy, Debug)]
pub struct GaussianNodes {
    pub mu: NodeId,
    pub sigma: NodeId,
    pub masks: usize,
}

impl GaussianNodes {
    pub fn values(&self, tape: &Tape) -> GaussianParams {
        let mu = tape.value(self.mu).data();
        let k = self.masks;
        GaussianParams {
            centers: (0..k).map(|g| (mu[g], mu[k + g])).collect(),
            scales: tape.value(self.sigma).data().to_vec(),
        }
    }

    /// Scalar nodes `(mu_y, mu_x, sigma)` of mask `g`.
    pub fn split(&self, tape: &mut Tape, g: usize) -> Result<(NodeId, NodeId, NodeId)> {
        Ok((
            tape.slice(self.mu, 0, g, 1)?,
            tape.slice(self.mu, 0, self.masks + g, 1)?,
            tape.slice(self.sigma, 0, g, 1)?,
        ))
    }
}

pub(crate) fn check_feature(bound: &Bound, tape: &Tape, x: NodeId) -> Result<()> {
    let expected = bound.config.feature_shape();
    let actual = tape.try_value(x)?.shape();
    if actual != expected {
        return Err(ModelError::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

/// Predicts `k` centers `(S/2)(tanh(z_mu) + 1)` and scales `relu(z_sigma) + 1`
/// from a `C x H x W` feature.
pub fn predict_params(bound: &Bound, tape: &mut Tape, x: NodeId) -> Result<GaussianNodes> {
    check_feature(bound, tape, x)?;
    let c = &bound.config;
    let cells = c.cells();

    // f_d: per-cell channel projection C -> C_d, then relu.
    let x2 = tape.reshape(x, &[c.channels, cells])?;
    let d = tape.matmul(bound.id(ParamGroup::DownW), x2)?;
    let d = tape.add(d, bound.id(ParamGroup::DownB))?;
    let d = tape.relu(d)?;
    let h = tape.reshape(d, &[1, c.down_channels * cells])?;

    let z_mu = linear(
        tape,
        h,
        bound.id(ParamGroup::MuW),
        bound.id(ParamGroup::MuB),
    )?;
    let z_mu = tape.reshape(z_mu, &[2 * c.masks])?;
    let t = tape.tanh(z_mu)?;
    let t = tape.add_const(t, 1.0)?;
    let mu = tape.scale(t, c.s_ratio / 2.0)?;

    let z_sigma = linear(
        tape,
        h,
        bound.id(ParamGroup::SigmaW),
        bound.id(ParamGroup::SigmaB),
    )?;
    let z_sigma = tape.reshape(z_sigma, &[c.masks])?;
    let r = tape.relu(z_sigma)?;
    let sigma = tape.add_const(r, 1.0)?;

    Ok(GaussianNodes {
        mu,
        sigma,
        masks: c.masks,
    })
}

fn grid(height: usize, width: usize, coord: impl Fn(usize, usize) -> usize) -> Tensor {
    Tensor::from_fn(&[height, width], |i| {
        coord(i / width, i % width) as f64 + 0.5
    })
    .expect("non-empty grid")
}

/// Peak-one isotropic Gaussian over cell centers `(i + 0.5, j + 0.5)`:
/// `exp(-((i + 0.5 - mu_y)^2 + (j + 0.5 - mu_x)^2) / (2 sigma^2))`.
///
/// All three parameters are single-element nodes.
pub fn render_mask(
    tape: &mut Tape,
    mu_y: NodeId,
    mu_x: NodeId,
    sigma: NodeId,
    height: usize,
    width: usize,
) -> Result<NodeId> {
    for id in [mu_y, mu_x, sigma] {
        let v = tape.try_value(id)?;
        if !v.is_scalar() {
            return Err(ModelError::ShapeMismatch {
                expected: vec![1],
                actual: v.shape().to_vec(),
            });
        }
    }
    let s = tape.value(sigma).item();
    if s < 1.0 {
        return Err(ModelError::SigmaBelowOne(s));
    }
    let rows = tape.constant(grid(height, width, |i, _| i));
    let cols = tape.constant(grid(height, width, |_, j| j));
    let dy = tape.sub(rows, mu_y)?;
    let dx = tape.sub(cols, mu_x)?;
    let dy2 = tape.square(dy)?;
    let dx2 = tape.square(dx)?;
    let d2 = tape.add(dy2, dx2)?;
    let s2 = tape.square(sigma)?;
    let denom = tape.scale(s2, 2.0)?;
    let q = tape.div(d2, denom)?;
    let q = tape.neg(q)?;
    Ok(tape.exp(q)?)
}

/// Elementwise maximum over the masks; ties route gradient to the first.
pub fn combine_masks(tape: &mut Tape, masks: &[NodeId]) -> Result<NodeId> {
    if masks.is_empty() {
        return Err(ModelError::NoMasks);
    }
    if masks.len() == 1 {
        return Ok(masks[0]);
    }
    Ok(tape.maximum(masks)?)
}

/// `x[c, i, j] * mask[i, j]`.
pub fn apply_mask(tape: &mut Tape, x: NodeId, mask: NodeId) -> Result<NodeId> {
    let xs = tape.try_value(x)?.shape();
    let ms = tape.try_value(mask)?.shape();
    if xs.len() != 3 || ms != &xs[1..] {
        return Err(ModelError::ShapeMismatch {
            expected: xs.get(1..).unwrap_or_default().to_vec(),
            actual: ms.to_vec(),
        });
    }
    Ok(tape.mul(x, mask)?)
}

/// `x + x_masked`: the original feature survives unchanged beside the
/// highlighted one.
pub fn fuse(tape: &mut Tape, x: NodeId, masked: NodeId) -> Result<NodeId> {
    let xs = tape.try_value(x)?.shape();
    let ms = tape.try_value(masked)?.shape();
    if xs != ms {
        return Err(ModelError::ShapeMismatch {
            expected: xs.to_vec(),
            actual: ms.to_vec(),
        });
    }
    Ok(tape.add(x, masked)?)
}
