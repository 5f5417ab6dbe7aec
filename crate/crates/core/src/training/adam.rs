use super::TrainError;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per weight tensor, plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(weights: &[Tensor]) -> Self {
        Self {
            m: weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v: weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. On a non-finite gradient nothing changes
/// (weights, moments and step count) and the error is returned.
pub fn adam_step(
    weights: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if weights.len() != grads.len() || weights.len() != state.m.len() {
        return Err(TrainError::Mismatch(format!(
            "{} weights, {} gradients, {} moment slots",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (w, g)) in weights.iter().zip(grads).enumerate() {
        if w.shape() != g.shape() || state.m[i].len() != w.len() {
            return Err(TrainError::Mismatch(format!(
                "group {i}: weight {:?} vs gradient {:?}",
                w.shape(),
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(TrainError::NonFiniteGradient { group: i });
        }
    }

    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (i, (w, g)) in weights.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (wj, &gj)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *wj -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
