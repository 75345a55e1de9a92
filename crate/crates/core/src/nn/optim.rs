use serde::{Deserialize, Serialize};

/// Mean Huber loss over all components.
pub fn huber_loss(predicted: &[f64], observed: &[f64], delta: f64) -> f64 {
    assert_eq!(predicted.len(), observed.len(), "huber_loss length mismatch");
    assert!(delta > 0.0, "huber delta must be positive");
    if predicted.is_empty() {
        return 0.0;
    }
    let sum: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| {
            let r = (p - o).abs();
            if r < delta {
                0.5 * r * r
            } else {
                delta * (r - 0.5 * delta)
            }
        })
        .sum();
    sum / predicted.len() as f64
}

/// Derivative of [`huber_loss`] with respect to each prediction.
pub fn huber_grad(predicted: &[f64], observed: &[f64], delta: f64) -> Vec<f64> {
    assert_eq!(predicted.len(), observed.len(), "huber_grad length mismatch");
    let n = predicted.len() as f64;
    predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o).clamp(-delta, delta) / n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "adam_step length mismatch");
    assert_eq!(params.len(), state.m.len(), "adam state sized for another vector");
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}
