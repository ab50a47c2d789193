use serde::{Deserialize, Serialize};

use super::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
/// Buffers are allocated on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` using `grads`, which must have
/// the same parameter layout.
pub fn adam_step<P: Params>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &AdamConfig) {
    let mut g: Vec<Vec<f64>> = Vec::new();
    grads.visit(&mut |_, _, v| g.push(v.to_vec()));
    if state.m.is_empty() {
        state.m = g.iter().map(|t| vec![0.0; t.len()]).collect();
        state.v = state.m.clone();
    }
    assert_eq!(state.m.len(), g.len(), "optimizer state does not match the model");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);

    let mut k = 0;
    params.visit_mut(&mut |_, p| {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &g[k]);
        assert_eq!(p.len(), g.len(), "gradient shape mismatch");
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        k += 1;
    });
}
