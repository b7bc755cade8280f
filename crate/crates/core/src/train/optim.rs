//! Adam with bias correction and a step size that ramps up linearly over
//! `warmup` steps, then follows a cosine decay.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Length of the cosine schedule; the rate reaches zero at this step.
    pub total_steps: usize,
    /// Global gradient-norm clip.
    pub clip: Option<f64>,
    #[serde(default)]
    pub warmup: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 2000,
            clip: None,
            warmup: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// `lr · min(1, (t + 1) / W) · ½ (1 + cos(π t / T))` for the 0-based step
/// `t`; `T = 0` disables the decay.
pub fn learning_rate(cfg: &AdamConfig, step: usize) -> f64 {
    let ramp = if step < cfg.warmup {
        (step + 1) as f64 / cfg.warmup as f64
    } else {
        1.0
    };
    if cfg.total_steps == 0 {
        return cfg.lr * ramp;
    }
    let x = (step.min(cfg.total_steps) as f64) / cfg.total_steps as f64;
    0.5 * cfg.lr * ramp * (1.0 + (std::f64::consts::PI * x).cos())
}

pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "gradient size");
    assert_eq!(params.len(), state.m.len(), "optimizer state size");
    let scale = match cfg.clip {
        Some(c) => {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let lr = learning_rate(cfg, state.t);
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i] * scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        let c = AdamConfig::default();
        for _ in 0..5 {
            optimizer_step(&mut p, &[0.0; 3], &mut s, &c);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_gradient_moves_by_the_rate() {
        // With g constant, m̂ = g and v̂ = g² exactly, so each update is
        // lr · g / (|g| + ε).
        let c = AdamConfig {
            total_steps: 0,
            warmup: 0,
            ..AdamConfig::default()
        };
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        for _ in 0..100 {
            optimizer_step(&mut p, &g, &mut s, &c);
        }
        for i in 0..3 {
            let step = c.lr * g[i] / (g[i].abs() + c.eps);
            assert!((p[i] + 100.0 * step).abs() < 1e-12, "{i}: {}", p[i]);
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.5; 4];
            let mut s = AdamState::new(4);
            let c = AdamConfig::default();
            for k in 0..10 {
                let g: Vec<f64> = (0..4).map(|i| ((k * 4 + i) as f64).sin()).collect();
                optimizer_step(&mut p, &g, &mut s, &c);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cosine_schedule_and_clip() {
        let c = AdamConfig {
            lr: 1e-3,
            total_steps: 100,
            warmup: 0,
            ..AdamConfig::default()
        };
        assert_eq!(learning_rate(&c, 0), 1e-3);
        assert!((learning_rate(&c, 50) - 5e-4).abs() < 1e-15);
        assert!(learning_rate(&c, 100).abs() < 1e-18);
        let w = AdamConfig { warmup: 10, ..c };
        assert!((learning_rate(&w, 0) - 1e-4).abs() < 1e-18);
        assert!((learning_rate(&w, 4) - 0.5 * learning_rate(&c, 4)).abs() < 1e-18);
        assert_eq!(learning_rate(&w, 10), learning_rate(&c, 10));
        let clipped = AdamConfig {
            clip: Some(1.0),
            total_steps: 0,
            warmup: 0,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        optimizer_step(&mut p, &[300.0, 400.0], &mut s, &clipped);
        assert!((s.m[0] - 0.1 * 0.6).abs() < 1e-12);
    }
}
