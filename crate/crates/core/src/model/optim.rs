//! AdamW with decoupled weight decay and cosine annealing with warm restarts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr_max: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Iterations in the first cosine cycle.
    pub restart_period: usize,
    /// Growth factor of the cycle length after each restart.
    pub t_mult: usize,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Fraction of samples held out for early stopping.
    pub val_fraction: f64,
    /// Validation loss is evaluated every this many iterations.
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr_max: 1e-3,
            weight_decay: 1e-2,
            batch_size: 48,
            iterations: 2000,
            restart_period: 11_350,
            t_mult: 1,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            val_fraction: 0.1,
            eval_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.lr_min > self.lr_max || self.lr_min.is_nan() || self.lr_max.is_nan() {
            return bad(format!("lr_min {} exceeds lr_max {}", self.lr_min, self.lr_max));
        }
        if self.restart_period < 1 {
            return bad("restart_period must be >= 1".into());
        }
        if self.t_mult < 1 {
            return bad("t_mult must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        Ok(())
    }
}

/// Learning rate at `iter` (0-based) for SGDR-style cosine annealing.
pub fn cosine_warm_restart_lr(iter: u64, config: &TrainingConfig) -> f64 {
    let mut period = config.restart_period.max(1) as u64;
    let mut t = iter;
    if config.t_mult <= 1 {
        t %= period;
    } else {
        while t >= period {
            t -= period;
            period = period.saturating_mul(config.t_mult as u64);
        }
    }
    let progress = t as f64 / period as f64;
    config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One AdamW update:
/// `θ ← θ − lr · (m̂ / (√v̂ + ε) + λ·θ)` with bias-corrected moments.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &TrainingConfig,
    lr: f64,
) -> Result<()> {
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powf(state.step as f64);
    let bc2 = 1.0 - b2.powf(state.step as f64);
    let wd = config.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + config.eps) + wd * *p);
    }
    Ok(())
}
