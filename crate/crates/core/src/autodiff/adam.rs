use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer hyperparameters. The schedule keeps `lr` for epochs before
/// `decay_start_epoch` and multiplies it by `decay_factor` once per epoch
/// from that epoch on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_factor: f64,
    pub decay_start_epoch: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_factor: 0.9,
            decay_start_epoch: 70,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.beta1, self.beta2, self.eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.beta1 >= 1.0
            || self.beta2 >= 1.0
        {
            return Err(Error::Argument(format!(
                "invalid Adam hyperparameters {self:?}"
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Argument(format!(
                "decay factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start_epoch {
            self.lr
        } else {
            let k = (epoch - self.decay_start_epoch + 1) as i32;
            self.lr * self.decay_factor.powi(k)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    lr: f64,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            lr: config.lr,
            step_count: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Sets the learning rate for the epoch about to run.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.lr = self.config.lr_for_epoch(epoch);
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                index,
                what: "gradient entry".into(),
            });
        }
        self.step_count += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}
