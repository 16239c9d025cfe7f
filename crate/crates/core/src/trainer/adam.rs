use serde::{Deserialize, Serialize};

use crate::objectives::Gradients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Linear warmup length in steps; 0 disables warmup.
    pub warmup_steps: usize,
    /// Rescale the update when the global gradient norm exceeds this.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_steps: 0,
            max_grad_norm: Some(5.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return Err("epsilon must be positive".into());
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return Err("max_grad_norm must be positive".into());
        }
        Ok(())
    }
}

/// Adam over the concatenation of model and head parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Learning rate for the next step.
    pub fn current_lr(&self) -> f64 {
        let c = &self.config;
        if c.warmup_steps > 0 && self.t < c.warmup_steps {
            c.learning_rate * (self.t + 1) as f64 / c.warmup_steps as f64
        } else {
            c.learning_rate
        }
    }

    /// Apply one update; returns the learning rate used.
    pub fn step(&mut self, model: &mut [f64], head: &mut [f64], grads: &Gradients) -> f64 {
        assert_eq!(model.len() + head.len(), self.m.len(), "parameter count changed");
        let lr = self.current_lr();
        self.t += 1;
        let c = &self.config;
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = match c.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let params = model.iter_mut().chain(head.iter_mut());
        for (((p, g), m), v) in params.zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            let g = g * clip;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
        }
        lr
    }
}
