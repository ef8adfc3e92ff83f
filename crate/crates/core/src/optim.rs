use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::param::{ParamStore, Parameter};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and step count of one parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamSlot {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u32,
}

/// Adam with bias correction. State is keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: HashMap<String, AdamSlot>,
}

fn check_lr(lr: f32) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        check_lr(config.lr)?;
        Ok(Self {
            config,
            state: HashMap::new(),
        })
    }

    pub fn lr(&self) -> f32 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f32) -> Result<()> {
        check_lr(lr)?;
        self.config.lr = lr;
        Ok(())
    }

    pub fn slot(&self, name: &str) -> Option<&AdamSlot> {
        self.state.get(name)
    }

    /// Forgets the moments of one parameter so its next update starts fresh.
    pub fn reset(&mut self, name: &str) {
        self.state.remove(name);
    }

    /// Updates every non-frozen parameter in the store from its accumulated
    /// gradient and clears all gradients. Parameters that received no
    /// gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.params_mut() {
            self.step_param(p)?;
        }
        store.zero_grad();
        Ok(())
    }

    pub fn step_param(&mut self, p: &mut Parameter) -> Result<()> {
        if p.is_frozen() {
            return Ok(());
        }
        let Some(grad) = p.tensor().grad() else {
            return Ok(());
        };
        let n = grad.len();
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let slot = self.state.entry(p.name().to_string()).or_insert_with(|| AdamSlot {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        });
        slot.t += 1;
        let bc1 = 1.0 - beta1.powi(slot.t as i32);
        let bc2 = 1.0 - beta2.powi(slot.t as i32);
        let mut value = p.value().to_vec();
        for i in 0..n {
            let g = grad[i];
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.set_value(value)
    }
}
