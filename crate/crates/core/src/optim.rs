//! SGD and Adam with a per-step learning-rate multiplier, plus weight clipping.
//!
//! The multiplier scales the effective rate of the current step only. Adam's
//! moment estimates consume raw gradients and never see the multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64 },
}

impl OptimizerKind {
    pub fn build(self, base_lr: f64, num_params: usize) -> Result<Optimizer> {
        Ok(match self {
            OptimizerKind::Sgd => Optimizer::Sgd(SgdState::new(base_lr)?),
            OptimizerKind::Adam { beta1 } => Optimizer::Adam(AdamState::new(base_lr, beta1, num_params)?),
        })
    }

    pub fn beta1(self) -> Option<f64> {
        match self {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam { beta1 } => Some(beta1),
        }
    }
}

fn check_lr(base_lr: f64) -> Result<()> {
    // zero is allowed: it freezes a player, which is handy for diagnostics
    if base_lr.is_finite() && base_lr >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("base learning rate must be finite and >= 0, got {base_lr}")))
    }
}

fn check_step(params: &[f64], grads: &[f64], multiplier: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape {
            expected: format!("{} gradients", params.len()),
            got: grads.len().to_string(),
        });
    }
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(Error::InvalidParam(format!("learning-rate multiplier must be > 0, got {multiplier}")));
    }
    if let Some(&g) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::Diverged { context: "gradient", value: g });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub base_lr: f64,
}

impl SgdState {
    pub fn new(base_lr: f64) -> Result<Self> {
        check_lr(base_lr)?;
        Ok(Self { base_lr })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], multiplier: f64) -> Result<()> {
        check_step(params, grads, multiplier)?;
        let lr = self.base_lr * multiplier;
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    timestep: u64,
}

impl AdamState {
    pub fn new(base_lr: f64, beta1: f64, num_params: usize) -> Result<Self> {
        check_lr(base_lr)?;
        if !(0.0..1.0).contains(&beta1) {
            return Err(Error::InvalidParam(format!("beta1 must lie in [0, 1), got {beta1}")));
        }
        Ok(Self {
            base_lr,
            beta1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            timestep: 0,
        })
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], multiplier: f64) -> Result<()> {
        check_step(params, grads, multiplier)?;
        if params.len() != self.first.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.first.len()),
                got: params.len().to_string(),
            });
        }
        self.timestep += 1;
        let t = self.timestep as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = self.base_lr * multiplier;
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], multiplier: f64) -> Result<()> {
        match self {
            Optimizer::Sgd(s) => s.step(params, grads, multiplier),
            Optimizer::Adam(s) => s.step(params, grads, multiplier),
        }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            Optimizer::Sgd(s) => s.base_lr,
            Optimizer::Adam(s) => s.base_lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBound(f64);

impl ClipBound {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Self(c))
        } else {
            Err(Error::InvalidParam(format!("clip bound must be > 0, got {c}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Clamps every parameter into `[-c, c]`.
pub fn clip_weights(params: &mut [f64], bound: ClipBound) {
    let c = bound.0;
    for p in params {
        *p = p.clamp(-c, c);
    }
}
