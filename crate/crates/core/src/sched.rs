//! Gap-aware learning-rate scheduling.
//!
//! The scheduler tracks an exponential moving average of the adversary's
//! batch loss and compares it against the loss an ideal adversarial net would
//! have. When the estimate is above the ideal value the adversary's rate is
//! scaled up by `f(gap)`; when it is below, the rate is scaled down by
//! `h(gap)`. The multiplier is recomputed from the current gap at every step
//! and applied to the optimizer's base rate, so it never compounds.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::losses::GanVariant;

/// Shape of the curve between the endpoints `(0, 1)` and `(x_max, f_max)`
/// (resp. `(x_min, h_min)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Exponential,
    Linear,
}

/// Parameters of the gap-aware scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    pub f_max: f64,
    pub x_max: f64,
    pub h_min: f64,
    pub x_min: f64,
    #[serde(default)]
    pub interpolation: Interpolation,
    pub ideal_loss: f64,
    pub ema_decay: f64,
}

pub const DEFAULT_H_MIN: f64 = 0.1;
pub const DEFAULT_F_MAX: f64 = 2.0;
pub const DEFAULT_EMA_DECAY: f64 = 0.95;

impl SchedulerParams {
    /// Defaults for a GAN variant: `h_min = 0.1`, `f_max = 2`, EMA decay 0.95,
    /// exponential interpolation, and `x_min = x_max = 0.1 * V*` (0.1 for WGAN,
    /// whose ideal loss is zero).
    pub fn default_for(variant: GanVariant) -> Self {
        let ideal = variant.ideal_disc_loss();
        let scale = match variant {
            GanVariant::Wasserstein => 0.1,
            _ => 0.1 * ideal,
        };
        Self {
            f_max: DEFAULT_F_MAX,
            x_max: scale,
            h_min: DEFAULT_H_MIN,
            x_min: scale,
            interpolation: Interpolation::Exponential,
            ideal_loss: ideal,
            ema_decay: DEFAULT_EMA_DECAY,
        }
    }

    /// Defaults around an arbitrary positive target loss (used for DANN, where
    /// the target is tuned): gap scales are `0.1 * ideal_loss`.
    pub fn for_ideal_loss(ideal_loss: f64) -> Self {
        Self {
            f_max: DEFAULT_F_MAX,
            x_max: 0.1 * ideal_loss,
            h_min: DEFAULT_H_MIN,
            x_min: 0.1 * ideal_loss,
            interpolation: Interpolation::Exponential,
            ideal_loss,
            ema_decay: DEFAULT_EMA_DECAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.f_max.is_finite() && self.f_max >= 1.0) {
            return bad(format!("f_max must be >= 1, got {}", self.f_max));
        }
        if !(self.h_min > 0.0 && self.h_min <= 1.0) {
            return bad(format!("h_min must lie in (0, 1], got {}", self.h_min));
        }
        if !(self.x_max.is_finite() && self.x_max > 0.0) {
            return bad(format!("x_max must be > 0, got {}", self.x_max));
        }
        if !(self.x_min.is_finite() && self.x_min > 0.0) {
            return bad(format!("x_min must be > 0, got {}", self.x_min));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        if !self.ideal_loss.is_finite() {
            return bad(format!("ideal_loss must be finite, got {}", self.ideal_loss));
        }
        Ok(())
    }

    /// Multiplier `f(x) >= 1` applied when the loss estimate is above the
    /// ideal loss by `x`.
    pub fn increase(&self, x: f64) -> Result<f64> {
        check_gap(x)?;
        let ratio = x / self.x_max;
        let raw = match self.interpolation {
            Interpolation::Exponential => (ratio * self.f_max.ln()).exp(),
            Interpolation::Linear => 1.0 + (self.f_max - 1.0) * ratio,
        };
        Ok(raw.min(self.f_max))
    }

    /// Multiplier `h(x) <= 1` applied when the loss estimate is below the
    /// ideal loss by `x`.
    pub fn decrease(&self, x: f64) -> Result<f64> {
        check_gap(x)?;
        let ratio = x / self.x_min;
        let raw = match self.interpolation {
            Interpolation::Exponential => (ratio * self.h_min.ln()).exp(),
            Interpolation::Linear => 1.0 - (1.0 - self.h_min) * ratio,
        };
        Ok(raw.max(self.h_min))
    }

    /// The multiplier for a given (already estimated) adversary loss.
    pub fn multiplier_for(&self, loss_estimate: f64) -> Result<f64> {
        if loss_estimate >= self.ideal_loss {
            self.increase(loss_estimate - self.ideal_loss)
        } else {
            self.decrease(self.ideal_loss - loss_estimate)
        }
    }
}

fn check_gap(x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        Err(Error::NegativeGap(x))
    } else {
        Ok(())
    }
}

/// Free-function form of [`SchedulerParams::increase`].
pub fn increase_multiplier(x: f64, params: &SchedulerParams) -> Result<f64> {
    params.increase(x)
}

/// Free-function form of [`SchedulerParams::decrease`].
pub fn decrease_multiplier(x: f64, params: &SchedulerParams) -> Result<f64> {
    params.decrease(x)
}

/// Default scheduler parameters for a GAN variant.
pub fn default_params(variant: GanVariant) -> SchedulerParams {
    SchedulerParams::default_for(variant)
}

/// Exponential moving average of the batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimator {
    estimate: f64,
    decay: f64,
}

impl LossEstimator {
    pub fn new(initial: f64, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidParam(format!("ema decay {decay} not in [0, 1)")));
        }
        let initial = ensure_finite("initial loss estimate", initial)?;
        Ok(Self { estimate: initial, decay })
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn update(&mut self, batch_loss: f64) -> Result<f64> {
        let batch_loss = ensure_finite("batch loss", batch_loss)?;
        self.estimate = self.decay * self.estimate + (1.0 - self.decay) * batch_loss;
        Ok(self.estimate)
    }

    pub fn reset(&mut self, value: f64) -> Result<()> {
        self.estimate = ensure_finite("loss estimate reset", value)?;
        Ok(())
    }
}

/// Per-run gap-aware scheduler: owns the loss estimator and remembers the
/// last multiplier it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScheduler {
    params: SchedulerParams,
    estimator: LossEstimator,
    last_multiplier: f64,
}

impl GapScheduler {
    /// Builds a scheduler whose estimate starts at the ideal loss.
    pub fn new(params: SchedulerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            estimator: LossEstimator::new(params.ideal_loss, params.ema_decay)?,
            last_multiplier: 1.0,
        })
    }

    pub fn params(&self) -> &SchedulerParams {
        &self.params
    }

    pub fn estimate(&self) -> f64 {
        self.estimator.estimate()
    }

    pub fn last_multiplier(&self) -> f64 {
        self.last_multiplier
    }

    /// Signed `estimate - ideal_loss`.
    pub fn signed_gap(&self) -> f64 {
        self.estimator.estimate() - self.params.ideal_loss
    }

    /// Folds one batch loss into the estimate and returns the learning-rate
    /// multiplier for the adversary's next update.
    pub fn observe(&mut self, batch_loss: f64) -> Result<f64> {
        let estimate = self.estimator.update(batch_loss)?;
        let m = self.params.multiplier_for(estimate)?;
        self.last_multiplier = m;
        Ok(m)
    }

    /// Overwrites the running estimate, e.g. with a periodically computed
    /// full-dataset loss.
    pub fn reset_estimator(&mut self, value: f64) -> Result<()> {
        self.estimator.reset(value)
    }
}

/// Loss-independent baseline: the base rate is multiplied by `rho^(s/T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub rho: f64,
    pub total_steps: u64,
}

impl DecaySchedule {
    pub fn new(rho: f64, total_steps: u64) -> Result<Self> {
        let s = Self { rho, total_steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidParam(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidParam("total_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn multiplier(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::OutOfRange {
                context: "decay step",
                value: step as f64,
            });
        }
        if step == self.total_steps {
            return Ok(self.rho);
        }
        Ok(self.rho.powf(step as f64 / self.total_steps as f64))
    }
}
