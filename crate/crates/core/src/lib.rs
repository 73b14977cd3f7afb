//! Gap-aware learning-rate scheduling for adversarial nets.
//!
//! The adversary's learning rate is rescaled at every minibatch according to
//! how far its (moving-average) loss sits from the loss of an ideal
//! adversarial net, a constant known in advance for each loss family.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod sched;
mod serde_nonfinite;
pub mod study;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::GanVariant;
pub use sched::{DecaySchedule, GapScheduler, Interpolation, LossEstimator, SchedulerParams};
