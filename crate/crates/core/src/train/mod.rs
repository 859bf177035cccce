//! Objective, optimizer, schedule and the mini-batch driver.

pub mod fit;
pub mod loss;
pub mod optim;
pub mod schedule;

pub use fit::{fit, Batch, FitOutcome, TraceRow, TrainConfig, TrainingSet};
pub use loss::{aam_softmax_loss, AamConfig, COS_CLAMP};
pub use optim::{adam_step, AdamConfig, OptimState};
pub use schedule::{cyclical_lr, CycleSpan, LrSchedule};
