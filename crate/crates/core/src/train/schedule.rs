//! Triangular cyclical learning rate whose amplitude halves every cycle.

use serde::{Deserialize, Serialize};

/// What `cycle_len` measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleSpan {
    /// `cycle_len` covers the rise and the fall.
    Full,
    /// `cycle_len` is the rise only (the "stepsize"); a cycle is twice as long.
    UpLeg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_len: u64,
    pub cycle_span: CycleSpan,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr_min: 1e-8,
            lr_max: 1e-3,
            cycle_len: 130_000,
            cycle_span: CycleSpan::Full,
        }
    }
}

impl LrSchedule {
    pub fn period(&self) -> u64 {
        match self.cycle_span {
            CycleSpan::Full => self.cycle_len,
            CycleSpan::UpLeg => 2 * self.cycle_len,
        }
        .max(1)
    }
}

pub fn cyclical_lr(iteration: u64, sched: &LrSchedule) -> f64 {
    let period = sched.period();
    let cycle = iteration / period;
    let x = (iteration % period) as f64 / period as f64;
    let amplitude = 0.5f64.powi(cycle.min(i32::MAX as u64) as i32);
    sched.lr_min + (sched.lr_max - sched.lr_min) * amplitude * (1.0 - (2.0 * x - 1.0).abs())
}
