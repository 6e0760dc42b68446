//! Scalar ramps over training progress, used for loss weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    Linear,
    Exponential,
}

/// A value ramped from `start` to `end` over the first `duration` fraction of
/// training, then held at `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub start: f64,
    pub end: f64,
    #[serde(default = "full_run")]
    pub duration: f64,
}

fn full_run() -> f64 {
    1.0
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule {
            mode: ScheduleMode::Constant,
            start: value,
            end: value,
            duration: 1.0,
        }
    }

    pub fn linear(start: f64, end: f64, duration: f64) -> Result<Self> {
        let s = Schedule {
            mode: ScheduleMode::Linear,
            start,
            end,
            duration,
        };
        s.validate().map(|_| s)
    }

    pub fn exponential(start: f64, end: f64, duration: f64) -> Result<Self> {
        let s = Schedule {
            mode: ScheduleMode::Exponential,
            start,
            end,
            duration,
        };
        s.validate().map(|_| s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start >= 0.0 && self.end >= 0.0) || !self.start.is_finite() || !self.end.is_finite() {
            return Err(Error::Config(format!(
                "schedule endpoints must be finite and non-negative, got {} -> {}",
                self.start, self.end
            )));
        }
        if !(self.duration > 0.0 && self.duration <= 1.0) {
            return Err(Error::Config(format!(
                "schedule duration must lie in (0, 1], got {}",
                self.duration
            )));
        }
        if self.mode == ScheduleMode::Exponential && !(self.start > 0.0 && self.end > 0.0) {
            return Err(Error::Config(
                "exponential schedule needs strictly positive endpoints".into(),
            ));
        }
        Ok(())
    }

    /// Value at `progress ∈ [0, 1]`.
    pub fn value(&self, progress: f64) -> f64 {
        if self.mode == ScheduleMode::Constant {
            return self.start;
        }
        let f = (progress / self.duration).clamp(0.0, 1.0);
        if f >= 1.0 {
            return self.end;
        }
        match self.mode {
            ScheduleMode::Linear => self.start + (self.end - self.start) * f,
            ScheduleMode::Exponential => self.start * (self.end / self.start).powf(f),
            ScheduleMode::Constant => unreachable!(),
        }
    }
}
