//! Cosine annealing with warm restarts.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestartSchedule {
    pub base_lr: f64,
    /// Length of the first period, in epochs.
    pub period: f64,
    /// Each period is this many times longer than the previous one.
    pub period_mult: f64,
    pub floor_lr: f64,
}

pub const DEFAULT_PERIOD: f64 = 5.0;
pub const DEFAULT_PERIOD_MULT: f64 = 2.0;
/// Floor as a fraction of the base rate.
pub const DEFAULT_FLOOR_RATIO: f64 = 0.01;

impl RestartSchedule {
    pub fn new(base_lr: f64) -> Self {
        Self {
            base_lr,
            period: DEFAULT_PERIOD,
            period_mult: DEFAULT_PERIOD_MULT,
            floor_lr: base_lr * DEFAULT_FLOOR_RATIO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && self.period > 0.0
            && self.period_mult >= 1.0
            && (0.0..=self.base_lr).contains(&self.floor_lr);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid restart schedule {self:?}")))
        }
    }

    /// Start of the period containing `epoch` and that period's length.
    pub fn period_at(&self, epoch: f64) -> (f64, f64) {
        let mut start = 0.0;
        let mut len = self.period;
        while epoch >= start + len {
            start += len;
            len *= self.period_mult;
        }
        (start, len)
    }

    /// Learning rate at a (possibly fractional) epoch.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let epoch = epoch.max(0.0);
        let (start, len) = self.period_at(epoch);
        let frac = (epoch - start) / len;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.floor_lr + (self.base_lr - self.floor_lr) * cos
    }

    /// Epochs at which a new period begins, up to `until`.
    pub fn restarts(&self, until: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let (mut start, mut len) = (0.0, self.period);
        while start <= until {
            out.push(start);
            start += len;
            len *= self.period_mult;
        }
        out
    }
}
