use crate::error::{Error, Result};

/// Learning-rate schedule and batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
}

impl Schedule {
    /// NTU RGB+D / NTU RGB+D 120 settings.
    pub fn ntu() -> Self {
        Self {
            base_lr: 0.1,
            warmup_epochs: 5,
            decay_factor: 0.1,
            decay_every: 35,
            total_epochs: 65,
            batch_size: 64,
        }
    }

    /// Northwestern-UCLA settings.
    pub fn nw_ucla() -> Self {
        Self {
            base_lr: 0.01,
            warmup_epochs: 5,
            decay_factor: 1e-4,
            decay_every: 50,
            total_epochs: 65,
            batch_size: 16,
        }
    }

    /// Short CPU schedule for the synthetic benchmarks.
    pub fn desk() -> Self {
        Self {
            base_lr: 0.02,
            warmup_epochs: 2,
            decay_factor: 0.1,
            decay_every: 6,
            total_epochs: 10,
            batch_size: 16,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ntu" => Ok(Self::ntu()),
            "nw-ucla" => Ok(Self::nw_ucla()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::invalid(format!(
                "unknown schedule preset `{other}` (expected ntu, nw-ucla or desk)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && self.base_lr.is_finite()
            && self.decay_factor > 0.0
            && self.decay_factor.is_finite()
            && self.decay_every > 0
            && self.total_epochs > 0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "schedule values must be positive: {self:?}"
            )))
        }
    }

    /// Learning rate at a (possibly fractional) epoch: a linear ramp from 0
    /// during warm-up, then step decay counted from the end of warm-up.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let warm = self.warmup_epochs as f64;
        if epoch < warm {
            return self.base_lr * epoch / warm;
        }
        let steps = ((epoch - warm) / self.decay_every as f64).floor();
        self.base_lr * self.decay_factor.powi(steps as i32)
    }
}

pub fn lr_at_epoch(schedule: &Schedule, epoch: usize) -> f64 {
    schedule.lr_at(epoch as f64)
}
