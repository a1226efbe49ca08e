//! Reduce-on-plateau learning-rate policy.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrEvent {
    Improved,
    Waiting,
    Decayed,
    /// A plateau completed while the rate already sat at the floor.
    Exhausted,
}

/// Multiplies the rate by `decay_rate` after `patience` epochs without an
/// improvement larger than `tolerance`, never going below `floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_rate: f64,
    pub patience: usize,
    pub floor: f64,
    pub tolerance: f64,
    pub current_lr: f64,
    pub best: f64,
    pub epochs_since_improvement: usize,
    pub exhausted: bool,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, decay_rate: f64, patience: usize, floor: f64, tolerance: f64) -> Self {
        Self {
            initial_lr,
            decay_rate,
            patience,
            floor,
            tolerance,
            current_lr: initial_lr,
            best: f64::INFINITY,
            epochs_since_improvement: 0,
            exhausted: false,
        }
    }

    /// Feeds one epoch's monitored value.
    pub fn step(&mut self, monitored: f64) -> LrEvent {
        if monitored < self.best - self.tolerance {
            self.best = monitored;
            self.epochs_since_improvement = 0;
            return LrEvent::Improved;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement < self.patience {
            return LrEvent::Waiting;
        }
        self.epochs_since_improvement = 0;
        if self.current_lr <= self.floor {
            self.exhausted = true;
            return LrEvent::Exhausted;
        }
        self.current_lr = (self.current_lr * self.decay_rate).max(self.floor);
        LrEvent::Decayed
    }

    /// Value-returning form of [`LrSchedule::step`].
    pub fn lr_step(mut self, monitored: f64) -> Self {
        self.step(monitored);
        self
    }
}
