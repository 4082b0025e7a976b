//! Reduce-on-plateau learning-rate schedule. The rate is multiplied by
//! `gamma` whenever the validation loss has not improved for `patience`
//! consecutive epochs. A decay that would cross the 1e-6 floor first clamps
//! to the floor; only the following decay falls through it, and training
//! halts as soon as the rate is below the floor.

pub const LR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleSignal {
    Continue,
    Halt,
}

#[derive(Debug, Clone)]
pub struct ScheduleState {
    lr: f64,
    gamma: f64,
    patience: usize,
    best: f64,
    since_improvement: usize,
    decays: usize,
    /// An initial rate already below the floor is an explicit request (e.g.
    /// lr = 0 to freeze parameters); the floor only terminates decayed rates.
    enforce_floor: bool,
}

impl ScheduleState {
    pub fn new(lr: f64, gamma: f64, patience: usize) -> Self {
        assert!(lr >= 0.0 && (0.0..1.0).contains(&gamma) && patience >= 1);
        ScheduleState {
            lr,
            gamma,
            patience,
            best: f64::INFINITY,
            since_improvement: 0,
            decays: 0,
            enforce_floor: lr >= LR_FLOOR,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's validation loss; returns whether training continues.
    pub fn observe(&mut self, val_loss: f64) -> ScheduleSignal {
        if val_loss < self.best - 1e-12 {
            self.best = val_loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement == self.patience {
                let next = self.gamma * self.lr;
                self.lr = if next < LR_FLOOR && self.lr > LR_FLOOR { LR_FLOOR } else { next };
                self.decays += 1;
                self.since_improvement = 0;
            }
        }
        if self.enforce_floor && self.lr < LR_FLOOR {
            ScheduleSignal::Halt
        } else {
            ScheduleSignal::Continue
        }
    }
}
