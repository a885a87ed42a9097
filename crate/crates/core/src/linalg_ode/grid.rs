use crate::error::{Error, Result};

/// Uniform grid `0 = t_0 < t_1 < ... < t_M = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of node `k`; the last node is the horizon exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            self.horizon * (k as f64 / self.steps as f64)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Interval index and local coordinate in `[0, 1]` for time `t`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let x = (t / self.horizon) * self.steps as f64;
        let k = (x.floor().max(0.0) as usize).min(self.steps - 1);
        (k, (x - k as f64).clamp(0.0, 1.0))
    }
}
