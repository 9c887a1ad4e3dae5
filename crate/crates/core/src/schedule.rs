//! Step-size schedules shared by the stochastic-approximation updaters.

use serde::{Deserialize, Serialize};

/// Learning-rate schedule α_k indexed by the update count k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    /// α_k = a / (1 + k/b). Satisfies the Robbins–Monro conditions at desk
    /// scale; the default is a = 0.5, b = 1000.
    Decay { a: f64, b: f64 },
}

impl StepSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSchedule::Constant(a) => *a,
            StepSchedule::Decay { a, b } => a / (1.0 + k as f64 / b),
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Decay { a: 0.5, b: 1000.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule_values() {
        let s = StepSchedule::default();
        assert!((s.at(0) - 0.5).abs() < 1e-15);
        assert!((s.at(1000) - 0.25).abs() < 1e-15);
    }
}
