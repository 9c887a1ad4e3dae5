//! Glucose-like continuous environment with discretized dose actions.
//!
//! State is `(glucose mg/dL, activity level, carbohydrate grams)`; the 14
//! dose actions lower glucose linearly, carbohydrates raise it, activity and
//! mean reversion pull it down, plus Gaussian noise. The dynamics are
//! synthetic plumbing — chosen so the myopically optimal dose depends on the
//! state — and are fully configurable.

use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::StateVector;
use crate::policy::Policy;
use crate::sim::Environment;

/// Glycemic-control index: 0 inside [80, 140] mg/dL, hyperglycemia penalized
/// as `|g-140|^1.1 / 30`, hypoglycemia as `(g-80)² / 30`. Always ≤ 0.
pub fn glycemic_reward(glucose: f64) -> f64 {
    let hyper = if glucose > 140.0 {
        (glucose - 140.0).abs().powf(1.1)
    } else {
        0.0
    };
    let hypo = if glucose < 80.0 {
        (glucose - 80.0) * (glucose - 80.0)
    } else {
        0.0
    };
    -(hyper + hypo) / 30.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlucoseConfig {
    pub dose_count: usize,
    pub carb_effect: f64,
    pub dose_effect: f64,
    pub activity_effect: f64,
    /// Pull toward 120 mg/dL per step.
    pub reversion: f64,
    pub noise_sd: f64,
    pub glucose_min: f64,
    pub glucose_max: f64,
    /// Probability that a meal occurs at a step.
    pub meal_prob: f64,
    pub carb_range: (f64, f64),
    pub activity_range: (f64, f64),
    pub init_glucose_mean: f64,
    pub init_glucose_sd: f64,
}

impl Default for GlucoseConfig {
    fn default() -> Self {
        GlucoseConfig {
            dose_count: 14,
            carb_effect: 0.35,
            dose_effect: 8.0,
            activity_effect: 0.2,
            reversion: 0.1,
            noise_sd: 15.0,
            glucose_min: 20.0,
            glucose_max: 600.0,
            meal_prob: 0.3,
            carb_range: (10.0, 100.0),
            activity_range: (0.0, 60.0),
            init_glucose_mean: 150.0,
            init_glucose_sd: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlucoseEnv {
    pub config: GlucoseConfig,
}

impl GlucoseEnv {
    pub fn new(config: GlucoseConfig) -> Self {
        GlucoseEnv { config }
    }

    fn exogenous(&self, rng: &mut StdRng) -> (f64, f64) {
        let c = &self.config;
        let activity = rng.random_range(c.activity_range.0..c.activity_range.1);
        let carbs = if rng.random_bool(c.meal_prob) {
            rng.random_range(c.carb_range.0..c.carb_range.1)
        } else {
            0.0
        };
        (activity, carbs)
    }

    /// Expected next glucose before the dose term and noise.
    pub fn drift(&self, state: &StateVector) -> f64 {
        let c = &self.config;
        let (g, activity, carbs) = (state.0[0], state.0[1], state.0[2]);
        g + c.carb_effect * carbs - c.activity_effect * activity - c.reversion * (g - 120.0)
    }
}

impl Default for GlucoseEnv {
    fn default() -> Self {
        GlucoseEnv::new(GlucoseConfig::default())
    }
}

impl Environment for GlucoseEnv {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_count(&self) -> usize {
        self.config.dose_count
    }

    fn initial_state(&self, rng: &mut StdRng) -> StateVector {
        let c = &self.config;
        let normal = Normal::new(c.init_glucose_mean, c.init_glucose_sd).expect("valid sd");
        let g = normal
            .sample(rng)
            .clamp(c.glucose_min, c.glucose_max);
        let (activity, carbs) = self.exogenous(rng);
        StateVector::new(vec![g, activity, carbs])
    }

    fn step(&self, state: &StateVector, action: usize, rng: &mut StdRng) -> (StateVector, f64) {
        let c = &self.config;
        let noise = Normal::new(0.0, c.noise_sd).expect("valid sd").sample(rng);
        let g_next = (self.drift(state) - c.dose_effect * action as f64 + noise)
            .clamp(c.glucose_min, c.glucose_max);
        let (activity, carbs) = self.exogenous(rng);
        let reward = glycemic_reward(g_next);
        (StateVector::new(vec![g_next, activity, carbs]), reward)
    }

    fn reward_bound(&self) -> f64 {
        let c = &self.config;
        (-glycemic_reward(c.glucose_min)).max(-glycemic_reward(c.glucose_max))
    }
}

/// Hand-coded dosing heuristic softened with uniform exploration: pick the
/// dose bringing the expected next glucose closest to 110, then mix with
/// uniform at rate `epsilon`. The default behavior policy for data
/// generation (positivity holds for ε > 0).
#[derive(Debug, Clone)]
pub struct GlucoseHeuristicPolicy {
    pub env: GlucoseEnv,
    pub epsilon: f64,
}

impl GlucoseHeuristicPolicy {
    pub fn new(env: GlucoseEnv, epsilon: f64) -> Self {
        GlucoseHeuristicPolicy { env, epsilon }
    }

    fn heuristic_dose(&self, state: &StateVector) -> usize {
        let c = &self.env.config;
        let target = (self.env.drift(state) - 110.0) / c.dose_effect;
        (target.round().max(0.0) as usize).min(c.dose_count - 1)
    }
}

impl Policy for GlucoseHeuristicPolicy {
    fn action_count(&self) -> usize {
        self.env.config.dose_count
    }

    fn action_probs(&self, state: &StateVector) -> Vec<f64> {
        let m = self.action_count();
        let u = self.epsilon / m as f64;
        let mut probs = vec![u; m];
        probs[self.heuristic_dose(state)] += 1.0 - self.epsilon;
        probs
    }
}
