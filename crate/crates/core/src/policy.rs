//! Stochastic policies: distributions over actions given a state.

use rand::RngCore;

use crate::basis::{FeatureBasis, StateEnumeration};
use crate::data::{ActionId, StateVector};
use crate::error::Result;

/// A stochastic policy π(a|s).
///
/// `action_probs` must return a nonnegative vector summing to 1 (within
/// 1e-9); [`check_pmf`] asserts this in tests.
pub trait Policy {
    fn action_count(&self) -> usize;

    fn action_probs(&self, state: &StateVector) -> Vec<f64>;

    fn prob(&self, state: &StateVector, action: ActionId) -> f64 {
        self.action_probs(state)[action]
    }

    /// Inverse-CDF draw from π(·|s).
    fn sample(&self, state: &StateVector, rng: &mut dyn RngCore) -> ActionId {
        let probs = self.action_probs(state);
        sample_index(&probs, rng)
    }
}

/// Draw an index proportional to `probs` (assumed to sum to ~1).
pub fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u = uniform01(rng);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Uniform draw in [0, 1) from a raw RngCore.
pub fn uniform01(rng: &mut dyn RngCore) -> f64 {
    // 53 random mantissa bits
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Validity check used by tests: nonnegative, sums to 1 within 1e-9.
pub fn check_pmf(probs: &[f64]) -> bool {
    probs.iter().all(|&p| p >= 0.0 && p.is_finite())
        && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

/// Uniform over all actions.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub action_count: usize,
}

impl UniformPolicy {
    pub fn new(action_count: usize) -> Self {
        UniformPolicy { action_count }
    }
}

impl Policy for UniformPolicy {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn action_probs(&self, _state: &StateVector) -> Vec<f64> {
        vec![1.0 / self.action_count as f64; self.action_count]
    }
}

/// Explicit per-cell action probabilities over an enumerated state space.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub enumeration: StateEnumeration,
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(enumeration: StateEnumeration, probs: Vec<Vec<f64>>) -> Self {
        assert_eq!(enumeration.len(), probs.len());
        TabularPolicy { enumeration, probs }
    }

    /// Deterministic policy putting mass 1 on `actions[s]` for each cell.
    pub fn deterministic(enumeration: StateEnumeration, actions: &[ActionId], m: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; m];
                row[a] = 1.0;
                row
            })
            .collect();
        TabularPolicy::new(enumeration, probs)
    }
}

impl Policy for TabularPolicy {
    fn action_count(&self) -> usize {
        self.probs.first().map_or(0, |r| r.len())
    }

    fn action_probs(&self, state: &StateVector) -> Vec<f64> {
        let i = self
            .enumeration
            .index_of(state)
            .expect("state outside tabular policy enumeration");
        self.probs[i].clone()
    }
}

/// Mixture (1-ε)·base + ε·uniform; guarantees positivity for ε > 0.
#[derive(Debug, Clone)]
pub struct EpsilonSoftPolicy<P> {
    pub base: P,
    pub epsilon: f64,
}

impl<P: Policy> EpsilonSoftPolicy<P> {
    pub fn new(base: P, epsilon: f64) -> Self {
        EpsilonSoftPolicy { base, epsilon }
    }
}

impl<P: Policy> Policy for EpsilonSoftPolicy<P> {
    fn action_count(&self) -> usize {
        self.base.action_count()
    }

    fn action_probs(&self, state: &StateVector) -> Vec<f64> {
        let m = self.action_count();
        let u = self.epsilon / m as f64;
        self.base
            .action_probs(state)
            .into_iter()
            .map(|p| (1.0 - self.epsilon) * p + u)
            .collect()
    }
}

/// Softmax (Boltzmann) policy on a state–action basis: π(a|s) ∝ exp(βᵀφ(s,a)).
#[derive(Debug, Clone)]
pub struct SoftmaxPolicy {
    pub beta: Vec<f64>,
    pub basis: FeatureBasis,
}

impl SoftmaxPolicy {
    pub fn new(beta: Vec<f64>, basis: FeatureBasis) -> Result<Self> {
        if beta.len() != basis.dim() {
            return Err(crate::error::Error::DimensionMismatch {
                context: "softmax beta vs basis",
                expected: basis.dim(),
                got: beta.len(),
            });
        }
        Ok(SoftmaxPolicy { beta, basis })
    }
}

impl Policy for SoftmaxPolicy {
    fn action_count(&self) -> usize {
        self.basis.action_count.unwrap_or(0)
    }

    fn action_probs(&self, state: &StateVector) -> Vec<f64> {
        let m = self.action_count();
        let logits: Vec<f64> = (0..m)
            .map(|a| {
                let phi = self
                    .basis
                    .evaluate(state, Some(a))
                    .expect("softmax basis evaluation");
                crate::basis::dot(&self.beta, &phi)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

/// Lowest-index argmax, the tie-break used everywhere in this crate.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
