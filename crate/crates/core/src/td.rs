//! TD(0) with linear function approximation, on- and off-policy.

use crate::basis::{dot, LinearFunctional};
use crate::data::{StateVector, Transition};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::schedule::StepSchedule;

/// Default cap on importance ratios; clipping events are counted on the
/// learner so the high-variance regime is visible in diagnostics.
pub const DEFAULT_RATIO_CAP: f64 = 100.0;

/// Sup-norm guard: updates abort with a divergence diagnostic beyond this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Temporal difference error `δ = V_θ(s) - [r + γ V_θ(s')]`.
pub fn td_error(model: &LinearFunctional, tr: &Transition<'_>, gamma: f64) -> Result<f64> {
    Ok(model.value(tr.state)? - tr.reward - gamma * model.value(tr.next_state)?)
}

/// Importance ratio `π(a|s) / π_B(a|s)`, clipped above at `cap`.
///
/// Returns the (possibly clipped) ratio and whether clipping engaged. A zero
/// behavior probability at an observed pair is a positivity violation.
pub fn importance_ratio(
    target: &dyn Policy,
    behavior: &dyn Policy,
    state: &StateVector,
    action: usize,
    cap: f64,
) -> Result<(f64, bool)> {
    let b = behavior.prob(state, action);
    if b <= 0.0 {
        return Err(Error::PositivityViolated {
            state: state.0.clone(),
            action,
        });
    }
    let ratio = target.prob(state, action) / b;
    if ratio > cap {
        Ok((cap, true))
    } else {
        Ok((ratio, false))
    }
}

/// Mean squared deviation of `V_θ(s)` from Monte-Carlo return samples.
pub fn se_mc_loss(model: &LinearFunctional, state: &StateVector, mc_returns: &[f64]) -> Result<f64> {
    if mc_returns.is_empty() {
        return Err(Error::EmptyInput("se_mc_loss needs at least one return"));
    }
    let v = model.value(state)?;
    Ok(mc_returns.iter().map(|g| (v - g) * (v - g)).sum::<f64>() / mc_returns.len() as f64)
}

/// TD(0) learner state: linear model, step schedule, discount, and counters.
#[derive(Debug, Clone)]
pub struct TdLearner {
    pub model: LinearFunctional,
    pub schedule: StepSchedule,
    pub gamma: f64,
    /// Updates applied so far (indexes the schedule).
    pub steps: usize,
    /// Importance-ratio clipping events (off-policy only).
    pub clip_events: usize,
    pub ratio_cap: f64,
}

impl TdLearner {
    pub fn new(model: LinearFunctional, schedule: StepSchedule, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(TdLearner {
            model,
            schedule,
            gamma,
            steps: 0,
            clip_events: 0,
            ratio_cap: DEFAULT_RATIO_CAP,
        })
    }

    /// One on-policy update `θ ← θ - α δ φ(s)`. Returns δ.
    pub fn update(&mut self, tr: &Transition<'_>) -> Result<f64> {
        self.weighted_update(tr, 1.0)
    }

    /// One off-policy update `θ ← θ - α (π/π_B) δ φ(s)`. Returns δ.
    pub fn update_off_policy(
        &mut self,
        tr: &Transition<'_>,
        target: &dyn Policy,
        behavior: &dyn Policy,
    ) -> Result<f64> {
        let (ratio, clipped) =
            importance_ratio(target, behavior, tr.state, tr.action, self.ratio_cap)?;
        if clipped {
            self.clip_events += 1;
        }
        self.weighted_update(tr, ratio)
    }

    fn weighted_update(&mut self, tr: &Transition<'_>, weight: f64) -> Result<f64> {
        let delta = td_error(&self.model, tr, self.gamma)?;
        let alpha = self.schedule.at(self.steps);
        let phi = self.model.basis.evaluate(tr.state, None)?;
        for (t, p) in self.model.theta.iter_mut().zip(&phi) {
            *t -= alpha * weight * delta * p;
        }
        self.steps += 1;

        let norm = self
            .model
            .theta
            .iter()
            .fold(0.0f64, |m, &t| m.max(t.abs()));
        if norm > DIVERGENCE_LIMIT {
            return Err(Error::Divergence(norm));
        }
        Ok(delta)
    }

    /// Expected update direction `Σ_s d(s) Σ_a π(a|s) Σ_s' P δ φ(s)` under a
    /// tabular model and state distribution; the TD fixed point makes this
    /// vanish.
    pub fn expected_update_direction(
        &self,
        mdp: &crate::tabular::TabularMDP,
        pi: &[Vec<f64>],
        state_dist: &[f64],
    ) -> Result<Vec<f64>> {
        let mut dir = vec![0.0; self.model.theta.len()];
        for s in 0..mdp.state_count {
            let sv = mdp.state_vector(s);
            let phi = self.model.basis.evaluate(&sv, None)?;
            let v_s = dot(&self.model.theta, &phi);
            for a in 0..mdp.action_count {
                let w = state_dist[s] * pi[s][a];
                if w == 0.0 {
                    continue;
                }
                for (sn, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let v_next = self.model.value(&mdp.state_vector(sn))?;
                    let delta = v_s - mdp.reward[s][a][sn] - self.gamma * v_next;
                    for (d, f) in dir.iter_mut().zip(&phi) {
                        *d += w * p * delta * f;
                    }
                }
            }
        }
        Ok(dir)
    }
}
