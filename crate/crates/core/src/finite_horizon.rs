//! Regression-based backward induction for a fixed number of decision stages.
//!
//! Works backwards from the final stage: fit a least-squares model of the
//! pseudo-outcome on history features separately per action, take the fitted
//! maximum as the next pseudo-outcome, and recurse. γ = 1 throughout (the
//! cumulative reward over finitely many stages is always finite).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::StateEnumeration;
use crate::data::{ActionId, OfflineDataset, StateVector};
use crate::error::{Error, Result};
use crate::policy::argmax;

/// Feature construction for the stage regressions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum StageFeatures {
    /// Intercept, coordinates of the windowed states, one-hot encodings of
    /// the windowed past actions.
    Linear,
    /// One-hot over the current state's enumeration cell (a saturated
    /// window-1 model; exact when the generative model is Markov).
    Indicator(StateEnumeration),
}

#[derive(Debug, Clone)]
pub struct BackwardInductionConfig {
    /// How many most-recent decision points feed the regression; `None`
    /// means the full history up to the stage.
    pub window: Option<usize>,
    pub features: StageFeatures,
}

impl Default for BackwardInductionConfig {
    fn default() -> Self {
        BackwardInductionConfig {
            window: None,
            features: StageFeatures::Linear,
        }
    }
}

/// Fitted decision rule for one stage: per-action regression coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StagePolicy {
    pub stage: usize,
    pub coefficients: Vec<Vec<f64>>,
    pub features: StageFeatures,
    pub window: Option<usize>,
    pub action_count: usize,
}

impl StagePolicy {
    /// Predicted pseudo-outcome for taking `action` given the history
    /// `(states[0..=stage], actions[0..stage])`.
    pub fn predict(
        &self,
        states: &[StateVector],
        actions: &[ActionId],
        action: ActionId,
    ) -> Result<f64> {
        let x = history_features(
            states,
            actions,
            self.stage,
            self.window,
            &self.features,
            self.action_count,
        )?;
        Ok(crate::basis::dot(&self.coefficients[action], &x))
    }

    /// Argmax decision, lowest index on ties.
    pub fn decide(&self, states: &[StateVector], actions: &[ActionId]) -> Result<ActionId> {
        let q: Vec<f64> = (0..self.action_count)
            .map(|a| self.predict(states, actions, a))
            .collect::<Result<_>>()?;
        Ok(argmax(&q))
    }

    fn value(&self, states: &[StateVector], actions: &[ActionId]) -> Result<f64> {
        let q: Vec<f64> = (0..self.action_count)
            .map(|a| self.predict(states, actions, a))
            .collect::<Result<_>>()?;
        Ok(q[argmax(&q)])
    }
}

fn history_features(
    states: &[StateVector],
    actions: &[ActionId],
    stage: usize,
    window: Option<usize>,
    features: &StageFeatures,
    action_count: usize,
) -> Result<Vec<f64>> {
    match features {
        StageFeatures::Indicator(enumeration) => {
            let mut x = vec![0.0; enumeration.len()];
            x[enumeration.index_of(&states[stage])?] = 1.0;
            Ok(x)
        }
        StageFeatures::Linear => {
            let w = window.unwrap_or(stage + 1).max(1);
            let first_state = stage + 1 - w.min(stage + 1);
            let mut x = vec![1.0];
            for s in &states[first_state..=stage] {
                x.extend_from_slice(s.as_slice());
            }
            // past actions inside the window, one-hot
            let first_action = stage - (w - 1).min(stage);
            for &a in &actions[first_action..stage] {
                let mut one_hot = vec![0.0; action_count];
                one_hot[a] = 1.0;
                x.extend_from_slice(&one_hot);
            }
            Ok(x)
        }
    }
}

/// Estimate the optimal stage policies `(π̂*_0, …, π̂*_{T-1})` from a dataset
/// in which every trajectory has exactly `horizon` decision points.
pub fn backward_induction(
    ds: &OfflineDataset,
    horizon: usize,
    config: &BackwardInductionConfig,
) -> Result<Vec<StagePolicy>> {
    for traj in &ds.trajectories {
        if traj.len() != horizon {
            return Err(Error::InvalidConfig(format!(
                "backward induction requires all trajectories to have exactly {horizon} decision points, found {}",
                traj.len()
            )));
        }
    }

    let n = ds.n_trajectories();
    let m = ds.action_count;

    // Final-stage response: the observed cumulative reward of the whole
    // trajectory. Earlier stages regress on the fitted next-stage value.
    let mut response: Vec<f64> = ds
        .trajectories
        .iter()
        .map(|t| t.rewards.iter().sum())
        .collect();

    let mut policies: Vec<StagePolicy> = Vec::with_capacity(horizon);
    for stage in (0..horizon).rev() {
        let design: Vec<Vec<f64>> = ds
            .trajectories
            .iter()
            .map(|t| {
                history_features(&t.states, &t.actions, stage, config.window, &config.features, m)
            })
            .collect::<Result<_>>()?;
        let p = design[0].len();

        let mut coefficients = Vec::with_capacity(m);
        for a in 0..m {
            let rows: Vec<usize> = (0..n)
                .filter(|&i| ds.trajectories[i].actions[stage] == a)
                .collect();
            if rows.len() < p {
                return Err(Error::UnderdeterminedStage {
                    stage,
                    action: a,
                    rows: rows.len(),
                    params: p,
                });
            }
            let x = DMatrix::from_fn(rows.len(), p, |i, j| design[rows[i]][j]);
            let y = DVector::from_fn(rows.len(), |i, _| response[rows[i]]);
            let beta = least_squares(&x, &y)?;
            coefficients.push(beta.iter().cloned().collect());
        }

        let policy = StagePolicy {
            stage,
            coefficients,
            features: config.features.clone(),
            window: config.window,
            action_count: m,
        };

        if stage > 0 {
            for (i, traj) in ds.trajectories.iter().enumerate() {
                response[i] = policy.value(&traj.states, &traj.actions)?;
            }
        }
        policies.push(policy);
    }

    policies.reverse();
    Ok(policies)
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    // SVD least squares; rank-deficient designs get the least-norm solution.
    x.clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| Error::SingularSystem(format!("stage regression: {e}")))
}
