//! Trajectory data containers and structural validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete action index, `0..action_count`.
pub type ActionId = usize;

/// Dense real-valued state. Dimension is fixed across a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        StateVector(values)
    }

    /// Single-index tabular state (cell `i` as a 1-dim vector).
    pub fn cell(i: usize) -> Self {
        StateVector(vec![i as f64])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Componentwise equality within `tol`, used by tabular enumerations.
    pub fn close_to(&self, other: &StateVector, tol: f64) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(v)
    }
}

/// One observed transition `(s, a, r, s')`, borrowed from a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub state: &'a StateVector,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: &'a StateVector,
}

/// A single trajectory: `T+1` states, `T` actions, `T` rewards.
///
/// Reward `rewards[t]` is earned on the move from `states[t]` to
/// `states[t+1]` under `actions[t]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub actions: Vec<ActionId>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(states: Vec<StateVector>, actions: Vec<ActionId>, rewards: Vec<f64>) -> Result<Self> {
        if states.len() != actions.len() + 1 || states.len() != rewards.len() + 1 {
            return Err(Error::LengthMismatch {
                context: "trajectory must satisfy len(states) = len(actions)+1 = len(rewards)+1"
                    .to_string(),
                states: states.len(),
                actions: actions.len(),
                rewards: rewards.len(),
            });
        }
        Ok(Trajectory {
            states,
            actions,
            rewards,
        })
    }

    /// Number of decision points `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        (0..self.actions.len()).map(move |t| Transition {
            state: &self.states[t],
            action: self.actions[t],
            reward: self.rewards[t],
            next_state: &self.states[t + 1],
        })
    }
}

/// Sum of discounted rewards `Σ_t γ^t r[t]`.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> Result<f64> {
    if traj.rewards.is_empty() {
        return Err(Error::NoRewards);
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidGamma(gamma));
    }
    let mut total = 0.0;
    let mut weight = 1.0;
    for &r in &traj.rewards {
        total += weight * r;
        weight *= gamma;
    }
    Ok(total)
}

/// `n` i.i.d. trajectories with shared state dimension and action space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    pub state_dim: usize,
    pub action_count: usize,
}

impl OfflineDataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        state_dim: usize,
        action_count: usize,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::EmptyInput("dataset needs at least one trajectory"));
        }
        let ds = OfflineDataset {
            trajectories,
            state_dim,
            action_count,
        };
        ds.check_structure()?;
        Ok(ds)
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        self.trajectories.iter().flat_map(|t| t.transitions())
    }

    pub fn initial_states(&self) -> impl Iterator<Item = &StateVector> {
        self.trajectories.iter().map(|t| &t.states[0])
    }

    fn check_structure(&self) -> Result<()> {
        for (i, traj) in self.trajectories.iter().enumerate() {
            if traj.states.len() != traj.actions.len() + 1
                || traj.states.len() != traj.rewards.len() + 1
            {
                return Err(Error::LengthMismatch {
                    context: format!("trajectory {i}"),
                    states: traj.states.len(),
                    actions: traj.actions.len(),
                    rewards: traj.rewards.len(),
                });
            }
            for (t, s) in traj.states.iter().enumerate() {
                if s.dim() != self.state_dim {
                    return Err(Error::DimensionMismatch {
                        context: "state dimension",
                        expected: self.state_dim,
                        got: s.dim(),
                    });
                }
                if !s.is_finite() {
                    return Err(Error::NonFinite(format!("state {t} of trajectory {i}")));
                }
            }
            for &a in &traj.actions {
                if a >= self.action_count {
                    return Err(Error::ActionOutOfRange {
                        action: a,
                        action_count: self.action_count,
                    });
                }
            }
            for (t, &r) in traj.rewards.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::NonFinite(format!("reward {t} of trajectory {i}")));
                }
            }
        }
        Ok(())
    }
}

/// Diagnostics from [`validate_dataset`]: structural problems are hard
/// errors, positivity gaps are warnings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_trajectories: usize,
    pub n_transitions: usize,
    pub action_counts: Vec<usize>,
    /// Empirical frequency of each action over all transitions.
    pub action_frequencies: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn has_warnings(&self) -> bool {
        !self.warnings.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "trajectories={} transitions={}",
            self.n_trajectories, self.n_transitions
        )?;
        for (a, (&c, &p)) in self
            .action_counts
            .iter()
            .zip(&self.action_frequencies)
            .enumerate()
        {
            writeln!(f, "action {a}: count={c} frequency={p:.4}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Structural checks plus empirical positivity diagnostics.
///
/// Hard errors: length mismatches, NaN/infinite entries, out-of-range
/// actions, inconsistent state dimensions. Warning only: an action that is
/// never observed (empirical positivity violation).
pub fn validate_dataset(ds: &OfflineDataset) -> Result<ValidationReport> {
    ds.check_structure()?;

    let mut counts = vec![0usize; ds.action_count];
    for tr in ds.transitions() {
        counts[tr.action] += 1;
    }
    let total = ds.n_transitions().max(1);
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();

    let mut warnings = Vec::new();
    for (a, &c) in counts.iter().enumerate() {
        if c == 0 {
            warnings.push(format!(
                "positivity: action {a} is never observed (empirical frequency 0)"
            ));
        }
    }

    Ok(ValidationReport {
        n_trajectories: ds.n_trajectories(),
        n_transitions: ds.n_transitions(),
        action_counts: counts,
        action_frequencies: freqs,
        warnings,
    })
}
