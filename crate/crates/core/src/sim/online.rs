//! ε-greedy online policy updating.
//!
//! At each step the agent follows the learner's current policy with
//! probability 1-ε and a uniformly random arm with probability ε, appends
//! the transition to a growing buffer, and periodically refits the learner.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::data::{ActionId, StateVector};
use crate::error::Result;
use crate::policy::{sample_index, uniform01};
use crate::sim::Environment;
use crate::tabular::{value_iteration, TabularMDP};

/// Exploration-rate schedule ε_k.
#[derive(Debug, Clone)]
pub enum EpsilonSchedule {
    Constant(f64),
    /// ε_k = 1 / (1 + k/b), decaying to zero.
    Decay { b: f64 },
}

impl EpsilonSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            EpsilonSchedule::Constant(e) => *e,
            EpsilonSchedule::Decay { b } => 1.0 / (1.0 + k as f64 / b),
        }
    }
}

/// An owned transition record kept in the online buffer.
#[derive(Debug, Clone)]
pub struct BufferedTransition {
    pub state: StateVector,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: StateVector,
}

/// Anything that can be refit from a buffer and then queried for a greedy or
/// stochastic decision.
pub trait OnlineLearner {
    fn refit(&mut self, buffer: &[BufferedTransition]) -> Result<()>;
    /// Current action distribution at a state.
    fn action_probs(&self, state: &StateVector) -> Vec<f64>;
    /// Greedy decision at a state (lowest-index tie-break).
    fn greedy(&self, state: &StateVector) -> ActionId {
        crate::policy::argmax(&self.action_probs(state))
    }
}

/// Model-based learner for tabular environments: maximum-likelihood
/// transition/reward estimates from the buffer, then value iteration.
pub struct EmpiricalModelLearner {
    pub state_count: usize,
    pub action_count: usize,
    pub gamma: f64,
    pub policy: Vec<ActionId>,
}

impl EmpiricalModelLearner {
    pub fn new(state_count: usize, action_count: usize, gamma: f64) -> Self {
        EmpiricalModelLearner {
            state_count,
            action_count,
            gamma,
            policy: vec![0; state_count],
        }
    }
}

impl OnlineLearner for EmpiricalModelLearner {
    fn refit(&mut self, buffer: &[BufferedTransition]) -> Result<()> {
        let (n, m) = (self.state_count, self.action_count);
        let mut counts = vec![vec![vec![0usize; n]; m]; n];
        let mut reward_sums = vec![vec![0.0; m]; n];
        let mut visits = vec![vec![0usize; m]; n];
        for tr in buffer {
            let s = tr.state.0[0] as usize;
            let sn = tr.next_state.0[0] as usize;
            counts[s][tr.action][sn] += 1;
            reward_sums[s][tr.action] += tr.reward;
            visits[s][tr.action] += 1;
        }
        // unvisited pairs fall back to a uniform row with zero reward
        let transition: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|s| {
                (0..m)
                    .map(|a| {
                        if visits[s][a] == 0 {
                            vec![1.0 / n as f64; n]
                        } else {
                            counts[s][a]
                                .iter()
                                .map(|&c| c as f64 / visits[s][a] as f64)
                                .collect()
                        }
                    })
                    .collect()
            })
            .collect();
        let reward: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                (0..m)
                    .map(|a| {
                        if visits[s][a] == 0 {
                            0.0
                        } else {
                            reward_sums[s][a] / visits[s][a] as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let mdp = TabularMDP::new(transition, reward)?;
        self.policy = value_iteration(&mdp, self.gamma, 1e-9)?.policy;
        Ok(())
    }

    fn action_probs(&self, state: &StateVector) -> Vec<f64> {
        let s = state.0[0] as usize;
        let mut probs = vec![0.0; self.action_count];
        probs[self.policy[s]] = 1.0;
        probs
    }
}

#[derive(Debug, Clone)]
pub struct OnlineConfig {
    /// Refit the learner every this many steps.
    pub refit_every: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig { refit_every: 50 }
    }
}

/// One step of the online history.
#[derive(Debug, Clone)]
pub struct OnlineStep {
    pub state: StateVector,
    pub epsilon: f64,
    pub action: ActionId,
    pub reward: f64,
}

/// Run the ε-greedy loop for `steps` environment steps. Returns the
/// per-step history; the learner ends in its final refit state.
pub fn epsilon_greedy_online(
    env: &dyn Environment,
    learner: &mut dyn OnlineLearner,
    epsilon: &EpsilonSchedule,
    steps: usize,
    config: &OnlineConfig,
    seed: u64,
) -> Result<Vec<OnlineStep>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut buffer: Vec<BufferedTransition> = Vec::with_capacity(steps);
    let mut history = Vec::with_capacity(steps);
    let mut state = env.initial_state(&mut rng);
    for k in 0..steps {
        let eps = epsilon.at(k);
        let action = if uniform01(&mut rng) < eps {
            rng.random_range(0..env.action_count())
        } else {
            let probs = learner.action_probs(&state);
            sample_index(&probs, &mut rng)
        };
        let (next, reward) = env.step(&state, action, &mut rng);
        buffer.push(BufferedTransition {
            state: state.clone(),
            action,
            reward,
            next_state: next.clone(),
        });
        history.push(OnlineStep {
            state: state.clone(),
            epsilon: eps,
            action,
            reward,
        });
        state = next;
        if (k + 1) % config.refit_every == 0 {
            learner.refit(&buffer)?;
        }
    }
    learner.refit(&buffer)?;
    Ok(history)
}
