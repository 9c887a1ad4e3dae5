//! Tabular chain environment wrapping an explicit MDP.

use rand::rngs::StdRng;
use rand::Rng;

use crate::data::StateVector;
use crate::policy::sample_index;
use crate::sim::Environment;
use crate::tabular::TabularMDP;

/// Simulates a [`TabularMDP`]; states are 1-dim cell vectors.
#[derive(Debug, Clone)]
pub struct ChainEnv {
    pub mdp: TabularMDP,
    /// Initial-state distribution over cells.
    pub init: Vec<f64>,
}

impl ChainEnv {
    pub fn uniform_start(mdp: TabularMDP) -> Self {
        let n = mdp.state_count;
        ChainEnv {
            mdp,
            init: vec![1.0 / n as f64; n],
        }
    }

    pub fn fixed_start(mdp: TabularMDP, s0: usize) -> Self {
        let n = mdp.state_count;
        let mut init = vec![0.0; n];
        init[s0] = 1.0;
        ChainEnv { mdp, init }
    }

    fn cell(state: &StateVector) -> usize {
        state.0[0] as usize
    }
}

impl Environment for ChainEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_count(&self) -> usize {
        self.mdp.action_count
    }

    fn initial_state(&self, rng: &mut StdRng) -> StateVector {
        StateVector::cell(sample_index(&self.init, rng))
    }

    fn step(&self, state: &StateVector, action: usize, rng: &mut StdRng) -> (StateVector, f64) {
        let s = Self::cell(state);
        let next = sample_index(&self.mdp.transition[s][action], rng);
        let reward = self.mdp.reward[s][action][next];
        (StateVector::cell(next), reward)
    }

    fn reward_bound(&self) -> f64 {
        let mut bound: f64 = 0.0;
        for sa in &self.mdp.reward {
            for row in sa {
                for &r in row {
                    bound = bound.max(r.abs());
                }
            }
        }
        bound.max(1e-12)
    }
}

/// Random ergodic MDP: transition rows from normalized exponentials (so every
/// entry is strictly positive), rewards `R[s][a] ~ U(0,1)`.
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize) -> TabularMDP {
    use rand::SeedableRng;
    let mut rng = StdRng::seed_from_u64(seed);
    let transition: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_states)
                        .map(|_| -f64::ln(rng.random_range(1e-12..1.0)))
                        .collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();
    let reward: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    // exact row normalization to survive the 1e-12 stochasticity check
    let transition = transition
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|row| {
                    let total: f64 = row.iter().sum();
                    row.into_iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();
    TabularMDP::new(transition, reward).expect("random MDP is stochastic by construction")
}
