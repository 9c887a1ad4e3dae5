//! Generative environments, offline data generation, and Monte-Carlo policy
//! evaluation.
//!
//! All randomness flows through seeded [`rand::rngs::StdRng`] generators
//! derived from explicit `u64` seeds: identical seeds give identical
//! trajectories.

mod chain;
mod glucose;
mod online;

pub use chain::{random_mdp, ChainEnv};
pub use glucose::{glycemic_reward, GlucoseConfig, GlucoseEnv, GlucoseHeuristicPolicy};
pub use online::{
    epsilon_greedy_online, EmpiricalModelLearner, EpsilonSchedule, OnlineConfig, OnlineLearner,
    OnlineStep,
};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::basis::LinearFunctional;
use crate::data::{OfflineDataset, StateVector, Trajectory};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// A simulatable decision process.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn initial_state(&self, rng: &mut StdRng) -> StateVector;
    /// Sample `(next_state, reward)` for taking `action` in `state`.
    fn step(&self, state: &StateVector, action: usize, rng: &mut StdRng) -> (StateVector, f64);
    /// An upper bound on |reward|, used to truncate discounted rollouts.
    fn reward_bound(&self) -> f64;
}

/// Per-trajectory RNGs derived from one master seed, so trajectory `i` is
/// reproducible independently of how many others are generated.
fn derived_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut master = StdRng::seed_from_u64(seed);
    (0..n).map(|_| master.random()).collect()
}

/// Roll out `n` trajectories of exactly `t` transitions under a behavior
/// policy.
pub fn generate_dataset(
    env: &dyn Environment,
    behavior: &dyn Policy,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 || t == 0 {
        return Err(Error::InvalidConfig(
            "generate_dataset needs n ≥ 1 and t ≥ 1".into(),
        ));
    }
    let mut trajectories = Vec::with_capacity(n);
    for traj_seed in derived_seeds(seed, n) {
        let mut rng = StdRng::seed_from_u64(traj_seed);
        let mut states = Vec::with_capacity(t + 1);
        let mut actions = Vec::with_capacity(t);
        let mut rewards = Vec::with_capacity(t);
        let mut state = env.initial_state(&mut rng);
        for _ in 0..t {
            let action = behavior.sample(&state, &mut rng);
            let (next, reward) = env.step(&state, action, &mut rng);
            states.push(state);
            actions.push(action);
            rewards.push(reward);
            state = next;
        }
        states.push(state);
        trajectories.push(Trajectory::new(states, actions, rewards)?);
    }
    OfflineDataset::new(trajectories, env.state_dim(), env.action_count())
}

/// Smallest horizon H with `γ^H · r_max < 1e-4`.
pub fn truncation_horizon(gamma: f64, r_max: f64) -> usize {
    if gamma <= 0.0 || r_max <= 0.0 {
        return 1;
    }
    let mut h = 1usize;
    let mut w = gamma;
    while w * r_max >= 1e-4 && h < 100_000 {
        w *= gamma;
        h += 1;
    }
    h
}

/// Monte-Carlo estimate of the discounted return from `s0` under `policy`:
/// mean over `m` truncated rollouts plus its standard error.
pub fn mc_value(
    env: &dyn Environment,
    policy: &dyn Policy,
    s0: &StateVector,
    gamma: f64,
    m: usize,
    horizon: Option<usize>,
    seed: u64,
) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::InvalidConfig("mc_value needs m ≥ 1".into()));
    }
    let h = horizon.unwrap_or_else(|| truncation_horizon(gamma, env.reward_bound()));
    let mut returns = Vec::with_capacity(m);
    for rep_seed in derived_seeds(seed, m) {
        let mut rng = StdRng::seed_from_u64(rep_seed);
        let mut state = s0.clone();
        let mut total = 0.0;
        let mut weight = 1.0;
        for _ in 0..h {
            let action = policy.sample(&state, &mut rng);
            let (next, reward) = env.step(&state, action, &mut rng);
            total += weight * reward;
            weight *= gamma;
            state = next;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / m as f64;
    let se = if m > 1 {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// As [`mc_value`], but every rollout draws a fresh initial state from the
/// environment, so the returns are i.i.d. draws of the discounted return
/// under the initial-state distribution.
pub fn mc_value_initial(
    env: &dyn Environment,
    policy: &dyn Policy,
    gamma: f64,
    m: usize,
    horizon: Option<usize>,
    seed: u64,
) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::InvalidConfig("mc_value_initial needs m ≥ 1".into()));
    }
    let h = horizon.unwrap_or_else(|| truncation_horizon(gamma, env.reward_bound()));
    let mut returns = Vec::with_capacity(m);
    for rep_seed in derived_seeds(seed, m) {
        let mut rng = StdRng::seed_from_u64(rep_seed);
        let mut state = env.initial_state(&mut rng);
        let mut total = 0.0;
        let mut weight = 1.0;
        for _ in 0..h {
            let action = policy.sample(&state, &mut rng);
            let (next, reward) = env.step(&state, action, &mut rng);
            total += weight * reward;
            weight *= gamma;
            state = next;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / m as f64;
    let se = if m > 1 {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Unbiased two-sample estimate of the population MSBE: draw the successor
/// twice independently per (s, a) and multiply the two residuals. Only
/// possible inside a simulator, where a state can be re-stepped; this is the
/// reference estimator the one-sample empirical MSBE is biased against.
pub fn two_sample_msbe(
    env: &dyn Environment,
    model: &LinearFunctional,
    states: &[StateVector],
    policy: &dyn Policy,
    gamma: f64,
    seed: u64,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyInput("two_sample_msbe needs states"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut total = 0.0;
    for s in states {
        // two fully independent draws of (a, s') given s
        let a1 = policy.sample(s, &mut rng);
        let (s1, r1) = env.step(s, a1, &mut rng);
        let a2 = policy.sample(s, &mut rng);
        let (s2, r2) = env.step(s, a2, &mut rng);
        let v = model.value(s)?;
        let res1 = r1 + gamma * model.value(&s1)? - v;
        let res2 = r2 + gamma * model.value(&s2)? - v;
        total += res1 * res2;
    }
    Ok(total / states.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{FeatureBasis, StateEnumeration};
    use crate::policy::UniformPolicy;
    use crate::tabular::{policy_evaluation, TabularMDP};

    #[test]
    fn dataset_shapes() {
        let mdp = random_mdp(1, 3, 2);
        let env = ChainEnv::uniform_start(mdp);
        let ds = generate_dataset(&env, &UniformPolicy::new(2), 1, 1, 5).unwrap();
        assert_eq!(ds.n_trajectories(), 1);
        assert_eq!(ds.trajectories[0].states.len(), 2);
        assert_eq!(ds.trajectories[0].actions.len(), 1);
        assert_eq!(ds.trajectories[0].rewards.len(), 1);
    }

    #[test]
    fn fixed_seed_reproduces_dataset() {
        let mdp = random_mdp(2, 4, 3);
        let env = ChainEnv::uniform_start(mdp);
        let a = generate_dataset(&env, &UniformPolicy::new(3), 7, 9, 1234).unwrap();
        let b = generate_dataset(&env, &UniformPolicy::new(3), 7, 9, 1234).unwrap();
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(ta.states, tb.states);
            assert_eq!(ta.actions, tb.actions);
            assert_eq!(ta.rewards, tb.rewards);
        }
    }

    #[test]
    fn chain_frequencies_match_transition_rows() {
        let mdp = random_mdp(7, 3, 2);
        let env = ChainEnv::uniform_start(mdp.clone());
        let ds = generate_dataset(&env, &UniformPolicy::new(2), 500, 20, 77).unwrap();
        // empirical P(s'|s,a) over 10k transitions
        let mut counts = vec![vec![vec![0usize; 3]; 2]; 3];
        for tr in ds.transitions() {
            let s = tr.state.0[0] as usize;
            let sn = tr.next_state.0[0] as usize;
            counts[s][tr.action][sn] += 1;
        }
        for s in 0..3 {
            for a in 0..2 {
                let total: usize = counts[s][a].iter().sum();
                if total < 200 {
                    continue;
                }
                for sn in 0..3 {
                    let freq = counts[s][a][sn] as f64 / total as f64;
                    assert!(
                        (freq - mdp.transition[s][a][sn]).abs() < 0.03,
                        "P({sn}|{s},{a}): {freq} vs {}",
                        mdp.transition[s][a][sn]
                    );
                }
            }
        }
    }

    #[test]
    fn mc_value_zero_reward_env() {
        let p = vec![vec![vec![1.0]]];
        let mdp = TabularMDP::new(p, vec![vec![0.0]]).unwrap();
        let env = ChainEnv::uniform_start(mdp);
        let (mean, se) = mc_value(
            &env,
            &UniformPolicy::new(1),
            &StateVector::cell(0),
            0.9,
            50,
            None,
            3,
        )
        .unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn mc_value_geometric_series() {
        let mdp = TabularMDP::new(vec![vec![vec![1.0]]], vec![vec![1.0]]).unwrap();
        let env = ChainEnv::uniform_start(mdp);
        let (mean, se) = mc_value(
            &env,
            &UniformPolicy::new(1),
            &StateVector::cell(0),
            0.9,
            100,
            None,
            3,
        )
        .unwrap();
        // deterministic rewards: only truncation error
        assert!((mean - 10.0).abs() <= (3.0 * se).max(1e-2), "mean={mean} se={se}");
    }

    #[test]
    fn mc_value_matches_policy_evaluation() {
        let mdp = random_mdp(11, 4, 2);
        let gamma = 0.9;
        let env = ChainEnv::uniform_start(mdp.clone());
        let uniform = UniformPolicy::new(2);
        let oracle = policy_evaluation(&mdp, &uniform, gamma).unwrap();
        let (mean, se) = mc_value(
            &env,
            &uniform,
            &StateVector::cell(2),
            gamma,
            2000,
            None,
            5,
        )
        .unwrap();
        assert!(
            (mean - oracle[2]).abs() <= 3.0 * se,
            "mean={mean} oracle={} se={se}",
            oracle[2]
        );
    }

    #[test]
    fn mc_standard_error_shrinks_like_sqrt_m() {
        let mdp = random_mdp(13, 4, 2);
        let env = ChainEnv::uniform_start(mdp);
        let uniform = UniformPolicy::new(2);
        let s0 = StateVector::cell(0);
        let se_at = |m: usize| {
            mc_value(&env, &uniform, &s0, 0.9, m, None, 11).unwrap().1
        };
        let (se100, se400, se1600) = (se_at(100), se_at(400), se_at(1600));
        // each quadrupling should halve the SE within a factor of 2
        for (big, small) in [(se100, se400), (se400, se1600)] {
            let ratio = big / small;
            assert!(
                ratio > 1.0 && ratio < 4.0,
                "ratio {ratio} out of range ({big} vs {small})"
            );
        }
    }

    #[test]
    fn two_sample_estimator_is_unbiased_on_tabular_env() {
        use crate::residual::double_sampling_decomposition;

        let mdp = random_mdp(19, 3, 2);
        let gamma = 0.9;
        let env = ChainEnv::uniform_start(mdp.clone());
        let uniform = UniformPolicy::new(2);
        let model = LinearFunctional::new(
            vec![0.5, -1.0, 2.0],
            FeatureBasis::tabular(StateEnumeration::cells(3)),
        )
        .unwrap();
        let pi = mdp.policy_table(&uniform);
        // population MSBE over the uniform state distribution
        let truth = double_sampling_decomposition(&mdp, &model, gamma, &pi, None)
            .unwrap()
            .population_msbe;
        // two-sample estimate over many replicates of the uniform states
        let states: Vec<StateVector> = (0..3)
            .cycle()
            .take(30_000)
            .map(StateVector::cell)
            .collect();
        let est = two_sample_msbe(&env, &model, &states, &uniform, gamma, 21).unwrap();
        assert!(
            (est - truth).abs() < 0.05 * truth.abs().max(1.0),
            "est={est} truth={truth}"
        );
    }
}
