//! Shared fixtures for the criterion benches.

use dtr_core::policy::UniformPolicy;
use dtr_core::sim::{generate_dataset, random_mdp, ChainEnv};
use dtr_core::{OfflineDataset, TabularMDP};

pub fn bench_mdp(states: usize, actions: usize) -> TabularMDP {
    random_mdp(0xBE7C, states, actions)
}

pub fn bench_dataset(states: usize, actions: usize, n: usize, t: usize) -> OfflineDataset {
    let env = ChainEnv::uniform_start(bench_mdp(states, actions));
    generate_dataset(&env, &UniformPolicy::new(actions), n, t, 0xDA7A).expect("bench dataset")
}
