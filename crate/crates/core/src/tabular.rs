//! Exact planners on explicitly specified MDPs.
//!
//! Everything here works on the full transition tensor, so results are exact
//! up to floating point and serve as ground truth for the sample-based
//! methods in the rest of the crate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ActionId, StateVector};
use crate::error::{Error, Result};
use crate::policy::{argmax, Policy};

/// Finite MDP with explicit transition probabilities `P[s][a][s']` and
/// rewards `R[s][a][s']` (use [`TabularMDP::new`] for rewards that depend
/// only on `(s, a)`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMDP {
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub state_count: usize,
    pub action_count: usize,
}

impl TabularMDP {
    /// Build from `P[s][a][s']` and per-pair rewards `R[s][a]`.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward_sa: Vec<Vec<f64>>) -> Result<Self> {
        let s = transition.len();
        let a = transition.first().map_or(0, |r| r.len());
        let reward = (0..s)
            .map(|i| (0..a).map(|j| vec![reward_sa[i][j]; s]).collect())
            .collect();
        Self::with_next_state_rewards(transition, reward)
    }

    /// Build from `P[s][a][s']` and rewards `R[s][a][s']`.
    pub fn with_next_state_rewards(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let state_count = transition.len();
        let action_count = transition.first().map_or(0, |r| r.len());
        let mdp = TabularMDP {
            transition,
            reward,
            state_count,
            action_count,
        };
        mdp.check_stochastic()?;
        Ok(mdp)
    }

    pub fn check_stochastic(&self) -> Result<()> {
        for s in 0..self.state_count {
            for a in 0..self.action_count {
                let row = &self.transition[s][a];
                if row.len() != self.state_count {
                    return Err(Error::DimensionMismatch {
                        context: "transition row length",
                        expected: self.state_count,
                        got: row.len(),
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::NonStochasticRow {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                if self.reward[s][a].iter().any(|r| !r.is_finite()) {
                    return Err(Error::NonFinite(format!("reward at (s={s}, a={a})")));
                }
            }
        }
        Ok(())
    }

    /// Expected one-step value `Q_V(s,a) = Σ_s' P(s'|s,a)(R + γ V(s'))`.
    pub fn backup(&self, s: usize, a: usize, v: &[f64], gamma: f64) -> f64 {
        self.transition[s][a]
            .iter()
            .zip(&self.reward[s][a])
            .zip(v)
            .map(|((&p, &r), &vn)| p * (r + gamma * vn))
            .sum()
    }

    /// Expected immediate reward `Σ_s' P(s'|s,a) R(s,a,s')`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transition[s][a]
            .iter()
            .zip(&self.reward[s][a])
            .map(|(&p, &r)| p * r)
            .sum()
    }

    /// The 1-dim state vector standing for cell `s` (shared convention with
    /// tabular bases and chain environments).
    pub fn state_vector(&self, s: usize) -> StateVector {
        StateVector::cell(s)
    }

    /// π(a|s) table for a policy defined on the cell convention.
    pub fn policy_table(&self, policy: &dyn Policy) -> Vec<Vec<f64>> {
        (0..self.state_count)
            .map(|s| policy.action_probs(&self.state_vector(s)))
            .collect()
    }
}

/// One application of the Bellman optimality operator:
/// `(BV)(s) = max_a Σ_s' P(s'|s,a)(R + γ V(s'))`.
pub fn bellman_optimality_operator(mdp: &TabularMDP, v: &[f64], gamma: f64) -> Vec<f64> {
    (0..mdp.state_count)
        .map(|s| {
            (0..mdp.action_count)
                .map(|a| mdp.backup(s, a, v, gamma))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// Greedy policy, lowest-index tie-break.
    pub policy: Vec<ActionId>,
    pub iterations: usize,
    pub converged: bool,
    /// Final `|BV - V|_inf`.
    pub residual: f64,
}

/// Iterate `V ← BV` to the fixed point V*.
///
/// Stops when the sup-norm change is ≤ `tol`; since B is a γ-contraction the
/// returned V then satisfies `|BV - V|_inf ≤ γ·tol`.
///
/// ```
/// use dtr_core::tabular::{value_iteration, TabularMDP};
///
/// // one self-looping state paying 1 per step: V* = 1/(1-γ)
/// let mdp = TabularMDP::new(vec![vec![vec![1.0]]], vec![vec![1.0]]).unwrap();
/// let res = value_iteration(&mdp, 0.9, 1e-12).unwrap();
/// assert!((res.v[0] - 10.0).abs() < 1e-9);
/// ```
pub fn value_iteration(mdp: &TabularMDP, gamma: f64, tol: f64) -> Result<ValueIterationResult> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidGamma(gamma));
    }
    mdp.check_stochastic()?;

    let max_iter = 1_000_000;
    let mut v = vec![0.0; mdp.state_count];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let next = bellman_optimality_operator(mdp, &v, gamma);
        let delta = sup_norm_diff(&next, &v);
        v = next;
        iterations += 1;
        if delta <= tol {
            converged = true;
            break;
        }
    }

    let q: Vec<Vec<f64>> = (0..mdp.state_count)
        .map(|s| {
            (0..mdp.action_count)
                .map(|a| mdp.backup(s, a, &v, gamma))
                .collect()
        })
        .collect();
    let policy: Vec<ActionId> = q.iter().map(|row| argmax(row)).collect();
    let residual = sup_norm_diff(&bellman_optimality_operator(mdp, &v, gamma), &v);

    Ok(ValueIterationResult {
        v,
        q,
        policy,
        iterations,
        converged,
        residual,
    })
}

/// Exact V^π by direct linear solve of `(I - γ P_π) V = r_π`.
pub fn policy_evaluation(mdp: &TabularMDP, policy: &dyn Policy, gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidGamma(gamma));
    }
    let table = mdp.policy_table(policy);
    policy_evaluation_table(mdp, &table, gamma)
}

/// As [`policy_evaluation`], with the policy already in π(a|s) table form.
pub fn policy_evaluation_table(
    mdp: &TabularMDP,
    pi: &[Vec<f64>],
    gamma: f64,
) -> Result<Vec<f64>> {
    let n = mdp.state_count;
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for a in 0..mdp.action_count {
            let w = pi[s][a];
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.expected_reward(s, a);
            for (sn, &p) in mdp.transition[s][a].iter().enumerate() {
                m[(s, sn)] -= gamma * w * p;
            }
        }
    }
    let v = m
        .clone()
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::SingularSystem("policy evaluation (I - γP_π)".into()))?;

    // Machine-precision oracle: refuse to return a sloppy solve.
    let residual = (&m * &v - &r).amax();
    if residual > 1e-10 {
        return Err(Error::SingularSystem(format!(
            "policy evaluation residual {residual:.3e} exceeds 1e-10"
        )));
    }
    Ok(v.iter().cloned().collect())
}

/// Q^π(s,a) from an already-evaluated V^π.
pub fn q_from_v(mdp: &TabularMDP, v: &[f64], gamma: f64) -> Vec<Vec<f64>> {
    (0..mdp.state_count)
        .map(|s| {
            (0..mdp.action_count)
                .map(|a| mdp.backup(s, a, v, gamma))
                .collect()
        })
        .collect()
}

/// Stationary distribution of the Markov chain induced by π (power
/// iteration from uniform; assumes a single recurrent class).
pub fn stationary_distribution(mdp: &TabularMDP, pi: &[Vec<f64>], iters: usize) -> Vec<f64> {
    let n = mdp.state_count;
    let mut d = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        for s in 0..n {
            for a in 0..mdp.action_count {
                let w = d[s] * pi[s][a];
                if w == 0.0 {
                    continue;
                }
                for (sn, &p) in mdp.transition[s][a].iter().enumerate() {
                    next[sn] += w * p;
                }
            }
        }
        d = next;
    }
    d
}

/// Finite-horizon dynamic programming on a known MDP (γ = 1): exact optimal
/// stage policies and values for `horizon` decisions. Serves as the oracle
/// for regression-based backward induction.
pub fn finite_horizon_dp(mdp: &TabularMDP, horizon: usize) -> (Vec<Vec<f64>>, Vec<Vec<ActionId>>) {
    let n = mdp.state_count;
    let mut values = vec![vec![0.0; n]; horizon + 1];
    let mut policies = vec![vec![0; n]; horizon];
    for t in (0..horizon).rev() {
        for s in 0..n {
            let q: Vec<f64> = (0..mdp.action_count)
                .map(|a| mdp.backup(s, a, &values[t + 1], 1.0))
                .collect();
            let best = argmax(&q);
            policies[t][s] = best;
            values[t][s] = q[best];
        }
    }
    (values, policies)
}

pub(crate) fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// 2 states, 2 actions: a0 stays (R=0), a1 moves s0→s1 (R=0); s1 self-loops
/// and pays R=1 under both actions. Shared test fixture.
#[cfg(test)]
pub(crate) fn two_state_chain() -> TabularMDP {
    let p = vec![
        vec![
            vec![1.0, 0.0], // s0, a0: stay
            vec![0.0, 1.0], // s0, a1: move
        ],
        vec![
            vec![0.0, 1.0], // s1, a0: self-loop
            vec![0.0, 1.0], // s1, a1: self-loop
        ],
    ];
    let r = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
    TabularMDP::new(p, r).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::StateEnumeration;
    use crate::policy::{TabularPolicy, UniformPolicy};

    #[test]
    fn operator_zero_rewards_zero_fixed_point() {
        let p = vec![vec![vec![0.5, 0.5], vec![1.0, 0.0]]; 2];
        let r = vec![vec![0.0, 0.0]; 2];
        let mdp = TabularMDP::new(p, r).unwrap();
        let bv = bellman_optimality_operator(&mdp, &[0.0, 0.0], 0.9);
        assert_eq!(bv, vec![0.0, 0.0]);
    }

    #[test]
    fn operator_single_state() {
        let mdp = TabularMDP::new(vec![vec![vec![1.0]]], vec![vec![1.0]]).unwrap();
        let bv = bellman_optimality_operator(&mdp, &[0.0], 0.5);
        assert_eq!(bv, vec![1.0]);
    }

    #[test]
    fn operator_two_state_deterministic_chain() {
        // s0 → s1 → s1, R[s0]=1, R[s1]=0, γ=0.9, V=0: BV = [1, 0].
        let p = vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]];
        let r = vec![vec![1.0], vec![0.0]];
        let mdp = TabularMDP::new(p, r).unwrap();
        let bv = bellman_optimality_operator(&mdp, &[0.0, 0.0], 0.9);
        assert_eq!(bv, vec![1.0, 0.0]);
    }

    #[test]
    fn value_iteration_geometric_series() {
        let mdp = TabularMDP::new(vec![vec![vec![1.0]]], vec![vec![1.0]]).unwrap();
        let res = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        assert!((res.v[0] - 10.0).abs() < 1e-9);
        assert!(res.converged);
    }

    #[test]
    fn value_iteration_two_state_fixed_point() {
        // Hand solve: V*(s1) = 1/(1-0.5) = 2; V*(s0) = max(0.5·V(s0), 0.5·V(s1)) = 1.
        let mdp = two_state_chain();
        let res = value_iteration(&mdp, 0.5, 1e-13).unwrap();
        assert!((res.v[1] - 2.0).abs() < 1e-10);
        assert!((res.v[0] - 1.0).abs() < 1e-10);
        assert_eq!(res.policy[0], 1);
        assert!(res.residual <= 1e-12);
    }

    #[test]
    fn value_iteration_zero_rewards() {
        let p = vec![vec![vec![0.3, 0.7], vec![0.9, 0.1]]; 2];
        let r = vec![vec![0.0, 0.0]; 2];
        let mdp = TabularMDP::new(p, r).unwrap();
        let res = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        assert!(res.v.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn value_iteration_rejects_bad_rows() {
        let p = vec![vec![vec![0.5, 0.4]]; 2];
        let r = vec![vec![0.0]; 2];
        let mdp = TabularMDP {
            transition: p,
            reward: vec![vec![vec![0.0, 0.0]]; 2],
            state_count: 2,
            action_count: 1,
        };
        let _ = r;
        assert!(matches!(
            value_iteration(&mdp, 0.9, 1e-10),
            Err(Error::NonStochasticRow { .. })
        ));
    }

    #[test]
    fn infinite_horizon_solvers_reject_gamma_one() {
        let mdp = two_state_chain();
        assert!(matches!(
            value_iteration(&mdp, 1.0, 1e-10),
            Err(Error::InvalidGamma(_))
        ));
        assert!(matches!(
            policy_evaluation(&mdp, &UniformPolicy::new(2), 1.0),
            Err(Error::InvalidGamma(_))
        ));
    }

    #[test]
    fn policy_evaluation_constant_reward() {
        let mdp = TabularMDP::new(vec![vec![vec![1.0]]], vec![vec![2.0]]).unwrap();
        let v = policy_evaluation(&mdp, &UniformPolicy::new(1), 0.5).unwrap();
        assert!((v[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn policy_evaluation_zero_rewards() {
        let mdp = two_state_chain();
        let zero = TabularMDP::new(mdp.transition.clone(), vec![vec![0.0, 0.0]; 2]).unwrap();
        let v = policy_evaluation(&zero, &UniformPolicy::new(2), 0.5).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn policy_evaluation_uniform_on_chain() {
        // V(s1)=2; V(s0) = 0.5(0.5 V(s0) + 0.5·2) ⟹ V(s0) = 2/3.
        let mdp = two_state_chain();
        let v = policy_evaluation(&mdp, &UniformPolicy::new(2), 0.5).unwrap();
        assert!((v[1] - 2.0).abs() < 1e-12);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_policy_reproduces_v_star() {
        let mdp = two_state_chain();
        let res = value_iteration(&mdp, 0.5, 1e-13).unwrap();
        let greedy = TabularPolicy::deterministic(
            StateEnumeration::cells(mdp.state_count),
            &res.policy,
            mdp.action_count,
        );
        let v_pi = policy_evaluation(&mdp, &greedy, 0.5).unwrap();
        assert!(sup_norm_diff(&v_pi, &res.v) < 1e-8);
    }

    #[test]
    fn finite_horizon_dp_prefers_delayed_payoff() {
        // Over 2 stages starting at s0: moving (a1) then collecting at s1
        // beats staying. V_0(s0) = 0 + 1 = 1 under γ=1 DP.
        let mdp = two_state_chain();
        let (values, policies) = finite_horizon_dp(&mdp, 2);
        assert_eq!(policies[0][0], 1);
        assert!((values[0][0] - 1.0).abs() < 1e-12);
        assert!((values[0][1] - 2.0).abs() < 1e-12);
    }
}
