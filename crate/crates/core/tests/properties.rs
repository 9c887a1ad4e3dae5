//! Property-based invariants spanning the solver modules.

use proptest::prelude::*;

use dtr_core::basis::{FeatureBasis, StateEnumeration};
use dtr_core::bruteforce::{proximal_objective, simplex_exchange_argmax};
use dtr_core::data::StateVector;
use dtr_core::policy::{check_pmf, Policy, TabularPolicy, UniformPolicy};
use dtr_core::proximal::{
    bias_bound, multipliers, proximal_bellman_value, sparse_policy, support_set,
};
use dtr_core::residual::double_sampling_decomposition;
use dtr_core::tabular::{
    bellman_optimality_operator, policy_evaluation, value_iteration, TabularMDP,
};
use dtr_core::LinearFunctional;

fn stochastic_row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..1.0f64, n).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    })
}

fn arb_mdp(max_states: usize, max_actions: usize) -> impl Strategy<Value = TabularMDP> {
    (2..=max_states, 1..=max_actions).prop_flat_map(|(n, m)| {
        let rows = prop::collection::vec(stochastic_row(n), n * m);
        let rewards = prop::collection::vec(-1.0..1.0f64, n * m);
        (rows, rewards).prop_map(move |(rows, rewards)| {
            let transition: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|s| (0..m).map(|a| rows[s * m + a].clone()).collect())
                .collect();
            let reward_sa: Vec<Vec<f64>> = (0..n)
                .map(|s| (0..m).map(|a| rewards[s * m + a]).collect())
                .collect();
            TabularMDP::new(transition, reward_sa).expect("stochastic by construction")
        })
    })
}

fn arb_q(max_actions: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2..=max_actions)
}

fn random_policy_table(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(stochastic_row(m), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bellman_operator_contracts(mdp in arb_mdp(6, 3),
                                  v1 in prop::collection::vec(-5.0..5.0f64, 6),
                                  v2 in prop::collection::vec(-5.0..5.0f64, 6)) {
        let gamma = 0.9;
        let n = mdp.state_count;
        let (v1, v2) = (&v1[..n], &v2[..n]);
        let b1 = bellman_optimality_operator(&mdp, v1, gamma);
        let b2 = bellman_optimality_operator(&mdp, v2, gamma);
        let before = v1.iter().zip(v2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let after = b1.iter().zip(&b2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(after <= gamma * before + 1e-12);
    }

    #[test]
    fn bellman_operator_monotone(mdp in arb_mdp(6, 3),
                                 v in prop::collection::vec(-5.0..5.0f64, 6),
                                 bump in prop::collection::vec(0.0..3.0f64, 6)) {
        let gamma = 0.9;
        let n = mdp.state_count;
        let lo = &v[..n];
        let hi: Vec<f64> = lo.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let blo = bellman_optimality_operator(&mdp, lo, gamma);
        let bhi = bellman_optimality_operator(&mdp, &hi, gamma);
        for (l, h) in blo.iter().zip(&bhi) {
            prop_assert!(l <= &(h + 1e-12));
        }
    }

    #[test]
    fn v_star_dominates_sampled_policies(mdp in arb_mdp(5, 3),
                                         pi in random_policy_table(5, 3)) {
        let gamma = 0.9;
        let n = mdp.state_count;
        let m = mdp.action_count;
        let table: Vec<Vec<f64>> = pi.iter().take(n).map(|row| {
            let total: f64 = row.iter().take(m).sum();
            row.iter().take(m).map(|p| p / total).collect()
        }).collect();
        let res = value_iteration(&mdp, gamma, 1e-12).unwrap();
        let policy = TabularPolicy::new(StateEnumeration::cells(n), table);
        let v_pi = policy_evaluation(&mdp, &policy, gamma).unwrap();
        for s in 0..n {
            // V*(s) = max_a Q*(s,a) by construction
            let max_q = res.q[s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((res.v[s] - max_q).abs() <= 1e-9);
            prop_assert!(res.v[s] >= v_pi[s] - 1e-6);
        }
    }

    #[test]
    fn sparse_policy_invariants(q in arb_q(14), lambda in 0.01..5.0f64) {
        let pi = sparse_policy(&q, lambda);
        prop_assert!(check_pmf(&pi), "not a pmf: {pi:?}");
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        // zero exactly off the support, ordered like q on it
        let support = support_set(&q, lambda);
        for (a, &p) in pi.iter().enumerate() {
            if support.contains(a) {
                prop_assert!(p >= 0.0);
            } else {
                prop_assert!(p == 0.0);
            }
        }
        for a in 0..q.len() {
            for b in 0..q.len() {
                if q[a] > q[b] {
                    prop_assert!(pi[a] >= pi[b] - 1e-12);
                }
            }
        }

        // matches the exchange-ascent oracle in total variation
        let oracle = simplex_exchange_argmax(&q, lambda);
        let tv: f64 = pi.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        prop_assert!(tv <= 1e-3, "tv = {tv}");

        // and the closed-form value equals the attained objective
        let closed = proximal_bellman_value(&q, lambda);
        let attained = proximal_objective(&q, &pi, lambda);
        prop_assert!((closed - attained).abs() <= 1e-9);
    }

    #[test]
    fn support_nested_in_lambda(q in arb_q(10), l1 in 0.01..3.0f64, scale in 1.0..10.0f64) {
        let l2 = l1 * scale;
        let s1 = support_set(&q, l1);
        let s2 = support_set(&q, l2);
        for a in &s1.actions {
            prop_assert!(s2.contains(*a), "support not nested: {:?} vs {:?}", s1.actions, s2.actions);
        }
    }

    #[test]
    fn singleton_support_below_top_gap(q in arb_q(10)) {
        let mut sorted = q.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let gap = sorted[0] - sorted[1];
        prop_assume!(gap > 1e-6);
        let lambda = gap * 0.99;
        let s = support_set(&q, lambda);
        prop_assert_eq!(s.len(), 1);
        let pi = sparse_policy(&q, lambda);
        let best = dtr_core::policy::argmax(&q);
        prop_assert_eq!(pi[best], 1.0);
    }

    #[test]
    fn realized_bias_between_zero_and_bound(q in arb_q(14), lambda in 0.01..5.0f64) {
        let max_q = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bias = proximal_bellman_value(&q, lambda) - max_q;
        let k = support_set(&q, lambda).len();
        prop_assert!(bias >= -1e-12);
        prop_assert!(bias <= bias_bound(lambda, k) + 1e-12);
    }

    #[test]
    fn multiplier_ranges_and_slackness(q in arb_q(14), lambda in 0.01..5.0f64) {
        let m = multipliers(&q, lambda);
        prop_assert!(m.equality >= -lambda / 2.0 - 1e-12 && m.equality <= 0.0);
        let pi = sparse_policy(&q, lambda);
        for (p, psi) in pi.iter().zip(&m.nonneg) {
            prop_assert!(*psi >= 0.0);
            prop_assert!(p * psi == 0.0, "complementary slackness must hold exactly");
        }
    }

    #[test]
    fn decomposition_identity_exact(mdp in arb_mdp(5, 3),
                                    theta in prop::collection::vec(-3.0..3.0f64, 5),
                                    pi in random_policy_table(5, 3)) {
        let gamma = 0.9;
        let n = mdp.state_count;
        let m = mdp.action_count;
        let table: Vec<Vec<f64>> = pi.iter().take(n).map(|row| {
            let total: f64 = row.iter().take(m).sum();
            row.iter().take(m).map(|p| p / total).collect()
        }).collect();
        let model = LinearFunctional::new(
            theta[..n].to_vec(),
            FeatureBasis::tabular(StateEnumeration::cells(n)),
        ).unwrap();
        let d = double_sampling_decomposition(&mdp, &model, gamma, &table, None).unwrap();
        prop_assert!(
            (d.expected_empirical_msbe - d.population_msbe - d.variance_term).abs() <= 1e-12
        );
        prop_assert!(d.variance_term >= -1e-15);
    }

    #[test]
    fn tabular_value_is_lookup(theta in prop::collection::vec(-10.0..10.0f64, 6)) {
        let basis = FeatureBasis::tabular(StateEnumeration::cells(6));
        let f = LinearFunctional::new(theta.clone(), basis).unwrap();
        for (i, want) in theta.iter().enumerate() {
            prop_assert_eq!(f.value(&StateVector::cell(i)).unwrap(), *want);
        }
    }

    #[test]
    fn uniform_policy_pmf_everywhere(m in 1usize..20) {
        let p = UniformPolicy::new(m);
        prop_assert!(check_pmf(&p.action_probs(&StateVector::cell(0))));
    }
}
