//! Residual-gradient minimization of the mean squared Bellman error.
//!
//! Unlike TD's semi-gradient, the update here is the exact gradient of the
//! squared one-sample Bellman residual, so it converges — but on stochastic
//! transitions the one-sample objective is biased upward from the population
//! MSBE by a conditional-variance term. [`double_sampling_decomposition`]
//! computes all three pieces of that identity exactly on a tabular model.

use crate::basis::{dot, FeatureBasis, LinearFunctional};
use crate::data::{OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::schedule::StepSchedule;
use crate::tabular::TabularMDP;

/// One-sample empirical MSBE `(1/m) Σ [r + γV_θ(s') - V_θ(s)]²` over all
/// transitions of the dataset (evaluation-form residual for the behavior
/// stream).
pub fn empirical_msbe(model: &LinearFunctional, ds: &OfflineDataset, gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut m = 0usize;
    for tr in ds.transitions() {
        let res = bellman_residual(model, &tr, gamma)?;
        total += res * res;
        m += 1;
    }
    if m == 0 {
        return Err(Error::EmptyInput("empirical_msbe needs transitions"));
    }
    Ok(total / m as f64)
}

/// Optimality-form MSBE `Σ_s w_s (max_a E[r + γV(s')|s,a] - V(s))²`,
/// computable only when the transition model is known.
pub fn optimality_msbe(
    mdp: &TabularMDP,
    model: &LinearFunctional,
    gamma: f64,
    state_weights: Option<&[f64]>,
) -> Result<f64> {
    let v: Vec<f64> = (0..mdp.state_count)
        .map(|s| model.value(&mdp.state_vector(s)))
        .collect::<Result<_>>()?;
    let bv = crate::tabular::bellman_optimality_operator(mdp, &v, gamma);
    let n = mdp.state_count as f64;
    Ok((0..mdp.state_count)
        .map(|s| {
            let w = state_weights.map_or(1.0 / n, |ws| ws[s]);
            let r = bv[s] - v[s];
            w * r * r
        })
        .sum())
}

fn bellman_residual(model: &LinearFunctional, tr: &Transition<'_>, gamma: f64) -> Result<f64> {
    Ok(tr.reward + gamma * model.value(tr.next_state)? - model.value(tr.state)?)
}

/// Full-gradient step on the squared one-sample residual:
/// `θ ← θ - α [r + γV(s') - V(s)] [γφ(s') - φ(s)]`.
pub fn rg_update(
    model: &mut LinearFunctional,
    tr: &Transition<'_>,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let residual = bellman_residual(model, tr, gamma)?;
    let phi_s = model.basis.evaluate(tr.state, None)?;
    let phi_n = model.basis.evaluate(tr.next_state, None)?;
    for ((t, ps), pn) in model.theta.iter_mut().zip(&phi_s).zip(&phi_n) {
        *t -= alpha * residual * (gamma * pn - ps);
    }
    Ok(residual)
}

/// Gradient of `0.5·residual²` in θ, for gradient checking.
pub fn rg_gradient(model: &LinearFunctional, tr: &Transition<'_>, gamma: f64) -> Result<Vec<f64>> {
    let residual = bellman_residual(model, tr, gamma)?;
    let phi_s = model.basis.evaluate(tr.state, None)?;
    let phi_n = model.basis.evaluate(tr.next_state, None)?;
    Ok(phi_s
        .iter()
        .zip(&phi_n)
        .map(|(ps, pn)| residual * (gamma * pn - ps))
        .collect())
}

#[derive(Debug, Clone)]
pub struct RgFit {
    pub model: LinearFunctional,
    pub iterations: usize,
    /// Final L2 norm of the empirical-MSBE gradient.
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Full-batch gradient descent on the empirical MSBE.
///
/// Stops when the gradient norm drops to `tol` or after `max_iter` passes;
/// the report says which.
pub fn fit_rg(
    ds: &OfflineDataset,
    basis: FeatureBasis,
    gamma: f64,
    schedule: &StepSchedule,
    max_iter: usize,
    tol: f64,
) -> Result<RgFit> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidGamma(gamma));
    }
    let m = ds.n_transitions();
    if m == 0 {
        return Err(Error::EmptyInput("fit_rg needs transitions"));
    }

    // Features are fixed; precompute per transition.
    let mut feats: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(m);
    for tr in ds.transitions() {
        feats.push((
            basis.evaluate(tr.state, None)?,
            basis.evaluate(tr.next_state, None)?,
            tr.reward,
        ));
    }

    let p = basis.dim();
    let mut theta = vec![0.0; p];
    let mut gradient_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..max_iter {
        let mut grad = vec![0.0; p];
        for (phi_s, phi_n, r) in &feats {
            let residual = r + gamma * dot(&theta, phi_n) - dot(&theta, phi_s);
            for ((g, ps), pn) in grad.iter_mut().zip(phi_s).zip(phi_n) {
                *g += 2.0 * residual * (gamma * pn - ps);
            }
        }
        for g in grad.iter_mut() {
            *g /= m as f64;
        }
        gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        iterations = k + 1;
        if gradient_norm <= tol {
            converged = true;
            break;
        }
        let alpha = schedule.at(k);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= alpha * g;
        }
    }

    Ok(RgFit {
        model: LinearFunctional::new(theta, basis)?,
        iterations,
        gradient_norm,
        converged,
    })
}

/// Exact terms of the double-sampling identity on a tabular model.
#[derive(Debug, Clone, Copy)]
pub struct MsbeDecomposition {
    /// `Σ_s w_s (E[r + γV(S')|s] - V(s))²`
    pub population_msbe: f64,
    /// `Σ_s w_s E[(r + γV(S') - V(s))²|s]`
    pub expected_empirical_msbe: f64,
    /// `Σ_s w_s Var(r + γV(S')|s)`
    pub variance_term: f64,
}

/// Enumerate `E[MSBE-hat] = MSBE + E_s[var(B-hat V(s)|s)]` exactly.
///
/// The conditional law of `r + γV(S')` given `s` draws the action from
/// `policy` and the successor from the transition tensor. `state_weights`
/// defaults to uniform.
pub fn double_sampling_decomposition(
    mdp: &TabularMDP,
    model: &LinearFunctional,
    gamma: f64,
    policy_table: &[Vec<f64>],
    state_weights: Option<&[f64]>,
) -> Result<MsbeDecomposition> {
    let v: Vec<f64> = (0..mdp.state_count)
        .map(|s| model.value(&mdp.state_vector(s)))
        .collect::<Result<_>>()?;

    let n = mdp.state_count as f64;
    let mut population = 0.0;
    let mut expected_empirical = 0.0;
    let mut variance = 0.0;
    for s in 0..mdp.state_count {
        let w = state_weights.map_or(1.0 / n, |ws| ws[s]);
        // first and second moments of T = r + γ V(S') given s
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for a in 0..mdp.action_count {
            let pa = policy_table[s][a];
            if pa == 0.0 {
                continue;
            }
            for (sn, &p) in mdp.transition[s][a].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let t = mdp.reward[s][a][sn] + gamma * v[sn];
                m1 += pa * p * t;
                m2 += pa * p * t * t;
            }
        }
        let mean_res = m1 - v[s];
        population += w * mean_res * mean_res;
        expected_empirical += w * (m2 - 2.0 * v[s] * m1 + v[s] * v[s]);
        variance += w * (m2 - m1 * m1);
    }

    Ok(MsbeDecomposition {
        population_msbe: population,
        expected_empirical_msbe: expected_empirical,
        variance_term: variance,
    })
}

/// Population MSBE (evaluation form) under a policy, plus its exact minimum
/// over θ for a given basis: the quadratic `Σ_s w_s (r_π(s) + γ(P_π Φθ)(s)
/// - (Φθ)(s))²` minimized by least squares.
pub fn population_msbe_minimum(
    mdp: &TabularMDP,
    basis: &FeatureBasis,
    gamma: f64,
    policy_table: &[Vec<f64>],
) -> Result<(LinearFunctional, f64)> {
    use nalgebra::{DMatrix, DVector};

    let n = mdp.state_count;
    let p = basis.dim();
    let phi: Vec<Vec<f64>> = (0..n)
        .map(|s| basis.evaluate(&mdp.state_vector(s), None))
        .collect::<Result<_>>()?;

    // residual(s) = r_π(s) + Σ_j θ_j [γ (P_π φ_j)(s) - φ_j(s)]
    let mut design = DMatrix::<f64>::zeros(n, p);
    let mut rhs = DVector::<f64>::zeros(n);
    let w = (1.0 / n as f64).sqrt();
    for s in 0..n {
        let mut r_pi = 0.0;
        let mut p_phi = vec![0.0; p];
        for a in 0..mdp.action_count {
            let pa = policy_table[s][a];
            if pa == 0.0 {
                continue;
            }
            r_pi += pa * mdp.expected_reward(s, a);
            for (sn, &pr) in mdp.transition[s][a].iter().enumerate() {
                for j in 0..p {
                    p_phi[j] += pa * pr * phi[sn][j];
                }
            }
        }
        for j in 0..p {
            design[(s, j)] = w * (gamma * p_phi[j] - phi[s][j]);
        }
        rhs[s] = -w * r_pi;
    }

    let theta = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::SingularSystem(format!("population MSBE minimization: {e}")))?;
    let residual = design * &theta - rhs;
    let min_value = residual.iter().map(|r| r * r).sum::<f64>();
    let model = LinearFunctional::new(theta.iter().cloned().collect(), basis.clone())?;
    Ok((model, min_value))
}

/// Population MSBE (evaluation form, uniform state weights) of a given model.
pub fn population_msbe(
    mdp: &TabularMDP,
    model: &LinearFunctional,
    gamma: f64,
    policy_table: &[Vec<f64>],
) -> Result<f64> {
    let d = double_sampling_decomposition(mdp, model, gamma, policy_table, None)?;
    Ok(d.population_msbe)
}
