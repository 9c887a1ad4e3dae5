//! Greedy gradient Q-learning: solve the TD moment condition with the max
//! operator inside the error.

use nalgebra::{DMatrix, DVector};

use crate::basis::{dot, FeatureBasis, LinearFunctional};
use crate::data::{OfflineDataset, StateVector, Transition};
use crate::error::{Error, Result};
use crate::policy::argmax;

/// Linear Q model `Q(s,a) = θᵀφ(s,a)` with its discount.
#[derive(Debug, Clone)]
pub struct GgqModel {
    pub q: LinearFunctional,
    pub gamma: f64,
}

impl GgqModel {
    pub fn zeros(basis: FeatureBasis, gamma: f64) -> Result<Self> {
        if basis.action_count.is_none() {
            return Err(Error::InvalidConfig(
                "GGQ needs a state-action basis (with_actions)".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(GgqModel {
            q: LinearFunctional::zeros(basis),
            gamma,
        })
    }

    pub fn action_count(&self) -> usize {
        self.q.basis.action_count.unwrap_or(0)
    }

    pub fn q_values(&self, state: &StateVector) -> Result<Vec<f64>> {
        (0..self.action_count())
            .map(|a| self.q.value_sa(state, a))
            .collect()
    }

    /// Greedy action, lowest-index tie-break.
    pub fn greedy(&self, state: &StateVector) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }
}

/// GGQ temporal difference error
/// `δ = r + γ max_a' Q(s',a') - Q(s,a)`.
pub fn ggq_td_error(model: &GgqModel, tr: &Transition<'_>) -> Result<f64> {
    let next_q = model.q_values(tr.next_state)?;
    let max_next = next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(tr.reward + model.gamma * max_next - model.q.value_sa(tr.state, tr.action)?)
}

/// Sample estimating equation `(1/M) Σ_i Σ_t δ(θ)·φ(s,a)`, normalized by the
/// total transition count.
pub fn ggq_residual(model: &GgqModel, ds: &OfflineDataset) -> Result<Vec<f64>> {
    let p = model.q.theta.len();
    let mut g = vec![0.0; p];
    let mut count = 0usize;
    for tr in ds.transitions() {
        let delta = ggq_td_error(model, &tr)?;
        let phi = model.q.basis.evaluate(tr.state, Some(tr.action))?;
        for (gi, f) in g.iter_mut().zip(&phi) {
            *gi += delta * f;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("ggq_residual needs transitions"));
    }
    for gi in g.iter_mut() {
        *gi /= count as f64;
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct GgqConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Damping η for the Newton step on the active linear piece.
    pub damping: f64,
    /// Ridge added to the Jacobian when it is singular (unvisited cells).
    pub ridge: f64,
}

impl Default for GgqConfig {
    fn default() -> Self {
        GgqConfig {
            tol: 1e-8,
            max_iter: 300,
            damping: 0.5,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct GgqFit {
    pub model: GgqModel,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Solve the GGQ estimating equation by damped Newton steps that hold the
/// argmax fixed on the current linear piece.
///
/// The max operator makes the system piecewise linear; non-convergence
/// returns the best iterate with a warning rather than an error.
pub fn solve_ggq(
    ds: &OfflineDataset,
    basis: FeatureBasis,
    gamma: f64,
    config: &GgqConfig,
) -> Result<GgqFit> {
    let mut warnings = Vec::new();
    let report = crate::data::validate_dataset(ds)?;
    warnings.extend(report.warnings.iter().cloned());

    let mut model = GgqModel::zeros(basis, gamma)?;
    let p = model.q.theta.len();
    let m_actions = model.action_count();

    // Features at observed pairs and per-action features at successors are
    // fixed across iterations.
    let mut phi_sa: Vec<Vec<f64>> = Vec::new();
    let mut phi_next: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut rewards: Vec<f64> = Vec::new();
    for tr in ds.transitions() {
        phi_sa.push(model.q.basis.evaluate(tr.state, Some(tr.action))?);
        phi_next.push(
            (0..m_actions)
                .map(|a| model.q.basis.evaluate(tr.next_state, Some(a)))
                .collect::<Result<_>>()?,
        );
        rewards.push(tr.reward);
    }
    let m = rewards.len();
    if m == 0 {
        return Err(Error::EmptyInput("solve_ggq needs transitions"));
    }

    let mut best_theta = model.q.theta.clone();
    let mut best_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut ridge_used = false;

    for k in 0..config.max_iter {
        iterations = k + 1;
        let theta = &model.q.theta;

        // active greedy piece at the current θ
        let greedy: Vec<usize> = phi_next
            .iter()
            .map(|feats| {
                let q: Vec<f64> = feats.iter().map(|f| dot(theta, f)).collect();
                argmax(&q)
            })
            .collect();

        // residual g(θ) and Jacobian J = (1/M) Σ φ(s,a)(γφ(s',a*) - φ(s,a))ᵀ
        let mut g = DVector::<f64>::zeros(p);
        let mut j = DMatrix::<f64>::zeros(p, p);
        for i in 0..m {
            let phi = &phi_sa[i];
            let phi_star = &phi_next[i][greedy[i]];
            let delta = rewards[i] + gamma * dot(theta, phi_star) - dot(theta, phi);
            for (row, &f) in phi.iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                g[row] += delta * f;
                for (col, (&fs, &fo)) in phi_star.iter().zip(phi).enumerate() {
                    j[(row, col)] += f * (gamma * fs - fo);
                }
            }
        }
        g /= m as f64;
        j /= m as f64;

        let norm = g.norm();
        if norm < best_norm {
            best_norm = norm;
            best_theta = theta.clone();
        }
        if norm <= config.tol {
            converged = true;
            break;
        }

        let step = match j.clone().lu().solve(&g) {
            Some(s) => s,
            None => {
                ridge_used = true;
                let mut jr = j;
                for d in 0..p {
                    jr[(d, d)] += config.ridge;
                }
                jr.lu().solve(&g).ok_or_else(|| {
                    Error::SingularSystem("GGQ Jacobian singular even with ridge".into())
                })?
            }
        };
        for (t, s) in model.q.theta.iter_mut().zip(step.iter()) {
            *t -= config.damping * s;
        }
    }

    if ridge_used {
        warnings.push("GGQ Jacobian was singular; ridge regularization applied".into());
    }
    if !converged {
        warnings.push(format!(
            "GGQ did not reach tol={:.1e}; best residual norm {:.3e} after {} iterations",
            config.tol, best_norm, iterations
        ));
        model.q.theta = best_theta;
    }

    let residual_norm = ggq_residual(&model, ds)?
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();

    Ok(GgqFit {
        model,
        iterations,
        residual_norm,
        converged,
        warnings,
    })
}
