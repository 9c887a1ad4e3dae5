//! Behavior-policy (propensity) estimation from offline data.

use crate::basis::StateEnumeration;
use crate::data::{ActionId, OfflineDataset, StateVector};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// What to fit (or pass through) for μ(a|s).
pub enum PropensitySpec {
    /// Trust a supplied policy; returned unchanged, no flooring.
    Known(Box<dyn Policy>),
    /// Per-cell empirical action frequencies over an enumeration.
    EmpiricalTabular {
        enumeration: StateEnumeration,
        floor: f64,
    },
    /// Maximum-likelihood multinomial logistic regression on `[1, s]`.
    MultinomialLogistic {
        floor: f64,
        iterations: usize,
        step: f64,
    },
}

impl PropensitySpec {
    pub fn empirical(enumeration: StateEnumeration) -> Self {
        PropensitySpec::EmpiricalTabular {
            enumeration,
            floor: 0.01,
        }
    }

    pub fn logistic() -> Self {
        PropensitySpec::MultinomialLogistic {
            floor: 0.01,
            iterations: 500,
            step: 0.5,
        }
    }
}

/// Fitted propensity model μ(a|s).
pub enum PropensityModel {
    Known(Box<dyn Policy>),
    Tabular {
        enumeration: StateEnumeration,
        probs: Vec<Vec<f64>>,
    },
    Logistic {
        /// One weight vector over `[1, s]` per action.
        weights: Vec<Vec<f64>>,
        floor: f64,
        action_count: usize,
    },
}

impl PropensityModel {
    pub fn prob(&self, state: &StateVector, action: ActionId) -> Result<f64> {
        Ok(self.probs(state)?[action])
    }

    pub fn probs(&self, state: &StateVector) -> Result<Vec<f64>> {
        match self {
            PropensityModel::Known(p) => Ok(p.action_probs(state)),
            PropensityModel::Tabular { enumeration, probs } => {
                Ok(probs[enumeration.index_of(state)?].clone())
            }
            PropensityModel::Logistic {
                weights,
                floor,
                action_count,
            } => {
                let logits: Vec<f64> = weights
                    .iter()
                    .map(|w| {
                        w[0] + w[1..]
                            .iter()
                            .zip(state.as_slice())
                            .map(|(wi, xi)| wi * xi)
                            .sum::<f64>()
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                Ok(apply_floor(
                    &exps.iter().map(|e| e / z).collect::<Vec<_>>(),
                    *floor,
                    *action_count,
                ))
            }
        }
    }
}

/// Floor rule: mix with uniform so every probability is ≥ floor while the
/// vector still sums to one: `p' = (1 - m·floor)·p + floor`.
fn apply_floor(p: &[f64], floor: f64, m: usize) -> Vec<f64> {
    p.iter().map(|&x| (1.0 - m as f64 * floor) * x + floor).collect()
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Enumeration cells that had no visits and fell back to uniform.
    pub fallback_cells: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Fit μ(a|s) for the requested kind.
pub fn estimate_propensity(
    ds: &OfflineDataset,
    spec: PropensitySpec,
) -> Result<(PropensityModel, PropensityFit)> {
    let m = ds.action_count;
    match spec {
        PropensitySpec::Known(p) => Ok((
            PropensityModel::Known(p),
            PropensityFit {
                fallback_cells: vec![],
                warnings: vec![],
            },
        )),
        PropensitySpec::EmpiricalTabular { enumeration, floor } => {
            let mut counts = vec![vec![0usize; m]; enumeration.len()];
            for tr in ds.transitions() {
                counts[enumeration.index_of(tr.state)?][tr.action] += 1;
            }
            let mut fallback_cells = Vec::new();
            let probs: Vec<Vec<f64>> = counts
                .iter()
                .enumerate()
                .map(|(cell, row)| {
                    let total: usize = row.iter().sum();
                    if total == 0 {
                        fallback_cells.push(cell);
                        vec![1.0 / m as f64; m]
                    } else {
                        let raw: Vec<f64> =
                            row.iter().map(|&c| c as f64 / total as f64).collect();
                        apply_floor(&raw, floor, m)
                    }
                })
                .collect();
            let warnings = fallback_cells
                .iter()
                .map(|c| format!("propensity cell {c} has no visits; uniform fallback"))
                .collect();
            Ok((
                PropensityModel::Tabular { enumeration, probs },
                PropensityFit {
                    fallback_cells,
                    warnings,
                },
            ))
        }
        PropensitySpec::MultinomialLogistic {
            floor,
            iterations,
            step,
        } => {
            let dim = 1 + ds.state_dim;
            let mut weights = vec![vec![0.0; dim]; m];
            let n = ds.n_transitions() as f64;
            if n == 0.0 {
                return Err(Error::EmptyInput("propensity fit needs transitions"));
            }
            // batch gradient ascent on the multinomial log-likelihood
            for _ in 0..iterations {
                let mut grad = vec![vec![0.0; dim]; m];
                for tr in ds.transitions() {
                    let logits: Vec<f64> = weights
                        .iter()
                        .map(|w| {
                            w[0] + w[1..]
                                .iter()
                                .zip(tr.state.as_slice())
                                .map(|(wi, xi)| wi * xi)
                                .sum::<f64>()
                        })
                        .collect();
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for a in 0..m {
                        let indicator = if a == tr.action { 1.0 } else { 0.0 };
                        let err = indicator - exps[a] / z;
                        grad[a][0] += err;
                        for (g, &x) in grad[a][1..].iter_mut().zip(tr.state.as_slice()) {
                            *g += err * x;
                        }
                    }
                }
                for a in 0..m {
                    for (w, g) in weights[a].iter_mut().zip(&grad[a]) {
                        *w += step * g / n;
                    }
                }
            }
            Ok((
                PropensityModel::Logistic {
                    weights,
                    floor,
                    action_count: m,
                },
                PropensityFit {
                    fallback_cells: vec![],
                    warnings: vec![],
                },
            ))
        }
    }
}
