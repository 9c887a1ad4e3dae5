//! Serialized model artifacts: method tag, fitted parameters, config echo,
//! and fit diagnostics, as a single JSON document.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dtr_core::basis::{FeatureBasis, LinearFunctional};
use dtr_core::data::{ActionId, StateVector};
use dtr_core::finite_horizon::StagePolicy;
use dtr_core::policy::{argmax, Policy, SoftmaxPolicy};
use dtr_core::proximal::ProximalModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub iterations: usize,
    /// Final loss or residual norm, method-dependent.
    pub final_loss: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ModelParams {
    BackwardInduction {
        stages: Vec<StagePolicy>,
    },
    TdOn {
        model: LinearFunctional,
        gamma: f64,
    },
    TdOff {
        model: LinearFunctional,
        gamma: f64,
        clip_events: usize,
    },
    Rg {
        model: LinearFunctional,
        gamma: f64,
    },
    Ggq {
        q_model: LinearFunctional,
        gamma: f64,
    },
    Vlearn {
        v_model: LinearFunctional,
        gamma: f64,
        policy_beta: Vec<f64>,
        policy_basis: FeatureBasis,
    },
    Pt {
        model: ProximalModel,
        /// (λ, held-out loss) pairs when cross-validation ran.
        cv_losses: Vec<(f64, f64)>,
    },
}

impl ModelParams {
    pub fn method_name(&self) -> &'static str {
        match self {
            ModelParams::BackwardInduction { .. } => "backward_induction",
            ModelParams::TdOn { .. } => "td_on",
            ModelParams::TdOff { .. } => "td_off",
            ModelParams::Rg { .. } => "rg",
            ModelParams::Ggq { .. } => "ggq",
            ModelParams::Vlearn { .. } => "vlearn",
            ModelParams::Pt { .. } => "pt",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: String,
    pub config_hash: String,
    pub state_dim: usize,
    pub action_count: usize,
    pub diagnostics: Diagnostics,
    #[serde(flatten)]
    pub params: ModelParams,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).context("serializing model artifact")?;
        std::fs::write(path, json.as_bytes())
            .with_context(|| format!("writing model file {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading model file {}", path.display()))?;
        serde_json::from_str(&text).context("parsing model artifact")
    }

    /// Action distribution the fitted model induces at a state; value-only
    /// methods (TD, residual gradient) have none.
    pub fn action_probs(&self, state: &StateVector) -> Result<Vec<f64>> {
        if state.dim() != self.state_dim {
            bail!(
                "state dimension mismatch: model expects {}, got {}",
                self.state_dim,
                state.dim()
            );
        }
        match &self.params {
            ModelParams::Pt { model, .. } => {
                let (probs, _) = model.predict(state)?;
                Ok(probs)
            }
            ModelParams::Ggq { q_model, .. } => {
                let q: Vec<f64> = (0..self.action_count)
                    .map(|a| q_model.value_sa(state, a))
                    .collect::<dtr_core::Result<_>>()?;
                let mut probs = vec![0.0; self.action_count];
                probs[argmax(&q)] = 1.0;
                Ok(probs)
            }
            ModelParams::Vlearn {
                policy_beta,
                policy_basis,
                ..
            } => {
                let policy = SoftmaxPolicy::new(policy_beta.clone(), policy_basis.clone())?;
                Ok(policy.action_probs(state))
            }
            ModelParams::BackwardInduction { stages } => {
                let first = stages
                    .first()
                    .context("artifact holds no stage policies")?;
                let a = first.decide(std::slice::from_ref(state), &[])?;
                let mut probs = vec![0.0; self.action_count];
                probs[a] = 1.0;
                Ok(probs)
            }
            ModelParams::TdOn { .. } | ModelParams::TdOff { .. } | ModelParams::Rg { .. } => {
                bail!(
                    "method '{}' fits a value function and does not induce a policy; use evaluate",
                    self.params.method_name()
                )
            }
        }
    }

    /// Recommended action (0-based internally; the CLI prints 1-based).
    pub fn recommend(&self, state: &StateVector) -> Result<ActionId> {
        Ok(argmax(&self.action_probs(state)?))
    }

    /// pT-specific sparsity-corrected value lower bound at a state.
    pub fn pt_lower_bound(&self, state: &StateVector) -> Option<f64> {
        match &self.params {
            ModelParams::Pt { model, .. } => model.value_lower_bound(state).ok(),
            _ => None,
        }
    }
}
