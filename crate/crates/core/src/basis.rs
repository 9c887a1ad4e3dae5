//! Feature bases and linear value models.
//!
//! A [`FeatureBasis`] maps a state (or a state–action pair, when an action
//! count is attached) to a fixed-dimension feature vector. A
//! [`LinearFunctional`] pairs a weight vector θ with a basis so that
//! `V(s) = θᵀφ(s)` or `Q(s,a) = θᵀφ(s,a)`.

use serde::{Deserialize, Serialize};

use crate::data::{ActionId, OfflineDataset, StateVector};
use crate::error::{Error, Result};

/// Explicit list of enumerable states; tabular features index into it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateEnumeration {
    pub states: Vec<StateVector>,
    pub tol: f64,
}

impl StateEnumeration {
    pub fn new(states: Vec<StateVector>) -> Self {
        StateEnumeration { states, tol: 1e-9 }
    }

    /// Enumeration `0..n` of 1-dim cell states, the tabular-MDP convention.
    pub fn cells(n: usize) -> Self {
        StateEnumeration::new((0..n).map(StateVector::cell).collect())
    }

    /// Distinct states observed in a dataset, sorted lexicographically so the
    /// enumeration is deterministic regardless of trajectory order.
    pub fn from_dataset(ds: &OfflineDataset) -> Self {
        let mut states: Vec<StateVector> = Vec::new();
        for traj in &ds.trajectories {
            for s in &traj.states {
                if !states.iter().any(|k| k.close_to(s, 1e-9)) {
                    states.push(s.clone());
                }
            }
        }
        states.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        StateEnumeration::new(states)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, state: &StateVector) -> Result<usize> {
        self.states
            .iter()
            .position(|k| k.close_to(state, self.tol))
            .ok_or_else(|| Error::UnenumeratedState(state.0.clone()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BasisKind {
    /// One-hot over enumerated state cells.
    TabularIndicator(StateEnumeration),
    /// Intercept plus per-coordinate powers `x, x², …, x^degree`.
    Polynomial { degree: usize },
    /// Gaussian bumps `exp(-|s-c|²/(2h²))` on a fixed grid of centers.
    RadialGrid {
        centers: Vec<Vec<f64>>,
        bandwidth: f64,
    },
}

/// Feature map over states, optionally extended to state–action pairs.
///
/// With `action_count = Some(m)`, the state features are placed in the block
/// belonging to the action: `φ(s,a) = e_a ⊗ φ_state(s)`, dimension `m · p`.
/// For the tabular kind this is exactly a one-hot over (cell, action).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub kind: BasisKind,
    pub state_dim: usize,
    pub action_count: Option<usize>,
}

impl FeatureBasis {
    pub fn tabular(enumeration: StateEnumeration) -> Self {
        let state_dim = enumeration.states.first().map_or(1, |s| s.dim());
        FeatureBasis {
            kind: BasisKind::TabularIndicator(enumeration),
            state_dim,
            action_count: None,
        }
    }

    pub fn polynomial(state_dim: usize, degree: usize) -> Self {
        FeatureBasis {
            kind: BasisKind::Polynomial { degree },
            state_dim,
            action_count: None,
        }
    }

    pub fn radial_grid(centers: Vec<Vec<f64>>, bandwidth: f64) -> Self {
        let state_dim = centers.first().map_or(1, |c| c.len());
        FeatureBasis {
            kind: BasisKind::RadialGrid { centers, bandwidth },
            state_dim,
            action_count: None,
        }
    }

    /// Extend this state basis to state–action pairs over `m` actions.
    pub fn with_actions(mut self, m: usize) -> Self {
        self.action_count = Some(m);
        self
    }

    /// Feature dimension of the state block alone.
    pub fn state_feature_dim(&self) -> usize {
        match &self.kind {
            BasisKind::TabularIndicator(e) => e.len(),
            BasisKind::Polynomial { degree } => 1 + self.state_dim * degree,
            BasisKind::RadialGrid { centers, .. } => centers.len(),
        }
    }

    /// Total output dimension (`p_basis`).
    pub fn dim(&self) -> usize {
        match self.action_count {
            Some(m) => m * self.state_feature_dim(),
            None => self.state_feature_dim(),
        }
    }

    fn state_features(&self, state: &StateVector) -> Result<Vec<f64>> {
        if state.dim() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "basis input state",
                expected: self.state_dim,
                got: state.dim(),
            });
        }
        match &self.kind {
            BasisKind::TabularIndicator(e) => {
                let mut out = vec![0.0; e.len()];
                out[e.index_of(state)?] = 1.0;
                Ok(out)
            }
            BasisKind::Polynomial { degree } => {
                let mut out = Vec::with_capacity(1 + self.state_dim * degree);
                out.push(1.0);
                for &x in state.as_slice() {
                    let mut pow = 1.0;
                    for _ in 0..*degree {
                        pow *= x;
                        out.push(pow);
                    }
                }
                Ok(out)
            }
            BasisKind::RadialGrid { centers, bandwidth } => {
                let h2 = 2.0 * bandwidth * bandwidth;
                Ok(centers
                    .iter()
                    .map(|c| {
                        let d2: f64 = state
                            .as_slice()
                            .iter()
                            .zip(c)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        (-d2 / h2).exp()
                    })
                    .collect())
            }
        }
    }

    /// Evaluate the basis. `action` must be given iff the basis was built
    /// with `with_actions`.
    pub fn evaluate(&self, state: &StateVector, action: Option<ActionId>) -> Result<Vec<f64>> {
        match (self.action_count, action) {
            (None, None) => self.state_features(state),
            (Some(m), Some(a)) => {
                if a >= m {
                    return Err(Error::ActionOutOfRange {
                        action: a,
                        action_count: m,
                    });
                }
                let sf = self.state_features(state)?;
                let p = sf.len();
                let mut out = vec![0.0; m * p];
                out[a * p..(a + 1) * p].copy_from_slice(&sf);
                Ok(out)
            }
            (None, Some(_)) => Err(Error::InvalidConfig(
                "basis has no action block; call with_actions first".into(),
            )),
            (Some(_), None) => Err(Error::InvalidConfig(
                "state-action basis requires an action".into(),
            )),
        }
    }
}

/// Linear value model `θᵀφ(·)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub theta: Vec<f64>,
    pub basis: FeatureBasis,
}

impl LinearFunctional {
    /// Zero-initialized weights of the basis dimension.
    pub fn zeros(basis: FeatureBasis) -> Self {
        let theta = vec![0.0; basis.dim()];
        LinearFunctional { theta, basis }
    }

    pub fn new(theta: Vec<f64>, basis: FeatureBasis) -> Result<Self> {
        if theta.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                context: "theta vs basis dimension",
                expected: basis.dim(),
                got: theta.len(),
            });
        }
        Ok(LinearFunctional { theta, basis })
    }

    pub fn value(&self, state: &StateVector) -> Result<f64> {
        let phi = self.basis.evaluate(state, None)?;
        Ok(dot(&self.theta, &phi))
    }

    pub fn value_sa(&self, state: &StateVector, action: ActionId) -> Result<f64> {
        let phi = self.basis.evaluate(state, Some(action))?;
        Ok(dot(&self.theta, &phi))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabular_one_hot() {
        let basis = FeatureBasis::tabular(StateEnumeration::cells(3));
        let phi = basis.evaluate(&StateVector::cell(1), None).unwrap();
        assert_eq!(phi, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn tabular_unenumerated_state_errors() {
        let basis = FeatureBasis::tabular(StateEnumeration::cells(3));
        assert!(matches!(
            basis.evaluate(&StateVector::cell(7), None),
            Err(Error::UnenumeratedState(_))
        ));
    }

    #[test]
    fn polynomial_degree_one() {
        let basis = FeatureBasis::polynomial(1, 1);
        let phi = basis.evaluate(&StateVector::new(vec![2.0]), None).unwrap();
        assert_eq!(phi, vec![1.0, 2.0]);
    }

    #[test]
    fn radial_kernel_is_one_at_center() {
        let basis = FeatureBasis::radial_grid(vec![vec![0.0]], 1.0);
        let phi = basis.evaluate(&StateVector::new(vec![0.0]), None).unwrap();
        assert_eq!(phi, vec![1.0]);
    }

    #[test]
    fn state_action_block_layout() {
        let basis = FeatureBasis::tabular(StateEnumeration::cells(2)).with_actions(3);
        assert_eq!(basis.dim(), 6);
        let phi = basis.evaluate(&StateVector::cell(1), Some(2)).unwrap();
        assert_eq!(phi, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn tabular_lookup_equivalence() {
        // θᵀφ(s) is a table lookup for the indicator basis.
        let basis = FeatureBasis::tabular(StateEnumeration::cells(4));
        let theta = vec![0.3, -1.0, 2.5, 0.0];
        let f = LinearFunctional::new(theta.clone(), basis).unwrap();
        for (i, want) in theta.iter().enumerate() {
            assert_eq!(f.value(&StateVector::cell(i)).unwrap(), *want);
        }
    }

    #[test]
    fn enumeration_from_dataset_is_sorted() {
        use crate::data::Trajectory;
        let t = Trajectory::new(
            vec![StateVector::cell(2), StateVector::cell(0), StateVector::cell(2)],
            vec![0, 0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let ds = OfflineDataset::new(vec![t], 1, 1).unwrap();
        let e = StateEnumeration::from_dataset(&ds);
        assert_eq!(e.states.len(), 2);
        assert_eq!(e.states[0], StateVector::cell(0));
        assert_eq!(e.states[1], StateVector::cell(2));
    }
}
