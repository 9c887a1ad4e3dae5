//! Offline policy learning for infinite-horizon treatment decisions.
//!
//! The crate is organized around a ladder of methods that all consume the same
//! trajectory data and feature machinery:
//!
//! * [`tabular`] — exact planners on explicitly specified MDPs (value
//!   iteration, linear-solve policy evaluation). These double as the
//!   brute-force ground truth for everything else.
//! * [`finite_horizon`] — backward-induction Q-learning for a fixed number of
//!   decision stages (γ = 1).
//! * [`td`] — on-policy TD(0) and importance-weighted off-policy TD(0) with
//!   linear function approximation.
//! * [`residual`] — true-gradient minimization of the mean squared Bellman
//!   error, plus an exact double-sampling decomposition.
//! * [`estimating`] — greedy gradient Q-learning (GGQ) and V-learning as
//!   estimating-equation solvers, with propensity estimation.
//! * [`proximal`] — sparse proximal Bellman machinery: closed-form sparse
//!   policies, KKT multipliers, the temporal-consistency error, and the
//!   kernel-weighted U-statistic fit.
//! * [`sim`] — generative environments (tabular chain, glucose-like
//!   dynamics), dataset generation, Monte-Carlo evaluation, and the ε-greedy
//!   online loop.
//!
//! Time is 0-based everywhere: a trajectory with `T` decision points stores
//! states `s^0..s^T` (T+1 of them) and actions/rewards `0..T-1`-indexed.
//! Reward `r[t]` is earned moving from `states[t]` to `states[t+1]`.

pub mod basis;
pub mod bruteforce;
pub mod data;
pub mod error;
pub mod estimating;
pub mod finite_horizon;
pub mod policy;
pub mod proximal;
pub mod residual;
pub mod schedule;
pub mod sim;
pub mod tabular;
pub mod td;

pub use basis::{BasisKind, FeatureBasis, LinearFunctional, StateEnumeration};
pub use data::{ActionId, OfflineDataset, StateVector, Trajectory, Transition, ValidationReport};
pub use error::{Error, Result};
pub use policy::Policy;
pub use tabular::TabularMDP;
