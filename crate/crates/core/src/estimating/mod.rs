//! Estimating-equation methods: greedy gradient Q-learning and V-learning.

mod ggq;
mod propensity;
mod vlearning;

pub use ggq::{ggq_residual, ggq_td_error, solve_ggq, GgqConfig, GgqFit, GgqModel};
pub use propensity::{estimate_propensity, PropensityFit, PropensityModel, PropensitySpec};
pub use vlearning::{
    solve_vlearning, vlearn_residual, PolicyClass, VLearnConfig, VLearnFit, VLearnModel,
};
