use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no rewards: trajectory has no transitions")]
    NoRewards,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {context} (states={states}, actions={actions}, rewards={rewards})")]
    LengthMismatch {
        context: String,
        states: usize,
        actions: usize,
        rewards: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("action index {action} out of range (action_count={action_count})")]
    ActionOutOfRange { action: usize, action_count: usize },

    #[error("unenumerated state: {0:?} not in the tabular enumeration")]
    UnenumeratedState(Vec<f64>),

    #[error("invalid discount factor {0}: must lie in [0, 1)")]
    InvalidGamma(f64),

    #[error("non-stochastic transition row at (s={state}, a={action}): sum = {sum}")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },

    #[error("positivity violated at (s={state:?}, a={action}): behavior probability is 0")]
    PositivityViolated { state: Vec<f64>, action: usize },

    #[error("semi-gradient divergence: |theta|_inf = {0:.3e} exceeded 1e6")]
    Divergence(f64),

    #[error("underdetermined stage regression at stage {stage}: {rows} rows for {params} parameters (action {action})")]
    UnderdeterminedStage {
        stage: usize,
        action: usize,
        rows: usize,
        params: usize,
    },

    #[error("linear solve failed: {0}")]
    SingularSystem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
