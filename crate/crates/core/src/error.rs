use thiserror::Error;

/// Errors raised while building the vehicle model and its constraints.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate collision gradient between vehicles {i} and {j} at step {step}")]
    DegenerateCollision { i: usize, j: usize, step: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("inconsistent problem dimensions: {0}")]
    Dimension(String),
    #[error("hessian is not positive definite on the feasible subspace")]
    NotConvex,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("inconsistent game data: {0}")]
    Inconsistent(String),
    #[error("multiplier for {i}->{j} has no reverse direction")]
    MissingDirection { i: usize, j: usize },
}
