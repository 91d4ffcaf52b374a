//! Scenarios, closed-loop simulation, Monte Carlo studies and exports built on `coplan`.

pub mod export;
pub mod montecarlo;
pub mod planning;
pub mod scenario;

use coplan::{GameError, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("planner: {message}")]
    Planner { message: String, violations: Vec<f64> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("export: {0}")]
    Export(String),
}

impl HarnessError {
    /// Process exit status: 2 for invalid configuration or scenario, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Scenario(_) => 2,
            _ => 1,
        }
    }
}
