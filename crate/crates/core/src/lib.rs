//! Multi-vehicle trajectory planning as a generalized Nash game with coupled
//! collision constraints, solved for interaction-fair variational equilibria
//! by a semi-decentralized augmented-Lagrangian scheme with multiplier
//! consensus.

pub mod analysis;
pub mod baseline;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod objective;
pub mod qp;
pub mod svep;

pub use error::{GameError, ModelError, QpError};
