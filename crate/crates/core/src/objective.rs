//! Quadratic reference-tracking cost over one vehicle's decision vector.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{control_offset, state_offset, Trajectory, VehicleState, CONTROL_DIM, STAGE_DIM, STATE_DIM};
use crate::error::ModelError;

/// Diagonal weights of the stage, control and terminal penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub q: [f64; STATE_DIM],
    pub r: [f64; CONTROL_DIM],
    pub qf: [f64; STATE_DIM],
}

impl Default for CostWeights {
    fn default() -> Self {
        let q = [1.0, 1.0, 0.5, 0.5];
        Self { q, r: [0.1, 1.0], qf: q.map(|w| 5.0 * w) }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.q.iter().chain(&self.r).chain(&self.qf).all(|&w| w > 0.0 && w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParams("cost weights must be positive and finite".into()))
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { q: self.q.map(|w| w * factor), r: self.r.map(|w| w * factor), qf: self.qf.map(|w| w * factor) }
    }
}

/// Reference states `x_ref(2) .. x_ref(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub states: Vec<VehicleState>,
}

impl ReferenceTrajectory {
    pub fn new(states: Vec<VehicleState>) -> Result<Self, ModelError> {
        if states.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidInput("non-finite reference state".into()));
        }
        Ok(Self { states })
    }

    pub fn horizon(&self) -> usize {
        self.states.len() + 1
    }

    /// Reference at step `k = 2..=T`.
    pub fn state(&self, k: usize) -> VehicleState {
        self.states[k - 2]
    }

    /// The reference as a decision vector with zero controls.
    pub fn to_decision_vector(&self) -> DVector<f64> {
        let mut s = DVector::zeros(STAGE_DIM * self.states.len());
        for (b, x) in self.states.iter().enumerate() {
            s.rows_mut(b * STAGE_DIM + CONTROL_DIM, STATE_DIM).copy_from_slice(&x.to_array());
        }
        s
    }
}

fn check_horizon(traj: &Trajectory, reference: &ReferenceTrajectory) -> Result<(), ModelError> {
    if traj.horizon() != reference.horizon() {
        return Err(ModelError::Dimension(format!(
            "plan horizon {} but reference horizon {}",
            traj.horizon(),
            reference.horizon()
        )));
    }
    Ok(())
}

/// Diagonal of the cost Hessian in decision-vector order.
pub fn cost_hessian(w: &CostWeights, horizon: usize) -> DVector<f64> {
    let mut h = DVector::zeros(STAGE_DIM * (horizon - 1));
    for k in 1..horizon {
        h.rows_mut(control_offset(k), CONTROL_DIM).copy_from_slice(&w.r);
        let q = if k + 1 == horizon { &w.qf } else { &w.q };
        h.rows_mut(state_offset(k + 1), STATE_DIM).copy_from_slice(q);
    }
    h
}

pub fn cost_value(traj: &Trajectory, reference: &ReferenceTrajectory, w: &CostWeights) -> Result<f64, ModelError> {
    check_horizon(traj, reference)?;
    let h = cost_hessian(w, traj.horizon());
    let e = traj.to_decision_vector() - reference.to_decision_vector();
    Ok(0.5 * e.iter().zip(h.iter()).map(|(e, h)| h * e * e).sum::<f64>())
}

pub fn cost_gradient(
    traj: &Trajectory,
    reference: &ReferenceTrajectory,
    w: &CostWeights,
) -> Result<DVector<f64>, ModelError> {
    check_horizon(traj, reference)?;
    let h = cost_hessian(w, traj.horizon());
    let e = traj.to_decision_vector() - reference.to_decision_vector();
    Ok(h.component_mul(&e))
}

/// Linear term `g` of the cost written as `½ sᵀHs + gᵀs + const`.
pub fn cost_linear_term(reference: &ReferenceTrajectory, w: &CostWeights) -> DVector<f64> {
    let h = cost_hessian(w, reference.horizon());
    -h.component_mul(&reference.to_decision_vector())
}
