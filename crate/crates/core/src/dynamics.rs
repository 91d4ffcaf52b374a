//! Kinematic bicycle model, its explicit-Euler discretization and the
//! linearization of the stacked dynamics residual.
//!
//! The decision vector of one vehicle stacks, for `k = 1..T-1`, the control
//! `u(k)` followed by the state `x(k+1)`:
//!
//! ```text
//! s = [a(1) δ(1) px(2) py(2) v(2) ψ(2) | a(2) δ(2) px(3) ... | ... ψ(T)]
//! ```
//!
//! The initial state `x(1)` is a fixed parameter and `u(T)` does not exist.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Number of state components `(px, py, v, ψ)`.
pub const STATE_DIM: usize = 4;
/// Number of control components `(a, δ)`.
pub const CONTROL_DIM: usize = 2;
/// Width of one `(u(k), x(k+1))` block of the decision vector.
pub const STAGE_DIM: usize = STATE_DIM + CONTROL_DIM;

/// Physical limits and footprint of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 4.0,
            width: 1.8,
            v_min: 0.0,
            v_max: 20.0,
            a_min: -6.0,
            a_max: 4.0,
            delta_min: -0.6,
            delta_max: 0.6,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            self.length,
            self.width,
            self.v_min,
            self.v_max,
            self.a_min,
            self.a_max,
            self.delta_min,
            self.delta_max,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(ModelError::InvalidParams("non-finite vehicle parameter".into()));
        }
        if self.length <= 0.0 || self.width <= 0.0 {
            return Err(ModelError::InvalidParams("length and width must be positive".into()));
        }
        if self.v_min >= self.v_max || self.a_min >= self.a_max || self.delta_min >= self.delta_max {
            return Err(ModelError::InvalidParams("empty box bound".into()));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if self.delta_min.abs() >= half_pi || self.delta_max.abs() >= half_pi {
            return Err(ModelError::InvalidParams("steering bound reaches the tan singularity".into()));
        }
        Ok(())
    }

    /// Diagonal of the plan-view rectangle.
    pub fn diag(&self) -> f64 {
        self.length.hypot(self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub psi: f64,
}

impl VehicleState {
    pub fn new(px: f64, py: f64, v: f64, psi: f64) -> Self {
        Self { px, py, v, psi }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.px, self.py, self.v, self.psi]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub delta: f64,
}

impl ControlInput {
    pub fn new(a: f64, delta: f64) -> Self {
        Self { a, delta }
    }

    pub fn to_array(self) -> [f64; CONTROL_DIM] {
        [self.a, self.delta]
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.delta.is_finite()
    }
}

/// Time-discretization rule used for the dynamics constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    #[default]
    ExplicitEuler,
}

/// Planned motion of one vehicle over the horizon `k = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub ts: f64,
    /// `x(1)`, fixed.
    pub initial: VehicleState,
    /// `x(2) .. x(T)`.
    pub states: Vec<VehicleState>,
    /// `u(1) .. u(T-1)`.
    pub controls: Vec<ControlInput>,
}

impl Trajectory {
    pub fn new(
        ts: f64,
        initial: VehicleState,
        states: Vec<VehicleState>,
        controls: Vec<ControlInput>,
    ) -> Result<Self, ModelError> {
        if states.len() != controls.len() || states.is_empty() {
            return Err(ModelError::Dimension(format!(
                "{} states for {} controls",
                states.len(),
                controls.len()
            )));
        }
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(ModelError::InvalidInput("sampling period must be positive".into()));
        }
        Ok(Self { ts, initial, states, controls })
    }

    /// Forward simulation of `controls` from `initial`.
    pub fn rollout(
        initial: VehicleState,
        controls: Vec<ControlInput>,
        ts: f64,
        params: &VehicleParams,
    ) -> Result<Self, ModelError> {
        let mut states = Vec::with_capacity(controls.len());
        let mut x = initial;
        for u in &controls {
            x = step_discrete(&x, u, ts, params)?;
            states.push(x);
        }
        Self::new(ts, initial, states, controls)
    }

    /// Horizon length `T` (number of state samples including `x(1)`).
    pub fn horizon(&self) -> usize {
        self.states.len() + 1
    }

    /// Number of `(u, x)` stages, `T - 1`.
    pub fn stages(&self) -> usize {
        self.states.len()
    }

    pub fn decision_len(&self) -> usize {
        STAGE_DIM * self.stages()
    }

    /// State at time step `k` (1-based, `k = 1..=T`).
    pub fn state(&self, k: usize) -> VehicleState {
        if k == 1 {
            self.initial
        } else {
            self.states[k - 2]
        }
    }

    pub fn to_decision_vector(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.decision_len());
        for (b, (u, x)) in self.controls.iter().zip(&self.states).enumerate() {
            let o = b * STAGE_DIM;
            s[o] = u.a;
            s[o + 1] = u.delta;
            s[o + 2] = x.px;
            s[o + 3] = x.py;
            s[o + 4] = x.v;
            s[o + 5] = x.psi;
        }
        s
    }

    pub fn from_decision_vector(
        initial: VehicleState,
        ts: f64,
        s: &[f64],
    ) -> Result<Self, ModelError> {
        if s.is_empty() || s.len() % STAGE_DIM != 0 {
            return Err(ModelError::Dimension(format!(
                "decision vector length {} is not a positive multiple of {STAGE_DIM}",
                s.len()
            )));
        }
        let (states, controls) = s
            .chunks_exact(STAGE_DIM)
            .map(|c| (VehicleState::from_slice(&c[2..]), ControlInput::new(c[0], c[1])))
            .unzip();
        Self::new(ts, initial, states, controls)
    }

    pub fn is_finite(&self) -> bool {
        self.initial.is_finite()
            && self.states.iter().all(VehicleState::is_finite)
            && self.controls.iter().all(ControlInput::is_finite)
    }
}

/// Column offset of `u(k)` in the decision vector, `k = 1..T-1`.
pub fn control_offset(k: usize) -> usize {
    debug_assert!(k >= 1);
    (k - 1) * STAGE_DIM
}

/// Column offset of `x(k)` in the decision vector, `k = 2..T`.
pub fn state_offset(k: usize) -> usize {
    debug_assert!(k >= 2);
    (k - 2) * STAGE_DIM + CONTROL_DIM
}

/// Affine map `s -> J s + b`; rows are outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(jacobian: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, ModelError> {
        if jacobian.nrows() != offset.len() {
            return Err(ModelError::Dimension(format!(
                "jacobian has {} rows, offset {}",
                jacobian.nrows(),
                offset.len()
            )));
        }
        Ok(Self { jacobian, offset })
    }

    pub fn empty(cols: usize) -> Self {
        Self { jacobian: DMatrix::zeros(0, cols), offset: DVector::zeros(0) }
    }

    /// Builds the map `s -> value + J (s - point)`.
    pub fn from_taylor(
        jacobian: DMatrix<f64>,
        value: &DVector<f64>,
        point: &DVector<f64>,
    ) -> Result<Self, ModelError> {
        let offset = value - &jacobian * point;
        Self::new(jacobian, offset)
    }

    pub fn rows(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn cols(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn evaluate(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * s + &self.offset
    }

    /// Denominator-layout gradient `∇_s g = Jᵀ`.
    pub fn gradient(&self) -> DMatrix<f64> {
        self.jacobian.transpose()
    }

    /// Stacks `other` under `self`.
    pub fn stack(&self, other: &AffineMap) -> Result<AffineMap, ModelError> {
        if self.cols() != other.cols() {
            return Err(ModelError::Dimension("column mismatch in stack".into()));
        }
        let rows = self.rows() + other.rows();
        let mut j = DMatrix::zeros(rows, self.cols());
        j.rows_mut(0, self.rows()).copy_from(&self.jacobian);
        j.rows_mut(self.rows(), other.rows()).copy_from(&other.jacobian);
        let mut b = DVector::zeros(rows);
        b.rows_mut(0, self.rows()).copy_from(&self.offset);
        b.rows_mut(self.rows(), other.rows()).copy_from(&other.offset);
        Ok(AffineMap { jacobian: j, offset: b })
    }
}

fn check_finite(x: &VehicleState, u: &ControlInput) -> Result<(), ModelError> {
    if !x.is_finite() || !u.is_finite() {
        return Err(ModelError::InvalidInput("non-finite state or control".into()));
    }
    Ok(())
}

/// `ẋ = (v cos ψ, v sin ψ, a, v tan δ / L)`.
pub fn continuous_derivative(
    x: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
) -> Result<[f64; STATE_DIM], ModelError> {
    check_finite(x, u)?;
    if u.delta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(ModelError::InvalidInput("steering angle at the tan singularity".into()));
    }
    let (sin, cos) = x.psi.sin_cos();
    Ok([x.v * cos, x.v * sin, u.a, x.v * u.delta.tan() / p.length])
}

pub fn step_discrete(
    x: &VehicleState,
    u: &ControlInput,
    ts: f64,
    p: &VehicleParams,
) -> Result<VehicleState, ModelError> {
    if !(ts > 0.0) {
        return Err(ModelError::InvalidInput("sampling period must be positive".into()));
    }
    let f = continuous_derivative(x, u, p)?;
    Ok(VehicleState::new(
        x.px + ts * f[0],
        x.py + ts * f[1],
        x.v + ts * f[2],
        x.psi + ts * f[3],
    ))
}

/// Stacked `x(k+1) - step(x(k), u(k))` for `k = 1..T-1`.
pub fn dynamics_residual(traj: &Trajectory, p: &VehicleParams) -> Result<DVector<f64>, ModelError> {
    let mut r = DVector::zeros(STATE_DIM * traj.stages());
    for b in 0..traj.stages() {
        let k = b + 1;
        let pred = step_discrete(&traj.state(k), &traj.controls[b], traj.ts, p)?;
        let next = traj.states[b].to_array();
        let pred = pred.to_array();
        for c in 0..STATE_DIM {
            r[STATE_DIM * b + c] = next[c] - pred[c];
        }
    }
    Ok(r)
}

/// Partial derivatives of one Euler step with respect to the state and the control.
pub(crate) fn step_jacobians(
    x: &VehicleState,
    u: &ControlInput,
    ts: f64,
    p: &VehicleParams,
) -> ([[f64; STATE_DIM]; STATE_DIM], [[f64; CONTROL_DIM]; STATE_DIM]) {
    let (sin, cos) = x.psi.sin_cos();
    let tan = u.delta.tan();
    let sec2 = 1.0 + tan * tan;
    let mut a = [[0.0; STATE_DIM]; STATE_DIM];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    a[0][2] = ts * cos;
    a[0][3] = -ts * x.v * sin;
    a[1][2] = ts * sin;
    a[1][3] = ts * x.v * cos;
    a[3][2] = ts * tan / p.length;
    let mut b = [[0.0; CONTROL_DIM]; STATE_DIM];
    b[2][0] = ts;
    b[3][1] = ts * x.v * sec2 / p.length;
    (a, b)
}

/// First-order model of [`dynamics_residual`] around `nominal`.
pub fn linearize_dynamics(nominal: &Trajectory, p: &VehicleParams) -> Result<AffineMap, ModelError> {
    let stages = nominal.stages();
    let n = STAGE_DIM * stages;
    let mut jac = DMatrix::zeros(STATE_DIM * stages, n);
    for b in 0..stages {
        let k = b + 1;
        let (a, bu) = step_jacobians(&nominal.state(k), &nominal.controls[b], nominal.ts, p);
        let row = STATE_DIM * b;
        let xo = state_offset(k + 1);
        let uo = control_offset(k);
        for c in 0..STATE_DIM {
            jac[(row + c, xo + c)] = 1.0;
            for j in 0..CONTROL_DIM {
                jac[(row + c, uo + j)] = -bu[c][j];
            }
            if k >= 2 {
                let po = state_offset(k);
                for j in 0..STATE_DIM {
                    jac[(row + c, po + j)] = -a[c][j];
                }
            }
        }
    }
    let value = dynamics_residual(nominal, p)?;
    AffineMap::from_taylor(jac, &value, &nominal.to_decision_vector())
}
