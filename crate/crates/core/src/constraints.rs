//! Private (box, lane) and coupled (collision) constraints and their affine
//! models over one vehicle's decision vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    control_offset, linearize_dynamics, state_offset, AffineMap, Trajectory, VehicleParams, VehicleState,
    STATE_DIM,
};
use crate::error::ModelError;
use crate::graph::InteractionGraph;

/// Relative distance below which the collision gradient is considered degenerate.
const DEGENERATE_DISTANCE: f64 = 1e-9;

/// World-frame line `a·px + b·py + c = 0` with `a² + b² = 1`; the admissible
/// side is `a·px + b·py + c ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LaneLine {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, ModelError> {
        let norm = a.hypot(b);
        if !(norm > 0.0) || !norm.is_finite() || !c.is_finite() {
            return Err(ModelError::InvalidInput("lane line needs a finite non-zero normal".into()));
        }
        Ok(Self { a: a / norm, b: b / norm, c: c / norm })
    }

    /// Line through `p0` and `p1`, oriented so that `inside` is admissible.
    pub fn through(p0: [f64; 2], p1: [f64; 2], inside: [f64; 2]) -> Result<Self, ModelError> {
        let (dx, dy) = (p1[0] - p0[0], p1[1] - p0[1]);
        let line = Self::new(-dy, dx, dy * p0[0] - dx * p0[1])?;
        Ok(if line.value(inside[0], inside[1]) > 0.0 { line.flipped() } else { line })
    }

    pub fn flipped(&self) -> Self {
        Self { a: -self.a, b: -self.b, c: -self.c }
    }

    /// Signed distance, positive on the forbidden side.
    pub fn value(&self, px: f64, py: f64) -> f64 {
        self.a * px + self.b * py + self.c
    }
}

/// A lane line together with the stretch of road along which it bounds the lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneBoundary {
    pub line: LaneLine,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl LaneBoundary {
    /// Segment from `start` to `end`, admissible side containing `inside`.
    pub fn new(start: [f64; 2], end: [f64; 2], inside: [f64; 2]) -> Result<Self, ModelError> {
        Ok(Self { line: LaneLine::through(start, end, inside)?, start, end })
    }

    /// Whether the point projects onto the segment and lies within `max_distance` of the line.
    pub fn applies_to(&self, px: f64, py: f64, max_distance: f64) -> bool {
        let (dx, dy) = (self.end[0] - self.start[0], self.end[1] - self.start[1]);
        let len2 = dx * dx + dy * dy;
        let t = ((px - self.start[0]) * dx + (py - self.start[1]) * dy) / len2;
        (0.0..=1.0).contains(&t) && self.line.value(px, py).abs() <= max_distance
    }
}

/// Semi-axes of the ellipse circumscribing the vehicle's plan-view rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub u: f64,
    pub v: f64,
}

impl EllipseParams {
    pub fn new(u: f64, v: f64, p: &VehicleParams) -> Result<Self, ModelError> {
        if !(u >= p.length / 2.0 && v >= p.width / 2.0) {
            return Err(ModelError::InvalidParams(
                "ellipse semi-axes must cover half the vehicle length and width".into(),
            ));
        }
        Ok(Self { u, v })
    }

    /// Ellipse through the rectangle corners with the rectangle's aspect ratio.
    pub fn circumscribing(p: &VehicleParams) -> Self {
        let s = std::f64::consts::SQRT_2;
        Self { u: p.length / 2.0 * s, v: p.width / 2.0 * s }
    }
}

/// Coefficients `(d, e, f)` of `line` in the body frame of `pose`.
pub fn line_in_vehicle_frame(line: &LaneLine, pose: &VehicleState) -> [f64; 3] {
    let (sin, cos) = pose.psi.sin_cos();
    [
        line.a * cos + line.b * sin,
        -line.a * sin + line.b * cos,
        line.value(pose.px, pose.py),
    ]
}

/// `d²U² + e²V² − f²`; non-positive iff the circumscribed ellipse does not cross the line.
pub fn lane_discriminant(pose: &VehicleState, line: &LaneLine, e: &EllipseParams) -> f64 {
    let [d, ee, f] = line_in_vehicle_frame(line, pose);
    d * d * e.u * e.u + ee * ee * e.v * e.v - f * f
}

/// Gradient of [`lane_discriminant`] with respect to `(px, py, ψ)`.
pub fn lane_discriminant_gradient(pose: &VehicleState, line: &LaneLine, e: &EllipseParams) -> [f64; 3] {
    let [d, ee, f] = line_in_vehicle_frame(line, pose);
    [
        -2.0 * f * line.a,
        -2.0 * f * line.b,
        2.0 * d * ee * (e.u * e.u - e.v * e.v),
    ]
}

fn superellipse_axes(p: &VehicleParams) -> (f64, f64) {
    let half_diag = p.diag() / 2.0;
    (p.length / 2.0 + half_diag, p.width / 2.0 + half_diag)
}

/// Keep-out function of `pose_j` seen from the body frame of `pose_i`:
/// positive inside the superellipse, zero on it, negative outside.
pub fn superellipse_value(pose_i: &VehicleState, pose_j: &VehicleState, p: &VehicleParams) -> f64 {
    let (ax, ay) = superellipse_axes(p);
    let (x, y) = body_frame(pose_i, pose_j);
    1.0 - (x / ax).powi(6) - (y / ay).powi(6)
}

fn body_frame(pose_i: &VehicleState, pose_j: &VehicleState) -> (f64, f64) {
    let (sin, cos) = pose_i.psi.sin_cos();
    let (dx, dy) = (pose_j.px - pose_i.px, pose_j.py - pose_i.py);
    (cos * dx + sin * dy, -sin * dx + cos * dy)
}

/// Gradients of [`superellipse_value`] with respect to the full states of `i` and `j`.
pub fn superellipse_gradient(
    pose_i: &VehicleState,
    pose_j: &VehicleState,
    p: &VehicleParams,
) -> ([f64; STATE_DIM], [f64; STATE_DIM]) {
    let (ax, ay) = superellipse_axes(p);
    let (sin, cos) = pose_i.psi.sin_cos();
    let (x, y) = body_frame(pose_i, pose_j);
    let hx = -6.0 * x.powi(5) / ax.powi(6);
    let hy = -6.0 * y.powi(5) / ay.powi(6);
    // (x, y) = R(-ψ_i)(p_j - p_i); ∂x/∂ψ_i = y, ∂y/∂ψ_i = -x
    let gj_px = hx * cos - hy * sin;
    let gj_py = hx * sin + hy * cos;
    let g_psi = hx * y - hy * x;
    ([-gj_px, -gj_py, 0.0, g_psi], [gj_px, gj_py, 0.0, 0.0])
}

/// Symmetrized pair value: always evaluated in the frame of the lower-id vehicle,
/// so `pair_value(i, xi, j, xj) == pair_value(j, xj, i, xi)`.
pub fn pair_value(id_i: usize, pose_i: &VehicleState, id_j: usize, pose_j: &VehicleState, p: &VehicleParams) -> f64 {
    if id_i <= id_j {
        superellipse_value(pose_i, pose_j, p)
    } else {
        superellipse_value(pose_j, pose_i, p)
    }
}

/// Gradients of [`pair_value`]: `(∂/∂x_i, ∂/∂x_j)`.
pub fn pair_gradient(
    id_i: usize,
    pose_i: &VehicleState,
    id_j: usize,
    pose_j: &VehicleState,
    p: &VehicleParams,
) -> ([f64; STATE_DIM], [f64; STATE_DIM]) {
    if id_i <= id_j {
        superellipse_gradient(pose_i, pose_j, p)
    } else {
        let (gj, gi) = superellipse_gradient(pose_j, pose_i, p);
        (gi, gj)
    }
}

/// First-order model of the pair value at one time step, stored in canonical
/// (`i < j`) orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRow {
    pub step: usize,
    pub value: f64,
    pub grad_i: [f64; STATE_DIM],
    pub grad_j: [f64; STATE_DIM],
    pub point_i: VehicleState,
    pub point_j: VehicleState,
}

impl PairRow {
    /// Linear model evaluated at the states of `i` and `j`.
    pub fn evaluate(&self, xi: &VehicleState, xj: &VehicleState) -> f64 {
        let di = [xi.px - self.point_i.px, xi.py - self.point_i.py, xi.v - self.point_i.v, xi.psi - self.point_i.psi];
        let dj = [xj.px - self.point_j.px, xj.py - self.point_j.py, xj.v - self.point_j.v, xj.psi - self.point_j.psi];
        self.value + dot4(&self.grad_i, &di) + dot4(&self.grad_j, &dj)
    }
}

fn dot4(a: &[f64; STATE_DIM], b: &[f64; STATE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linearized keep-out constraints of one interacting pair, steps `k = 2..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionPair {
    pub i: usize,
    pub j: usize,
    pub rows: Vec<PairRow>,
}

impl CollisionPair {
    /// Row `k` seen from vehicle `me`: `(value, ∂/∂x_me, ∂/∂x_other, point_me, point_other)`.
    pub fn oriented(&self, me: usize, k: usize) -> OrientedRow {
        let r = &self.rows[k - 2];
        if me == self.i {
            OrientedRow { value: r.value, grad_me: r.grad_i, grad_other: r.grad_j, point_me: r.point_i, point_other: r.point_j }
        } else {
            OrientedRow { value: r.value, grad_me: r.grad_j, grad_other: r.grad_i, point_me: r.point_j, point_other: r.point_i }
        }
    }

    /// Linear model at `k` evaluated at states given per vehicle id.
    pub fn evaluate(&self, k: usize, x_i: &VehicleState, x_j: &VehicleState) -> f64 {
        self.rows[k - 2].evaluate(x_i, x_j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRow {
    pub value: f64,
    pub grad_me: [f64; STATE_DIM],
    pub grad_other: [f64; STATE_DIM],
    pub point_me: VehicleState,
    pub point_other: VehicleState,
}

pub fn linearize_collision_pair(
    id_i: usize,
    nominal_i: &Trajectory,
    id_j: usize,
    nominal_j: &Trajectory,
    p: &VehicleParams,
) -> Result<CollisionPair, ModelError> {
    if nominal_i.horizon() != nominal_j.horizon() {
        return Err(ModelError::Dimension("collision pair with unequal horizons".into()));
    }
    if id_i == id_j {
        return Err(ModelError::InvalidInput("collision pair needs two distinct vehicles".into()));
    }
    let (lo, lo_traj, hi, hi_traj) =
        if id_i < id_j { (id_i, nominal_i, id_j, nominal_j) } else { (id_j, nominal_j, id_i, nominal_i) };
    let mut rows = Vec::with_capacity(lo_traj.stages());
    for k in 2..=lo_traj.horizon() {
        let (xa, xb) = (lo_traj.state(k), hi_traj.state(k));
        if (xb.px - xa.px).hypot(xb.py - xa.py) < DEGENERATE_DISTANCE {
            return Err(ModelError::DegenerateCollision { i: lo, j: hi, step: k });
        }
        let (grad_i, grad_j) = superellipse_gradient(&xa, &xb, p);
        rows.push(PairRow {
            step: k,
            value: superellipse_value(&xa, &xb, p),
            grad_i,
            grad_j,
            point_i: xa,
            point_j: xb,
        });
    }
    Ok(CollisionPair { i: lo, j: hi, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxQuantity {
    Speed,
    Acceleration,
    Steering,
}

/// Provenance of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowLabel {
    Dynamics { step: usize, component: usize },
    Box { quantity: BoxQuantity, upper: bool, step: usize },
    LaneDiscriminant { line: usize, step: usize },
    LaneSide { line: usize, step: usize },
    Collision { neighbor: usize, step: usize },
}

/// Rows `g(s) = J s + b` with `g(s) = 0` or `g(s) ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraintBlock {
    pub kind: ConstraintKind,
    pub map: AffineMap,
    pub labels: Vec<RowLabel>,
}

impl LinearConstraintBlock {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    fn from_rows(kind: ConstraintKind, cols: usize, rows: Vec<(Vec<(usize, f64)>, f64, RowLabel)>) -> Self {
        let mut jac = DMatrix::zeros(rows.len(), cols);
        let mut off = DVector::zeros(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (r, (entries, b, label)) in rows.into_iter().enumerate() {
            for (c, v) in entries {
                jac[(r, c)] += v;
            }
            off[r] = b;
            labels.push(label);
        }
        Self { kind, map: AffineMap { jacobian: jac, offset: off }, labels }
    }
}

/// Upper and lower bound rows on `a(k)`, `δ(k)` (`k = 1..T-1`) and `v(k)` (`k = 2..T`).
pub fn box_rows(p: &VehicleParams, horizon: usize) -> LinearConstraintBlock {
    let stages = horizon.saturating_sub(1);
    let mut rows = Vec::with_capacity(6 * stages);
    for k in 1..horizon {
        let entries = [
            (BoxQuantity::Acceleration, control_offset(k), p.a_min, p.a_max, k),
            (BoxQuantity::Steering, control_offset(k) + 1, p.delta_min, p.delta_max, k),
            (BoxQuantity::Speed, state_offset(k + 1) + 2, p.v_min, p.v_max, k + 1),
        ];
        for (quantity, col, lo, hi, step) in entries {
            rows.push((vec![(col, 1.0)], -hi, RowLabel::Box { quantity, upper: true, step }));
            rows.push((vec![(col, -1.0)], lo, RowLabel::Box { quantity, upper: false, step }));
        }
    }
    LinearConstraintBlock::from_rows(ConstraintKind::Inequality, 6 * stages, rows)
}

/// Lane rows (discriminant and admissible side) for every boundary that applies
/// to the nominal position at each step.
pub fn lane_rows(
    nominal: &Trajectory,
    lanes: &[LaneBoundary],
    ellipse: &EllipseParams,
    max_distance: f64,
) -> LinearConstraintBlock {
    let mut rows = Vec::new();
    for k in 2..=nominal.horizon() {
        let x = nominal.state(k);
        let o = state_offset(k);
        for (l, lane) in lanes.iter().enumerate() {
            if !lane.applies_to(x.px, x.py, max_distance) {
                continue;
            }
            let line = &lane.line;
            let c = lane_discriminant(&x, line, ellipse);
            let g = lane_discriminant_gradient(&x, line, ellipse);
            let b = c - g[0] * x.px - g[1] * x.py - g[2] * x.psi;
            rows.push((
                vec![(o, g[0]), (o + 1, g[1]), (o + 3, g[2])],
                b,
                RowLabel::LaneDiscriminant { line: l, step: k },
            ));
            rows.push((vec![(o, line.a), (o + 1, line.b)], line.c, RowLabel::LaneSide { line: l, step: k }));
        }
    }
    LinearConstraintBlock::from_rows(ConstraintKind::Inequality, nominal.decision_len(), rows)
}

/// Linearized dynamics equalities and box ∪ lane inequalities of one vehicle.
pub fn build_private_set(
    nominal: &Trajectory,
    lanes: &[LaneBoundary],
    p: &VehicleParams,
    ellipse: &EllipseParams,
    max_lane_distance: f64,
) -> Result<(LinearConstraintBlock, LinearConstraintBlock), ModelError> {
    let dyn_map = linearize_dynamics(nominal, p)?;
    let labels = (0..nominal.stages())
        .flat_map(|b| (0..STATE_DIM).map(move |c| RowLabel::Dynamics { step: b + 1, component: c }))
        .collect();
    let eq = LinearConstraintBlock { kind: ConstraintKind::Equality, map: dyn_map, labels };
    let boxes = box_rows(p, nominal.horizon());
    let lane = lane_rows(nominal, lanes, ellipse, max_lane_distance);
    let mut labels = boxes.labels.clone();
    labels.extend_from_slice(&lane.labels);
    let ineq = LinearConstraintBlock {
        kind: ConstraintKind::Inequality,
        map: boxes.map.stack(&lane.map)?,
        labels,
    };
    Ok((eq, ineq))
}

/// Collision rows of vehicle `i` against all of its neighbors, over `s_i`'s
/// columns, ordered by (neighbor id, step). Rows are linearized at `anchor`
/// and the neighbor terms are evaluated at `iterate`.
pub fn build_coupled_block(
    i: usize,
    anchor: &[Trajectory],
    iterate: &[Trajectory],
    graph: &InteractionGraph,
    p: &VehicleParams,
) -> Result<LinearConstraintBlock, ModelError> {
    let pairs: Vec<CollisionPair> = graph
        .neighbors(i)
        .iter()
        .map(|&j| linearize_collision_pair(i, &anchor[i], j, &anchor[j], p))
        .collect::<Result<_, _>>()?;
    Ok(coupled_block_from_pairs(i, &pairs, iterate))
}

/// Same as [`build_coupled_block`] from already linearized pairs (one per neighbor, in neighbor order).
pub fn coupled_block_from_pairs(i: usize, pairs: &[CollisionPair], iterate: &[Trajectory]) -> LinearConstraintBlock {
    let cols = iterate[i].decision_len();
    let mut rows = Vec::new();
    for pair in pairs {
        let j = if pair.i == i { pair.j } else { pair.i };
        for k in 2..=iterate[j].horizon() {
            let r = pair.oriented(i, k);
            let xj = iterate[j].state(k);
            let other = [
                xj.px - r.point_other.px,
                xj.py - r.point_other.py,
                xj.v - r.point_other.v,
                xj.psi - r.point_other.psi,
            ];
            let pm = r.point_me.to_array();
            let b = r.value + dot4(&r.grad_other, &other) - dot4(&r.grad_me, &pm);
            let o = state_offset(k);
            let entries = (0..STATE_DIM).filter(|&c| r.grad_me[c] != 0.0).map(|c| (o + c, r.grad_me[c])).collect();
            rows.push((entries, b, RowLabel::Collision { neighbor: j, step: k }));
        }
    }
    LinearConstraintBlock::from_rows(ConstraintKind::Inequality, cols, rows)
}
