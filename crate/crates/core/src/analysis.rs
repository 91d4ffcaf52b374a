//! Equilibrium certificates and experiment metrics: KKT residuals of the
//! linearized game, the fairness gap, dual-sensitivity probes, equilibrium
//! concordance and the exact-geometry ground-truth check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{
    coupled_block_from_pairs, lane_discriminant, pair_value, EllipseParams, LaneBoundary, LinearConstraintBlock,
    RowLabel,
};
use crate::dynamics::{ControlInput, Trajectory, VehicleParams, VehicleState};
use crate::error::GameError;
use crate::objective::cost_value;
use crate::qp::{solve_qp, QpStatus, QuadraticProgram};
use crate::svep::{coupled_values, linearize_pairs, Game, MultiplierState, PrivateModel, SvepOutcome};

/// Private rows within this distance of zero count as active.
const ACTIVE_ROW_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖∇J_i + ∇h_i λ_i + A_eqᵀμ + C_privᵀν‖∞` per vehicle with the best admissible private duals.
    pub stationarity: Vec<f64>,
    pub primal: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
    pub fairness_gap: f64,
}

impl KktReport {
    /// Largest of the GNE residuals (fairness excluded).
    pub fn max_residual(&self) -> f64 {
        self.stationarity.iter().fold(self.primal.max(self.complementarity).max(self.dual_sign), |m, &x| m.max(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VeCertificate {
    pub report: KktReport,
    pub tolerance: f64,
    pub gne_satisfied: bool,
    pub certified: bool,
}

/// Coupled rows of vehicle `i` at the final linearization with neighbors at the returned plans.
fn final_coupled_block(game: &Game, outcome: &SvepOutcome, i: usize) -> Result<LinearConstraintBlock, GameError> {
    let pairs = linearize_pairs(&outcome.graph, &outcome.anchor, &game.params, game.collision_margin)?;
    let list: Vec<_> = outcome.graph.neighbors(i).iter().map(|&j| pairs[&(i.min(j), i.max(j))].clone()).collect();
    Ok(coupled_block_from_pairs(i, &list, &outcome.profile))
}

/// Smallest `‖r + A_eqᵀμ + C_activeᵀν‖∞` over free `μ` and `ν ≥ 0`.
fn fit_private_duals(r: &DVector<f64>, a_eq: &DMatrix<f64>, c_active: &DMatrix<f64>) -> Result<f64, GameError> {
    let n = r.len();
    let (me, ma) = (a_eq.nrows(), c_active.nrows());
    let mut b = DMatrix::zeros(n, me + ma);
    b.view_mut((0, 0), (n, me)).copy_from(&a_eq.transpose());
    b.view_mut((0, me), (n, ma)).copy_from(&c_active.transpose());
    let mut h = b.tr_mul(&b);
    for d in 0..me + ma {
        h[(d, d)] += 1e-12 * (1.0 + h[(d, d)]);
    }
    let h = (&h + h.transpose()) * 0.5;
    let g = b.tr_mul(r);
    let mut c = DMatrix::zeros(ma, me + ma);
    for k in 0..ma {
        c[(k, me + k)] = -1.0;
    }
    let qp = QuadraticProgram::new(h, g, DMatrix::zeros(0, me + ma), DVector::zeros(0), c, DVector::zeros(ma))?;
    let sol = solve_qp(&qp)?;
    if sol.status == QpStatus::Infeasible {
        return Err(GameError::Inconsistent("private dual fit failed".into()));
    }
    Ok((r + &b * &sol.z).amax())
}

/// KKT residuals of the linearized game at `outcome.profile` with coupled multipliers `multipliers`.
///
/// Collision rows use the solver's final linearization; private rows are the
/// ones of the planning cycle. Private duals are refitted so that the check
/// asks whether some admissible private multipliers exist.
pub fn gne_kkt_residual(
    game: &Game,
    outcome: &SvepOutcome,
    multipliers: &MultiplierState,
) -> Result<KktReport, GameError> {
    let n = game.len();
    if outcome.duals.len() != n {
        return Err(GameError::Inconsistent("missing subproblem duals".into()));
    }
    let mut report = KktReport { fairness_gap: multipliers.fairness_gap(), ..KktReport::default() };
    for i in 0..n {
        let private = PrivateModel::new(game, i)?;
        let coupled = final_coupled_block(game, outcome, i)?;
        let neighbors = outcome.graph.neighbors(i);
        let lambda = DVector::from_vec(multipliers.stacked_lambda(i, neighbors));
        if lambda.len() != coupled.rows() {
            return Err(GameError::Inconsistent(format!("multiplier block of vehicle {i} has the wrong size")));
        }
        let s = outcome.profile[i].to_decision_vector();
        let grad = private.hessian.component_mul(&s) + &private.linear + coupled.map.jacobian.tr_mul(&lambda);

        let eq = private.equalities.map.evaluate(&s);
        report.primal = report.primal.max(eq.amax());
        let ineq = private.inequalities.map.evaluate(&s);
        let prior = &outcome.duals[i].private;
        let active: Vec<usize> = (0..ineq.len())
            .filter(|&r| prior[r] > 0.0 || ineq[r].abs() <= ACTIVE_ROW_TOLERANCE * (1.0 + ineq[r].abs()))
            .collect();
        for r in 0..ineq.len() {
            report.primal = report.primal.max(ineq[r].max(0.0));
        }
        let c_active = DMatrix::from_fn(active.len(), s.len(), |r, c| private.inequalities.map.jacobian[(active[r], c)]);
        report.stationarity.push(fit_private_duals(&grad, &private.equalities.map.jacobian, &c_active)?);

        let h = coupled.map.evaluate(&s);
        for (hk, lk) in h.iter().zip(lambda.iter()) {
            report.primal = report.primal.max(hk.max(0.0));
            report.complementarity = report.complementarity.max((hk * lk).abs());
            report.dual_sign = report.dual_sign.max(-lk);
        }
    }
    Ok(report)
}

/// GNE residuals within `tolerance` and exactly symmetric multipliers.
pub fn ve_kkt_check(
    game: &Game,
    outcome: &SvepOutcome,
    multipliers: &MultiplierState,
    tolerance: f64,
) -> Result<VeCertificate, GameError> {
    let report = gne_kkt_residual(game, outcome, multipliers)?;
    let gne_satisfied = report.max_residual() <= tolerance;
    let certified = gne_satisfied && report.fairness_gap == 0.0;
    Ok(VeCertificate { report, tolerance, gne_satisfied, certified })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProbe {
    pub vehicle: usize,
    pub neighbor: usize,
    pub step: usize,
    pub alpha: f64,
    /// Optimal values at perturbations `0`, `+α`, `−α`.
    pub value: f64,
    pub value_plus: f64,
    pub value_minus: f64,
    /// `(p(α) − p(−α)) / 2α`.
    pub slope: f64,
    /// `−λ` of the probed row in the unperturbed problem.
    pub predicted: f64,
    /// Coupled multiplier returned by the planner for the same row.
    pub equilibrium_lambda: f64,
    /// Linearized row value at the unperturbed optimum.
    pub row_value: f64,
    pub active: bool,
}

impl SensitivityProbe {
    /// Relative slope error, absolute when `λ < 1e-3`.
    pub fn slope_error(&self) -> f64 {
        let lambda = -self.predicted;
        let err = (self.slope - self.predicted).abs();
        if lambda < 1e-3 {
            err
        } else {
            err / lambda
        }
    }

    /// `p(0) ≤ p(±α) ± αλ` up to `slack`.
    pub fn convexity_holds(&self, slack: f64) -> bool {
        let lambda = -self.predicted;
        self.value <= self.value_plus + self.alpha * lambda + slack
            && self.value <= self.value_minus - self.alpha * lambda + slack
    }
}

/// Vehicle `i`'s best response with hard coupled rows, neighbors frozen; row `(j, k)` relaxed to `≤ w`.
fn hard_best_response(
    private: &PrivateModel,
    coupled: &LinearConstraintBlock,
    row: usize,
    w: f64,
) -> Result<Option<(f64, f64, f64, DVector<f64>)>, GameError> {
    let ns = private.num_states();
    let h = DMatrix::from_diagonal(&private.hessian);
    let eq = &private.equalities.map;
    let pm = &private.inequalities.map;
    let (np, nc) = (pm.rows(), coupled.rows());
    let mut c = DMatrix::zeros(np + nc, ns);
    c.view_mut((0, 0), (np, ns)).copy_from(&pm.jacobian);
    c.view_mut((np, 0), (nc, ns)).copy_from(&coupled.map.jacobian);
    let mut d = DVector::zeros(np + nc);
    d.rows_mut(0, np).copy_from(&(-&pm.offset));
    d.rows_mut(np, nc).copy_from(&(-&coupled.map.offset));
    d[np + row] += w;
    let qp = QuadraticProgram::new(h, private.linear.clone(), eq.jacobian.clone(), -&eq.offset, c, d)?;
    let sol = solve_qp(&qp)?;
    if sol.status != QpStatus::Optimal {
        return Ok(None);
    }
    let row_value = coupled.map.evaluate(&sol.z.rows(0, ns).into_owned())[row];
    Ok(Some((sol.objective, sol.mu_in[np + row], row_value, sol.z)))
}

/// Perturbs the coupled row `(j, k)` of vehicle `i` by `±alpha` with neighbors
/// frozen at the returned plans; `None` if a perturbed problem is infeasible.
pub fn sensitivity_probe(
    game: &Game,
    outcome: &SvepOutcome,
    i: usize,
    j: usize,
    k: usize,
    alpha: f64,
) -> Result<Option<SensitivityProbe>, GameError> {
    if alpha == 0.0 {
        return Err(GameError::Inconsistent("perturbation must be nonzero".into()));
    }
    let private = PrivateModel::new(game, i)?;
    let coupled = final_coupled_block(game, outcome, i)?;
    let row = coupled
        .labels
        .iter()
        .position(|l| *l == RowLabel::Collision { neighbor: j, step: k })
        .ok_or_else(|| GameError::Inconsistent(format!("vehicle {i} has no row for ({j}, {k})")))?;
    let Some((p0, lambda, row_value, _)) = hard_best_response(&private, &coupled, row, 0.0)? else {
        return Ok(None);
    };
    let Some((pp, ..)) = hard_best_response(&private, &coupled, row, alpha)? else {
        return Ok(None);
    };
    let Some((pm, ..)) = hard_best_response(&private, &coupled, row, -alpha)? else {
        return Ok(None);
    };
    let equilibrium_lambda = outcome.multipliers.lambda(i, j).map_or(0.0, |l| l[k - 2]);
    Ok(Some(SensitivityProbe {
        vehicle: i,
        neighbor: j,
        step: k,
        alpha,
        value: p0,
        value_plus: pp,
        value_minus: pm,
        slope: (pp - pm) / (2.0 * alpha),
        predicted: -lambda,
        equilibrium_lambda,
        row_value,
        active: lambda > 1e-4 || row_value.abs() < 1e-4,
    }))
}

/// Fraction of ordered pairs `i ≠ j` with `‖predicted_i(u_j(1)) − actual(u_j(1))‖₂ < threshold`.
///
/// `predicted[i][j]` is vehicle `i`'s prediction of `u_j(1)`; `actual[j]` is what `j` executes.
pub fn equilibrium_concordance(predicted: &[Vec<ControlInput>], actual: &[ControlInput], threshold: f64) -> f64 {
    let n = actual.len();
    if n < 2 {
        return 1.0;
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, row) in predicted.iter().enumerate() {
        for (j, u) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            total += 1;
            let du = (u.a - actual[j].a).hypot(u.delta - actual[j].delta);
            if du < threshold {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

/// Objective value of a plan, for reporting.
pub fn plan_cost(game: &Game, i: usize, traj: &Trajectory) -> Result<f64, GameError> {
    Ok(cost_value(traj, &game.vehicles[i].reference, &game.weights)?)
}

/// Pass line for the goal: reached once the vehicle is past `point` along
/// `heading` and within `lateral_tolerance` of the line through it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub point: [f64; 2],
    pub heading: f64,
    pub lateral_tolerance: f64,
}

impl Goal {
    pub fn reached(&self, x: &VehicleState) -> bool {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (x.px - self.point[0], x.py - self.point[1]);
        dx * c + dy * s >= 0.0 && (-dx * s + dy * c).abs() <= self.lateral_tolerance
    }
}

/// Exact geometry used to judge a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub params: VehicleParams,
    pub ellipse: EllipseParams,
    pub lane_distance: f64,
    pub lanes: Vec<Vec<LaneBoundary>>,
    pub goals: Vec<Goal>,
    /// Numerical allowance on the lane and box checks.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Collision { i: usize, j: usize, step: usize, value: f64 },
    Lane { vehicle: usize, line: usize, step: usize, value: f64 },
    Bounds { vehicle: usize, step: usize },
    GoalNotReached { vehicle: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthResult {
    pub success: bool,
    pub violations: Vec<Violation>,
}

/// Checks simulated states `states[step][vehicle]` and applied controls
/// `controls[step][vehicle]` against the exact constraints and the goals
/// (the goal is judged on the last state).
pub fn validate_ground_truth(
    states: &[Vec<VehicleState>],
    controls: &[Vec<ControlInput>],
    spec: &GroundTruthSpec,
) -> GroundTruthResult {
    let p = &spec.params;
    let tol = spec.tolerance;
    let mut violations = Vec::new();
    for (step, xs) in states.iter().enumerate() {
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                let value = pair_value(i, &xs[i], j, &xs[j], p);
                if value >= 0.0 {
                    violations.push(Violation::Collision { i, j, step, value });
                }
            }
            let x = &xs[i];
            for (l, lane) in spec.lanes[i].iter().enumerate() {
                if !lane.applies_to(x.px, x.py, spec.lane_distance) {
                    continue;
                }
                let c = lane_discriminant(x, &lane.line, &spec.ellipse);
                let side = lane.line.value(x.px, x.py);
                if c > tol || side > tol {
                    violations.push(Violation::Lane { vehicle: i, line: l, step, value: c.max(side) });
                }
            }
            if x.v < p.v_min - tol || x.v > p.v_max + tol {
                violations.push(Violation::Bounds { vehicle: i, step });
            }
        }
    }
    for (step, us) in controls.iter().enumerate() {
        for (i, u) in us.iter().enumerate() {
            let ok = u.a >= p.a_min - tol
                && u.a <= p.a_max + tol
                && u.delta >= p.delta_min - tol
                && u.delta <= p.delta_max + tol;
            if !ok {
                violations.push(Violation::Bounds { vehicle: i, step });
            }
        }
    }
    if let Some(last) = states.last() {
        for (i, goal) in spec.goals.iter().enumerate() {
            if !goal.reached(&last[i]) {
                violations.push(Violation::GoalNotReached { vehicle: i });
            }
        }
    }
    GroundTruthResult { success: violations.is_empty(), violations }
}

/// Linearized coupled values of every vehicle at the returned profile, stacked in vehicle order.
pub fn final_coupled_values(game: &Game, outcome: &SvepOutcome) -> Result<Vec<Vec<f64>>, GameError> {
    let pairs = linearize_pairs(&outcome.graph, &outcome.anchor, &game.params, game.collision_margin)?;
    Ok((0..game.len())
        .map(|i| coupled_values(i, &outcome.graph, &pairs, &outcome.profile, &outcome.profile))
        .collect())
}
