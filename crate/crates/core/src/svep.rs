//! Semi-decentralized augmented-Lagrangian planner.
//!
//! Every outer iteration each vehicle solves a convex QP over its own
//! trajectory and one slack per coupled row, holding neighbors at their last
//! iterates. A coordinator then updates the multipliers of the coupled rows
//! locally, averages the two directions of every shared row so both vehicles
//! of a pair carry the same price, and scales the penalties by `ρ`.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{
    build_private_set, coupled_block_from_pairs, linearize_collision_pair, CollisionPair, EllipseParams,
    LaneBoundary, LinearConstraintBlock, RowLabel,
};
use crate::dynamics::{Trajectory, VehicleParams};
use crate::error::{GameError, ModelError};
pub use crate::graph::{determine_interaction, InteractionGraph};
use crate::objective::{cost_hessian, cost_linear_term, CostWeights, ReferenceTrajectory};
use crate::qp::{solve_qp_with_tolerance, QpSolution, QpStatus, QuadraticProgram, SparseRows};

/// What one vehicle brings to the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTask {
    pub reference: ReferenceTrajectory,
    pub lanes: Vec<LaneBoundary>,
    /// Initial guess and linearization point of the dynamics and lane rows.
    pub nominal: Trajectory,
}

/// One planning instance: homogeneous vehicles sharing footprint, limits and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    pub params: VehicleParams,
    pub ellipse: EllipseParams,
    pub weights: CostWeights,
    /// Lane boundaries farther than this from the nominal position are ignored.
    pub lane_distance: f64,
    /// Planned collision rows read `h + margin ≤ 0`.
    #[serde(default)]
    pub collision_margin: f64,
    /// Planned lane discriminant rows read `c + margin ≤ 0`.
    #[serde(default)]
    pub lane_margin: f64,
    pub vehicles: Vec<VehicleTask>,
}

impl Game {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.params.validate()?;
        self.weights.validate()?;
        EllipseParams::new(self.ellipse.u, self.ellipse.v, &self.params)?;
        if !(self.collision_margin >= 0.0 && self.collision_margin < 1.0) {
            return Err(ModelError::InvalidParams("collision margin must lie in [0, 1)".into()));
        }
        if !(self.lane_margin >= 0.0 && self.lane_margin.is_finite()) {
            return Err(ModelError::InvalidParams("lane margin must be finite and nonnegative".into()));
        }
        let Some(first) = self.vehicles.first() else {
            return Err(ModelError::InvalidInput("game without vehicles".into()));
        };
        let (t, ts) = (first.nominal.horizon(), first.nominal.ts);
        for v in &self.vehicles {
            if v.nominal.horizon() != t || v.reference.horizon() != t || v.nominal.ts != ts {
                return Err(ModelError::Dimension("vehicles disagree on horizon or sampling period".into()));
            }
            if !v.nominal.is_finite() {
                return Err(ModelError::InvalidInput("non-finite nominal trajectory".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.vehicles[0].nominal.horizon()
    }

    pub fn nominal_profile(&self) -> Vec<Trajectory> {
        self.vehicles.iter().map(|v| v.nominal.clone()).collect()
    }
}

/// Initial penalty scale of each vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyInit {
    /// Drawn per vehicle from `U[low, high]`.
    Uniform { low: f64, high: f64 },
    Fixed(f64),
}

/// Where the collision rows are linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionLinearization {
    /// Around the current iterate at every outer iteration.
    #[default]
    EveryIteration,
    /// Once, around the planning nominal.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvepConfig {
    pub max_iterations: usize,
    pub rho: f64,
    pub tolerance: f64,
    pub qp_tolerance: f64,
    pub interaction_radius: f64,
    pub penalty_init: PenaltyInit,
    pub penalty_cap: f64,
    pub seed: u64,
    pub linearization: CollisionLinearization,
    /// Solve the vehicle subproblems of one iteration on the rayon pool.
    pub parallel: bool,
}

impl Default for SvepConfig {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            rho: 4.0,
            tolerance: 1e-3,
            qp_tolerance: 1e-8,
            interaction_radius: 30.0,
            penalty_init: PenaltyInit::Uniform { low: 0.5, high: 1.5 },
            penalty_cap: 1e12,
            seed: 0,
            linearization: CollisionLinearization::EveryIteration,
            parallel: true,
        }
    }
}

impl SvepConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |m: &str| Err(GameError::Inconsistent(m.into()));
        if self.max_iterations == 0 {
            return bad("at least one iteration is required");
        }
        if !(self.rho > 1.0) {
            return bad("penalty growth factor must exceed 1");
        }
        if !(self.tolerance > 0.0 && self.qp_tolerance > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.interaction_radius > 0.0) {
            return bad("interaction radius must be positive");
        }
        match self.penalty_init {
            PenaltyInit::Uniform { low, high } if !(low > 0.0 && high >= low) => bad("penalty range must be positive"),
            PenaltyInit::Fixed(d) if !(d > 0.0) => bad("penalty must be positive"),
            _ if !(self.penalty_cap > 0.0) => bad("penalty cap must be positive"),
            _ => Ok(()),
        }
    }
}

/// Multipliers of every directed coupled row and per-row penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    stages: usize,
    lambda: BTreeMap<(usize, usize), Vec<f64>>,
    penalty: BTreeMap<(usize, usize), Vec<f64>>,
    /// Set once any penalty entry hit the cap.
    pub capped: bool,
}

impl MultiplierState {
    /// Zero multipliers and penalty `d[i]` on every row of vehicle `i`.
    pub fn new(graph: &InteractionGraph, horizon: usize, d: &[f64]) -> Result<Self, GameError> {
        if d.len() != graph.len() {
            return Err(GameError::Inconsistent("one penalty scale per vehicle is required".into()));
        }
        if d.iter().any(|&x| !(x > 0.0)) {
            return Err(GameError::Inconsistent("penalties must be positive".into()));
        }
        let stages = horizon - 1;
        let mut lambda = BTreeMap::new();
        let mut penalty = BTreeMap::new();
        for (i, j) in graph.edges() {
            for (a, b) in [(i, j), (j, i)] {
                lambda.insert((a, b), vec![0.0; stages]);
                penalty.insert((a, b), vec![d[a]; stages]);
            }
        }
        Ok(Self { stages, lambda, penalty, capped: false })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Directed pairs `(i, j)` in lexicographic order.
    pub fn directions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lambda.keys().copied()
    }

    /// `λ_ij(k)` for `k = 2..T`.
    pub fn lambda(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.lambda.get(&(i, j)).map(Vec::as_slice)
    }

    pub fn lambda_mut(&mut self, i: usize, j: usize) -> Option<&mut Vec<f64>> {
        self.lambda.get_mut(&(i, j))
    }

    /// Diagonal of `D` restricted to the rows of `(i, j)`.
    pub fn penalty(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.penalty.get(&(i, j)).map(Vec::as_slice)
    }

    /// Multipliers of vehicle `i` stacked over its sorted neighbors.
    pub fn stacked_lambda(&self, i: usize, neighbors: &[usize]) -> Vec<f64> {
        neighbors.iter().flat_map(|&j| self.lambda[&(i, j)].iter().copied()).collect()
    }

    pub fn stacked_penalty(&self, i: usize, neighbors: &[usize]) -> Vec<f64> {
        neighbors.iter().flat_map(|&j| self.penalty[&(i, j)].iter().copied()).collect()
    }

    /// `max |λ_ij(k) − λ_ji(k)|` over all pairs and steps.
    pub fn fairness_gap(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for (&(i, j), l) in &self.lambda {
            if let Some(r) = self.lambda.get(&(j, i)) {
                for (a, b) in l.iter().zip(r) {
                    gap = gap.max((a - b).abs());
                }
            }
        }
        gap
    }

    pub fn max_penalty(&self) -> f64 {
        self.penalty.values().flatten().fold(0.0, |m, &x| m.max(x))
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambda.values().flatten().fold(0.0, |m, &x| m.max(x))
    }

    /// Copies the multipliers of `previous`, advanced by `shift` steps (the
    /// last value is repeated), onto the pairs present in both states. Both
    /// directions of a pair receive their mean, so fairness is preserved.
    pub fn seed_from(&mut self, previous: &MultiplierState, shift: usize) {
        let keys: Vec<(usize, usize)> = self.lambda.keys().copied().filter(|&(i, j)| i < j).collect();
        for (i, j) in keys {
            let (Some(a), Some(b)) = (previous.lambda(i, j), previous.lambda(j, i)) else {
                continue;
            };
            let seeded: Vec<f64> = (0..self.stages)
                .map(|k| {
                    let src = (k + shift).min(a.len() - 1);
                    0.5 * (a[src] + b[src]).max(0.0)
                })
                .collect();
            self.lambda.insert((i, j), seeded.clone());
            self.lambda.insert((j, i), seeded);
        }
    }
}

/// Draws the penalty scales and builds the zero-multiplier state.
pub fn initialize_parameters(
    graph: &InteractionGraph,
    horizon: usize,
    config: &SvepConfig,
) -> Result<MultiplierState, GameError> {
    let d = draw_penalties(graph.len(), config);
    MultiplierState::new(graph, horizon, &d)
}

/// Per-vehicle penalty scales, reproducible from `config.seed`.
pub fn draw_penalties(n: usize, config: &SvepConfig) -> Vec<f64> {
    match config.penalty_init {
        PenaltyInit::Fixed(d) => vec![d; n],
        PenaltyInit::Uniform { low, high } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (0..n).map(|_| if high > low { rng.gen_range(low..=high) } else { low }).collect()
        }
    }
}

/// Optimal slack of the augmented Lagrangian: `max{−D⁻¹λ − h, 0}`.
pub fn slack_optimal(h: &[f64], lambda: &[f64], d: &[f64]) -> Vec<f64> {
    h.iter().zip(lambda).zip(d).map(|((h, l), d)| (-l / d - h).max(0.0)).collect()
}

/// Augmented-Lagrangian penalty term `λᵀ(h + γ) + ½(h + γ)ᵀD(h + γ)` at the optimal slack.
pub fn augmented_penalty(h: &[f64], lambda: &[f64], d: &[f64]) -> f64 {
    let gamma = slack_optimal(h, lambda, d);
    h.iter()
        .zip(&gamma)
        .zip(lambda.iter().zip(d))
        .map(|((h, g), (l, d))| {
            let w = h + g;
            l * w + 0.5 * d * w * w
        })
        .sum()
}

/// `‖ max{h, −D⁻¹λ} ‖₂` over the concatenation of all rows.
pub fn constraint_violation(h: &[f64], lambda: &[f64], d: &[f64]) -> f64 {
    h.iter()
        .zip(lambda)
        .zip(d)
        .map(|((h, l), d)| h.max(-l / d).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `max{λ + D h, 0}` elementwise.
pub fn update_multiplier_local(lambda: &[f64], h: &[f64], d: &[f64]) -> Vec<f64> {
    lambda.iter().zip(h).zip(d).map(|((l, h), d)| (l + d * h).max(0.0)).collect()
}

/// Averages both directions of every shared row.
pub fn consensus(md: &mut MultiplierState) -> Result<(), GameError> {
    let keys: Vec<(usize, usize)> = md.lambda.keys().copied().filter(|(i, j)| i < j).collect();
    for &(i, j) in &keys {
        let back = md.lambda.get(&(j, i)).ok_or(GameError::MissingDirection { i, j })?.clone();
        let fwd = md.lambda.get_mut(&(i, j)).expect("key from map");
        for (a, b) in fwd.iter_mut().zip(&back) {
            *a = 0.5 * (*a + b);
        }
        let avg = fwd.clone();
        *md.lambda.get_mut(&(j, i)).expect("checked above") = avg;
    }
    for &(i, j) in md.lambda.keys() {
        if i > j && !md.lambda.contains_key(&(j, i)) {
            return Err(GameError::MissingDirection { i, j });
        }
    }
    Ok(())
}

/// Scales every penalty entry by `rho`, saturating at `cap`.
pub fn update_penalty(state: &mut MultiplierState, rho: f64, cap: f64) {
    for v in state.penalty.values_mut().flatten() {
        let next = *v * rho;
        if next >= cap {
            *v = cap;
            state.capped = true;
        } else {
            *v = next;
        }
    }
}

/// Fixed part of one vehicle's subproblem for a planning cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateModel {
    pub equalities: LinearConstraintBlock,
    pub inequalities: LinearConstraintBlock,
    pub hessian: DVector<f64>,
    pub linear: DVector<f64>,
    eq_rows: SparseRows,
    ineq_rows: SparseRows,
}

impl PrivateModel {
    pub fn new(game: &Game, i: usize) -> Result<Self, ModelError> {
        let v = &game.vehicles[i];
        let (equalities, mut inequalities) =
            build_private_set(&v.nominal, &v.lanes, &game.params, &game.ellipse, game.lane_distance)?;
        for (r, label) in inequalities.labels.iter().enumerate() {
            if matches!(label, RowLabel::LaneDiscriminant { .. }) {
                inequalities.map.offset[r] += game.lane_margin;
            }
        }
        Ok(Self {
            eq_rows: SparseRows::from_dense(&equalities.map.jacobian),
            ineq_rows: SparseRows::from_dense(&inequalities.map.jacobian),
            equalities,
            inequalities,
            hessian: cost_hessian(&game.weights, v.nominal.horizon()),
            linear: cost_linear_term(&v.reference, &game.weights),
        })
    }

    pub fn num_states(&self) -> usize {
        self.hessian.len()
    }
}

/// QP over `(s_i, w)`: minimize `J_i + λᵀw + ½wᵀDw` subject to the private
/// rows, `−w + h_i(s_i) ≤ 0` and `−w − D⁻¹λ ≤ 0`.
///
/// Inequality rows are ordered private, coupled, slack bound.
pub fn build_subproblem(
    private: &PrivateModel,
    coupled: &LinearConstraintBlock,
    lambda: &[f64],
    d: &[f64],
) -> Result<QuadraticProgram, GameError> {
    let ns = private.num_states();
    let nw = coupled.rows();
    if lambda.len() != nw || d.len() != nw || coupled.map.cols() != ns {
        return Err(GameError::Inconsistent("subproblem blocks disagree in size".into()));
    }
    let n = ns + nw;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for c in 0..ns {
        h[(c, c)] = private.hessian[c];
        g[c] = private.linear[c];
    }
    for r in 0..nw {
        h[(ns + r, ns + r)] = d[r];
        g[ns + r] = lambda[r];
    }
    let mut a = SparseRows::new(n);
    for row in private.eq_rows.iter() {
        a.push_row(row.iter().copied())?;
    }
    let b = -&private.equalities.map.offset;

    let np = private.inequalities.rows();
    let m = np + 2 * nw;
    let mut c = SparseRows::new(n);
    let mut dd = DVector::zeros(m);
    for row in private.ineq_rows.iter() {
        c.push_row(row.iter().copied())?;
    }
    dd.rows_mut(0, np).copy_from(&(-&private.inequalities.map.offset));
    let cj = &coupled.map.jacobian;
    for r in 0..nw {
        let entries = (0..ns).filter(|&k| cj[(r, k)] != 0.0).map(|k| (k, cj[(r, k)]));
        c.push_row(entries.chain([(ns + r, -1.0)]))?;
        dd[np + r] = -coupled.map.offset[r];
    }
    for r in 0..nw {
        c.push_row([(ns + r, -1.0)])?;
        dd[np + nw + r] = lambda[r] / d[r];
    }
    Ok(QuadraticProgram::from_sparse(h, g, a, b, c, dd)?)
}

/// Duals of one vehicle's final subproblem, split by row family.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemDuals {
    pub equality: DVector<f64>,
    pub private: DVector<f64>,
    pub coupled: DVector<f64>,
    pub slack_bound: DVector<f64>,
    pub qp_residual: f64,
}

impl SubproblemDuals {
    fn from_solution(sol: &QpSolution, np: usize, nw: usize) -> Self {
        Self {
            equality: sol.mu_eq.clone(),
            private: sol.mu_in.rows(0, np).into_owned(),
            coupled: sol.mu_in.rows(np, nw).into_owned(),
            slack_bound: sol.mu_in.rows(np + nw, nw).into_owned(),
            qp_residual: sol.kkt_residual,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Constraint violation after each iteration.
    pub violations: Vec<f64>,
    pub converged: bool,
    pub penalty_capped: bool,
    /// Seconds spent building and solving each vehicle's subproblems.
    pub vehicle_time: Vec<f64>,
    /// Seconds spent in multiplier updates and consensus.
    pub coordinator_time: f64,
    pub total_time: f64,
    pub subproblem_solves: Vec<usize>,
    /// Largest subproblem variable count per vehicle.
    pub subproblem_vars: Vec<usize>,
    pub fairness_gap: f64,
    pub max_qp_residual: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvepOutcome {
    /// Converged profile, or the lowest-violation iterate when the iteration limit was hit.
    pub profile: Vec<Trajectory>,
    /// Consensus multipliers belonging to `profile`.
    pub multipliers: MultiplierState,
    pub report: SolveReport,
    pub graph: InteractionGraph,
    /// Profile at which the final collision rows were linearized.
    pub anchor: Vec<Trajectory>,
    pub duals: Vec<SubproblemDuals>,
    /// Penalty scales drawn at initialization.
    pub initial_penalty: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{error}")]
pub struct SolveFailure {
    pub error: GameError,
    pub report: SolveReport,
}

fn fail(error: GameError, report: SolveReport) -> Box<SolveFailure> {
    Box::new(SolveFailure { error, report })
}

/// Collision pairs of `graph` linearized at `profile` and shifted by `margin`, keyed by canonical pair.
pub fn linearize_pairs(
    graph: &InteractionGraph,
    profile: &[Trajectory],
    p: &VehicleParams,
    margin: f64,
) -> Result<BTreeMap<(usize, usize), CollisionPair>, ModelError> {
    graph
        .edges()
        .map(|(i, j)| {
            let mut pair = linearize_collision_pair(i, &profile[i], j, &profile[j], p)?;
            pair.rows.iter_mut().for_each(|r| r.value += margin);
            Ok(((i, j), pair))
        })
        .collect()
}

fn pairs_of(i: usize, graph: &InteractionGraph, pairs: &BTreeMap<(usize, usize), CollisionPair>) -> Vec<CollisionPair> {
    graph.neighbors(i).iter().map(|&j| pairs[&(i.min(j), i.max(j))].clone()).collect()
}

/// Linearized coupled values of vehicle `i` with its own plan from `own` and
/// neighbors from `others`, stacked over sorted neighbors and steps.
pub fn coupled_values(
    i: usize,
    graph: &InteractionGraph,
    pairs: &BTreeMap<(usize, usize), CollisionPair>,
    own: &[Trajectory],
    others: &[Trajectory],
) -> Vec<f64> {
    let mut out = Vec::new();
    for &j in graph.neighbors(i) {
        let pair = &pairs[&(i.min(j), i.max(j))];
        for k in 2..=own[i].horizon() {
            let (xi, xj) = (own[i].state(k), others[j].state(k));
            let v = if pair.i == i { pair.evaluate(k, &xi, &xj) } else { pair.evaluate(k, &xj, &xi) };
            out.push(v);
        }
    }
    out
}

struct VehicleStep {
    traj: Trajectory,
    duals: SubproblemDuals,
    status: QpStatus,
    residual: f64,
    vars: usize,
    seconds: f64,
}

fn solve_vehicle(
    i: usize,
    game: &Game,
    private: &PrivateModel,
    graph: &InteractionGraph,
    pairs: &BTreeMap<(usize, usize), CollisionPair>,
    profile: &[Trajectory],
    state: &MultiplierState,
    qp_tolerance: f64,
) -> Result<VehicleStep, GameError> {
    let start = Instant::now();
    let neighbors = graph.neighbors(i);
    let coupled = coupled_block_from_pairs(i, &pairs_of(i, graph, pairs), profile);
    let lambda = state.stacked_lambda(i, neighbors);
    let d = state.stacked_penalty(i, neighbors);
    let qp = build_subproblem(private, &coupled, &lambda, &d)?;
    let sol = solve_qp_with_tolerance(&qp, qp_tolerance)?;
    let ns = private.num_states();
    let traj = Trajectory::from_decision_vector(game.vehicles[i].nominal.initial, profile[i].ts, &sol.z.as_slice()[..ns])?;
    let duals = SubproblemDuals::from_solution(&sol, private.inequalities.rows(), coupled.rows());
    Ok(VehicleStep {
        traj,
        duals,
        status: sol.status,
        residual: sol.kkt_residual,
        vars: qp.num_vars(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the planner on `game` with penalty scales drawn from `config`.
pub fn svep_solve(game: &Game, config: &SvepConfig) -> Result<SvepOutcome, Box<SolveFailure>> {
    let d = draw_penalties(game.len(), config);
    solve_with_penalties(game, config, &d)
}

/// Runs the planner with explicit per-vehicle penalty scales.
pub fn solve_with_penalties(game: &Game, config: &SvepConfig, d: &[f64]) -> Result<SvepOutcome, Box<SolveFailure>> {
    solve_seeded(game, config, d, None)
}

/// [`svep_solve`] with multipliers seeded from an earlier solve (see [`MultiplierState::seed_from`]).
pub fn svep_solve_seeded(
    game: &Game,
    config: &SvepConfig,
    previous: &MultiplierState,
    shift: usize,
) -> Result<SvepOutcome, Box<SolveFailure>> {
    let d = draw_penalties(game.len(), config);
    solve_seeded(game, config, &d, Some((previous, shift)))
}

/// Lowest-violation iterate of a run that has not converged yet.
struct BestIterate {
    violation: f64,
    profile: Vec<Trajectory>,
    multipliers: MultiplierState,
    anchor: Vec<Trajectory>,
    duals: Vec<SubproblemDuals>,
}

impl BestIterate {
    fn keep_flag(mut m: MultiplierState, capped: bool) -> MultiplierState {
        m.capped = capped;
        m
    }
}

/// Runs the planner with explicit penalty scales and optional seeded multipliers.
pub fn solve_seeded(
    game: &Game,
    config: &SvepConfig,
    d: &[f64],
    seed: Option<(&MultiplierState, usize)>,
) -> Result<SvepOutcome, Box<SolveFailure>> {
    let t0 = Instant::now();
    let n = game.len();
    let mut report = SolveReport {
        vehicle_time: vec![0.0; n],
        subproblem_solves: vec![0; n],
        subproblem_vars: vec![0; n],
        ..SolveReport::default()
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, report));
    }
    if let Err(e) = game.validate() {
        return Err(fail(e.into(), report));
    }
    let mut profile = game.nominal_profile();
    let graph = match determine_interaction(&profile, config.interaction_radius) {
        Ok(g) => g,
        Err(e) => return Err(fail(e.into(), report)),
    };
    let mut state = match MultiplierState::new(&graph, game.horizon(), d) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, report)),
    };
    if let Some((previous, shift)) = seed {
        state.seed_from(previous, shift);
    }
    let privates: Vec<PrivateModel> = match (0..n).map(|i| PrivateModel::new(game, i)).collect() {
        Ok(p) => p,
        Err(e) => return Err(fail(e.into(), report)),
    };

    let nominal = profile.clone();
    let mut anchor = profile.clone();
    let mut duals = Vec::new();
    let mut best: Option<BestIterate> = None;
    for iter in 0..config.max_iterations {
        let point = match config.linearization {
            CollisionLinearization::EveryIteration => &profile,
            CollisionLinearization::Nominal => &nominal,
        };
        let pairs = match linearize_pairs(&graph, point, &game.params, game.collision_margin) {
            Ok(p) => p,
            Err(e) => return Err(fail(e.into(), report)),
        };
        let run = |i: usize| solve_vehicle(i, game, &privates[i], &graph, &pairs, &profile, &state, config.qp_tolerance);
        let steps: Vec<Result<VehicleStep, GameError>> =
            if config.parallel { (0..n).into_par_iter().map(run).collect() } else { (0..n).map(run).collect() };
        report.iterations = iter + 1;
        let mut next = Vec::with_capacity(n);
        let mut all_optimal = true;
        duals.clear();
        for (i, step) in steps.into_iter().enumerate() {
            let step = match step {
                Ok(s) => s,
                Err(e) => return Err(fail(e, report)),
            };
            report.vehicle_time[i] += step.seconds;
            report.subproblem_solves[i] += 1;
            report.subproblem_vars[i] = report.subproblem_vars[i].max(step.vars);
            report.max_qp_residual = report.max_qp_residual.max(step.residual);
            match step.status {
                QpStatus::Optimal => {}
                QpStatus::Infeasible => {
                    report.failure = Some(format!("vehicle {i} subproblem infeasible at iteration {}", iter + 1));
                    report.total_time = t0.elapsed().as_secs_f64();
                    return Err(fail(
                        GameError::Inconsistent(format!("subproblem of vehicle {i} is infeasible")),
                        report,
                    ));
                }
                QpStatus::IterationLimit => all_optimal = false,
            }
            next.push(step.traj);
            duals.push(step.duals);
        }

        // convergence test on the new profile
        let mut h_all = Vec::new();
        let mut l_all = Vec::new();
        let mut d_all = Vec::new();
        for i in 0..n {
            let nb = graph.neighbors(i);
            h_all.extend(coupled_values(i, &graph, &pairs, &next, &next));
            l_all.extend(state.stacked_lambda(i, nb));
            d_all.extend(state.stacked_penalty(i, nb));
        }
        let violation = constraint_violation(&h_all, &l_all, &d_all);
        report.violations.push(violation);
        let converged = violation < config.tolerance && all_optimal;

        // coordinator: local multiplier estimates against the neighbors' previous iterates, then consensus
        let c0 = Instant::now();
        let mut md = state.clone();
        for i in 0..n {
            let nb = graph.neighbors(i);
            let h = coupled_values(i, &graph, &pairs, &next, &profile);
            let l = state.stacked_lambda(i, nb);
            let dd = state.stacked_penalty(i, nb);
            let upd = update_multiplier_local(&l, &h, &dd);
            for (slot, &j) in nb.iter().enumerate() {
                let stages = state.stages();
                md.lambda_mut(i, j)
                    .expect("edge of the graph")
                    .copy_from_slice(&upd[slot * stages..(slot + 1) * stages]);
            }
        }
        if let Err(e) = consensus(&mut md) {
            return Err(fail(e, report));
        }
        report.coordinator_time += c0.elapsed().as_secs_f64();

        anchor = point.clone();
        profile = next;
        if converged {
            state = md;
            report.converged = true;
            break;
        }
        if best.as_ref().map_or(true, |b: &BestIterate| violation < b.violation) {
            best = Some(BestIterate {
                violation,
                profile: profile.clone(),
                multipliers: md.clone(),
                anchor: anchor.clone(),
                duals: duals.clone(),
            });
        }
        let c1 = Instant::now();
        state = md;
        update_penalty(&mut state, config.rho, config.penalty_cap);
        report.coordinator_time += c1.elapsed().as_secs_f64();
    }
    report.penalty_capped = state.capped;
    if let (false, Some(b)) = (report.converged, best) {
        profile = b.profile;
        state = BestIterate::keep_flag(b.multipliers, state.capped);
        anchor = b.anchor;
        duals = b.duals;
    }
    report.fairness_gap = state.fairness_gap();
    report.total_time = t0.elapsed().as_secs_f64();
    Ok(SvepOutcome { profile, multipliers: state, report, graph, anchor, duals, initial_penalty: d.to_vec() })
}
