//! Game assembly, one-shot planning and closed-loop receding-horizon runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use coplan::analysis::{equilibrium_concordance, validate_ground_truth, GroundTruthResult, GroundTruthSpec};
use coplan::baseline::{first_controls, uncoordinated_plan, uncoordinated_plan_seeded, LocalGameSolve, OwnerSeeding};
use coplan::dynamics::{step_discrete, ControlInput, Trajectory, VehicleParams, VehicleState};
use coplan::objective::ReferenceTrajectory;
use coplan::svep::{svep_solve, svep_solve_seeded, Game, SvepConfig, SvepOutcome, VehicleTask};

use crate::scenario::{Route, ScenarioInstance};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Svep,
    Uncoordinated,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Svep => "svep",
            Algorithm::Uncoordinated => "uncoordinated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "svep" => Some(Algorithm::Svep),
            "uncoordinated" => Some(Algorithm::Uncoordinated),
            _ => None,
        }
    }
}

/// Constant-speed centerline reference from the projection of `x` onto `route`.
pub fn reference_for(route: &Route, x: &VehicleState, speed: f64, horizon: usize, ts: f64) -> ReferenceTrajectory {
    let (s0, _) = route.project([x.px, x.py]);
    let states = (2..=horizon)
        .map(|k| {
            let (p, h) = route.pose(s0 + speed * (k - 1) as f64 * ts);
            let turns = ((x.psi - h) / std::f64::consts::TAU).round();
            VehicleState::new(p[0], p[1], speed, h + turns * std::f64::consts::TAU)
        })
        .collect();
    ReferenceTrajectory { states }
}

fn clamp_control(u: ControlInput, p: &VehicleParams) -> ControlInput {
    ControlInput::new(u.a.clamp(p.a_min, p.a_max), u.delta.clamp(p.delta_min, p.delta_max))
}

/// Rolls out `controls` clamped to the bounds; speed is held inside its bounds by trimming `a`.
fn bounded_rollout(
    initial: VehicleState,
    controls: impl IntoIterator<Item = ControlInput>,
    ts: f64,
    p: &VehicleParams,
) -> Result<Trajectory, HarnessError> {
    let mut x = initial;
    let mut states = Vec::new();
    let mut us = Vec::new();
    for u in controls {
        let mut u = clamp_control(u, p);
        let v_next = x.v + ts * u.a;
        if v_next > p.v_max {
            u.a = ((p.v_max - x.v) / ts).clamp(p.a_min, p.a_max);
        } else if v_next < p.v_min {
            u.a = ((p.v_min - x.v) / ts).clamp(p.a_min, p.a_max);
        }
        x = step_discrete(&x, &u, ts, p)?;
        states.push(x);
        us.push(u);
    }
    Ok(Trajectory::new(ts, initial, states, us)?)
}

/// Pure-pursuit steering and proportional speed control toward `route` at `speed`.
pub fn pursuit_control(route: &Route, x: &VehicleState, speed: f64, p: &VehicleParams) -> ControlInput {
    let (s, _) = route.project([x.px, x.py]);
    let look = (0.8 * x.v).max(5.0);
    let (target, _) = route.pose(s + look);
    let (dx, dy) = (target[0] - x.px, target[1] - x.py);
    let alpha = dy.atan2(dx) - x.psi;
    let delta = (2.0 * p.length * alpha.sin() / dx.hypot(dy)).atan();
    clamp_control(ControlInput::new(0.5 * (speed - x.v), delta), p)
}

/// Pure-pursuit tracking of the route at the reference speed.
pub fn pursuit_nominal(
    route: &Route,
    initial: VehicleState,
    speed: f64,
    horizon: usize,
    ts: f64,
    p: &VehicleParams,
) -> Result<Trajectory, HarnessError> {
    let mut x = initial;
    let mut controls = Vec::with_capacity(horizon - 1);
    for _ in 1..horizon {
        let u = pursuit_control(route, &x, speed, p);
        x = step_discrete(&x, &u, ts, p)?;
        controls.push(u);
    }
    bounded_rollout(initial, controls, ts, p)
}

/// Previous plan shifted by one step and re-rolled from `initial`; the freed
/// last stage follows the route-tracking control.
pub fn shifted_nominal(
    previous: &Trajectory,
    initial: VehicleState,
    route: &Route,
    speed: f64,
    p: &VehicleParams,
) -> Result<Trajectory, HarnessError> {
    let mut controls: Vec<ControlInput> = previous.controls.iter().skip(1).copied().collect();
    let last = match controls.is_empty() {
        true => initial,
        false => *bounded_rollout(initial, controls.clone(), previous.ts, p)?.states.last().expect("non-empty rollout"),
    };
    controls.push(pursuit_control(route, &last, speed, p));
    bounded_rollout(initial, controls, previous.ts, p)
}

/// Planning problem at the current states with the given nominals.
pub fn build_game(scenario: &ScenarioInstance, nominals: Vec<Trajectory>) -> Result<Game, HarnessError> {
    let cfg = &scenario.config;
    let vehicles = scenario
        .vehicles
        .iter()
        .zip(nominals)
        .map(|(v, nominal)| VehicleTask {
            reference: reference_for(
                &v.route,
                &nominal.initial,
                cfg.traffic.reference_speed,
                cfg.planner.horizon,
                cfg.planner.ts,
            ),
            lanes: v.lanes.clone(),
            nominal,
        })
        .collect();
    Ok(Game {
        params: cfg.vehicle,
        ellipse: cfg.ellipse()?,
        weights: cfg.weights,
        lane_distance: cfg.planner.lane_distance,
        collision_margin: cfg.planner.collision_margin,
        lane_margin: cfg.planner.lane_margin,
        vehicles,
    })
}

/// Fresh pure-pursuit nominals from `states`.
pub fn initial_nominals(scenario: &ScenarioInstance, states: &[VehicleState]) -> Result<Vec<Trajectory>, HarnessError> {
    let cfg = &scenario.config;
    scenario
        .vehicles
        .iter()
        .zip(states)
        .map(|(v, x)| {
            pursuit_nominal(&v.route, *x, cfg.traffic.reference_speed, cfg.planner.horizon, cfg.planner.ts, &cfg.vehicle)
        })
        .collect()
}

/// Result of one planning cycle.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub algorithm: Algorithm,
    pub game: Game,
    /// Plan each vehicle executes.
    pub executed: Vec<Trajectory>,
    /// `predicted[i][j]`: vehicle `i`'s expectation of `u_j(1)`.
    pub predicted: Vec<Vec<ControlInput>>,
    pub concordance: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Seconds of subproblem work attributed to each vehicle.
    pub vehicle_time: Vec<f64>,
    pub coordinator_time: f64,
    pub wall_time: f64,
    pub fairness_gap: f64,
    pub violations: Vec<f64>,
    pub subproblem_vars: Vec<usize>,
    pub subproblem_solves: Vec<usize>,
    pub svep: Option<SvepOutcome>,
    pub local: Option<Vec<LocalGameSolve>>,
}

impl PlanOutput {
    pub fn applied(&self) -> Vec<ControlInput> {
        self.executed.iter().map(|t| t.controls[0]).collect()
    }

    pub fn mean_vehicle_time(&self) -> f64 {
        self.vehicle_time.iter().sum::<f64>() / self.vehicle_time.len() as f64
    }
}

/// Algorithm configuration of a planning cycle; the seed is varied per cycle and run.
pub fn cycle_config(scenario: &ScenarioInstance, cycle: usize) -> SvepConfig {
    let base = scenario.config.algorithm;
    SvepConfig { seed: base.seed ^ scenario.config.seed.rotate_left(17) ^ (cycle as u64).rotate_left(40), ..base }
}

/// Runs one planning cycle of `algorithm` on `game`. With `previous`, the
/// multipliers of that plan, advanced one step, seed this one.
pub fn plan_game(
    game: Game,
    algorithm: Algorithm,
    config: &SvepConfig,
    threshold: f64,
    previous: Option<&PlanOutput>,
) -> Result<PlanOutput, HarnessError> {
    let t0 = Instant::now();
    match algorithm {
        Algorithm::Svep => {
            let solved = match previous.and_then(|p| p.svep.as_ref()) {
                Some(prev) => svep_solve_seeded(&game, config, &prev.multipliers, 1),
                None => svep_solve(&game, config),
            };
            let out = solved.map_err(|f| HarnessError::Planner {
                message: f.error.to_string(),
                violations: f.report.violations.clone(),
            })?;
            let actual: Vec<ControlInput> = out.profile.iter().map(|t| t.controls[0]).collect();
            let predicted = vec![actual.clone(); actual.len()];
            let r = &out.report;
            Ok(PlanOutput {
                algorithm,
                executed: out.profile.clone(),
                concordance: equilibrium_concordance(&predicted, &actual, threshold),
                predicted,
                converged: r.converged,
                iterations: r.iterations,
                vehicle_time: r.vehicle_time.clone(),
                coordinator_time: r.coordinator_time,
                wall_time: t0.elapsed().as_secs_f64(),
                fairness_gap: r.fairness_gap,
                violations: r.violations.clone(),
                subproblem_vars: r.subproblem_vars.clone(),
                subproblem_solves: r.subproblem_solves.clone(),
                svep: Some(out),
                local: None,
                game,
            })
        }
        Algorithm::Uncoordinated => {
            let solved = match previous.and_then(|p| p.local.as_deref()) {
                Some(prev) => uncoordinated_plan_seeded(&game, config, OwnerSeeding::Heterogeneous, prev, 1),
                None => uncoordinated_plan(&game, config, OwnerSeeding::Heterogeneous),
            };
            let solves = solved.map_err(|f| {
                HarnessError::Planner { message: f.error.to_string(), violations: f.report.violations.clone() }
            })?;
            let (predicted, actual) = first_controls(&solves);
            let executed = solves.iter().map(|s| s.outcome.profile[s.owner].clone()).collect();
            let reports: Vec<_> = solves.iter().map(|s| &s.outcome.report).collect();
            Ok(PlanOutput {
                algorithm,
                executed,
                concordance: equilibrium_concordance(&predicted, &actual, threshold),
                predicted,
                converged: reports.iter().all(|r| r.converged),
                iterations: reports.iter().map(|r| r.iterations).max().unwrap_or(0),
                vehicle_time: solves.iter().map(|s| s.compute_time()).collect(),
                coordinator_time: reports.iter().map(|r| r.coordinator_time).sum(),
                wall_time: t0.elapsed().as_secs_f64(),
                fairness_gap: reports.iter().map(|r| r.fairness_gap).fold(0.0, f64::max),
                violations: reports[0].violations.clone(),
                subproblem_vars: reports.iter().map(|r| r.subproblem_vars.iter().copied().max().unwrap_or(0)).collect(),
                subproblem_solves: solves.iter().map(|s| s.subproblem_solves()).collect(),
                svep: None,
                local: Some(solves),
                game,
            })
        }
    }
}

/// First planning cycle of a scenario from its initial states.
pub fn plan_once(scenario: &ScenarioInstance, algorithm: Algorithm) -> Result<PlanOutput, HarnessError> {
    let states: Vec<VehicleState> = scenario.vehicles.iter().map(|v| v.initial).collect();
    let game = build_game(scenario, initial_nominals(scenario, &states)?)?;
    plan_game(game, algorithm, &cycle_config(scenario, 0), scenario.config.planner.concordance_threshold, None)
}

/// Per-cycle summary kept in a simulation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub step: usize,
    pub converged: bool,
    pub iterations: usize,
    pub concordance: f64,
    pub fairness_gap: f64,
    pub vehicle_time: Vec<f64>,
    pub coordinator_time: f64,
    pub wall_time: f64,
    pub final_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    /// `states[step][vehicle]`, starting with the initial states.
    pub states: Vec<Vec<VehicleState>>,
    /// `controls[step][vehicle]` applied between `states[step]` and `states[step + 1]`.
    pub controls: Vec<Vec<ControlInput>>,
    pub cycles: Vec<CycleRecord>,
    pub goals_reached: bool,
    /// Cycles replanned from fresh tracking nominals after the shifted plan failed.
    pub restarts: usize,
    pub failure: Option<String>,
    /// Violation trace of the planning cycle that failed or did not converge first.
    pub failure_trace: Vec<f64>,
    pub ground_truth: GroundTruthResult,
}

impl SimulationLog {
    pub fn all_converged(&self) -> bool {
        self.failure.is_none() && self.cycles.iter().all(|c| c.converged)
    }

    pub fn success(&self) -> bool {
        self.failure.is_none() && self.ground_truth.success
    }
}

pub fn ground_truth_spec(scenario: &ScenarioInstance) -> Result<GroundTruthSpec, HarnessError> {
    let cfg = &scenario.config;
    Ok(GroundTruthSpec {
        params: cfg.vehicle,
        ellipse: cfg.ellipse()?,
        lane_distance: cfg.planner.lane_distance,
        lanes: scenario.vehicles.iter().map(|v| v.lanes.clone()).collect(),
        goals: scenario.vehicles.iter().map(|v| v.goal).collect(),
        tolerance: 1e-6,
    })
}

/// Closed loop: plan, apply every vehicle's first control, shift, replan, until
/// all goals are reached or `steps` cycles have run. `on_cycle` sees every plan.
pub fn run_receding_horizon(
    scenario: &ScenarioInstance,
    steps: usize,
    algorithm: Algorithm,
    mut on_cycle: impl FnMut(usize, &PlanOutput),
) -> Result<SimulationLog, HarnessError> {
    if steps == 0 {
        return Err(HarnessError::Config("at least one replanning step is required".into()));
    }
    let cfg = &scenario.config;
    let p = &cfg.vehicle;
    let mut states: Vec<VehicleState> = scenario.vehicles.iter().map(|v| v.initial).collect();
    let mut nominals = initial_nominals(scenario, &states)?;
    let mut log = SimulationLog {
        states: vec![states.clone()],
        controls: Vec::new(),
        cycles: Vec::new(),
        goals_reached: false,
        restarts: 0,
        failure: None,
        failure_trace: Vec::new(),
        ground_truth: GroundTruthResult { success: false, violations: Vec::new() },
    };
    let mut previous: Option<PlanOutput> = None;
    let reached = |xs: &[VehicleState]| scenario.vehicles.iter().zip(xs).all(|(v, x)| v.goal.reached(x));
    for step in 0..steps {
        if reached(&states) {
            break;
        }
        let config = cycle_config(scenario, step);
        let threshold = cfg.planner.concordance_threshold;
        let seed = if cfg.planner.warm_multipliers { previous.as_ref() } else { None };
        let attempt = match plan_game(build_game(scenario, nominals)?, algorithm, &config, threshold, seed) {
            Err(HarnessError::Planner { .. }) => {
                log.restarts += 1;
                let fresh = build_game(scenario, initial_nominals(scenario, &states)?)?;
                plan_game(fresh, algorithm, &config, threshold, None)
            }
            other => other,
        };
        let plan = match attempt {
            Ok(plan) => plan,
            Err(HarnessError::Planner { message, violations }) => {
                log.failure = Some(format!("step {step}: {message}"));
                log.failure_trace = violations;
                break;
            }
            Err(e) => return Err(e),
        };
        on_cycle(step, &plan);
        if !plan.converged && log.failure_trace.is_empty() {
            log.failure_trace = plan.violations.clone();
        }
        log.cycles.push(CycleRecord {
            step,
            converged: plan.converged,
            iterations: plan.iterations,
            concordance: plan.concordance,
            fairness_gap: plan.fairness_gap,
            vehicle_time: plan.vehicle_time.clone(),
            coordinator_time: plan.coordinator_time,
            wall_time: plan.wall_time,
            final_violation: plan.violations.last().copied().unwrap_or(0.0),
        });
        let applied: Vec<ControlInput> = plan.applied().into_iter().map(|u| clamp_control(u, p)).collect();
        states = states
            .iter()
            .zip(&applied)
            .map(|(x, u)| step_discrete(x, u, cfg.planner.ts, p))
            .collect::<Result<_, _>>()?;
        nominals = plan
            .executed
            .iter()
            .zip(&states)
            .zip(&scenario.vehicles)
            .map(|((t, x), v)| shifted_nominal(t, *x, &v.route, cfg.traffic.reference_speed, p))
            .collect::<Result<_, _>>()?;
        log.controls.push(applied);
        log.states.push(states.clone());
        previous = Some(plan);
    }
    log.goals_reached = reached(&states);
    log.ground_truth = validate_ground_truth(&log.states, &log.controls, &ground_truth_spec(scenario)?);
    Ok(log)
}
