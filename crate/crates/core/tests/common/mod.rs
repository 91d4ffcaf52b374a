#![allow(dead_code)]

use coplan::constraints::EllipseParams;
use coplan::dynamics::{ControlInput, Trajectory, VehicleParams, VehicleState};
use coplan::objective::{CostWeights, ReferenceTrajectory};
use coplan::svep::{Game, SvepConfig, VehicleTask};

pub const TS: f64 = 0.1;

/// Constant-speed straight task from `start` along `heading`; the reference keeps the speed.
pub fn straight_task(start: [f64; 2], heading: f64, speed: f64, horizon: usize) -> VehicleTask {
    let p = VehicleParams::default();
    let initial = VehicleState::new(start[0], start[1], speed, heading);
    let nominal = Trajectory::rollout(initial, vec![ControlInput::default(); horizon - 1], TS, &p).unwrap();
    let reference = ReferenceTrajectory::new(nominal.states.clone()).unwrap();
    VehicleTask { reference, lanes: Vec::new(), nominal }
}

pub fn game_of(vehicles: Vec<VehicleTask>) -> Game {
    let params = VehicleParams::default();
    Game {
        params,
        ellipse: EllipseParams::circumscribing(&params),
        weights: CostWeights::default(),
        lane_distance: 10.0,
        collision_margin: 0.0,
        lane_margin: 0.0,
        vehicles,
    }
}

/// Eastbound and northbound vehicles whose nominals close in on the origin at the end of the horizon.
pub fn crossing_game(horizon: usize) -> Game {
    game_of(vec![
        straight_task([-20.0, 0.0], 0.0, 10.0, horizon),
        straight_task([0.0, -21.0], std::f64::consts::FRAC_PI_2, 10.0, horizon),
    ])
}

/// Two vehicles on parallel roads 50 m apart.
pub fn disjoint_game(horizon: usize) -> Game {
    game_of(vec![straight_task([0.0, 0.0], 0.0, 10.0, horizon), straight_task([0.0, 50.0], 0.0, 10.0, horizon)])
}

pub fn sequential(seed: u64) -> SvepConfig {
    SvepConfig { seed, parallel: false, ..SvepConfig::default() }
}
