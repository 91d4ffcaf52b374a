use coplan_harness::montecarlo::{run_monte_carlo, AnalysisOptions};
use coplan_harness::planning::{plan_once, run_receding_horizon, Algorithm};
use coplan_harness::scenario::{generate_scenario, RouteKind, ScenarioConfig, ScenarioKind, VehicleSpec};
use coplan_harness::HarnessError;

fn builtin(kind: ScenarioKind, seed: u64) -> ScenarioConfig {
    ScenarioConfig { seed, ..ScenarioConfig::builtin(kind) }
}

fn custom(vehicles: Vec<VehicleSpec>) -> ScenarioConfig {
    let mut cfg = ScenarioConfig { kind: ScenarioKind::Custom, vehicles, ..ScenarioConfig::default() };
    cfg.traffic.speed_range = [8.0, 8.0];
    cfg
}

#[test]
fn zero_steps_is_an_error() {
    let s = generate_scenario(&builtin(ScenarioKind::Straight2, 0)).unwrap();
    let err = run_receding_horizon(&s, 0, Algorithm::Svep, |_, _| {}).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
}

#[test]
fn single_vehicle_tracks_its_lane() {
    let spec = VehicleSpec { route: RouteKind::East, station: [20.0, 20.0], lateral: [0.4, 0.4] };
    let s = generate_scenario(&custom(vec![spec])).unwrap();
    let log = run_receding_horizon(&s, 120, Algorithm::Svep, |_, plan| assert!(plan.game.len() == 1)).unwrap();
    assert!(log.success(), "{:?}", log.ground_truth.violations);
    let route = &s.vehicles[0].route;
    for states in log.states.iter().skip(20) {
        let (_, lateral) = route.project([states[0].px, states[0].py]);
        assert!(lateral.abs() < 0.5, "lateral error {lateral}");
    }
}

#[test]
fn distant_vehicles_plan_independently() {
    let far = |route| VehicleSpec { route, station: [0.0, 0.0], lateral: [0.0, 0.0] };
    let s = generate_scenario(&custom(vec![far(RouteKind::East), far(RouteKind::West)])).unwrap();
    let out = plan_once(&s, Algorithm::Svep).unwrap();
    let svep = out.svep.as_ref().unwrap();
    assert_eq!(svep.graph.num_edges(), 0);
    assert_eq!(out.iterations, 1);
    assert!(out.converged);
    assert_eq!(out.subproblem_solves, vec![1, 1]);
}

#[test]
fn one_shot_plan_converges_with_full_concordance() {
    let s = generate_scenario(&builtin(ScenarioKind::Straight2, 2)).unwrap();
    let out = plan_once(&s, Algorithm::Svep).unwrap();
    assert!(out.converged);
    assert_eq!(out.concordance, 1.0);
    assert_eq!(out.fairness_gap, 0.0);
    assert!(out.coordinator_time + out.vehicle_time.iter().cloned().fold(0.0, f64::max) <= out.wall_time);
}

#[test]
fn merge_reaches_goals_without_exact_violations() {
    let s = generate_scenario(&builtin(ScenarioKind::Merging3, 0)).unwrap();
    let log = run_receding_horizon(&s, s.config.traffic.max_steps, Algorithm::Svep, |_, plan| {
        assert_eq!(plan.concordance, 1.0);
        assert!(plan.coordinator_time + plan.vehicle_time.iter().cloned().fold(0.0, f64::max) <= plan.wall_time);
    })
    .unwrap();
    assert!(log.goals_reached);
    assert!(log.success(), "{:?}", log.ground_truth.violations);
    assert_eq!(log.controls.len() + 1, log.states.len());
}

#[test]
fn monte_carlo_is_independent_of_the_thread_count() {
    let cfg = ScenarioConfig::builtin(ScenarioKind::Merging3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&cfg, 3, Algorithm::Svep, 5, AnalysisOptions::default()).unwrap())
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one.without_timings(), many.without_timings());
    assert_eq!(one.runs, 3);
    assert!((0.0..=1.0).contains(&one.success_rate));
    assert!(run_monte_carlo(&cfg, 0, Algorithm::Svep, 0, AnalysisOptions::none()).is_err());
}
