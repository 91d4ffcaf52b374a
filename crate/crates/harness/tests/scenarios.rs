use coplan_harness::scenario::{generate_scenario, RouteKind, ScenarioConfig, ScenarioKind, VehicleSpec};
use coplan_harness::HarnessError;

/// Asymptotic Kolmogorov tail `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// One-sample KS statistic against `U[lo, hi]` and its p-value.
fn ks_uniform(samples: &mut [f64], lo: f64, hi: f64) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

#[test]
fn ks_reference_values() {
    assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
    assert!((kolmogorov_tail(1.628) - 0.01).abs() < 1e-3);
    let mut grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
    assert!(ks_uniform(&mut grid, 0.0, 1.0).1 > 0.99);
    let mut skewed: Vec<f64> = (0..1000).map(|i| ((i as f64 + 0.5) / 1000.0).powi(2)).collect();
    assert!(ks_uniform(&mut skewed, 0.0, 1.0).1 < 1e-6);
}

#[test]
fn initial_speeds_are_uniform() {
    let mut speeds: Vec<f64> = (0..1000)
        .map(|seed| {
            let cfg = ScenarioConfig { seed, ..ScenarioConfig::builtin(ScenarioKind::Straight2) };
            generate_scenario(&cfg).unwrap().vehicles[0].initial.v
        })
        .collect();
    assert!(speeds.iter().all(|v| (5.0..=15.0).contains(v)));
    let (d, p) = ks_uniform(&mut speeds, 5.0, 15.0);
    assert!(p > 0.01, "KS statistic {d}, p = {p}");
}

#[test]
fn generation_is_deterministic_per_seed() {
    for kind in ScenarioKind::BUILTIN {
        let cfg = ScenarioConfig { seed: 42, ..ScenarioConfig::builtin(kind) };
        assert_eq!(generate_scenario(&cfg).unwrap(), generate_scenario(&cfg).unwrap());
    }
    let a = generate_scenario(&ScenarioConfig { seed: 1, ..ScenarioConfig::builtin(ScenarioKind::Straight4) }).unwrap();
    let b = generate_scenario(&ScenarioConfig { seed: 2, ..ScenarioConfig::builtin(ScenarioKind::Straight4) }).unwrap();
    assert_ne!(a.vehicles[0].initial, b.vehicles[0].initial);
}

#[test]
fn builtin_kinds_have_the_expected_layout() {
    let count = |k| generate_scenario(&ScenarioConfig::builtin(k)).unwrap().vehicles.len();
    assert_eq!(count(ScenarioKind::Straight2), 2);
    assert_eq!(count(ScenarioKind::Straight3), 3);
    assert_eq!(count(ScenarioKind::Straight4), 4);
    assert_eq!(count(ScenarioKind::Merging3), 3);
    let s4 = generate_scenario(&ScenarioConfig::builtin(ScenarioKind::Straight4)).unwrap();
    let routes: Vec<RouteKind> = s4.vehicles.iter().map(|v| v.route.kind).collect();
    assert_eq!(routes, [RouteKind::East, RouteKind::North, RouteKind::West, RouteKind::South]);
    let m3 = generate_scenario(&ScenarioConfig::builtin(ScenarioKind::Merging3)).unwrap();
    assert_eq!(m3.vehicles[2].route.kind, RouteKind::NorthToEast);
}

#[test]
fn overlapping_rectangles_are_rejected_after_retries() {
    let spec = VehicleSpec { route: RouteKind::East, station: [30.0, 30.0], lateral: [0.0, 0.0] };
    let cfg = ScenarioConfig { kind: ScenarioKind::Custom, vehicles: vec![spec, spec], ..ScenarioConfig::default() };
    let err = generate_scenario(&cfg).unwrap_err();
    assert!(matches!(err, HarnessError::Scenario(_)));
}

#[test]
fn config_text_round_trip_and_overrides() {
    let mut cfg = ScenarioConfig::builtin(ScenarioKind::Merging3);
    cfg.apply_override("planner.horizon=15").unwrap();
    cfg.apply_override("algorithm.rho=3.5").unwrap();
    cfg.apply_override("kind=\"straight-3\"").unwrap();
    assert_eq!(cfg.planner.horizon, 15);
    assert_eq!(cfg.algorithm.rho, 3.5);
    assert_eq!(cfg.kind, ScenarioKind::Straight3);
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);

    let defaults = ScenarioConfig::from_toml_str("kind = \"straight-4\"").unwrap();
    assert_eq!(defaults, ScenarioConfig::builtin(ScenarioKind::Straight4));
    assert_eq!(defaults.algorithm.max_iterations, 40);
    assert_eq!(defaults.algorithm.rho, 4.0);
    assert_eq!(defaults.algorithm.tolerance, 1e-3);
    assert_eq!(defaults.planner.horizon, 20);
    assert_eq!(defaults.planner.ts, 0.1);

    for bad in ["planner.horizon=1", "nonsense", "planner.nothing.deeper=1", "algorithm.rho=0.5"] {
        let err = cfg.clone().apply_override(bad).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}: {err}");
    }
    assert!(ScenarioConfig::resolve("straight-2").is_ok());
    assert!(ScenarioConfig::resolve("custom").is_err());
    assert!(ScenarioConfig::resolve("/definitely/not/here.toml").is_err());
}
