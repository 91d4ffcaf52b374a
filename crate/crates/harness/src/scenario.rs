//! Two-way two-lane intersection, routes, scenario kinds and sampling of
//! concrete instances.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use coplan::analysis::Goal;
use coplan::constraints::{pair_value, EllipseParams, LaneBoundary};
use coplan::dynamics::{Discretization, VehicleParams, VehicleState};
use coplan::objective::CostWeights;
use coplan::svep::SvepConfig;

use crate::HarnessError;

const MAX_SAMPLING_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    #[serde(rename = "straight-2")]
    Straight2,
    #[serde(rename = "straight-3")]
    Straight3,
    #[serde(rename = "straight-4")]
    Straight4,
    #[serde(rename = "merging-3")]
    Merging3,
    Custom,
}

impl ScenarioKind {
    pub const BUILTIN: [ScenarioKind; 4] =
        [ScenarioKind::Straight2, ScenarioKind::Straight3, ScenarioKind::Straight4, ScenarioKind::Merging3];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Straight2 => "straight-2",
            ScenarioKind::Straight3 => "straight-3",
            ScenarioKind::Straight4 => "straight-4",
            ScenarioKind::Merging3 => "merging-3",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Straight2, Self::Straight3, Self::Straight4, Self::Merging3, Self::Custom]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Routes through the intersection; traffic keeps to the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteKind {
    East,
    West,
    North,
    South,
    /// Northbound, turning right into the eastbound lane.
    NorthToEast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub lane_width: f64,
    /// Length of each approach arm outside the junction area.
    pub arm_length: f64,
    /// Half side of the square junction area, where no lane lines apply.
    pub junction_half: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { lane_width: 3.5, arm_length: 60.0, junction_half: 10.0 }
    }
}

/// Initial-condition rectangle of one vehicle, in route coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub route: RouteKind,
    /// Arc length from the start of the route.
    pub station: [f64; 2],
    /// Offset to the left of the lane center.
    pub lateral: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub speed_range: [f64; 2],
    pub reference_speed: f64,
    /// Distance past the junction exit at which the goal line sits.
    pub goal_distance: f64,
    pub goal_tolerance: f64,
    pub max_steps: usize,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self { speed_range: [5.0, 15.0], reference_speed: 10.0, goal_distance: 15.0, goal_tolerance: 1.0, max_steps: 120 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub ts: f64,
    pub discretization: Discretization,
    pub lane_distance: f64,
    /// Semi-axes of the lane ellipse; `None` circumscribes the footprint.
    pub ellipse: Option<[f64; 2]>,
    pub concordance_threshold: f64,
    /// Offset added to the planned collision rows, in superellipse units.
    pub collision_margin: f64,
    /// Offset added to the planned lane discriminant rows, in m².
    pub lane_margin: f64,
    /// Start each replanning cycle from the previous cycle's multipliers, advanced one step.
    pub warm_multipliers: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            ts: 0.1,
            discretization: Discretization::ExplicitEuler,
            lane_distance: 10.0,
            ellipse: None,
            concordance_threshold: 0.1,
            collision_margin: 0.02,
            lane_margin: 0.05,
            warm_multipliers: true,
        }
    }
}

/// Everything needed to generate and run a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub geometry: Geometry,
    pub traffic: TrafficConfig,
    pub planner: PlannerConfig,
    pub algorithm: SvepConfig,
    pub vehicle: VehicleParams,
    pub weights: CostWeights,
    /// Vehicles of a custom scenario; ignored for the built-in kinds.
    pub vehicles: Vec<VehicleSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::builtin(ScenarioKind::Straight2)
    }
}

impl ScenarioConfig {
    pub fn builtin(kind: ScenarioKind) -> Self {
        Self {
            kind,
            seed: 0,
            geometry: Geometry::default(),
            traffic: TrafficConfig::default(),
            planner: PlannerConfig::default(),
            algorithm: SvepConfig::default(),
            vehicle: VehicleParams::default(),
            weights: CostWeights::default(),
            vehicles: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// A built-in kind name, or the path of a TOML scenario file.
    pub fn resolve(arg: &str) -> Result<Self, HarnessError> {
        match ScenarioKind::parse(arg) {
            Some(ScenarioKind::Custom) => Err(HarnessError::Config("custom scenarios are loaded from a file".into())),
            Some(kind) => Ok(Self::builtin(kind)),
            None => Self::load(Path::new(arg)),
        }
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Applies a `dotted.key=value` override; the value is parsed as TOML, or taken as a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), HarnessError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (n, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| HarnessError::Config(format!("`{key}` does not name a setting")))?;
            if n + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table
                .get_mut(*part)
                .ok_or_else(|| HarnessError::Config(format!("unknown section `{part}` in `{key}`")))?;
        }
        let updated: Self = root.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.vehicle.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.weights.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.algorithm.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let g = &self.geometry;
        if !(g.lane_width > 0.0 && g.arm_length > 0.0 && g.junction_half >= g.lane_width) {
            return bad("intersection geometry must be positive with the junction at least one lane wide".into());
        }
        let t = &self.traffic;
        if !(t.speed_range[0] >= self.vehicle.v_min && t.speed_range[0] <= t.speed_range[1] && t.speed_range[1] <= self.vehicle.v_max) {
            return bad("initial speed range must lie inside the speed bounds".into());
        }
        if !(t.reference_speed > 0.0 && t.goal_distance >= 0.0 && t.goal_tolerance > 0.0) {
            return bad("reference speed and goal tolerance must be positive".into());
        }
        if t.max_steps == 0 {
            return bad("at least one simulation step is required".into());
        }
        let p = &self.planner;
        if p.horizon < 2 || !(p.ts > 0.0) || !(p.lane_distance > 0.0) || !(p.concordance_threshold > 0.0) {
            return bad("planner horizon, period, lane distance and concordance threshold must be positive".into());
        }
        self.ellipse()?;
        if self.kind == ScenarioKind::Custom && self.vehicles.is_empty() {
            return bad("custom scenario needs at least one vehicle".into());
        }
        for v in &self.vehicles {
            if v.station[0] > v.station[1] || v.lateral[0] > v.lateral[1] {
                return bad("empty initial rectangle".into());
            }
        }
        Ok(())
    }

    pub fn ellipse(&self) -> Result<EllipseParams, HarnessError> {
        match self.planner.ellipse {
            None => Ok(EllipseParams::circumscribing(&self.vehicle)),
            Some([u, v]) => EllipseParams::new(u, v, &self.vehicle).map_err(|e| HarnessError::Config(e.to_string())),
        }
    }

    /// Initial rectangles of the configured kind.
    pub fn vehicle_specs(&self) -> Vec<VehicleSpec> {
        let lat = [-0.3, 0.3];
        let approach = [35.0, 50.0];
        let spec = |route, station| VehicleSpec { route, station, lateral: lat };
        match self.kind {
            ScenarioKind::Straight2 => vec![spec(RouteKind::East, approach), spec(RouteKind::North, approach)],
            ScenarioKind::Straight3 => vec![
                spec(RouteKind::East, approach),
                spec(RouteKind::North, approach),
                spec(RouteKind::West, approach),
            ],
            ScenarioKind::Straight4 => vec![
                spec(RouteKind::East, approach),
                spec(RouteKind::North, approach),
                spec(RouteKind::West, approach),
                spec(RouteKind::South, approach),
            ],
            ScenarioKind::Merging3 => vec![
                spec(RouteKind::East, [40.0, 50.0]),
                spec(RouteKind::East, [20.0, 32.0]),
                spec(RouteKind::NorthToEast, [40.0, 50.0]),
            ],
            ScenarioKind::Custom => self.vehicles.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Line { from: [f64; 2], to: [f64; 2], on_arm: bool },
    /// Circular arc; `sweep < 0` turns clockwise.
    Arc { center: [f64; 2], radius: f64, start_angle: f64, sweep: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { from, to, .. } => (to[0] - from[0]).hypot(to[1] - from[1]),
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position and heading at distance `s` from the segment start.
    fn pose(&self, s: f64) -> ([f64; 2], f64) {
        match *self {
            Segment::Line { from, to, .. } => {
                let len = self.length();
                let (dx, dy) = ((to[0] - from[0]) / len, (to[1] - from[1]) / len);
                ([from[0] + s * dx, from[1] + s * dy], dy.atan2(dx))
            }
            Segment::Arc { center, radius, start_angle, sweep } => {
                let ang = start_angle + sweep.signum() * s / radius;
                let p = [center[0] + radius * ang.cos(), center[1] + radius * ang.sin()];
                (p, ang + sweep.signum() * FRAC_PI_2)
            }
        }
    }

    /// Closest point: `(distance along segment, distance to point)`.
    fn closest(&self, q: [f64; 2]) -> (f64, f64) {
        match *self {
            Segment::Line { from, .. } => {
                let len = self.length();
                let (_, h) = self.pose(0.0);
                let (dx, dy) = (h.cos(), h.sin());
                let t = ((q[0] - from[0]) * dx + (q[1] - from[1]) * dy).clamp(0.0, len);
                let p = [from[0] + t * dx, from[1] + t * dy];
                (t, (q[0] - p[0]).hypot(q[1] - p[1]))
            }
            Segment::Arc { center, radius, start_angle, sweep } => {
                let ang = (q[1] - center[1]).atan2(q[0] - center[0]);
                let mut rel = (ang - start_angle) * sweep.signum();
                rel = rel.rem_euclid(2.0 * PI);
                let t = if rel <= sweep.abs() {
                    rel * radius
                } else if rel - sweep.abs() < 2.0 * PI - rel {
                    self.length()
                } else {
                    0.0
                };
                let (p, _) = self.pose(t);
                (t, (q[0] - p[0]).hypot(q[1] - p[1]))
            }
        }
    }
}

/// Arc-length parametrized lane centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub kind: RouteKind,
    pub segments: Vec<Segment>,
    /// Station at which the route leaves the junction area.
    pub exit_station: f64,
}

impl Route {
    pub fn new(kind: RouteKind, g: &Geometry) -> Self {
        let (j, off, end) = (g.junction_half, g.lane_width / 2.0, g.junction_half + g.arm_length);
        // eastbound template, rotated for the other straight routes
        let straight = |rot: f64| {
            let (s, c) = rot.sin_cos();
            let r = |p: [f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            vec![
                Segment::Line { from: r([-end, -off]), to: r([-j, -off]), on_arm: true },
                Segment::Line { from: r([-j, -off]), to: r([j, -off]), on_arm: false },
                Segment::Line { from: r([j, -off]), to: r([end, -off]), on_arm: true },
            ]
        };
        let segments = match kind {
            RouteKind::East => straight(0.0),
            RouteKind::North => straight(FRAC_PI_2),
            RouteKind::West => straight(PI),
            RouteKind::South => straight(-FRAC_PI_2),
            RouteKind::NorthToEast => {
                let radius = j - off;
                vec![
                    Segment::Line { from: [off, -end], to: [off, -j], on_arm: true },
                    Segment::Arc { center: [j, -j], radius, start_angle: PI, sweep: -FRAC_PI_2 },
                    Segment::Line { from: [j, -off], to: [end, -off], on_arm: true },
                ]
            }
        };
        let exit_station = segments[0].length() + segments[1].length();
        Self { kind, segments, exit_station }
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Position and heading at station `s`, extrapolated straight past either end.
    pub fn pose(&self, s: f64) -> ([f64; 2], f64) {
        let mut rest = s;
        if rest < 0.0 {
            let (p, h) = self.segments[0].pose(0.0);
            return ([p[0] + rest * h.cos(), p[1] + rest * h.sin()], h);
        }
        for seg in &self.segments {
            let len = seg.length();
            if rest <= len {
                return seg.pose(rest);
            }
            rest -= len;
        }
        let last = self.segments.last().expect("route has segments");
        let (p, h) = last.pose(last.length());
        ([p[0] + rest * h.cos(), p[1] + rest * h.sin()], h)
    }

    /// Station of the closest centerline point and signed offset to its left.
    pub fn project(&self, q: [f64; 2]) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        let mut base = 0.0;
        for seg in &self.segments {
            let (t, d) = seg.closest(q);
            if d < best.0 {
                best = (d, base + t);
            }
            base += seg.length();
        }
        let station = best.1;
        let (p, h) = self.pose(station);
        let lateral = -(q[0] - p[0]) * h.sin() + (q[1] - p[1]) * h.cos();
        (station, lateral)
    }

    /// Both lines of the lane on every arm the route uses.
    pub fn lane_boundaries(&self, g: &Geometry) -> Vec<LaneBoundary> {
        let off = g.lane_width / 2.0;
        let mut out = Vec::new();
        for seg in &self.segments {
            let Segment::Line { from, to, on_arm: true } = *seg else { continue };
            let (_, h) = seg.pose(0.0);
            let n = [-h.sin(), h.cos()];
            let mid = [(from[0] + to[0]) / 2.0, (from[1] + to[1]) / 2.0];
            for side in [off, -off] {
                let a = [from[0] + side * n[0], from[1] + side * n[1]];
                let b = [to[0] + side * n[0], to[1] + side * n[1]];
                out.push(LaneBoundary::new(a, b, mid).expect("non-degenerate lane segment"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleInstance {
    pub route: Route,
    pub initial: VehicleState,
    pub lanes: Vec<LaneBoundary>,
    pub goal: Goal,
}

/// A sampled scenario: configuration plus concrete initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInstance {
    pub config: ScenarioConfig,
    pub vehicles: Vec<VehicleInstance>,
}

/// Samples initial conditions of `config.kind` with `config.seed`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<ScenarioInstance, HarnessError> {
    config.validate()?;
    let specs = config.vehicle_specs();
    let g = &config.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sample = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[1] > r[0] { rng.gen_range(r[0]..=r[1]) } else { r[0] };
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let mut vehicles = Vec::with_capacity(specs.len());
        for spec in &specs {
            let route = Route::new(spec.route, g);
            let station = sample(&mut rng, spec.station);
            let lateral = sample(&mut rng, spec.lateral);
            let speed = sample(&mut rng, config.traffic.speed_range);
            let (p, h) = route.pose(station);
            let initial = VehicleState::new(p[0] - lateral * h.sin(), p[1] + lateral * h.cos(), speed, h);
            let (gp, gh) = route.pose(route.exit_station + config.traffic.goal_distance);
            let goal = Goal { point: gp, heading: gh, lateral_tolerance: config.traffic.goal_tolerance };
            let lanes = route.lane_boundaries(g);
            vehicles.push(VehicleInstance { route, initial, lanes, goal });
        }
        let clear = (0..vehicles.len()).all(|i| {
            (i + 1..vehicles.len())
                .all(|j| pair_value(i, &vehicles[i].initial, j, &vehicles[j].initial, &config.vehicle) < 0.0)
        });
        if clear {
            return Ok(ScenarioInstance { config: config.clone(), vehicles });
        }
    }
    Err(HarnessError::Scenario(format!(
        "no collision-free initial configuration after {MAX_SAMPLING_ATTEMPTS} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn straight_route_geometry() {
        let g = Geometry::default();
        let r = Route::new(RouteKind::East, &g);
        assert_eq!(r.length(), 140.0);
        assert_eq!(r.exit_station, 80.0);
        let (p, h) = r.pose(35.0);
        assert_eq!(p, [-35.0, -1.75]);
        assert_eq!(h, 0.0);
        let (s, lat) = r.project([-35.0, -1.45]);
        assert_abs_diff_eq!(s, 35.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lat, 0.3, epsilon = 1e-12);

        let n = Route::new(RouteKind::North, &g);
        let (p, h) = n.pose(35.0);
        assert_abs_diff_eq!(p[0], 1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -35.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn turning_route_geometry() {
        let g = Geometry::default();
        let r = Route::new(RouteKind::NorthToEast, &g);
        let arc = 8.25 * FRAC_PI_2;
        assert_abs_diff_eq!(r.exit_station, 60.0 + arc, epsilon = 1e-12);
        let (p, h) = r.pose(60.0 + arc / 2.0);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(p[0], 10.0 - 8.25 * c, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -10.0 + 8.25 * c, epsilon = 1e-12);
        assert_abs_diff_eq!(h, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        let (p, h) = r.pose(r.exit_station + 5.0);
        assert_abs_diff_eq!(p[0], 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);
        let (s, lat) = r.project([p[0], p[1] + 0.2]);
        assert_abs_diff_eq!(s, r.exit_station + 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(lat, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn lane_interior_is_admissible() {
        let g = Geometry::default();
        for kind in [RouteKind::East, RouteKind::West, RouteKind::North, RouteKind::South, RouteKind::NorthToEast] {
            let r = Route::new(kind, &g);
            let lanes = r.lane_boundaries(&g);
            assert_eq!(lanes.len(), 4);
            for s in [5.0, 30.0, r.exit_station + 10.0, r.length() - 5.0] {
                for lat in [-1.7, 0.0, 1.7] {
                    let (p, h) = r.pose(s);
                    let q = [p[0] - lat * h.sin(), p[1] + lat * h.cos()];
                    for lane in &lanes {
                        if lane.applies_to(q[0], q[1], 10.0) {
                            assert!(lane.line.value(q[0], q[1]) < 0.0, "{kind:?} s={s} lat={lat}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn scenarios_are_reproducible() {
        let cfg = ScenarioConfig { seed: 17, ..ScenarioConfig::builtin(ScenarioKind::Straight4) };
        let a = generate_scenario(&cfg).unwrap();
        assert_eq!(a, generate_scenario(&cfg).unwrap());
        assert_eq!(a.vehicles.len(), 4);
        let b = generate_scenario(&ScenarioConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a, b);
        for v in &a.vehicles {
            assert!((5.0..=15.0).contains(&v.initial.v));
        }
    }

    #[test]
    fn overrides_and_round_trip() {
        let mut cfg = ScenarioConfig::builtin(ScenarioKind::Merging3);
        cfg.apply_override("algorithm.rho=8.0").unwrap();
        cfg.apply_override("traffic.max_steps=50").unwrap();
        cfg.apply_override("kind=\"straight-3\"").unwrap();
        assert_eq!(cfg.algorithm.rho, 8.0);
        assert_eq!(cfg.traffic.max_steps, 50);
        assert_eq!(cfg.kind, ScenarioKind::Straight3);
        assert!(cfg.apply_override("algorithm.rho=0.5").is_err());
        assert!(cfg.apply_override("nonsense").is_err());
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_files_use_defaults() {
        let cfg = ScenarioConfig::from_toml_str("kind = \"merging-3\"\nseed = 4\n[algorithm]\nmax_iterations = 30\n").unwrap();
        assert_eq!(cfg.kind, ScenarioKind::Merging3);
        assert_eq!(cfg.algorithm.max_iterations, 30);
        assert_eq!(cfg.algorithm.rho, 4.0);
        assert_eq!(cfg.planner.horizon, 20);
        assert!(ScenarioConfig::from_toml_str("kind = \"custom\"").is_err());
    }
}
