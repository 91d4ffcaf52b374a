//! Seeded Monte Carlo studies over closed-loop runs, with per-run records and
//! aggregate statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use coplan::analysis::{sensitivity_probe, ve_kkt_check, SensitivityProbe};
use coplan::svep::{Game, SvepOutcome};

use crate::planning::{run_receding_horizon, Algorithm, PlanOutput, SimulationLog};
use crate::scenario::{generate_scenario, ScenarioConfig};
use crate::HarnessError;

/// GNE residual tolerance of the equilibrium certificate.
pub const VE_TOLERANCE: f64 = 1e-3;
/// Perturbation of the sensitivity probes.
pub const PROBE_ALPHA: f64 = 1e-4;
/// Certificates checked per run at most.
const MAX_CERTIFICATES_PER_RUN: usize = 4;
/// Candidate rows tried per run when looking for an active probe.
const PROBE_CANDIDATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub step: usize,
    pub max_residual: f64,
    pub fairness_gap: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: usize,
    pub probe: SensitivityProbe,
}

/// Outcome of one seeded closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub success: bool,
    pub all_converged: bool,
    pub goals_reached: bool,
    pub ground_truth: bool,
    pub cycles: usize,
    pub nonconverged_cycles: usize,
    pub restarts: usize,
    pub failure: Option<String>,
    /// Per-iteration constraint violation of the first failed or non-converged cycle.
    pub violation_trace: Vec<f64>,
    pub concordance_mean: f64,
    pub concordance_min: f64,
    pub fairness_gap_max: f64,
    pub iterations: Vec<usize>,
    pub max_subproblem_vars: usize,
    /// `vehicle_time[cycle][vehicle]` in seconds.
    pub vehicle_time: Vec<Vec<f64>>,
    pub coordinator_time: Vec<f64>,
    pub wall_time: Vec<f64>,
    pub certificates: Vec<CertificateRecord>,
    pub probes: Vec<ProbeRecord>,
    pub analysis_errors: Vec<String>,
}

impl RunRecord {
    fn failed(run: usize, seed: u64, message: String) -> Self {
        Self {
            run,
            seed,
            success: false,
            all_converged: false,
            goals_reached: false,
            ground_truth: false,
            cycles: 0,
            nonconverged_cycles: 0,
            restarts: 0,
            failure: Some(message),
            violation_trace: Vec::new(),
            concordance_mean: 0.0,
            concordance_min: 0.0,
            fairness_gap_max: 0.0,
            iterations: Vec::new(),
            max_subproblem_vars: 0,
            vehicle_time: Vec::new(),
            coordinator_time: Vec::new(),
            wall_time: Vec::new(),
            certificates: Vec::new(),
            probes: Vec::new(),
            analysis_errors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[m] } else { 0.5 * (sorted[m - 1] + sorted[m]) };
        Self { count: values.len(), mean, std: var.sqrt(), median, max: sorted[sorted.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDiagnostic {
    pub run: usize,
    pub seed: u64,
    pub reason: String,
    pub violation_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub kind: String,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub seed0: u64,
    pub success_rate: f64,
    pub converged_rate: f64,
    pub goal_rate: f64,
    pub ground_truth_rate: f64,
    /// Mean over runs of the per-run mean concordance.
    pub concordance_rate: f64,
    /// Fraction of runs with concordance 1 in every cycle.
    pub full_concordance_rate: f64,
    pub fairness_gap_max: f64,
    /// Per-vehicle subproblem seconds per planning cycle.
    pub vehicle_time: Summary,
    pub coordinator_time: Summary,
    pub wall_time: Summary,
    /// Total coordinator time over total planning wall time.
    pub coordinator_share: f64,
    pub certificates_checked: usize,
    pub certificates_passed: usize,
    pub probes: usize,
    pub failures: Vec<FailureDiagnostic>,
    pub records: Vec<RunRecord>,
}

impl MonteCarloReport {
    pub fn aggregate(kind: &str, algorithm: Algorithm, seed0: u64, records: Vec<RunRecord>) -> Self {
        let n = records.len().max(1) as f64;
        let rate = |f: &dyn Fn(&RunRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
        let per_vehicle: Vec<f64> = records.iter().flat_map(|r| r.vehicle_time.iter().flatten().copied()).collect();
        let coordinator: Vec<f64> = records.iter().flat_map(|r| r.coordinator_time.iter().copied()).collect();
        let wall: Vec<f64> = records.iter().flat_map(|r| r.wall_time.iter().copied()).collect();
        let wall_total: f64 = wall.iter().sum();
        let failures = records
            .iter()
            .filter(|r| !r.success || !r.all_converged)
            .map(|r| FailureDiagnostic {
                run: r.run,
                seed: r.seed,
                reason: r.failure.clone().unwrap_or_else(|| {
                    let mut parts = Vec::new();
                    if r.nonconverged_cycles > 0 {
                        parts.push(format!("{} cycles without convergence", r.nonconverged_cycles));
                    }
                    if !r.ground_truth {
                        parts.push("exact-geometry check failed".to_string());
                    }
                    parts.join("; ")
                }),
                violation_trace: r.violation_trace.clone(),
            })
            .collect();
        Self {
            kind: kind.to_string(),
            algorithm,
            runs: records.len(),
            seed0,
            success_rate: rate(&|r| r.success),
            converged_rate: rate(&|r| r.all_converged),
            goal_rate: rate(&|r| r.goals_reached),
            ground_truth_rate: rate(&|r| r.ground_truth),
            concordance_rate: records.iter().map(|r| r.concordance_mean).sum::<f64>() / n,
            full_concordance_rate: rate(&|r| r.cycles > 0 && r.concordance_min == 1.0),
            fairness_gap_max: records.iter().map(|r| r.fairness_gap_max).fold(0.0, f64::max),
            vehicle_time: Summary::of(&per_vehicle),
            coordinator_time: Summary::of(&coordinator),
            wall_time: Summary::of(&wall),
            coordinator_share: if wall_total > 0.0 { coordinator.iter().sum::<f64>() / wall_total } else { 0.0 },
            certificates_checked: records.iter().map(|r| r.certificates.len()).sum(),
            certificates_passed: records.iter().flat_map(|r| &r.certificates).filter(|c| c.certified).count(),
            probes: records.iter().map(|r| r.probes.len()).sum(),
            failures,
            records,
        }
    }

    /// Copy with every timing zeroed; the rest is a deterministic function of the inputs.
    pub fn without_timings(&self) -> Self {
        let mut records = self.records.clone();
        for r in &mut records {
            r.vehicle_time.iter_mut().flatten().for_each(|t| *t = 0.0);
            r.coordinator_time.iter_mut().for_each(|t| *t = 0.0);
            r.wall_time.iter_mut().for_each(|t| *t = 0.0);
        }
        Self {
            vehicle_time: Summary::default(),
            coordinator_time: Summary::default(),
            wall_time: Summary::default(),
            coordinator_share: 0.0,
            records,
            ..self.clone()
        }
    }
}

/// Which per-cycle equilibrium analyses a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub certify: bool,
    pub probe: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { certify: true, probe: true }
    }
}

impl AnalysisOptions {
    pub fn none() -> Self {
        Self { certify: false, probe: false }
    }
}

/// Coupled rows ordered by decreasing multiplier: `(vehicle, neighbor, step, λ)`.
fn priced_rows(outcome: &SvepOutcome) -> Vec<(usize, usize, usize, f64)> {
    let m = &outcome.multipliers;
    let mut rows: Vec<_> = m
        .directions()
        .filter(|(i, j)| i < j)
        .flat_map(|(i, j)| {
            m.lambda(i, j).unwrap_or(&[]).iter().enumerate().map(move |(b, &l)| (i, j, b + 2, l)).collect::<Vec<_>>()
        })
        .filter(|r| r.3 > 0.0)
        .collect();
    rows.sort_by(|a, b| b.3.total_cmp(&a.3).then((a.0, a.1, a.2).cmp(&(b.0, b.1, b.2))));
    rows
}

#[derive(Default)]
struct CycleAnalysis {
    certificates: Vec<CertificateRecord>,
    probes: Vec<ProbeRecord>,
    errors: Vec<String>,
}

impl CycleAnalysis {
    fn observe(&mut self, step: usize, plan: &PlanOutput, options: AnalysisOptions) {
        let Some(outcome) = plan.svep.as_ref().filter(|o| o.report.converged) else { return };
        let priced = priced_rows(outcome);
        if options.certify
            && self.certificates.len() < MAX_CERTIFICATES_PER_RUN
            && (step == 0 || !priced.is_empty())
        {
            self.certify(step, &plan.game, outcome);
        }
        if options.probe && self.probes.is_empty() {
            for &(i, j, k, _) in priced.iter().take(PROBE_CANDIDATES) {
                match sensitivity_probe(&plan.game, outcome, i, j, k, PROBE_ALPHA) {
                    Ok(Some(probe)) if probe.active => {
                        self.probes.push(ProbeRecord { step, probe });
                        break;
                    }
                    Ok(_) => {}
                    Err(e) => self.errors.push(format!("step {step}: probe: {e}")),
                }
            }
        }
    }

    fn certify(&mut self, step: usize, game: &Game, outcome: &SvepOutcome) {
        match ve_kkt_check(game, outcome, &outcome.multipliers, VE_TOLERANCE) {
            Ok(c) => self.certificates.push(CertificateRecord {
                step,
                max_residual: c.report.max_residual(),
                fairness_gap: c.report.fairness_gap,
                certified: c.certified,
            }),
            Err(e) => self.errors.push(format!("step {step}: certificate: {e}")),
        }
    }
}

fn record_from_log(run: usize, seed: u64, log: &SimulationLog, analysis: CycleAnalysis, max_vars: usize) -> RunRecord {
    let conc: Vec<f64> = log.cycles.iter().map(|c| c.concordance).collect();
    RunRecord {
        run,
        seed,
        success: log.success(),
        all_converged: log.all_converged(),
        goals_reached: log.goals_reached,
        ground_truth: log.ground_truth.success,
        cycles: log.cycles.len(),
        nonconverged_cycles: log.cycles.iter().filter(|c| !c.converged).count(),
        restarts: log.restarts,
        failure: log.failure.clone(),
        violation_trace: log.failure_trace.clone(),
        concordance_mean: if conc.is_empty() { 0.0 } else { conc.iter().sum::<f64>() / conc.len() as f64 },
        concordance_min: conc.iter().copied().fold(f64::INFINITY, f64::min).min(1.0),
        fairness_gap_max: log.cycles.iter().map(|c| c.fairness_gap).fold(0.0, f64::max),
        iterations: log.cycles.iter().map(|c| c.iterations).collect(),
        max_subproblem_vars: max_vars,
        vehicle_time: log.cycles.iter().map(|c| c.vehicle_time.clone()).collect(),
        coordinator_time: log.cycles.iter().map(|c| c.coordinator_time).collect(),
        wall_time: log.cycles.iter().map(|c| c.wall_time).collect(),
        certificates: analysis.certificates,
        probes: analysis.probes,
        analysis_errors: analysis.errors,
    }
}

/// One closed-loop run of `base` with scenario seed `seed`.
pub fn run_single(
    base: &ScenarioConfig,
    run: usize,
    seed: u64,
    algorithm: Algorithm,
    options: AnalysisOptions,
) -> (RunRecord, Option<SimulationLog>) {
    let mut config = base.clone();
    config.seed = seed;
    let scenario = match generate_scenario(&config) {
        Ok(s) => s,
        Err(e) => return (RunRecord::failed(run, seed, e.to_string()), None),
    };
    let mut analysis = CycleAnalysis::default();
    let mut max_vars = 0;
    let result = run_receding_horizon(&scenario, config.traffic.max_steps, algorithm, |step, plan| {
        max_vars = max_vars.max(plan.subproblem_vars.iter().copied().max().unwrap_or(0));
        analysis.observe(step, plan, options);
    });
    match result {
        Ok(log) => (record_from_log(run, seed, &log, analysis, max_vars), Some(log)),
        Err(e) => (RunRecord::failed(run, seed, e.to_string()), None),
    }
}

/// Runs seeds `seed0 .. seed0 + n_runs` in parallel; failed runs are data.
/// Logs are returned in run order when `keep_logs` is set.
pub fn run_monte_carlo_with_logs(
    base: &ScenarioConfig,
    n_runs: usize,
    algorithm: Algorithm,
    seed0: u64,
    options: AnalysisOptions,
    keep_logs: bool,
) -> Result<(MonteCarloReport, Vec<Option<SimulationLog>>), HarnessError> {
    if n_runs == 0 {
        return Err(HarnessError::Config("at least one Monte Carlo run is required".into()));
    }
    base.validate()?;
    let results: Vec<(RunRecord, Option<SimulationLog>)> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let (record, log) = run_single(base, r, seed0.wrapping_add(r as u64), algorithm, options);
            (record, log.filter(|_| keep_logs))
        })
        .collect();
    let (records, logs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((MonteCarloReport::aggregate(base.kind.name(), algorithm, seed0, records), logs))
}

pub fn run_monte_carlo(
    base: &ScenarioConfig,
    n_runs: usize,
    algorithm: Algorithm,
    seed0: u64,
    options: AnalysisOptions,
) -> Result<MonteCarloReport, HarnessError> {
    run_monte_carlo_with_logs(base, n_runs, algorithm, seed0, options, false).map(|(r, _)| r)
}
