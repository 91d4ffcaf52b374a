use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coplan_harness::export::{export_simulation, export_study, profile_rows, write_csv, write_json};
use coplan_harness::montecarlo::{run_monte_carlo_with_logs, AnalysisOptions};
use coplan_harness::planning::{plan_once, run_receding_horizon, Algorithm};
use coplan_harness::scenario::{generate_scenario, ScenarioConfig};
use coplan_harness::HarnessError;

#[derive(Parser)]
#[command(name = "coplan", version, about = "Fair multi-vehicle trajectory planning at an intersection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one horizon from the sampled initial states.
    Plan(Common),
    /// Receding-horizon simulation until the goals are reached.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replanning steps; defaults to the scenario's step budget.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Monte Carlo study over consecutive seeds.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// 500 runs.
        #[arg(long)]
        full: bool,
        /// Skip the equilibrium certificates and sensitivity probes.
        #[arg(long)]
        no_analysis: bool,
        /// Keep trajectories of every run in the output directory.
        #[arg(long)]
        trajectories: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Built-in kind (straight-2, straight-3, straight-4, merging-3) or a TOML file.
    #[arg(long, default_value = "straight-2")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// svep or uncoordinated.
    #[arg(long, default_value = "svep")]
    algorithm: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration override such as `planner.horizon=15`; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn setup(&self) -> Result<(ScenarioConfig, Algorithm), HarnessError> {
        let mut config = ScenarioConfig::resolve(&self.scenario)?;
        for p in &self.params {
            config.apply_override(p)?;
        }
        config.seed = self.seed;
        let algorithm = Algorithm::parse(&self.algorithm)
            .ok_or_else(|| HarnessError::Config(format!("unknown algorithm `{}`", self.algorithm)))?;
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(HarnessError::Config("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok((config, algorithm))
    }
}

fn plan(c: &Common) -> Result<bool, HarnessError> {
    let (config, algorithm) = c.setup()?;
    let scenario = generate_scenario(&config)?;
    let out = plan_once(&scenario, algorithm)?;
    println!(
        "{} {} seed {}: converged={} iterations={} violation={:.3e} concordance={:.3} wall={:.4}s",
        config.kind.name(),
        algorithm.name(),
        config.seed,
        out.converged,
        out.iterations,
        out.violations.last().copied().unwrap_or(0.0),
        out.concordance,
        out.wall_time
    );
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("plan.csv"), profile_rows(0, &out.executed))?;
        if let Some(svep) = &out.svep {
            write_json(&dir.join("report.json"), &svep.report)?;
        }
    }
    Ok(out.converged)
}

fn simulate(c: &Common, steps: Option<usize>) -> Result<bool, HarnessError> {
    let (config, algorithm) = c.setup()?;
    let scenario = generate_scenario(&config)?;
    let log = run_receding_horizon(&scenario, steps.unwrap_or(config.traffic.max_steps), algorithm, |_, _| {})?;
    println!(
        "{} {} seed {}: success={} goals={} cycles={} non-converged={} restarts={}",
        config.kind.name(),
        algorithm.name(),
        config.seed,
        log.success(),
        log.goals_reached,
        log.cycles.len(),
        log.cycles.iter().filter(|x| !x.converged).count(),
        log.restarts
    );
    if let Some(f) = &log.failure {
        println!("failure: {f}");
    }
    for v in &log.ground_truth.violations {
        println!("violation: {v:?}");
    }
    if let Some(dir) = &c.out {
        export_simulation(dir, 0, &log, config.planner.ts)?;
    }
    Ok(log.success())
}

fn bench(c: &Common, runs: usize, full: bool, no_analysis: bool, trajectories: bool) -> Result<bool, HarnessError> {
    let (config, algorithm) = c.setup()?;
    let runs = if full { 500 } else { runs };
    let options = if no_analysis { AnalysisOptions::none() } else { AnalysisOptions::default() };
    let (report, logs) = run_monte_carlo_with_logs(&config, runs, algorithm, c.seed, options, trajectories)?;
    println!(
        "{} {} runs={} success={:.3} converged={:.3} concordance={:.3} vehicle median={:.3e}s coordinator={:.3e}±{:.1e}s share={:.4}",
        report.kind,
        algorithm.name(),
        report.runs,
        report.success_rate,
        report.converged_rate,
        report.concordance_rate,
        report.vehicle_time.median,
        report.coordinator_time.mean,
        report.coordinator_time.std,
        report.coordinator_share
    );
    for f in &report.failures {
        println!("failed run {} (seed {}): {}", f.run, f.seed, f.reason);
    }
    if let Some(dir) = &c.out {
        export_study(dir, &report, &logs, config.planner.ts)?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan(c) => plan(c),
        Command::Simulate { common, steps } => simulate(common, *steps),
        Command::Bench { common, runs, full, no_analysis, trajectories } => {
            bench(common, *runs, *full, *no_analysis, *trajectories)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
