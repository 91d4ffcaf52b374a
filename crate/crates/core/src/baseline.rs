//! Uncoordinated comparison planner: every vehicle solves the whole game on
//! its own, with its own penalty draws, and executes its own plan from that
//! private solve. Nothing is exchanged between vehicles, so predictions of
//! other vehicles' moves may disagree with what they actually do.

use serde::{Deserialize, Serialize};

use crate::analysis::equilibrium_concordance;
use crate::dynamics::ControlInput;
use crate::svep::{draw_penalties, solve_seeded, Game, MultiplierState, SolveFailure, SvepConfig, SvepOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGameSolve {
    pub owner: usize,
    /// The owner's solution of the full game; `outcome.profile[owner]` is executed.
    pub outcome: SvepOutcome,
}

impl LocalGameSolve {
    /// Subproblem solves performed by the owner (all vehicles, all iterations).
    pub fn subproblem_solves(&self) -> usize {
        self.outcome.report.subproblem_solves.iter().sum()
    }

    /// Wall time the owner spent in subproblems.
    pub fn compute_time(&self) -> f64 {
        self.outcome.report.vehicle_time.iter().sum()
    }
}

/// How each owner seeds its penalty draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OwnerSeeding {
    /// Owner `i` draws with seed `seed + i + 1`.
    Heterogeneous,
    /// Every owner uses the base seed, hence identical penalties.
    Identical,
}

/// Configuration used by `owner`: sequential, with an owner-specific seed.
pub fn owner_config(base: &SvepConfig, owner: usize, seeding: OwnerSeeding) -> SvepConfig {
    let seed = match seeding {
        OwnerSeeding::Heterogeneous => base.seed.wrapping_add(owner as u64 + 1),
        OwnerSeeding::Identical => base.seed,
    };
    SvepConfig { seed, parallel: false, ..*base }
}

/// Vehicle `owner` solves the entire game alone.
pub fn uncoordinated_solve(owner: usize, game: &Game, config: &SvepConfig) -> Result<LocalGameSolve, Box<SolveFailure>> {
    uncoordinated_solve_seeded(owner, game, config, None)
}

/// [`uncoordinated_solve`] starting from the owner's multipliers of an earlier solve.
pub fn uncoordinated_solve_seeded(
    owner: usize,
    game: &Game,
    config: &SvepConfig,
    previous: Option<(&MultiplierState, usize)>,
) -> Result<LocalGameSolve, Box<SolveFailure>> {
    let d = draw_penalties(game.len(), config);
    let outcome = solve_seeded(game, config, &d, previous)?;
    Ok(LocalGameSolve { owner, outcome })
}

/// Runs [`uncoordinated_solve`] for every vehicle.
pub fn uncoordinated_plan(
    game: &Game,
    base: &SvepConfig,
    seeding: OwnerSeeding,
) -> Result<Vec<LocalGameSolve>, Box<SolveFailure>> {
    (0..game.len()).map(|i| uncoordinated_solve(i, game, &owner_config(base, i, seeding))).collect()
}

/// [`uncoordinated_plan`] where every owner starts from its own earlier multipliers.
pub fn uncoordinated_plan_seeded(
    game: &Game,
    base: &SvepConfig,
    seeding: OwnerSeeding,
    previous: &[LocalGameSolve],
    shift: usize,
) -> Result<Vec<LocalGameSolve>, Box<SolveFailure>> {
    (0..game.len())
        .map(|i| {
            let seed = previous.iter().find(|s| s.owner == i).map(|s| (&s.outcome.multipliers, shift));
            uncoordinated_solve_seeded(i, game, &owner_config(base, i, seeding), seed)
        })
        .collect()
}

/// `predicted[i][j]` = owner `i`'s `u_j(1)`; `actual[j]` = owner `j`'s own `u_j(1)`.
pub fn first_controls(solves: &[LocalGameSolve]) -> (Vec<Vec<ControlInput>>, Vec<ControlInput>) {
    let predicted = solves.iter().map(|s| s.outcome.profile.iter().map(|t| t.controls[0]).collect()).collect();
    let actual = solves.iter().map(|s| s.outcome.profile[s.owner].controls[0]).collect();
    (predicted, actual)
}

/// Concordance of a set of local solves.
pub fn baseline_concordance(solves: &[LocalGameSolve], threshold: f64) -> f64 {
    let (predicted, actual) = first_controls(solves);
    equilibrium_concordance(&predicted, &actual, threshold)
}
