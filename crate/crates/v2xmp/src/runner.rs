//! Experiment orchestration: single solves, single trials and Monte Carlo sweeps.

use std::time::Instant;

use rayon::prelude::*;
use v2xmp_core::sim::{baseline_policy, build_planning_inputs, run_trial, trial_rng, CollisionStats, PlanningInputs, Policy, ScenarioConfig, TrialResult};
use v2xmp_core::solver::{run_bcd_with, BcdOutcome, Clock, SolverConfig};
use v2xmp_core::vehicle::ControlInput;

use crate::config::RunConfig;
use crate::{Error, Result};

/// Wall-clock seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// One planning window solved from the initial scenario state.
#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    pub policy: Policy,
    pub inputs: PlanningInputs,
    pub outcome: BcdOutcome,
}

/// Solves the first planning window once per compared policy, with CSI and
/// position errors drawn from trial 0 of the configured seed.
pub fn solve(run: &RunConfig) -> Result<Vec<Solved>> {
    run.compare
        .iter()
        .map(|&policy| {
            let s = ScenarioConfig { policy, ..run.scenario.clone() };
            let prev = ControlInput { v: s.ego_speed(), omega: 0.0 };
            let mut rng = trial_rng(s.seed, 0);
            let inputs = build_planning_inputs(&s, &run.solver, 0, s.ego_start(), prev, &mut rng)?;
            let (_, blocks) = baseline_policy(policy, &s.rho);
            let outcome = run_bcd_with(&inputs.problem, &s.channel, &inputs.csi, s.budget, &run.solver, blocks, &WallClock::new())?;
            Ok(Solved { policy, inputs, outcome })
        })
        .collect()
}

/// Runs trial 0 of the configured seed once per compared policy.
pub fn trial(run: &RunConfig) -> Result<Vec<TrialResult>> {
    run.compare
        .iter()
        .map(|&policy| Ok(run_trial(&ScenarioConfig { policy, ..run.scenario.clone() }, &run.solver, 0)?))
        .collect()
}

/// Runs `config.trials` trials on up to `jobs` threads, in trial order.
pub fn run_trials(config: &ScenarioConfig, solver: &SolverConfig, jobs: usize) -> Result<Vec<TrialResult>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Usage(e.to_string()))?;
    pool.install(|| (0..config.trials).into_par_iter().map(|i| run_trial(config, solver, i).map_err(Error::from)).collect())
}

/// Trials of one policy at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub sweep_value: Option<f64>,
    pub policy: Policy,
    pub trials: Vec<TrialResult>,
    pub stats: CollisionStats,
}

impl Point {
    /// Mean outage probability over every executed slot and link.
    pub fn mean_outage(&self) -> f64 {
        mean(self.trials.iter().flat_map(|t| t.slots.iter().flat_map(|s| s.outage)))
    }

    /// Mean planned margin over every executed slot (m).
    pub fn mean_margin(&self) -> f64 {
        mean(self.trials.iter().flat_map(|t| t.slots.iter().map(|s| s.margin)))
    }

    /// Executed slots in which the planner was infeasible.
    pub fn fallback_slots(&self) -> usize {
        self.trials.iter().map(|t| t.slots.iter().filter(|s| s.fallback).count()).sum()
    }

    /// Per-iteration mean of every BCD trace, over the traces that reach that iteration.
    pub fn mean_objective_trace(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for trace in self.trials.iter().flat_map(|t| t.plans.iter().filter_map(|p| p.trace())) {
            for (i, row) in trace.rows.iter().enumerate() {
                if sums.len() <= i {
                    sums.push((0.0, 0));
                }
                sums[i].0 += row.objective;
                sums[i].1 += 1;
            }
        }
        sums.into_iter().map(|(s, n)| s / n as f64).collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Every compared policy at every sweep value (or once without a sweep), on shared seeds.
pub fn monte_carlo(run: &RunConfig) -> Result<Vec<Point>> {
    let values: Vec<Option<f64>> = match &run.sweep {
        Some(sweep) => sweep.values().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let mut points = Vec::with_capacity(values.len() * run.compare.len());
    for value in values {
        let base = match (&run.sweep, value) {
            (Some(sweep), Some(v)) => sweep.apply(&run.scenario, v)?,
            _ => run.scenario.clone(),
        };
        for &policy in &run.compare {
            let config = ScenarioConfig { policy, ..base.clone() };
            let trials = run_trials(&config, &run.solver, run.jobs)?;
            let stats = CollisionStats::from_flags(trials.iter().map(TrialResult::collision))?;
            points.push(Point { sweep_value: value, policy, trials, stats });
        }
    }
    Ok(points)
}
