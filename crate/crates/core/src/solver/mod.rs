//! Block coordinate descent over the trajectory and power blocks.
//!
//! Each outer iteration
//! 1. refreshes the outage weight `η = Σ_k Σ_i ρ_k p_out_{i,k}` from the
//!    current powers and solves the trajectory block by the log-barrier method
//!    around the previous trajectory iterate (the first iteration linearises
//!    around the straight-line path through the waypoints);
//! 2. solves the three per-vehicle power problems, which share nothing and
//!    may run concurrently.
//!
//! Iteration stops once the objective changes by less than `bcd_tol`
//! relatively, or after `bcd_max_iter` rounds.

mod barrier;
mod power;
mod trajectory;

use alloc::vec::Vec;

pub use power::{minimize_vehicle_power, power_objective, project_budget, PowerSolve};
pub use trajectory::{solve_trajectory, MarginMode, TrajectorySolve};

use crate::comm::{margin_factor, outage_probability, ChannelParams, CsiGrid, Vehicle};
use crate::vehicle::{linearize_dynamics, tracking_cost, PlanningProblem, Trajectory};
use crate::{Error, Result};

/// Tuning of the interior-point, projected-gradient and outer loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Outer iteration cap.
    pub bcd_max_iter: usize,
    /// Relative objective change that ends the outer loop.
    pub bcd_tol: f64,
    /// Initial barrier weight `t`.
    pub barrier_t0: f64,
    /// Barrier weight growth factor.
    pub barrier_mu: f64,
    /// Stop once `#inequalities / t` falls below this.
    pub barrier_eps: f64,
    /// Dual residual tolerance of each centring step.
    pub newton_tol: f64,
    /// Newton steps allowed per centring.
    pub newton_max_iter: usize,
    /// Projected-gradient iteration cap.
    pub pg_max_iter: usize,
    /// Projected-gradient stationarity tolerance (budget-normalised).
    pub pg_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_sigma: f64,
    /// Armijo step shrink factor.
    pub armijo_shrink: f64,
    /// Armijo backtracks per iteration.
    pub armijo_max_backtracks: usize,
    /// Lower bound on the optimised margin (m).
    pub md_floor: f64,
    /// Tolerance of the budget-projection bisection (W).
    pub bisection_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            bcd_max_iter: 20,
            bcd_tol: 1e-4,
            barrier_t0: 1.0,
            barrier_mu: 10.0,
            barrier_eps: 1e-6,
            newton_tol: 1e-8,
            newton_max_iter: 100,
            pg_max_iter: 500,
            pg_tol: 1e-6,
            armijo_sigma: 1e-4,
            armijo_shrink: 0.5,
            armijo_max_backtracks: 50,
            md_floor: 1e-6,
            bisection_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    /// Checks tolerance signs and the Armijo and barrier constants.
    pub fn validate(&self) -> Result<()> {
        let positive = [self.bcd_tol, self.barrier_t0, self.barrier_eps, self.newton_tol, self.pg_tol, self.md_floor, self.bisection_tol];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("solver tolerances must be positive"));
        }
        if self.barrier_mu.is_nan() || self.barrier_mu <= 1.0 {
            return Err(Error::InvalidArgument("barrier_mu must exceed 1"));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.armijo_sigma) && unit(self.armijo_shrink)) {
            return Err(Error::InvalidArgument("Armijo constants must lie in (0, 1)"));
        }
        if self.bcd_max_iter == 0 || self.newton_max_iter == 0 {
            return Err(Error::InvalidArgument("iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Transmit powers of the three neighbours over one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSchedule {
    powers: [Vec<f64>; 3],
    budget: f64,
}

impl PowerSchedule {
    /// Validates non-negativity and the per-vehicle budget (to within `1e-9` W).
    pub fn new(powers: [Vec<f64>; 3], budget: f64) -> Result<Self> {
        let s = Self { powers, budget };
        s.validate(1e-9)?;
        Ok(s)
    }

    /// `budget / K` on every link.
    pub fn uniform(horizon: usize, budget: f64) -> Self {
        let p = budget / horizon as f64;
        Self { powers: [alloc::vec![p; horizon], alloc::vec![p; horizon], alloc::vec![p; horizon]], budget }
    }

    /// Checks `P ≥ 0` and `Σ_k P_{i,k} ≤ budget + tol` for each vehicle.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::InvalidArgument("power budget must be positive"));
        }
        let k = self.powers[0].len();
        for row in &self.powers {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: row.len() });
            }
            if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(Error::InvalidArgument("powers must be non-negative"));
            }
            if row.iter().sum::<f64>() > self.budget + tol {
                return Err(Error::InvalidArgument("power schedule exceeds the budget"));
            }
        }
        Ok(())
    }

    /// Per-vehicle budget `P_max` (W).
    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Number of slots.
    pub fn horizon(&self) -> usize {
        self.powers[0].len()
    }

    /// Powers of one vehicle, slot 1 first.
    pub fn row(&self, vehicle: Vehicle) -> &[f64] {
        &self.powers[vehicle.index()]
    }
}

/// Outage weight `η = Σ_k Σ_i ρ_k p_out_{i,k}(P_{i,k})` of the trajectory block.
pub fn outage_weight(problem: &PlanningProblem, channel: &ChannelParams, csi: &CsiGrid, powers: &PowerSchedule) -> Result<f64> {
    check_dims(problem, csi, powers)?;
    let mut eta = 0.0;
    for v in Vehicle::ALL {
        for ((rho, c), p) in problem.rho.iter().zip(csi.row(v)).zip(powers.row(v)) {
            if *rho != 0.0 {
                eta += rho * outage_probability(channel, *c, *p)?;
            }
        }
    }
    Ok(eta)
}

fn check_dims(problem: &PlanningProblem, csi: &CsiGrid, powers: &PowerSchedule) -> Result<()> {
    let k = problem.horizon;
    for found in [csi.horizon(), powers.horizon()] {
        if found != k {
            return Err(Error::DimensionMismatch { expected: k, found });
        }
    }
    Ok(())
}

/// Trajectory block with the powers held fixed, linearised around `reference`.
pub fn solve_d1(
    problem: &PlanningProblem,
    channel: &ChannelParams,
    csi: &CsiGrid,
    powers: &PowerSchedule,
    reference: &Trajectory,
    margin: MarginMode,
    config: &SolverConfig,
) -> Result<TrajectorySolve> {
    config.validate()?;
    let eta = outage_weight(problem, channel, csi, powers)?;
    let lin = linearize_dynamics(reference, problem.dt);
    solve_trajectory(problem, &lin, eta, margin, config)
}

/// Power block of one vehicle with the trajectory and margin held fixed.
pub fn solve_q1_single(
    problem: &PlanningProblem,
    channel: &ChannelParams,
    csi: &CsiGrid,
    vehicle: Vehicle,
    m_d: f64,
    budget: f64,
    config: &SolverConfig,
) -> Result<PowerSolve> {
    if csi.horizon() != problem.horizon {
        return Err(Error::DimensionMismatch { expected: problem.horizon, found: csi.horizon() });
    }
    minimize_vehicle_power(channel, csi.row(vehicle), &problem.rho, m_d, budget, config)
}

/// Which blocks [`run_bcd_with`] updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSelection {
    /// Margin handling in the trajectory block.
    pub margin: MarginMode,
    /// Whether the power block runs; otherwise powers stay at the uniform split.
    pub optimize_power: bool,
}

impl BlockSelection {
    /// Full joint optimisation.
    pub const JOINT: Self = Self { margin: MarginMode::Optimize, optimize_power: true };
}

/// Time source for per-block timings. The core crate has no clock of its own.
pub trait Clock {
    /// Seconds since an arbitrary origin.
    fn now(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 1-based outer iteration.
    pub iteration: usize,
    /// Joint objective after both block updates.
    pub objective: f64,
    /// Optimised margin after the trajectory block (m).
    pub margin: f64,
    /// Seconds spent in the trajectory block.
    pub trajectory_seconds: f64,
    /// Seconds spent in the power block.
    pub power_seconds: f64,
}

/// Objective history of one [`run_bcd`] call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BcdTrace {
    /// Outer iterations in order.
    pub rows: Vec<TraceRow>,
    /// Whether the relative-change test fired before the iteration cap.
    pub converged: bool,
}

impl BcdTrace {
    /// Objective values in iteration order.
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }
}

/// Final blocks and trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutcome {
    /// Planned trajectory (linearised-model states) with its margin.
    pub trajectory: Trajectory,
    /// Planned transmit powers.
    pub powers: PowerSchedule,
    /// Per-iteration objective and timings.
    pub trace: BcdTrace,
}

/// Joint objective: tracking cost plus `Σ_k Σ_i ρ_k p_out_{i,k} / (1 - e^{-m_d})`.
pub fn joint_objective(
    problem: &PlanningProblem,
    channel: &ChannelParams,
    csi: &CsiGrid,
    powers: &PowerSchedule,
    trajectory: &Trajectory,
) -> Result<f64> {
    let tracking = tracking_cost(problem, trajectory)?;
    let eta = outage_weight(problem, channel, csi, powers)?;
    if eta == 0.0 {
        return Ok(tracking);
    }
    if trajectory.margin <= 0.0 {
        return Err(Error::Pole(trajectory.margin));
    }
    Ok(tracking + eta * margin_factor(trajectory.margin))
}

/// Joint optimisation of trajectory, margin and powers.
pub fn run_bcd(problem: &PlanningProblem, channel: &ChannelParams, csi: &CsiGrid, budget: f64, config: &SolverConfig) -> Result<BcdOutcome> {
    run_bcd_with(problem, channel, csi, budget, config, BlockSelection::JOINT, &NoClock)
}

/// [`run_bcd`] with a choice of active blocks and a clock for the trace timings.
pub fn run_bcd_with(
    problem: &PlanningProblem,
    channel: &ChannelParams,
    csi: &CsiGrid,
    budget: f64,
    config: &SolverConfig,
    blocks: BlockSelection,
    clock: &dyn Clock,
) -> Result<BcdOutcome> {
    let reference = Trajectory::straight_line(problem.initial_state, &problem.targets, problem.dt, 1.0);
    run_bcd_from(problem, channel, csi, budget, config, blocks, reference, clock)
}

/// [`run_bcd_with`] with the first linearisation taken around `reference`
/// instead of the straight-line path through the waypoints.
#[allow(clippy::too_many_arguments)]
pub fn run_bcd_from(
    problem: &PlanningProblem,
    channel: &ChannelParams,
    csi: &CsiGrid,
    budget: f64,
    config: &SolverConfig,
    blocks: BlockSelection,
    mut reference: Trajectory,
    clock: &dyn Clock,
) -> Result<BcdOutcome> {
    config.validate()?;
    problem.validate()?;
    if reference.horizon() != problem.horizon {
        return Err(Error::DimensionMismatch { expected: problem.horizon, found: reference.horizon() });
    }
    let mut powers = PowerSchedule::uniform(problem.horizon, budget);
    check_dims(problem, csi, &powers)?;
    let mut trace = BcdTrace::default();
    let mut previous: Option<f64> = None;

    for iteration in 1..=config.bcd_max_iter {
        let t0 = clock.now();
        let traj = solve_d1(problem, channel, csi, &powers, &reference, blocks.margin, config)?.trajectory;
        let t1 = clock.now();
        if blocks.optimize_power && problem.rho.iter().any(|r| *r != 0.0) {
            powers = solve_power_block(problem, channel, csi, traj.margin, budget, config)?;
        }
        let t2 = clock.now();
        let objective = joint_objective(problem, channel, csi, &powers, &traj)?;
        trace.rows.push(TraceRow {
            iteration,
            objective,
            margin: traj.margin,
            trajectory_seconds: t1 - t0,
            power_seconds: t2 - t1,
        });
        reference = traj;
        if let Some(prev) = previous {
            let scale = prev.abs().max(objective.abs());
            if (prev - objective).abs() <= config.bcd_tol * scale {
                trace.converged = true;
                break;
            }
        }
        previous = Some(objective);
    }
    Ok(BcdOutcome { trajectory: reference, powers, trace })
}

fn solve_power_block(
    problem: &PlanningProblem,
    channel: &ChannelParams,
    csi: &CsiGrid,
    m_d: f64,
    budget: f64,
    config: &SolverConfig,
) -> Result<PowerSchedule> {
    let solve = |v: Vehicle| solve_q1_single(problem, channel, csi, v, m_d, budget, config).map(|s| s.powers);
    #[cfg(feature = "parallel")]
    let rows: Vec<Result<Vec<f64>>> = {
        use rayon::prelude::*;
        Vehicle::ALL.par_iter().map(|v| solve(*v)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<Vec<f64>>> = Vehicle::ALL.iter().map(|v| solve(*v)).collect();
    let mut it = rows.into_iter();
    let mut next = || it.next().expect("three vehicles");
    let powers = [next()?, next()?, next()?];
    Ok(PowerSchedule { powers, budget })
}
