//! Four-vehicle lane-change scenario with communication-induced position errors.
//!
//! The EV starts in the ego lane behind a slow lead vehicle (LV) and merges
//! into the target lane between a target vehicle (TV) ahead and a following
//! vehicle (FV) behind. Neighbours drive straight in their lanes with a common
//! constant acceleration, independently of what the EV does.
//!
//! Each planning step draws fresh CSI for every (vehicle, slot) link of the
//! horizon, fixes the uplink powers according to the policy, turns the
//! resulting outage probabilities into bounded position errors, and plans on
//! the delivered (ground truth plus error) neighbour positions. Collisions are
//! judged on ground truth.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comm::{outage_probability, position_error_bound, sample_position_error_with, ChannelParams, CsiGrid, Vehicle};
use crate::solver::{run_bcd_from, run_bcd_with, solve_q1_single, BcdOutcome, BcdTrace, BlockSelection, MarginMode, NoClock, PowerSchedule, SolverConfig};
use crate::vehicle::{
    detect_collision, step_dynamics, ControlBounds, ControlInput, Lane, NeighborSlot, PlanningProblem, Trajectory, VehicleState,
    Weight2,
};
use crate::{Error, Result};

/// How the EV plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Joint margin, trajectory and power optimisation.
    Proposed,
    /// Outage ignored: `ρ = 0`, no margin, uniform powers.
    NoUncertainty,
    /// Margin optimised against the outage of a uniform power split.
    ConstantPower,
}

impl Policy {
    /// All policies in reporting order.
    pub const ALL: [Policy; 3] = [Policy::Proposed, Policy::NoUncertainty, Policy::ConstantPower];

    /// Short kebab-case name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Policy::Proposed => "proposed",
            Policy::NoUncertainty => "no-uncertainty",
            Policy::ConstantPower => "const-power",
        }
    }

    /// Inverse of [`Policy::name`].
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    fn blocks(self) -> BlockSelection {
        match self {
            Policy::Proposed => BlockSelection::JOINT,
            Policy::NoUncertainty => BlockSelection { margin: MarginMode::Fixed(0.0), optimize_power: false },
            Policy::ConstantPower => BlockSelection { margin: MarginMode::Optimize, optimize_power: false },
        }
    }
}

impl core::fmt::Display for Policy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// When the EV re-plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plan once and execute the whole horizon.
    OneShot,
    /// Re-plan every slot and execute only the first control.
    RecedingHorizon,
}

impl Mode {
    /// Name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Mode::OneShot => "oneshot",
            Mode::RecedingHorizon => "receding",
        }
    }

    /// Inverse of [`Mode::name`].
    pub fn from_name(name: &str) -> Option<Self> {
        [Mode::OneShot, Mode::RecedingHorizon].into_iter().find(|m| m.name() == name)
    }
}

/// How delivered positions deviate from ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorModel {
    /// Uniform draw within the outage-dependent bound.
    Sampled,
    /// The full bound, signed so that every neighbour looks farther away than it is.
    WorstCase,
}

impl ErrorModel {
    /// Name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            ErrorModel::Sampled => "sampled",
            ErrorModel::WorstCase => "worst-case",
        }
    }

    /// Inverse of [`ErrorModel::name`].
    pub fn from_name(name: &str) -> Option<Self> {
        [ErrorModel::Sampled, ErrorModel::WorstCase].into_iter().find(|m| m.name() == name)
    }
}

/// Everything that defines one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Lane width (m); the ego lane spans `[0, w]` and the target lane `[w, 2w]`.
    pub lane_width: f64,
    /// Initial `(x, y)` of EV, LV, TV, FV (m).
    pub starts: [(f64, f64); 4],
    /// Initial speeds of EV, LV, TV, FV (km/h).
    pub speeds_kmh: [f64; 4],
    /// Common acceleration of LV, TV and FV (m/s²).
    pub accel: f64,
    /// Planning horizon `K`.
    pub horizon: usize,
    /// Slots simulated per trial.
    pub steps: usize,
    /// Slot length (s).
    pub dt: f64,
    /// Uplink model.
    pub channel: ChannelParams,
    /// Per-vehicle power budget over one horizon (W).
    pub budget: f64,
    /// Base safety distance `D` (m).
    pub safe_distance: f64,
    /// Centre-to-centre gap below which two vehicles collide (m).
    pub collision_distance: f64,
    /// Penalty factors `ρ_k` by position in the horizon.
    pub rho: Vec<f64>,
    /// EV control box.
    pub bounds: ControlBounds,
    /// Waypoint-tracking weight.
    pub w_track: Weight2,
    /// Control-increment weight.
    pub w_control: Weight2,
    /// Slot at which the lateral reference starts moving towards the target lane.
    pub turn_start: usize,
    /// Slot at which the lateral reference reaches the target-lane centre.
    pub turn_end: usize,
    /// Planning policy.
    pub policy: Policy,
    /// Re-planning mode.
    pub mode: Mode,
    /// Position-error model.
    pub error_model: ErrorModel,
    /// Monte Carlo trial count.
    pub trials: usize,
    /// Base seed; trial `i` uses stream `i` of this seed.
    pub seed: u64,
}

/// Km/h to m/s.
pub fn kmh_to_ms(v: f64) -> f64 {
    v / 3.6
}

/// dBm to W.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    libm::pow(10.0, (dbm - 30.0) / 10.0)
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let sigma_sq = dbm_to_watts(-96.0) * 10e6;
        Self {
            lane_width: 3.72,
            starts: [(20.0, 1.85), (30.0, 1.85), (40.0, 5.55), (13.0, 5.55)],
            speeds_kmh: [7.2, 5.0, 25.0, 7.9],
            accel: 1.0,
            horizon: 6,
            steps: 6,
            dt: 1.0,
            channel: ChannelParams::new(0.3, 3.5, sigma_sq, 2.0, 0.05, 0.01).expect("valid channel defaults"),
            budget: dbm_to_watts(30.0),
            safe_distance: 8.7,
            collision_distance: 4.7,
            rho: alloc::vec![1.0, 10.0, 10.0, 10.0, 10.0, 10.0],
            bounds: ControlBounds::new(0.0, 15.0, -0.5, 0.5).expect("valid bound defaults"),
            w_track: Weight2::identity(),
            w_control: Weight2::identity(),
            turn_start: 2,
            turn_end: 4,
            policy: Policy::Proposed,
            mode: Mode::RecedingHorizon,
            error_model: ErrorModel::Sampled,
            trials: 100,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Checks the scenario for internal consistency.
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(Error::InvalidArgument("lane width must be positive"));
        }
        if self.speeds_kmh.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("speeds must be non-negative"));
        }
        if self.starts.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) || !self.accel.is_finite() {
            return Err(Error::InvalidArgument("starts and acceleration must be finite"));
        }
        if self.horizon == 0 || self.steps == 0 || self.trials == 0 {
            return Err(Error::InvalidArgument("horizon, steps and trials must be at least one"));
        }
        if self.mode == Mode::OneShot && self.steps > self.horizon {
            return Err(Error::InvalidArgument("one-shot runs cannot simulate past the horizon"));
        }
        if self.rho.len() != self.horizon {
            return Err(Error::DimensionMismatch { expected: self.horizon, found: self.rho.len() });
        }
        if self.rho.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument("penalty factors must be positive"));
        }
        if !(self.dt > 0.0 && self.budget > 0.0 && self.safe_distance > 0.0 && self.collision_distance > 0.0) {
            return Err(Error::InvalidArgument("slot length, budget and distances must be positive"));
        }
        if self.turn_end < self.turn_start {
            return Err(Error::InvalidArgument("turn must end after it starts"));
        }
        self.bounds.validate()
    }

    /// Lateral coordinate separating the two lanes.
    pub fn lane_boundary(&self) -> f64 {
        self.lane_width
    }

    /// Pose of the EV at slot 0, heading along the road.
    pub fn ego_start(&self) -> VehicleState {
        VehicleState::new(self.starts[0].0, self.starts[0].1, 0.0)
    }

    /// Speed of the EV at slot 0 (m/s).
    pub fn ego_speed(&self) -> f64 {
        kmh_to_ms(self.speeds_kmh[0])
    }

    /// Ground-truth longitudinal neighbour positions at absolute slot `t`.
    pub fn neighbors_at(&self, t: usize) -> NeighborSlot {
        let time = t as f64 * self.dt;
        let pos = |i: usize| self.starts[i].0 + kmh_to_ms(self.speeds_kmh[i]) * time + 0.5 * self.accel * time * time;
        NeighborSlot { lead: pos(1), target: pos(2), follow: pos(3) }
    }

    /// Reference waypoint at absolute slot `t`: constant initial speed along the
    /// road, lateral position moving linearly from the ego-lane start to the
    /// target-lane centre between `turn_start` and `turn_end`.
    pub fn waypoint(&self, t: usize) -> (f64, f64) {
        let x = self.starts[0].0 + self.ego_speed() * t as f64 * self.dt;
        let (y0, y1) = (self.starts[0].1, self.starts[2].1);
        let y = if t <= self.turn_start {
            y0
        } else if t >= self.turn_end {
            y1
        } else {
            let frac = (t - self.turn_start) as f64 / (self.turn_end - self.turn_start) as f64;
            y0 + frac * (y1 - y0)
        };
        (x, y)
    }
}

/// Everything recorded about one executed slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    /// Absolute slot reached by this step (1-based).
    pub slot: usize,
    /// EV pose at the end of the slot.
    pub ego: VehicleState,
    /// Control applied during the slot.
    pub control: ControlInput,
    /// Ground-truth neighbour positions at the end of the slot.
    pub truth: NeighborSlot,
    /// Neighbour positions the planner used for this slot.
    pub delivered: NeighborSlot,
    /// Uplink powers for this slot, ordered as [`Vehicle::ALL`] (W).
    pub powers: [f64; 3],
    /// Outage probabilities for this slot, ordered as [`Vehicle::ALL`].
    pub outage: [f64; 3],
    /// Margin of the plan that produced the control (m).
    pub margin: f64,
    /// Set when the planner was infeasible and the EV held `v_min` without turning.
    pub fallback: bool,
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Trial index within the Monte Carlo run.
    pub trial: usize,
    /// Policy that drove the EV.
    pub policy: Policy,
    /// EV pose and neighbour positions at slot 0.
    pub initial: (VehicleState, NeighborSlot),
    /// Executed slots in order.
    pub slots: Vec<SlotRecord>,
    /// First slot with a ground-truth collision.
    pub collision_slot: Option<usize>,
    /// Every planning call in order, including infeasible ones.
    pub plans: Vec<PlannedWindow>,
}

impl TrialResult {
    /// Whether any slot collided.
    pub fn collision(&self) -> bool {
        self.collision_slot.is_some()
    }

    /// Whether the EV ended in the target lane.
    pub fn reached_target_lane(&self, lane_boundary: f64) -> bool {
        self.slots.last().is_some_and(|s| Lane::of(s.ego.y, lane_boundary) == Lane::Target)
    }
}

/// Collision ratio over a set of trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionStats {
    /// Trials run.
    pub trials: usize,
    /// Trials with at least one collision.
    pub collisions: usize,
    /// `collisions / trials`.
    pub ratio: f64,
    /// 95% normal-approximation half-width `1.96 √(p(1-p)/n)`.
    pub confidence_halfwidth: f64,
}

impl CollisionStats {
    /// Aggregates collision flags.
    pub fn from_flags(flags: impl IntoIterator<Item = bool>) -> Result<Self> {
        let (mut trials, mut collisions) = (0usize, 0usize);
        for f in flags {
            trials += 1;
            collisions += usize::from(f);
        }
        if trials == 0 {
            return Err(Error::InvalidArgument("no trials to aggregate"));
        }
        let n = trials as f64;
        let ratio = collisions as f64 / n;
        let confidence_halfwidth = 1.96 * libm::sqrt(ratio * (1.0 - ratio) / n);
        Ok(Self { trials, collisions, ratio, confidence_halfwidth })
    }
}

/// Generator for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Planning problem and channel inputs of one step, before the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningInputs {
    /// Problem with delivered neighbour positions filled in.
    pub problem: PlanningProblem,
    /// CSI of every link in the window.
    pub csi: CsiGrid,
    /// Powers fixed by the policy.
    pub powers: PowerSchedule,
    /// Outage per link, `[vehicle][slot]`.
    pub outage: [Vec<f64>; 3],
}

/// Penalty factors and margin mode a policy plans with.
pub fn baseline_policy(policy: Policy, rho: &[f64]) -> (Vec<f64>, BlockSelection) {
    let rho = match policy {
        Policy::NoUncertainty => alloc::vec![0.0; rho.len()],
        Policy::Proposed | Policy::ConstantPower => rho.to_vec(),
    };
    (rho, policy.blocks())
}

/// Builds the planning window starting at absolute slot `t` from `state`.
///
/// Draws the window's CSI grid first and then one position error per link,
/// vehicle-major, so that every policy consumes the generator identically.
pub fn build_planning_inputs<R: rand::Rng + ?Sized>(
    config: &ScenarioConfig,
    solver: &SolverConfig,
    t: usize,
    state: VehicleState,
    prev_control: ControlInput,
    rng: &mut R,
) -> Result<PlanningInputs> {
    let k_len = config.horizon;
    let csi = CsiGrid::sample(k_len, rng);
    let (rho, _) = baseline_policy(config.policy, &config.rho);
    let powers = match config.policy {
        Policy::Proposed => {
            let mut rows: [Vec<f64>; 3] = Default::default();
            let probe = probe_problem(config, &rho);
            for v in Vehicle::ALL {
                // The per-vehicle power optimum does not depend on the margin.
                rows[v.index()] = solve_q1_single(&probe, &config.channel, &csi, v, 1.0, config.budget, solver)?.powers;
            }
            PowerSchedule::new(rows, config.budget)?
        }
        Policy::NoUncertainty | Policy::ConstantPower => PowerSchedule::uniform(k_len, config.budget),
    };
    let mut outage: [Vec<f64>; 3] = Default::default();
    for v in Vehicle::ALL {
        outage[v.index()] = csi
            .row(v)
            .iter()
            .zip(powers.row(v))
            .map(|(c, p)| outage_probability(&config.channel, *c, *p))
            .collect::<Result<_>>()?;
    }
    let ego_speed = prev_control.v.max(0.0);
    let mut neighbors: Vec<NeighborSlot> = (1..=k_len).map(|k| config.neighbors_at(t + k)).collect();
    for v in Vehicle::ALL {
        for (k, nb) in neighbors.iter_mut().enumerate() {
            let p_out = outage[v.index()][k];
            let sampled = sample_position_error_with(&config.channel, p_out, ego_speed, rng);
            let delta = match config.error_model {
                ErrorModel::Sampled => sampled,
                ErrorModel::WorstCase => {
                    let bound = position_error_bound(&config.channel, p_out, ego_speed);
                    match v {
                        Vehicle::Lead | Vehicle::Target => bound,
                        Vehicle::Follow => -bound,
                    }
                }
            };
            *nb.get_mut(v) += delta;
        }
    }
    let targets: Vec<(f64, f64)> = (1..=k_len).map(|k| config.waypoint(t + k)).collect();
    let lanes = targets.iter().map(|(_, y)| Lane::of(*y, config.lane_boundary())).collect();
    let problem = PlanningProblem {
        horizon: k_len,
        dt: config.dt,
        w_track: config.w_track,
        w_control: config.w_control,
        targets,
        bounds: config.bounds,
        safe_distance: config.safe_distance,
        rho,
        lanes,
        neighbors,
        initial_state: state,
        prev_control,
    };
    Ok(PlanningInputs { problem, csi, powers, outage })
}

// Only the horizon and penalties matter to the power block.
fn probe_problem(config: &ScenarioConfig, rho: &[f64]) -> PlanningProblem {
    let k_len = config.horizon;
    PlanningProblem {
        horizon: k_len,
        dt: config.dt,
        w_track: config.w_track,
        w_control: config.w_control,
        targets: alloc::vec![(0.0, 0.0); k_len],
        bounds: config.bounds,
        safe_distance: config.safe_distance,
        rho: rho.to_vec(),
        lanes: alloc::vec![Lane::Ego; k_len],
        neighbors: alloc::vec![NeighborSlot::default(); k_len],
        initial_state: config.ego_start(),
        prev_control: ControlInput { v: config.ego_speed(), omega: 0.0 },
    }
}

/// A planned horizon ready to execute.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedWindow {
    /// Absolute slot the window starts at.
    pub slot: usize,
    /// Inputs the plan was computed from.
    pub inputs: PlanningInputs,
    /// Solver output, or `None` when the planner was infeasible.
    pub outcome: Option<BcdOutcome>,
}

impl PlannedWindow {
    /// Planned controls, if the planner succeeded.
    pub fn controls(&self) -> Option<&[ControlInput]> {
        self.outcome.as_ref().map(|o| o.trajectory.controls.as_slice())
    }

    /// Planned margin (m); zero when the planner failed.
    pub fn margin(&self) -> f64 {
        self.outcome.as_ref().map_or(0.0, |o| o.trajectory.margin)
    }

    /// Objective trace of the solve, if the planner succeeded.
    pub fn trace(&self) -> Option<&BcdTrace> {
        self.outcome.as_ref().map(|o| &o.trace)
    }
}

/// Draws the window inputs and solves the planning problem under the configured policy.
///
/// With a `warm_start` (the previous plan's controls) the first linearisation
/// follows those controls shifted by one slot; if that point leaves the
/// problem infeasible the straight-line reference is tried as well.
#[allow(clippy::too_many_arguments)]
pub fn plan_window<R: rand::Rng + ?Sized>(
    config: &ScenarioConfig,
    solver: &SolverConfig,
    t: usize,
    state: VehicleState,
    prev_control: ControlInput,
    warm_start: Option<&[ControlInput]>,
    rng: &mut R,
) -> Result<PlannedWindow> {
    let inputs = build_planning_inputs(config, solver, t, state, prev_control, rng)?;
    let (_, blocks) = baseline_policy(config.policy, &config.rho);
    let (problem, channel, csi) = (&inputs.problem, &config.channel, &inputs.csi);
    let warm = warm_start.filter(|c| c.len() > 1).map(|c| {
        let mut shifted: Vec<ControlInput> = c[1..].to_vec();
        shifted.resize(config.horizon, *shifted.last().expect("non-empty"));
        Trajectory::rollout(state, &shifted, config.dt, 1.0)
    });
    let mut result = match warm {
        Some(reference) => run_bcd_from(problem, channel, csi, config.budget, solver, blocks, reference, &NoClock),
        None => Err(Error::Infeasible { constraint: 0, slot: 0 }),
    };
    if matches!(result, Err(Error::Infeasible { .. })) {
        result = run_bcd_with(problem, channel, csi, config.budget, solver, blocks, &NoClock);
    }
    match result {
        Ok(out) => Ok(PlannedWindow { slot: t, inputs, outcome: Some(out) }),
        Err(Error::Infeasible { .. }) => Ok(PlannedWindow { slot: t, inputs, outcome: None }),
        Err(e) => Err(e),
    }
}

/// Runs one trial end to end.
pub fn run_trial(config: &ScenarioConfig, solver: &SolverConfig, trial: usize) -> Result<TrialResult> {
    config.validate()?;
    solver.validate()?;
    let mut rng = trial_rng(config.seed, trial);
    let mut state = config.ego_start();
    let mut prev = ControlInput { v: config.ego_speed(), omega: 0.0 };
    let mut slots = Vec::with_capacity(config.steps);
    let mut plans = Vec::new();
    let hold = ControlInput { v: config.bounds.v_min, omega: 0.0 };

    let mut last_plan: Option<Vec<ControlInput>> = None;
    let mut t = 0;
    while t < config.steps {
        let window = plan_window(config, solver, t, state, prev, last_plan.as_deref(), &mut rng)?;
        last_plan = window.controls().map(<[ControlInput]>::to_vec);
        let execute = match config.mode {
            Mode::RecedingHorizon => 1,
            Mode::OneShot => config.steps - t,
        };
        for k in 0..execute {
            let (control, fallback) = match window.controls() {
                Some(c) => (c[k], false),
                None => (hold, true),
            };
            state = step_dynamics(state, control, config.dt);
            prev = control;
            t += 1;
            let pick = |v: Vehicle| window.inputs.powers.row(v)[k];
            slots.push(SlotRecord {
                slot: t,
                ego: state,
                control,
                truth: config.neighbors_at(t),
                delivered: window.inputs.problem.neighbors[k],
                powers: Vehicle::ALL.map(pick),
                outage: Vehicle::ALL.map(|v| window.inputs.outage[v.index()][k]),
                margin: window.margin(),
                fallback,
            });
        }
        plans.push(window);
    }
    let ego: Vec<VehicleState> = slots.iter().map(|s| s.ego).collect();
    let truth: Vec<NeighborSlot> = slots.iter().map(|s| s.truth).collect();
    let collision_slot = detect_collision(&ego, &truth, config.lane_boundary(), config.collision_distance).map(|i| slots[i].slot);
    Ok(TrialResult {
        trial,
        policy: config.policy,
        initial: (config.ego_start(), config.neighbors_at(0)),
        slots,
        collision_slot,
        plans,
    })
}

/// Runs `config.trials` trials one after another and aggregates collisions.
pub fn run_monte_carlo(config: &ScenarioConfig, solver: &SolverConfig) -> Result<CollisionStats> {
    let mut flags = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        flags.push(run_trial(config, solver, trial)?.collision());
    }
    CollisionStats::from_flags(flags)
}
