//! Ego-vehicle kinematics, the tracking objective, and lane-dependent safety constraints.
//!
//! The EV follows a unicycle model sampled every `dt` seconds. The yaw angle
//! is advanced first and the new heading drives the slot's displacement:
//!
//! ```text
//! θ_k = θ_{k-1} + ω_k dt
//! x_k = x_{k-1} + v_k cos(θ_k) dt
//! y_k = y_{k-1} + v_k sin(θ_k) dt
//! ```

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use crate::comm::Vehicle;
use crate::{Error, Result};

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = libm::fmod(theta, TAU);
    let t = if r < 0.0 { r + TAU } else { r };
    // The shift can round up to exactly TAU for tiny negative inputs.
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_to_pi(theta: f64) -> f64 {
    let t = normalize_angle(theta);
    if t > PI {
        t - TAU
    } else {
        t
    }
}

/// Pose of the EV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m).
    pub y: f64,
    /// Yaw angle (rad), kept in `[0, 2π)`.
    pub theta: f64,
}

impl VehicleState {
    /// Builds a pose, normalising the yaw angle.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    /// All components finite.
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Speed and yaw-rate command for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// Speed (m/s).
    pub v: f64,
    /// Yaw rate (rad/s).
    pub omega: f64,
}

/// Box constraints on the controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    /// Minimum speed (m/s).
    pub v_min: f64,
    /// Maximum speed (m/s).
    pub v_max: f64,
    /// Minimum yaw rate (rad/s).
    pub omega_min: f64,
    /// Maximum yaw rate (rad/s).
    pub omega_max: f64,
}

impl ControlBounds {
    /// Requires non-empty interiors so the barrier method has room.
    pub fn new(v_min: f64, v_max: f64, omega_min: f64, omega_max: f64) -> Result<Self> {
        let b = Self { v_min, v_max, omega_min, omega_max };
        b.validate()?;
        Ok(b)
    }

    /// Checks `min < max` on both axes and finiteness.
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v_max && self.omega_min < self.omega_max) {
            return Err(Error::InvalidArgument("control bounds need min < max"));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.omega_min.is_finite() && self.omega_max.is_finite())
        {
            return Err(Error::InvalidArgument("control bounds must be finite"));
        }
        Ok(())
    }

    /// Whether `u` satisfies every bound (inclusive).
    pub fn contains(&self, u: &ControlInput) -> bool {
        self.v_min <= u.v && u.v <= self.v_max && self.omega_min <= u.omega && u.omega <= self.omega_max
    }
}

/// Symmetric positive-definite 2×2 weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight2([[f64; 2]; 2]);

impl Weight2 {
    /// Validates symmetry and strictly positive eigenvalues.
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self> {
        if m[0][1] != m[1][0] {
            return Err(Error::InvalidArgument("weight matrix must be symmetric"));
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(m[0][0] > 0.0 && det > 0.0) {
            return Err(Error::InvalidArgument("weight matrix must be positive definite"));
        }
        Ok(Self(m))
    }

    /// The identity weight.
    pub fn identity() -> Self {
        Self([[1.0, 0.0], [0.0, 1.0]])
    }

    /// Diagonal weight `diag(a, b)`.
    pub fn diag(a: f64, b: f64) -> Result<Self> {
        Self::new([[a, 0.0], [0.0, b]])
    }

    /// Raw entries.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.0
    }

    /// `uᵀ W u`.
    pub fn quad(&self, u: [f64; 2]) -> f64 {
        let m = &self.0;
        u[0] * (m[0][0] * u[0] + m[0][1] * u[1]) + u[1] * (m[1][0] * u[0] + m[1][1] * u[1])
    }
}

/// Lane occupied by the EV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    /// Ego lane, shared with the LV.
    Ego,
    /// Target lane, shared with the TV and FV.
    Target,
}

impl Lane {
    /// Lane containing lateral position `y`, split at `boundary`.
    pub fn of(y: f64, boundary: f64) -> Self {
        if y > boundary {
            Lane::Target
        } else {
            Lane::Ego
        }
    }
}

/// Longitudinal positions of the three neighbours in one slot (m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeighborSlot {
    /// LV position.
    pub lead: f64,
    /// TV position.
    pub target: f64,
    /// FV position.
    pub follow: f64,
}

impl NeighborSlot {
    /// Position of `vehicle`.
    pub fn get(&self, vehicle: Vehicle) -> f64 {
        match vehicle {
            Vehicle::Lead => self.lead,
            Vehicle::Target => self.target,
            Vehicle::Follow => self.follow,
        }
    }

    /// Mutable position of `vehicle`.
    pub fn get_mut(&mut self, vehicle: Vehicle) -> &mut f64 {
        match vehicle {
            Vehicle::Lead => &mut self.lead,
            Vehicle::Target => &mut self.target,
            Vehicle::Follow => &mut self.follow,
        }
    }
}

/// One horizon of the trajectory subproblem.
///
/// Slot-indexed vectors (`targets`, `rho`, `lanes`, `neighbors`) hold entries
/// for slots `1..=horizon` at indices `0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningProblem {
    /// Number of slots `K`.
    pub horizon: usize,
    /// Slot length (s).
    pub dt: f64,
    /// Waypoint-tracking weight `W_e`.
    pub w_track: Weight2,
    /// Control-increment weight `W_u`.
    pub w_control: Weight2,
    /// Waypoints `(x̂_k, ŷ_k)`.
    pub targets: Vec<(f64, f64)>,
    /// Control box.
    pub bounds: ControlBounds,
    /// Base safety distance `D` (m).
    pub safe_distance: f64,
    /// Outage penalty factors `ρ_k`.
    pub rho: Vec<f64>,
    /// Lane assumed for each slot when emitting safety constraints.
    pub lanes: Vec<Lane>,
    /// Delivered neighbour positions per slot.
    pub neighbors: Vec<NeighborSlot>,
    /// EV pose at slot 0.
    pub initial_state: VehicleState,
    /// Control applied in slot 0, anchoring the first control increment.
    pub prev_control: ControlInput,
}

impl PlanningProblem {
    /// Checks horizon lengths and parameter domains.
    ///
    /// `ρ_k = 0` is accepted: it is how the uncertainty-blind baseline switches
    /// the outage term off.
    pub fn validate(&self) -> Result<()> {
        let k = self.horizon;
        if k == 0 {
            return Err(Error::InvalidArgument("horizon must be at least one slot"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument("slot length must be positive"));
        }
        if self.safe_distance.is_nan() || self.safe_distance <= 0.0 {
            return Err(Error::InvalidArgument("safe distance must be positive"));
        }
        for len in [self.targets.len(), self.rho.len(), self.lanes.len(), self.neighbors.len()] {
            if len != k {
                return Err(Error::DimensionMismatch { expected: k, found: len });
            }
        }
        if self.rho.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument("penalty factors must be non-negative"));
        }
        self.bounds.validate()?;
        if !self.initial_state.is_finite() {
            return Err(Error::InvalidArgument("initial state must be finite"));
        }
        Ok(())
    }
}

/// Planned or executed EV motion over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `K + 1` poses; index 0 is the initial state.
    pub states: Vec<VehicleState>,
    /// `K` controls; `controls[k-1]` moves `states[k-1]` to `states[k]`.
    pub controls: Vec<ControlInput>,
    /// Extra safety margin `m_d` (m).
    pub margin: f64,
}

impl Trajectory {
    /// Number of slots.
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Rolls `controls` forward through [`step_dynamics`].
    pub fn rollout(initial: VehicleState, controls: &[ControlInput], dt: f64, margin: f64) -> Self {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(initial);
        let mut s = initial;
        for u in controls {
            s = step_dynamics(s, *u, dt);
            states.push(s);
        }
        Self { states, controls: controls.to_vec(), margin }
    }

    /// Piecewise-straight path through the waypoints, moving at whatever speed
    /// and turning at whatever rate reaches each one in a single slot.
    ///
    /// Used as the first linearisation point; it ignores the control bounds.
    pub fn straight_line(initial: VehicleState, targets: &[(f64, f64)], dt: f64, margin: f64) -> Self {
        let mut states = Vec::with_capacity(targets.len() + 1);
        let mut controls = Vec::with_capacity(targets.len());
        states.push(initial);
        let (mut px, mut py) = (initial.x, initial.y);
        let mut heading = initial.theta;
        for &(tx, ty) in targets {
            let (dx, dy) = (tx - px, ty - py);
            let dist = libm::hypot(dx, dy);
            let new_heading = if dist > 1e-12 { libm::atan2(dy, dx) } else { heading };
            let omega = wrap_to_pi(new_heading - heading) / dt;
            controls.push(ControlInput { v: dist / dt, omega });
            states.push(VehicleState::new(tx, ty, new_heading));
            heading = new_heading;
            px = tx;
            py = ty;
        }
        Self { states, controls, margin }
    }
}

/// Advances the pose by one slot: heading first, then position along the new heading.
pub fn step_dynamics(state: VehicleState, control: ControlInput, dt: f64) -> VehicleState {
    let theta = state.theta + control.omega * dt;
    VehicleState::new(
        state.x + control.v * libm::cos(theta) * dt,
        state.y + control.v * libm::sin(theta) * dt,
        theta,
    )
}

/// Expansion point of one slot's displacement terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotLinearization {
    /// Reference speed `v̄_k`.
    pub v_ref: f64,
    /// Reference heading `θ̄_k`, wrapped to `(-π, π]`.
    pub theta_ref: f64,
}

impl SlotLinearization {
    /// Coefficients `(a_v, a_θ, a_0)` of `Δx/dt ≈ a_v v + a_θ θ + a_0`.
    pub fn x_coeffs(&self) -> (f64, f64, f64) {
        let (s, c) = libm::sincos(self.theta_ref);
        (c, -self.v_ref * s, self.v_ref * s * self.theta_ref)
    }

    /// Coefficients `(b_v, b_θ, b_0)` of `Δy/dt ≈ b_v v + b_θ θ + b_0`.
    pub fn y_coeffs(&self) -> (f64, f64, f64) {
        let (s, c) = libm::sincos(self.theta_ref);
        (s, self.v_ref * c, -self.v_ref * c * self.theta_ref)
    }
}

/// First-order model of the dynamics around a reference trajectory.
///
/// `v cos θ` and `v sin θ` are replaced by their Taylor expansions at
/// `(v̄_k, θ̄_k)`; the heading update is already linear.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics {
    /// Slot length (s).
    pub dt: f64,
    /// One expansion point per slot.
    pub slots: Vec<SlotLinearization>,
}

impl LinearizedDynamics {
    /// Number of slots.
    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    /// Applies slot `k`'s (0-based) affine model to `prev`.
    pub fn step(&self, k: usize, prev: VehicleState, control: ControlInput) -> VehicleState {
        let lin = &self.slots[k];
        let theta = prev.theta + control.omega * self.dt;
        // Angle relative to the expansion point, taken on the short way round.
        let theta_rel = lin.theta_ref + wrap_to_pi(theta - lin.theta_ref);
        let (xv, xt, x0) = lin.x_coeffs();
        let (yv, yt, y0) = lin.y_coeffs();
        VehicleState::new(
            prev.x + self.dt * (xv * control.v + xt * theta_rel + x0),
            prev.y + self.dt * (yv * control.v + yt * theta_rel + y0),
            theta,
        )
    }

    /// Residual `next - step(k, prev, control)` as `(x, y, θ)`, with the angle wrapped.
    pub fn residual(&self, k: usize, prev: VehicleState, next: VehicleState, control: ControlInput) -> [f64; 3] {
        let pred = self.step(k, prev, control);
        [next.x - pred.x, next.y - pred.y, wrap_to_pi(next.theta - pred.theta)]
    }

    /// Rolls `controls` through the affine model.
    pub fn rollout(&self, initial: VehicleState, controls: &[ControlInput], margin: f64) -> Trajectory {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(initial);
        let mut s = initial;
        for (k, u) in controls.iter().enumerate() {
            s = self.step(k, s, *u);
            states.push(s);
        }
        Trajectory { states, controls: controls.to_vec(), margin }
    }
}

/// Linearises the dynamics around `reference`, using slot `k`'s speed and the
/// heading it ends the slot with.
pub fn linearize_dynamics(reference: &Trajectory, dt: f64) -> LinearizedDynamics {
    let slots = reference
        .controls
        .iter()
        .zip(&reference.states[1..])
        .map(|(u, s)| SlotLinearization { v_ref: u.v, theta_ref: wrap_to_pi(s.theta) })
        .collect();
    LinearizedDynamics { dt, slots }
}

/// `Σ_k u_kᵀ W_e u_k + c_kᵀ W_u c_k` with `u_k` the waypoint error and `c_k`
/// the control increment.
pub fn tracking_cost(problem: &PlanningProblem, traj: &Trajectory) -> Result<f64> {
    let k = problem.horizon;
    if traj.controls.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: traj.controls.len() });
    }
    if traj.states.len() != k + 1 {
        return Err(Error::DimensionMismatch { expected: k + 1, found: traj.states.len() });
    }
    if problem.targets.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: problem.targets.len() });
    }
    let mut prev = problem.prev_control;
    let mut cost = 0.0;
    for ((s, u), &(tx, ty)) in traj.states[1..].iter().zip(&traj.controls).zip(&problem.targets) {
        cost += problem.w_track.quad([s.x - tx, s.y - ty]);
        cost += problem.w_control.quad([u.v - prev.v, u.omega - prev.omega]);
        prev = *u;
    }
    Ok(cost)
}

/// Which side of the neighbour the EV must stay on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    /// `x_k ≤ limit` (neighbour ahead).
    Upper,
    /// `x_k ≥ limit` (neighbour behind).
    Lower,
}

/// Longitudinal separation requirement for one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyConstraint {
    /// Planning slot, 1-based.
    pub slot: usize,
    /// Neighbour the constraint protects against.
    pub vehicle: Vehicle,
    /// Direction of the bound.
    pub side: BoundSide,
    /// Bound on `x_k`, already including `D + m_d`.
    pub limit: f64,
}

impl SafetyConstraint {
    /// Signed slack; negative when violated.
    pub fn slack(&self, x: f64) -> f64 {
        match self.side {
            BoundSide::Upper => self.limit - x,
            BoundSide::Lower => x - self.limit,
        }
    }

    /// The constraint in the form `sign · x_k + m_d ≤ rhs` with `m_d` left free.
    ///
    /// `limit` must have been built with `m_d = 0`.
    pub fn affine_in_margin(&self) -> (f64, f64) {
        match self.side {
            BoundSide::Upper => (1.0, self.limit),
            BoundSide::Lower => (-1.0, -self.limit),
        }
    }
}

/// Separation constraints for every slot under the scheduled lanes:
/// `x^LV_k - x_k ≥ D + m_d` in the ego lane, and both
/// `x^TV_k - x_k ≥ D + m_d` and `x_k - x^FV_k ≥ D + m_d` in the target lane.
pub fn safety_constraints(problem: &PlanningProblem, m_d: f64) -> Vec<SafetyConstraint> {
    let gap = problem.safe_distance + m_d;
    let mut out = Vec::with_capacity(2 * problem.horizon);
    for (k, (lane, nb)) in problem.lanes.iter().zip(&problem.neighbors).enumerate() {
        let slot = k + 1;
        match lane {
            Lane::Ego => out.push(SafetyConstraint {
                slot,
                vehicle: Vehicle::Lead,
                side: BoundSide::Upper,
                limit: nb.lead - gap,
            }),
            Lane::Target => {
                out.push(SafetyConstraint { slot, vehicle: Vehicle::Target, side: BoundSide::Upper, limit: nb.target - gap });
                out.push(SafetyConstraint { slot, vehicle: Vehicle::Follow, side: BoundSide::Lower, limit: nb.follow + gap });
            }
        }
    }
    out
}

/// First slot at which the EV is closer than `threshold` to the vehicle ahead
/// or behind it in the lane it actually occupies.
///
/// `ego` and `neighbors` are aligned slot by slot; slots beyond the shorter
/// of the two are ignored. Gaps are signed, so driving through a vehicle counts.
pub fn detect_collision(ego: &[VehicleState], neighbors: &[NeighborSlot], lane_boundary: f64, threshold: f64) -> Option<usize> {
    ego.iter().zip(neighbors).position(|(s, nb)| match Lane::of(s.y, lane_boundary) {
        Lane::Ego => nb.lead - s.x < threshold,
        Lane::Target => nb.target - s.x < threshold || s.x - nb.follow < threshold,
    })
}
