//! Trajectory block: the margin-regularised tracking problem under linearised dynamics.
//!
//! Decision vector `z = [v_1..v_K, ω_1..ω_K, m_d]`. Because the linearised
//! dynamics are affine and the heading is a running sum of yaw rates, every
//! state is an affine function of `z`; the equality constraints are eliminated
//! up front and each Newton step of the barrier method works directly in the
//! `2K + 1` free variables.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::barrier::{self, BarrierParams, Inequalities, Objective};
use super::SolverConfig;
use crate::comm::margin_factor;
use crate::vehicle::{safety_constraints, wrap_to_pi, ControlInput, LinearizedDynamics, PlanningProblem, Trajectory, Weight2};
use crate::{Error, Result};

/// How the safety margin enters the trajectory block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginMode {
    /// `m_d ≥ md_floor` is a decision variable.
    Optimize,
    /// `m_d` is pinned; the regulariser is dropped when its weight is zero.
    Fixed(f64),
}

/// Output of [`solve_trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolve {
    /// Controls, margin, and the states of the linearised model.
    pub trajectory: Trajectory,
    /// Tracking cost plus `η / (1 - e^{-m_d})`.
    pub objective: f64,
    /// Duality-gap bound `m / t` of the last barrier stage.
    pub gap_bound: f64,
    /// Dual residual `‖∇f + Gᵀλ‖∞` at the last barrier stage.
    pub kkt_residual: f64,
}

/// States as affine maps of the decision vector.
struct CondensedModel {
    x_rows: Vec<DVector<f64>>,
    x_const: Vec<f64>,
    y_rows: Vec<DVector<f64>>,
    y_const: Vec<f64>,
}

impl CondensedModel {
    fn build(problem: &PlanningProblem, lin: &LinearizedDynamics, n: usize) -> Self {
        let k_len = problem.horizon;
        let dt = problem.dt;
        let s0 = problem.initial_state;
        let mut theta_row = DVector::zeros(n);
        let mut theta_const = wrap_to_pi(s0.theta);
        let mut x_row = DVector::zeros(n);
        let mut y_row = DVector::zeros(n);
        let (mut x_c, mut y_c) = (s0.x, s0.y);
        let mut model = Self {
            x_rows: Vec::with_capacity(k_len),
            x_const: Vec::with_capacity(k_len),
            y_rows: Vec::with_capacity(k_len),
            y_const: Vec::with_capacity(k_len),
        };
        for k in 0..k_len {
            theta_row[k_len + k] += dt;
            // Keep the running heading on the same branch as the expansion point.
            let lin_k = lin.slots[k];
            let shift = theta_const - (lin_k.theta_ref + wrap_to_pi(theta_const - lin_k.theta_ref));
            let theta_c = theta_const - shift;
            let (xv, xt, x0) = lin_k.x_coeffs();
            let (yv, yt, y0) = lin_k.y_coeffs();
            x_row += &theta_row * (dt * xt);
            x_row[k] += dt * xv;
            x_c += dt * (xt * theta_c + x0);
            y_row += &theta_row * (dt * yt);
            y_row[k] += dt * yv;
            y_c += dt * (yt * theta_c + y0);
            model.x_rows.push(x_row.clone());
            model.x_const.push(x_c);
            model.y_rows.push(y_row.clone());
            model.y_const.push(y_c);
            theta_const = theta_c;
        }
        model
    }
}

/// `½ zᵀ Q z + gᵀ z + c + η / (1 - e^{-m})`.
struct TrackingObjective {
    q: DMatrix<f64>,
    g: DVector<f64>,
    c: f64,
    eta: f64,
    margin_index: Option<usize>,
}

impl TrackingObjective {
    fn new(n: usize, eta: f64, margin_index: Option<usize>) -> Self {
        Self { q: DMatrix::zeros(n, n), g: DVector::zeros(n), c: 0.0, eta, margin_index }
    }

    /// Adds `rᵀ W r` for `r = [ra·z + ca, rb·z + cb]`.
    fn add_weighted_pair(&mut self, ra: &DVector<f64>, ca: f64, rb: &DVector<f64>, cb: f64, w: &Weight2) {
        let m = w.matrix();
        let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
        self.q += (ra * ra.transpose()) * (2.0 * a);
        self.q += (ra * rb.transpose() + rb * ra.transpose()) * (2.0 * b);
        self.q += (rb * rb.transpose()) * (2.0 * d);
        self.g += ra * (2.0 * (a * ca + b * cb));
        self.g += rb * (2.0 * (b * ca + d * cb));
        self.c += w.quad([ca, cb]);
    }

    fn quadratic_part(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.q * z)) + self.g.dot(z) + self.c
    }
}

impl Objective for TrackingObjective {
    fn value(&self, z: &DVector<f64>) -> f64 {
        let mut v = self.quadratic_part(z);
        if let Some(i) = self.margin_index {
            if z[i] <= 0.0 {
                return f64::INFINITY;
            }
            v += self.eta * margin_factor(z[i]);
        }
        v
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.q * z + &self.g;
        if let Some(i) = self.margin_index {
            let e = libm::exp(-z[i]);
            let den = -libm::expm1(-z[i]);
            g[i] -= self.eta * e / (den * den);
        }
        g
    }

    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.q.clone();
        if let Some(i) = self.margin_index {
            let e = libm::exp(-z[i]);
            let den = -libm::expm1(-z[i]);
            h[(i, i)] += self.eta * e * (1.0 + e) / (den * den * den);
        }
        h
    }
}

/// Phase I: `min s + ε‖z - z0‖²` over `(z, s)`, quitting once `s < 0`.
struct PhaseOne {
    anchor: DVector<f64>,
    prox: f64,
}

impl Objective for PhaseOne {
    fn value(&self, z: &DVector<f64>) -> f64 {
        let n = self.anchor.len();
        z[n] + self.prox * (z.rows(0, n) - &self.anchor).norm_squared()
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.anchor.len();
        let mut g = DVector::zeros(n + 1);
        g.rows_mut(0, n).copy_from(&((z.rows(0, n) - &self.anchor) * (2.0 * self.prox)));
        g[n] = 1.0;
        g
    }

    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.anchor.len();
        let mut h = DMatrix::zeros(z.len(), z.len());
        for i in 0..n {
            h[(i, i)] = 2.0 * self.prox;
        }
        h
    }
}

pub(crate) fn barrier_params(config: &SolverConfig) -> BarrierParams {
    BarrierParams {
        t0: config.barrier_t0,
        mu: config.barrier_mu,
        eps: config.barrier_eps,
        kkt_tol: config.newton_tol,
        max_newton: config.newton_max_iter,
    }
}

/// Solves the trajectory block for a given outage weight
/// `η = Σ_k Σ_i ρ_k p_out_{i,k}`, with the dynamics linearised by `lin`.
///
/// With `η = 0` the margin has no force pulling it up, so it is pinned at
/// `md_floor` rather than left to the barrier's centring.
pub fn solve_trajectory(
    problem: &PlanningProblem,
    lin: &LinearizedDynamics,
    eta: f64,
    margin: MarginMode,
    config: &SolverConfig,
) -> Result<TrajectorySolve> {
    problem.validate()?;
    if lin.horizon() != problem.horizon {
        return Err(Error::DimensionMismatch { expected: problem.horizon, found: lin.horizon() });
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument("outage weight must be finite and non-negative"));
    }
    let margin = match margin {
        MarginMode::Optimize if eta == 0.0 => MarginMode::Fixed(config.md_floor),
        other => other,
    };
    let k_len = problem.horizon;
    let (n, margin_index, fixed_margin) = match margin {
        MarginMode::Optimize => (2 * k_len + 1, Some(2 * k_len), 0.0),
        MarginMode::Fixed(m) => {
            if m < 0.0 {
                return Err(Error::InvalidArgument("fixed margin must be non-negative"));
            }
            if eta > 0.0 && m <= 0.0 {
                return Err(Error::Pole(m));
            }
            (2 * k_len, None, m)
        }
    };
    let model = CondensedModel::build(problem, lin, n);

    let mut obj = TrackingObjective::new(n, if margin_index.is_some() { eta } else { 0.0 }, margin_index);
    let unit = |i: usize| {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        e
    };
    for k in 0..k_len {
        let (tx, ty) = problem.targets[k];
        obj.add_weighted_pair(&model.x_rows[k], model.x_const[k] - tx, &model.y_rows[k], model.y_const[k] - ty, &problem.w_track);
        let (dv, cv, dw, cw) = if k == 0 {
            (unit(0), -problem.prev_control.v, unit(k_len), -problem.prev_control.omega)
        } else {
            (unit(k) - unit(k - 1), 0.0, unit(k_len + k) - unit(k_len + k - 1), 0.0)
        };
        obj.add_weighted_pair(&dv, cv, &dw, cw, &problem.w_control);
    }
    let fixed_term = match (margin_index, fixed_margin) {
        (None, m) if eta > 0.0 => eta * margin_factor(m),
        _ => 0.0,
    };

    let b = problem.bounds;
    let mut box_rows = Vec::with_capacity(4 * k_len + 1);
    for k in 0..k_len {
        box_rows.push((unit(k), b.v_max));
        box_rows.push((-unit(k), -b.v_min));
        box_rows.push((unit(k_len + k), b.omega_max));
        box_rows.push((-unit(k_len + k), -b.omega_min));
    }
    if let Some(i) = margin_index {
        box_rows.push((-unit(i), -config.md_floor));
    }
    let constraints = safety_constraints(problem, 0.0);
    let mut safety_rows = Vec::with_capacity(constraints.len());
    for sc in &constraints {
        let k = sc.slot - 1;
        let (sign, rhs) = sc.affine_in_margin();
        let mut row = &model.x_rows[k] * sign;
        let mut bound = rhs - sign * model.x_const[k];
        match margin_index {
            Some(i) => row[i] += 1.0,
            None => bound -= fixed_margin,
        }
        safety_rows.push((row, bound));
    }

    let z0 = interior_start(problem, lin, n, margin_index, config);
    let params = barrier_params(config);
    let z_feasible = find_strictly_feasible(&box_rows, &safety_rows, z0, &params, &constraints)?;

    let mut all_rows = box_rows;
    all_rows.extend(safety_rows);
    let ineq = Inequalities::from_rows(&all_rows, n);
    let out = barrier::minimize(&obj, &ineq, z_feasible, &params, |_| false)?;

    let z = &out.z;
    let controls: Vec<ControlInput> = (0..k_len).map(|k| ControlInput { v: z[k], omega: z[k_len + k] }).collect();
    let m_d = margin_index.map_or(fixed_margin, |i| z[i]);
    let trajectory = lin.rollout(problem.initial_state, &controls, m_d);
    let objective = obj.value(z) + fixed_term;
    Ok(TrajectorySolve { trajectory, objective, gap_bound: out.gap_bound, kkt_residual: out.kkt_residual })
}

fn interior_start(
    problem: &PlanningProblem,
    lin: &LinearizedDynamics,
    n: usize,
    margin_index: Option<usize>,
    config: &SolverConfig,
) -> DVector<f64> {
    let k_len = problem.horizon;
    let b = problem.bounds;
    let inset = |lo: f64, hi: f64, v: f64| {
        let pad = 1e-3 * (hi - lo);
        v.clamp(lo + pad, hi - pad)
    };
    let mut z = DVector::zeros(n);
    for k in 0..k_len {
        z[k] = inset(b.v_min, b.v_max, lin.slots[k].v_ref);
        z[k_len + k] = inset(b.omega_min, b.omega_max, 0.0);
    }
    if let Some(i) = margin_index {
        z[i] = config.md_floor + 1.0;
    }
    z
}

/// Returns `z0` if it is strictly feasible, otherwise runs phase I on the safety rows.
fn find_strictly_feasible(
    box_rows: &[(DVector<f64>, f64)],
    safety_rows: &[(DVector<f64>, f64)],
    z0: DVector<f64>,
    params: &BarrierParams,
    constraints: &[crate::vehicle::SafetyConstraint],
) -> Result<DVector<f64>> {
    let n = z0.len();
    let violation = |z: &DVector<f64>| safety_rows.iter().map(|(r, h)| r.dot(z) - h).fold(f64::NEG_INFINITY, f64::max);
    let worst = violation(&z0);
    if safety_rows.is_empty() || worst < 0.0 {
        return Ok(z0);
    }
    const CLEARANCE: f64 = 1e-7;
    let mut rows = Vec::with_capacity(box_rows.len() + safety_rows.len() + 1);
    let extend = |r: &DVector<f64>, s_coef: f64| {
        let mut e = DVector::zeros(n + 1);
        e.rows_mut(0, n).copy_from(r);
        e[n] = s_coef;
        e
    };
    for (r, h) in box_rows {
        rows.push((extend(r, 0.0), *h));
    }
    for (r, h) in safety_rows {
        rows.push((extend(r, -1.0), *h));
    }
    let mut floor = DVector::zeros(n + 1);
    floor[n] = -1.0;
    rows.push((floor, 1.0));
    let ineq = Inequalities::from_rows(&rows, n + 1);
    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(&z0);
    start[n] = worst + 1.0;
    let phase = PhaseOne { anchor: z0, prox: 1e-6 };
    let out = barrier::minimize(&phase, &ineq, start, params, |w| w[n] < -CLEARANCE)?;
    let z = out.z.rows(0, n).into_owned();
    if violation(&z) < 0.0 {
        return Ok(z);
    }
    let (idx, _) = safety_rows
        .iter()
        .map(|(r, h)| r.dot(&z) - h)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    Err(Error::Infeasible { constraint: idx, slot: constraints[idx].slot })
}
