//! Log-barrier path following for `min f(z) s.t. G z ≤ h` with smooth convex `f`.
//!
//! Each stage minimises `t f(z) - Σ log(h_i - g_iᵀ z)` by damped Newton steps;
//! `t` grows geometrically until the duality-gap bound `m / t` drops below `eps`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub(crate) trait Objective {
    fn value(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64>;
}

/// Rows of `G z ≤ h`.
#[derive(Debug, Clone)]
pub(crate) struct Inequalities {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl Inequalities {
    pub fn from_rows(rows: &[(DVector<f64>, f64)], n: usize) -> Self {
        let mut g = DMatrix::zeros(rows.len(), n);
        let mut h = DVector::zeros(rows.len());
        for (i, (row, rhs)) in rows.iter().enumerate() {
            g.set_row(i, &row.transpose());
            h[i] = *rhs;
        }
        Self { g, h }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    /// `h - G z`.
    pub fn slack(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h - &self.g * z
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierParams {
    pub t0: f64,
    pub mu: f64,
    pub eps: f64,
    /// Tolerance on `‖∇f + Gᵀλ‖∞` with `λ_i = 1 / (t s_i)` at the end of each centring.
    pub kkt_tol: f64,
    pub max_newton: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub z: DVector<f64>,
    /// `m / t` at the last stage.
    pub gap_bound: f64,
    pub kkt_residual: f64,
}

/// Inequalities re-expressed around a base point, `s(δ) = (h - G z_base) - G δ`.
///
/// Late in the path the slacks are many orders of magnitude below `h`; forming
/// them from small increments avoids the cancellation in `h - G z`.
struct Rebased<'a> {
    g: &'a DMatrix<f64>,
    base: DVector<f64>,
    slack0: DVector<f64>,
}

impl<'a> Rebased<'a> {
    fn new(ineq: &'a Inequalities, base: DVector<f64>) -> Self {
        let slack0 = ineq.slack(&base);
        Self { g: &ineq.g, base, slack0 }
    }

    fn slack(&self, delta: &DVector<f64>) -> DVector<f64> {
        &self.slack0 - self.g * delta
    }

    fn point(&self, delta: &DVector<f64>) -> DVector<f64> {
        &self.base + delta
    }

    fn barrier_value<O: Objective>(&self, obj: &O, delta: &DVector<f64>, t: f64) -> Option<f64> {
        let s = self.slack(delta);
        if s.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return None;
        }
        let f = obj.value(&self.point(delta));
        if !f.is_finite() {
            return None;
        }
        Some(t * f - s.iter().map(|v| libm::log(*v)).sum::<f64>())
    }

    fn kkt_residual<O: Objective>(&self, obj: &O, delta: &DVector<f64>, t: f64) -> f64 {
        let lambda = self.slack(delta).map(|v| 1.0 / (t * v));
        (obj.gradient(&self.point(delta)) + self.g.transpose() * lambda).amax()
    }
}

/// Runs the path-following method from a strictly feasible `z0`.
///
/// `stop` is checked after every Newton step; phase I uses it to quit as soon
/// as a strictly feasible point for the original problem appears.
pub(crate) fn minimize<O: Objective>(
    obj: &O,
    ineq: &Inequalities,
    z0: DVector<f64>,
    params: &BarrierParams,
    stop: impl Fn(&DVector<f64>) -> bool,
) -> Result<BarrierOutcome> {
    let m = ineq.len() as f64;
    if ineq.slack(&z0).iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Numerical("barrier start is not strictly feasible"));
    }
    let n = z0.len();
    let mut z = z0;
    let mut t = params.t0;
    loop {
        let stage = Rebased::new(ineq, z);
        let mut delta = DVector::zeros(n);
        let mut kkt = stage.kkt_residual(obj, &delta, t);
        for _ in 0..params.max_newton {
            if kkt <= params.kkt_tol {
                break;
            }
            let d = stage.slack(&delta).map(|v| 1.0 / v);
            let point = stage.point(&delta);
            let grad = obj.gradient(&point) * t + ineq.g.transpose() * &d;
            let scaled_g = DMatrix::from_fn(ineq.g.nrows(), ineq.g.ncols(), |i, j| ineq.g[(i, j)] * d[i]);
            let hess = obj.hessian(&point) * t + scaled_g.transpose() * &scaled_g;
            let step = newton_direction(hess, &grad)?;
            let slope = grad.dot(&step);
            if -slope / 2.0 < 1e-8 {
                // Inside the quadratic-convergence region the barrier value changes by
                // less than its own rounding, so take full steps while the residual falls.
                let trial = &delta + &step;
                if stage.slack(&trial).iter().all(|&v| v > 0.0) {
                    let trial_kkt = stage.kkt_residual(obj, &trial, t);
                    if trial_kkt < kkt {
                        delta = trial;
                        kkt = trial_kkt;
                        if stop(&stage.point(&delta)) {
                            return Ok(BarrierOutcome { z: stage.point(&delta), gap_bound: m / t, kkt_residual: kkt });
                        }
                        continue;
                    }
                }
                break;
            }
            let phi = stage.barrier_value(obj, &delta, t).ok_or(Error::Numerical("left the barrier domain"))?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial = &delta + &step * alpha;
                if let Some(v) = stage.barrier_value(obj, &trial, t) {
                    if v <= phi + 0.25 * alpha * slope {
                        delta = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            kkt = stage.kkt_residual(obj, &delta, t);
            if stop(&stage.point(&delta)) {
                return Ok(BarrierOutcome { z: stage.point(&delta), gap_bound: m / t, kkt_residual: kkt });
            }
        }
        z = stage.point(&delta);
        if m / t < params.eps {
            return Ok(BarrierOutcome { z, gap_bound: m / t, kkt_residual: kkt });
        }
        t *= params.mu;
    }
}

fn newton_direction(mut hess: DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    // Symmetrise away rounding before factorising.
    let ht = hess.transpose();
    hess = (hess + ht) * 0.5;
    if let Some(ch) = hess.clone().cholesky() {
        return Ok(-ch.solve(grad));
    }
    let scale = hess.diagonal().amax().max(1.0);
    let mut reg = 1e-12 * scale;
    for _ in 0..12 {
        let mut shifted = hess.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += reg;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok(-ch.solve(grad));
        }
        reg *= 100.0;
    }
    Err(Error::Numerical("Newton system is not positive definite"))
}
