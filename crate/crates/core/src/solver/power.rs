//! Power block: per-vehicle projected gradient over the budget set.

use alloc::vec::Vec;

use super::SolverConfig;
use crate::comm::{margin_factor, outage_power_gradient, outage_probability, ChannelParams, CsiEstimate};
use crate::{Error, Result};

/// Euclidean projection onto `{P ≥ 0, Σ P ≤ budget}`.
///
/// If clipping at zero already meets the budget the clipped vector is
/// returned. Otherwise the budget binds and the projection is
/// `[raw_k - ζ/2]⁺` with the threshold `ζ` found by bisection on
/// `[0, 2 max(raw)]` until `Σ[raw_k - ζ/2]⁺` is within `tol` of the budget.
/// The upper end of the final bracket is returned, so the result never
/// exceeds the budget.
pub fn project_budget(raw: &[f64], budget: f64, tol: f64) -> Vec<f64> {
    assert!(budget > 0.0, "power budget must be positive");
    let clipped: Vec<f64> = raw.iter().map(|p| p.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= budget {
        return clipped;
    }
    let shifted_sum = |zeta: f64| raw.iter().map(|p| (p - zeta / 2.0).max(0.0)).sum::<f64>();
    let mut lo = 0.0;
    let mut hi = 2.0 * raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shifted_sum(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if budget - shifted_sum(hi) <= tol || hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    raw.iter().map(|p| (p - hi / 2.0).max(0.0)).collect()
}

/// Result of one per-vehicle power solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSolve {
    /// Powers per slot (W).
    pub powers: Vec<f64>,
    /// Objective after each accepted projected-gradient step, starting with the initial point.
    pub objective_history: Vec<f64>,
    /// `‖P - Proj(P - ∇f)‖∞` at termination, in budget-normalised units.
    pub stationarity: f64,
}

/// `Σ_k ρ_k p_out(P_k) / (1 - e^{-m_d})` for one vehicle.
pub fn power_objective(channel: &ChannelParams, csi: &[CsiEstimate], rho: &[f64], m_d: f64, powers: &[f64]) -> Result<f64> {
    if m_d <= 0.0 {
        return Err(Error::Pole(m_d));
    }
    let mut sum = 0.0;
    for ((c, r), p) in csi.iter().zip(rho).zip(powers) {
        if *r != 0.0 {
            sum += r * outage_probability(channel, *c, *p)?;
        }
    }
    Ok(sum * margin_factor(m_d))
}

/// Minimises [`power_objective`] over `{P ≥ 0, Σ P ≤ budget}` starting from the uniform split.
///
/// The iteration runs on `p = P / budget` with the objective divided by its
/// starting value; this leaves the minimiser unchanged and makes the unit
/// initial Armijo step meaningful regardless of how small the outage is.
/// Steps follow the projection arc `p(γ) = Proj(p - γ∇f)` and are accepted
/// when `f(p(γ)) ≤ f(p) + σ ∇fᵀ(p(γ) - p)`. The first trial step of each
/// search is the Barzilai-Borwein step `sᵀs / sᵀy` from the previous move,
/// clamped to `[1e-10, 1e10]`, and `1` on the first iteration.
pub fn minimize_vehicle_power(
    channel: &ChannelParams,
    csi: &[CsiEstimate],
    rho: &[f64],
    m_d: f64,
    budget: f64,
    config: &SolverConfig,
) -> Result<PowerSolve> {
    let k = csi.len();
    if rho.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: rho.len() });
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidArgument("power budget must be positive"));
    }
    let raw_objective = |p: &[f64]| -> Result<f64> {
        let watts: Vec<f64> = p.iter().map(|v| v * budget).collect();
        power_objective(channel, csi, rho, m_d, &watts)
    };
    let start = raw_objective(&alloc::vec![1.0 / k as f64; k])?;
    let scale = if start > 0.0 { start } else { 1.0 };
    let objective = |p: &[f64]| raw_objective(p).map(|v| v / scale);
    let gradient = |p: &[f64]| -> Result<Vec<f64>> {
        p.iter()
            .zip(csi)
            .zip(rho)
            .map(|((v, c), r)| {
                if *r == 0.0 {
                    return Ok(0.0);
                }
                outage_power_gradient(channel, *c, v * budget, m_d, *r).map(|g| g * budget / scale)
            })
            .collect()
    };
    let tol = config.bisection_tol / budget;

    let mut p = alloc::vec![1.0 / k as f64; k];
    let mut f = objective(&p)?;
    let mut history = alloc::vec![f * scale];
    let mut stationarity = f64::INFINITY;
    let mut g = gradient(&p)?;
    let mut gamma0 = 1.0;
    for _ in 0..config.pg_max_iter {
        let full: Vec<f64> = p.iter().zip(&g).map(|(v, d)| v - d).collect();
        let unit = project_budget(&full, 1.0, tol);
        stationarity = unit.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if stationarity <= config.pg_tol {
            break;
        }
        let mut gamma = gamma0;
        let mut accepted = None;
        for _ in 0..=config.armijo_max_backtracks {
            let trial_raw: Vec<f64> = p.iter().zip(&g).map(|(v, d)| v - gamma * d).collect();
            let trial = project_budget(&trial_raw, 1.0, tol);
            let decrease: f64 = g.iter().zip(trial.iter().zip(&p)).map(|(d, (a, b))| d * (a - b)).sum();
            let ft = objective(&trial)?;
            if ft <= f + config.armijo_sigma * decrease {
                accepted = Some((trial, ft));
                break;
            }
            gamma *= config.armijo_shrink;
        }
        match accepted {
            Some((trial, ft)) => {
                let g_next = gradient(&trial)?;
                let (mut ss, mut sy) = (0.0, 0.0);
                for ((a, b), (ga, gb)) in trial.iter().zip(&p).zip(g_next.iter().zip(&g)) {
                    ss += (a - b) * (a - b);
                    sy += (a - b) * (ga - gb);
                }
                gamma0 = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1.0 };
                p = trial;
                f = ft;
                g = g_next;
                history.push(f * scale);
            }
            None => break,
        }
    }
    Ok(PowerSolve { powers: p.iter().map(|v| v * budget).collect(), objective_history: history, stationarity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_input_is_untouched() {
        assert_eq!(project_budget(&[0.2, 0.3], 1.0, 1e-12), alloc::vec![0.2, 0.3]);
    }

    #[test]
    fn symmetric_overflow_splits_evenly() {
        let p = project_budget(&[1.0, 1.0], 1.0, 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-10 && (p[1] - 0.5).abs() < 1e-10);
        assert!(p.iter().sum::<f64>() <= 1.0);
    }

    #[test]
    fn negatives_are_clipped() {
        assert_eq!(project_budget(&[-0.4, 0.3], 1.0, 1e-12), alloc::vec![0.0, 0.3]);
    }

    #[test]
    fn single_slot_takes_whole_budget() {
        let ch = ChannelParams::new(0.3, 3.5, 1.0, 2.0, 0.05, 0.01).unwrap();
        let csi = [CsiEstimate::new(1.0).unwrap()];
        let out = minimize_vehicle_power(&ch, &csi, &[5.0], 1.0, 2.0, &SolverConfig::default()).unwrap();
        assert_eq!(out.powers, alloc::vec![2.0]);
    }

    #[test]
    fn zero_penalty_leaves_uniform_split() {
        let ch = ChannelParams::new(0.3, 3.5, 1.0, 2.0, 0.05, 0.01).unwrap();
        let csi = [CsiEstimate::new(0.5).unwrap(), CsiEstimate::new(2.0).unwrap()];
        let out = minimize_vehicle_power(&ch, &csi, &[0.0, 0.0], 1.0, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(out.powers, alloc::vec![0.5, 0.5]);
    }
}
