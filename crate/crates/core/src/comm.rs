//! Uplink model between the surrounding vehicles and the edge server.
//!
//! Each neighbour `i` uploads its position in slot `k` over a block Rayleigh
//! fading channel `h = μ(√β ĥ + √(1-β) e)`. Conditioned on the fed-back
//! estimate `ĥ`, the link is in outage when `log2(1 + P|h|²/σ²) < R`, which
//! happens with probability `F((2^R - 1)σ² / (P μ²))` where `F` is the
//! noncentral chi-square CDF from [`crate::special`]. Outage turns into a
//! retransmission delay `τ0 · p_out`, which in turn bounds the error of the
//! delivered position.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::special::{bessel_i0_scaled, noncentral_chi2_cdf};
use crate::{Error, Result};

/// Per-link channel, rate and timing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    beta: f64,
    mu_sq: f64,
    sigma_sq: f64,
    rate: f64,
    tau0: f64,
    t_comp: f64,
}

impl ChannelParams {
    /// `beta` feedback accuracy in (0, 1]; `mu_sq` large-scale gain; `sigma_sq`
    /// noise power (W); `rate` spectral efficiency (bps/Hz); `tau0` per-round
    /// transmission time (s); `t_comp` computation delay (s).
    pub fn new(beta: f64, mu_sq: f64, sigma_sq: f64, rate: f64, tau0: f64, t_comp: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument("beta must lie in (0, 1]"));
        }
        if !(mu_sq > 0.0 && mu_sq.is_finite()) {
            return Err(Error::InvalidArgument("mu_sq must be positive"));
        }
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::InvalidArgument("sigma_sq must be positive"));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument("rate must be positive"));
        }
        if !(tau0 >= 0.0 && tau0.is_finite()) || !(t_comp >= 0.0 && t_comp.is_finite()) {
            return Err(Error::InvalidArgument("delays must be non-negative"));
        }
        Ok(Self { beta, mu_sq, sigma_sq, rate, tau0, t_comp })
    }

    /// Feedback accuracy β.
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// Large-scale gain μ².
    pub fn mu_sq(&self) -> f64 {
        self.mu_sq
    }
    /// Noise power σ² in watts.
    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }
    /// Minimum spectral efficiency R.
    pub fn rate(&self) -> f64 {
        self.rate
    }
    /// Transmission time per round τ0 (s).
    pub fn tau0(&self) -> f64 {
        self.tau0
    }
    /// Computation delay (s).
    pub fn t_comp(&self) -> f64 {
        self.t_comp
    }

    /// Returns a copy with a different feedback accuracy.
    pub fn with_beta(self, beta: f64) -> Result<Self> {
        Self::new(beta, self.mu_sq, self.sigma_sq, self.rate, self.tau0, self.t_comp)
    }

    /// Returns a copy with a different noise power.
    pub fn with_sigma_sq(self, sigma_sq: f64) -> Result<Self> {
        Self::new(self.beta, self.mu_sq, sigma_sq, self.rate, self.tau0, self.t_comp)
    }

    /// Spread of the estimation error, `ζ = √((1-β)/2)`.
    pub fn zeta(&self) -> f64 {
        libm::sqrt((1.0 - self.beta) / 2.0)
    }

    /// `(2^R - 1) σ² / μ²`; the CDF is evaluated at this divided by the power.
    pub fn threshold_gain(&self) -> f64 {
        (libm::exp2(self.rate) - 1.0) * self.sigma_sq / self.mu_sq
    }
}

/// Squared magnitude of the fed-back channel estimate, `|ĥ|²`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CsiEstimate {
    h_hat_sq: f64,
}

impl CsiEstimate {
    /// Wraps `|ĥ|²`, which must be finite and non-negative.
    pub fn new(h_hat_sq: f64) -> Result<Self> {
        if h_hat_sq.is_finite() && h_hat_sq >= 0.0 {
            Ok(Self { h_hat_sq })
        } else {
            Err(Error::InvalidArgument("|h_hat|^2 must be finite and non-negative"))
        }
    }

    /// `|ĥ|²`.
    pub fn h_hat_sq(&self) -> f64 {
        self.h_hat_sq
    }
}

/// Surrounding vehicle that uploads its position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vehicle {
    /// Lead vehicle, ahead of the EV in the ego lane.
    Lead,
    /// Target vehicle, ahead in the target lane.
    Target,
    /// Follow vehicle, behind in the target lane.
    Follow,
}

impl Vehicle {
    /// LV, TV, FV in that order.
    pub const ALL: [Vehicle; 3] = [Vehicle::Lead, Vehicle::Target, Vehicle::Follow];

    /// Position in [`Vehicle::ALL`].
    pub fn index(self) -> usize {
        match self {
            Vehicle::Lead => 0,
            Vehicle::Target => 1,
            Vehicle::Follow => 2,
        }
    }

    /// Short uppercase label.
    pub fn label(self) -> &'static str {
        match self {
            Vehicle::Lead => "LV",
            Vehicle::Target => "TV",
            Vehicle::Follow => "FV",
        }
    }
}

impl fmt::Display for Vehicle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Uplink from one neighbour in one planning slot (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkId {
    /// Transmitting vehicle.
    pub vehicle: Vehicle,
    /// Slot `k ∈ [1, K]`.
    pub slot: usize,
}

impl LinkId {
    /// Checks the slot against the horizon.
    pub fn new(vehicle: Vehicle, slot: usize, horizon: usize) -> Result<Self> {
        if slot == 0 || slot > horizon {
            return Err(Error::InvalidArgument("link slot outside the planning horizon"));
        }
        Ok(Self { vehicle, slot })
    }
}

/// CSI estimates for every (vehicle, slot) link of one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiGrid {
    rows: [Vec<CsiEstimate>; 3],
}

impl CsiGrid {
    /// One row of `K` estimates per vehicle, ordered as [`Vehicle::ALL`].
    pub fn new(rows: [Vec<CsiEstimate>; 3]) -> Result<Self> {
        let k = rows[0].len();
        for r in &rows[1..] {
            if r.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: r.len() });
            }
        }
        Ok(Self { rows })
    }

    /// The same estimate on every link.
    pub fn uniform(horizon: usize, csi: CsiEstimate) -> Self {
        Self { rows: [vec![csi; horizon], vec![csi; horizon], vec![csi; horizon]] }
    }

    /// Independent draws for every link, vehicle-major.
    pub fn sample<R: Rng + ?Sized>(horizon: usize, rng: &mut R) -> Self {
        let mut draw = || (0..horizon).map(|_| sample_csi_with(rng)).collect::<Vec<_>>();
        let lead = draw();
        let target = draw();
        let follow = draw();
        Self { rows: [lead, target, follow] }
    }

    /// Number of slots.
    pub fn horizon(&self) -> usize {
        self.rows[0].len()
    }

    /// Estimates of one vehicle's uplink, slot 1 first.
    pub fn row(&self, vehicle: Vehicle) -> &[CsiEstimate] {
        &self.rows[vehicle.index()]
    }

    /// Estimate for one link.
    pub fn get(&self, link: LinkId) -> CsiEstimate {
        self.rows[link.vehicle.index()][link.slot - 1]
    }
}

/// Draws `|ĥ|²` for `ĥ ~ CN(0, 1)`, i.e. a unit-mean exponential, from a fixed seed.
pub fn sample_csi(_params: &ChannelParams, rng_seed: u64) -> CsiEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_csi_with(&mut rng)
}

/// Draws `|ĥ|²` from a caller-owned generator.
pub fn sample_csi_with<R: Rng + ?Sized>(rng: &mut R) -> CsiEstimate {
    let h_hat_sq: f64 = Exp1.sample(rng);
    CsiEstimate { h_hat_sq }
}

fn check_power(power: f64) -> Result<()> {
    if power.is_nan() || power < 0.0 {
        Err(Error::InvalidArgument("transmit power must be non-negative"))
    } else {
        Ok(())
    }
}

fn check_margin(m_d: f64) -> Result<()> {
    if m_d > 0.0 {
        Ok(())
    } else {
        Err(Error::Pole(m_d))
    }
}

/// `1 / (1 - exp(-m_d))` without cancellation for small margins.
pub(crate) fn margin_factor(m_d: f64) -> f64 {
    -1.0 / libm::expm1(-m_d)
}

/// Conditional outage probability of a link transmitting at `power` watts.
///
/// Zero power is always in outage.
pub fn outage_probability(params: &ChannelParams, csi: CsiEstimate, power: f64) -> Result<f64> {
    check_power(power)?;
    if power == 0.0 {
        return Ok(1.0);
    }
    let x = params.threshold_gain() / power;
    noncentral_chi2_cdf(x, params.beta, csi.h_hat_sq)
}

/// Margin-regularised outage `ρ · p_out / (1 - exp(-m_d))`.
pub fn regularized_outage(params: &ChannelParams, csi: CsiEstimate, power: f64, m_d: f64, rho: f64) -> Result<f64> {
    check_margin(m_d)?;
    let p_out = outage_probability(params, csi, power)?;
    Ok(rho * p_out * margin_factor(m_d))
}

/// Derivative of [`regularized_outage`] with respect to the power.
///
/// With `x = c/P`, `c = (2^R - 1)σ²/μ²` and `s = β|ĥ|²`, the conditional
/// density of the normalised channel power is
/// `exp(-(x+s)/(2ζ²)) I0(√(s x)/ζ²) / (2ζ²)`, and the chain rule contributes
/// `-c/P²`. The Bessel factor is evaluated in scaled form so the exponent
/// collapses to `-(√x - √s)²/(2ζ²)` and never overflows.
pub fn outage_power_gradient(params: &ChannelParams, csi: CsiEstimate, power: f64, m_d: f64, rho: f64) -> Result<f64> {
    check_margin(m_d)?;
    check_power(power)?;
    if power == 0.0 || params.beta == 1.0 {
        // Flat at zero power; a step (zero derivative almost everywhere) with perfect CSI.
        return Ok(0.0);
    }
    let c = params.threshold_gain();
    let x = c / power;
    let s = params.beta * csi.h_hat_sq;
    let zeta_sq = (1.0 - params.beta) / 2.0;
    let z = libm::sqrt(s * x) / zeta_sq;
    let gap = libm::sqrt(x) - libm::sqrt(s);
    let density = bessel_i0_scaled(z) * libm::exp(-gap * gap / (2.0 * zeta_sq)) / (2.0 * zeta_sq);
    Ok(-rho * margin_factor(m_d) * density * c / (power * power))
}

/// Expected retransmission delay `τ0 · p_out`, in seconds.
pub fn delay_from_outage(params: &ChannelParams, p_out: f64) -> f64 {
    params.tau0 * p_out
}

/// Half-width `v (τ0 p_out + t_comp)` of the uniform position error.
pub fn position_error_bound(params: &ChannelParams, p_out: f64, ego_speed: f64) -> f64 {
    ego_speed * (delay_from_outage(params, p_out) + params.t_comp)
}

/// Uniform position error on `[-b, b]` with `b` from [`position_error_bound`], from a fixed seed.
pub fn sample_position_error(params: &ChannelParams, p_out: f64, ego_speed: f64, rng_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_position_error_with(params, p_out, ego_speed, &mut rng)
}

/// Uniform position error drawn from a caller-owned generator.
pub fn sample_position_error_with<R: Rng + ?Sized>(params: &ChannelParams, p_out: f64, ego_speed: f64, rng: &mut R) -> f64 {
    let bound = position_error_bound(params, p_out, ego_speed);
    // Always consume one draw so the stream position does not depend on the bound.
    let u: f64 = rng.random();
    if bound == 0.0 {
        return 0.0;
    }
    (2.0 * u - 1.0) * bound
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ChannelParams {
        ChannelParams::new(0.3, 3.5, 1.0, 2.0, 0.05, 0.01).unwrap()
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(ChannelParams::new(0.0, 3.5, 1.0, 2.0, 0.05, 0.01).is_err());
        assert!(ChannelParams::new(0.3, -1.0, 1.0, 2.0, 0.05, 0.01).is_err());
        assert!(ChannelParams::new(0.3, 3.5, 0.0, 2.0, 0.05, 0.01).is_err());
        assert!(ChannelParams::new(0.3, 3.5, 1.0, 0.0, 0.05, 0.01).is_err());
        assert!(ChannelParams::new(0.3, 3.5, 1.0, 2.0, -0.05, 0.01).is_err());
        assert!(CsiEstimate::new(-1.0).is_err());
        assert!(LinkId::new(Vehicle::Lead, 0, 6).is_err());
        assert!(LinkId::new(Vehicle::Lead, 7, 6).is_err());
        assert!(LinkId::new(Vehicle::Lead, 6, 6).is_ok());
    }

    #[test]
    fn csi_sampling_is_deterministic() {
        let p = params();
        assert_eq!(sample_csi(&p, 42), sample_csi(&p, 42));
        assert_ne!(sample_csi(&p, 42), sample_csi(&p, 43));
    }

    #[test]
    fn zero_power_is_outage() {
        let csi = CsiEstimate::new(1.0).unwrap();
        assert_eq!(outage_probability(&params(), csi, 0.0).unwrap(), 1.0);
        assert!(outage_probability(&params(), csi, -1.0).is_err());
    }

    #[test]
    fn outage_limits_in_power() {
        let csi = CsiEstimate::new(1.0).unwrap();
        assert!(outage_probability(&params(), csi, 1e12).unwrap() < 1e-10);
        assert!(outage_probability(&params(), csi, 1e-12).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn regulariser_pole_and_limits() {
        let p = params();
        let csi = CsiEstimate::new(1.0).unwrap();
        assert_eq!(regularized_outage(&p, csi, 1.0, 0.0, 1.0), Err(Error::Pole(0.0)));
        assert!(outage_power_gradient(&p, csi, 1.0, -1.0, 1.0).is_err());
        let p_out = outage_probability(&p, csi, 1.0).unwrap();
        let far = regularized_outage(&p, csi, 1.0, 50.0, 2.0).unwrap();
        assert!((far - 2.0 * p_out).abs() < 1e-15);
        let near = regularized_outage(&p, csi, 1.0, 1e-9, 2.0).unwrap();
        assert!(near > 1e8 * p_out);
        let perfect = ChannelParams::new(1.0, 3.5, 1.0, 2.0, 0.05, 0.01).unwrap();
        let strong = CsiEstimate::new(10.0).unwrap();
        assert_eq!(regularized_outage(&perfect, strong, 1.0, 0.5, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn delay_examples() {
        let p = params();
        assert_eq!(delay_from_outage(&p, 0.0), 0.0);
        assert_eq!(delay_from_outage(&p, 1.0), 0.05);
        assert!((delay_from_outage(&p, 0.3) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn position_error_degenerate_cases() {
        let p = params();
        assert_eq!(sample_position_error(&p, 0.4, 0.0, 9), 0.0);
        let no_delay = ChannelParams::new(0.3, 3.5, 1.0, 2.0, 0.05, 0.0).unwrap();
        assert_eq!(sample_position_error(&no_delay, 0.0, 5.0, 9), 0.0);
        let e = sample_position_error(&p, 0.4, 5.0, 9);
        assert!(e.abs() <= position_error_bound(&p, 0.4, 5.0));
        assert_eq!(e, sample_position_error(&p, 0.4, 5.0, 9));
    }

    #[test]
    fn gradient_vanishes_far_out() {
        let p = params();
        let csi = CsiEstimate::new(1.0).unwrap();
        assert!(outage_power_gradient(&p, csi, 1e9, 1.0, 1.0).unwrap().abs() < 1e-15);
        assert!(outage_power_gradient(&p, csi, 1.0, 1.0, 1.0).unwrap() < 0.0);
    }
}
