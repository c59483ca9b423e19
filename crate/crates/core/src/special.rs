//! Special functions behind the conditional outage model.
//!
//! Given a CSI estimate `ĥ` with feedback accuracy `β`, the normalised channel
//! power `|h/μ|²` is noncentral chi-square with two degrees of freedom. Its CDF
//! is `1 - Q1(√(β|ĥ|²)/ζ, √x/ζ)` with `ζ = √((1-β)/2)`.
//!
//! `Q1` is evaluated as a Poisson mixture of Poisson CDFs,
//!
//! ```text
//! Q1(a, b) = Σ_k  e^{-a²/2} (a²/2)^k / k!  ·  Γ(k+1, b²/2) / k!
//! ```
//!
//! where the regularised upper incomplete gamma at integer order is itself the
//! Poisson(b²/2) CDF at `k`. Every term lies in `[0, 1]`, so the sum is free of
//! cancellation, and the complement `1 - Q1` is accumulated from the Poisson
//! upper tails directly so that small outage probabilities keep full relative
//! precision.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Above this argument the Bessel series is replaced by the asymptotic expansion.
const BESSEL_SERIES_LIMIT: f64 = 30.0;

/// Poisson mixture weights are truncated once the excluded mass drops below this.
const MIXTURE_TAIL_MASS: f64 = 1e-14;

/// `exp(-x²/2)` underflows for `x` beyond this; used to short-circuit far tails.
const TAIL_CUTOFF: f64 = 38.6;

/// Arguments of the first-order Marcum Q-function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarcumArgs {
    a: f64,
    b: f64,
}

impl MarcumArgs {
    /// Validates `a ≥ 0`, `b ≥ 0`. `b` may be `+∞`.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::InvalidArgument("Marcum argument a must be finite and non-negative"));
        }
        if b.is_nan() || b < 0.0 {
            return Err(Error::InvalidArgument("Marcum argument b must be non-negative"));
        }
        Ok(Self { a, b })
    }

    /// Noncentrality argument.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Threshold argument.
    pub fn b(&self) -> f64 {
        self.b
    }
}

/// Modified Bessel function of the first kind, order zero.
///
/// Returns [`Error::Overflow`] once `I0(x)` exceeds `f64::MAX` (|x| ≳ 713).
pub fn bessel_i0(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidArgument("bessel_i0 of NaN"));
    }
    let ax = x.abs();
    if ax <= BESSEL_SERIES_LIMIT {
        return Ok(i0_series(ax));
    }
    let value = libm::exp(ax) * i0_asymptotic_scaled(ax);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Overflow)
    }
}

/// Exponentially scaled Bessel function `exp(-|x|) · I0(x)`, finite for every finite `x`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= BESSEL_SERIES_LIMIT {
        i0_series(ax) * libm::exp(-ax)
    } else {
        i0_asymptotic_scaled(ax)
    }
}

// Σ (x²/4)^m / (m!)²; all terms positive.
fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut m = 1.0;
    while term > f64::EPSILON * 0.25 * sum {
        term *= q / (m * m);
        sum += term;
        m += 1.0;
    }
    sum
}

// e^{-x} I0(x) ~ (2πx)^{-1/2} Σ_k [(2k-1)!!]² / (k! 8^k x^k), stopped at the smallest term.
fn i0_asymptotic_scaled(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        let next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * x);
        if next >= term || next < f64::EPSILON * 0.25 * sum {
            break;
        }
        term = next;
        sum += term;
        k += 1.0;
    }
    sum / libm::sqrt(core::f64::consts::TAU * x)
}

/// First-order Marcum Q-function `Q1(a, b)`, absolute error well below `1e-10`.
pub fn marcum_q1(args: MarcumArgs) -> f64 {
    marcum_pair(args.a, args.b).0
}

/// Conditional CDF of `|h/μ|²` given `|ĥ|²`:
/// `P(|√β ĥ + √(1-β) e|² ≤ x)` with `e ~ CN(0, 1)`.
///
/// For `beta == 1` the distribution is a point mass at `h_hat_sq` and the CDF
/// is the step `1{x > h_hat_sq}`.
pub fn noncentral_chi2_cdf(x: f64, beta: f64, h_hat_sq: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidArgument("CDF argument must be non-negative"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument("feedback accuracy beta must lie in (0, 1]"));
    }
    if !(h_hat_sq.is_finite() && h_hat_sq >= 0.0) {
        return Err(Error::InvalidArgument("|h_hat|^2 must be finite and non-negative"));
    }
    if beta == 1.0 {
        return Ok(if x > h_hat_sq { 1.0 } else { 0.0 });
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    let zeta = libm::sqrt((1.0 - beta) / 2.0);
    let a = libm::sqrt(beta * h_hat_sq) / zeta;
    let b = libm::sqrt(x) / zeta;
    Ok(marcum_pair(a, b).1)
}

/// Returns `(Q1(a, b), 1 - Q1(a, b))`, each accumulated from non-negative terms.
pub(crate) fn marcum_pair(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0);
    }
    if b == f64::INFINITY {
        return (0.0, 1.0);
    }
    let y = 0.5 * b * b;
    if a == 0.0 {
        return (libm::exp(-y), -libm::expm1(-y));
    }
    // Rician tail bounds: Q1 ≤ exp(-(b-a)²/2) for b > a, 1 - Q1 ≤ exp(-(a-b)²/2) for a > b.
    if b - a > TAIL_CUTOFF {
        return (0.0, 1.0);
    }
    if a - b > TAIL_CUTOFF {
        return (1.0, 0.0);
    }
    let lambda = 0.5 * a * a;

    let (klo, weights) = poisson_window(lambda);
    let khi = klo + weights.len() - 1;

    // Poisson(y) pmf over a window covering its own bulk and the mixture indices.
    let (ylo, ypmf) = poisson_window(y);
    let yhi = ylo + ypmf.len() - 1;
    let jlo = klo.min(ylo);
    let jhi = khi.max(yhi) + 1;
    let mut pmf = poisson_pmf_range(y, jlo, jhi);
    // The range covers all but a negligible tail, so renormalising removes the
    // lgamma rounding carried by the anchor term.
    let mass: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= mass);

    // lower[k - jlo] = P(N ≤ k), upper[k - jlo] = P(N > k) for N ~ Poisson(y).
    let n = pmf.len();
    let mut lower = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &p in &pmf {
        acc += p;
        lower.push(acc);
    }
    let mut upper = alloc::vec![0.0; n];
    let mut acc = 0.0;
    for j in (0..n).rev() {
        upper[j] = acc;
        acc += pmf[j];
    }

    let mut q = 0.0;
    let mut c = 0.0;
    for (offset, w) in weights.iter().enumerate() {
        let idx = klo + offset - jlo;
        q += w * lower[idx];
        c += w * upper[idx];
    }
    (q.clamp(0.0, 1.0), c.clamp(0.0, 1.0))
}

/// Central window `[lo, lo + len)` of the Poisson(mean) pmf holding all but
/// `MIXTURE_TAIL_MASS` of the mass, renormalised to sum to one.
fn poisson_window(mean: f64) -> (usize, Vec<f64>) {
    if mean == 0.0 {
        return (0, alloc::vec![1.0]);
    }
    let mode = libm::floor(mean) as usize;
    let anchor = libm::exp(log_poisson_pmf(mode, mean));
    let (mut lo, mut hi) = (mode, mode);
    let (mut w_lo, mut w_hi) = (anchor, anchor);
    let mut total = anchor;
    let mut left = Vec::new();
    let mut right = Vec::new();
    loop {
        let next_lo = if lo > 0 { w_lo * lo as f64 / mean } else { 0.0 };
        let next_hi = w_hi * mean / (hi + 1) as f64;
        // lgamma rounding in the anchor can leave `total` a hair off one, hence the
        // second stopping rule.
        if 1.0 - total < MIXTURE_TAIL_MASS || next_lo.max(next_hi) < 1e-18 * total {
            break;
        }
        if next_lo >= next_hi {
            lo -= 1;
            w_lo = next_lo;
            total += w_lo;
            left.push(w_lo);
        } else {
            hi += 1;
            w_hi = next_hi;
            total += w_hi;
            right.push(w_hi);
        }
    }
    let mut weights = Vec::with_capacity(left.len() + right.len() + 1);
    weights.extend(left.iter().rev().map(|w| w / total));
    weights.push(anchor / total);
    weights.extend(right.iter().map(|w| w / total));
    (lo, weights)
}

fn poisson_pmf_range(mean: f64, lo: usize, hi: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; hi - lo + 1];
    if mean == 0.0 {
        if lo == 0 {
            out[0] = 1.0;
        }
        return out;
    }
    let anchor = (libm::floor(mean) as usize).clamp(lo, hi);
    let a = anchor - lo;
    out[a] = libm::exp(log_poisson_pmf(anchor, mean));
    for j in (a + 1)..out.len() {
        out[j] = out[j - 1] * mean / (lo + j) as f64;
    }
    for j in (0..a).rev() {
        out[j] = out[j + 1] * (lo + j + 1) as f64 / mean;
    }
    out
}

fn log_poisson_pmf(k: usize, mean: f64) -> f64 {
    let kf = k as f64;
    -mean + kf * libm::log(mean) - libm::lgamma(kf + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_at_zero_is_one() {
        assert_eq!(bessel_i0(0.0).unwrap(), 1.0);
        assert_eq!(bessel_i0_scaled(0.0), 1.0);
    }

    #[test]
    fn i0_is_even_and_at_least_one() {
        for &x in &[0.1, 1.0, 5.0, 29.9, 30.1, 100.0] {
            let v = bessel_i0(x).unwrap();
            assert!(v > 1.0);
            assert_eq!(v, bessel_i0(-x).unwrap());
        }
    }

    #[test]
    fn i0_overflows_far_out() {
        assert_eq!(bessel_i0(720.0), Err(Error::Overflow));
        assert!(bessel_i0(700.0).unwrap().is_finite());
        assert!(bessel_i0_scaled(1e6).is_finite());
    }

    #[test]
    fn branch_switch_is_continuous() {
        let x = BESSEL_SERIES_LIMIT;
        let series = i0_series(x) * libm::exp(-x);
        let asymptotic = i0_asymptotic_scaled(x);
        assert!((series - asymptotic).abs() / series < 1e-13, "{series} vs {asymptotic}");
    }

    #[test]
    fn marcum_boundary_values() {
        for &a in &[0.0, 0.5, 3.0, 20.0] {
            assert_eq!(marcum_q1(MarcumArgs::new(a, 0.0).unwrap()), 1.0);
        }
        for &b in &[0.1, 1.0, 4.0] {
            let q = marcum_q1(MarcumArgs::new(0.0, b).unwrap());
            assert!((q - libm::exp(-b * b / 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn pair_sums_to_one() {
        for &(a, b) in &[(0.3, 0.2), (1.0, 1.0), (7.0, 5.0), (5.0, 9.0), (60.0, 61.0)] {
            let (q, c) = marcum_pair(a, b);
            assert!((q + c - 1.0).abs() < 1e-13, "a={a} b={b} q={q} c={c}");
        }
    }

    #[test]
    fn rejects_bad_args() {
        assert!(MarcumArgs::new(-1.0, 0.0).is_err());
        assert!(MarcumArgs::new(1.0, f64::NAN).is_err());
        assert!(noncentral_chi2_cdf(-1.0, 0.5, 1.0).is_err());
        assert!(noncentral_chi2_cdf(1.0, 0.0, 1.0).is_err());
        assert!(noncentral_chi2_cdf(1.0, 1.1, 1.0).is_err());
    }

    #[test]
    fn perfect_csi_is_a_step() {
        assert_eq!(noncentral_chi2_cdf(0.99, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(noncentral_chi2_cdf(1.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(noncentral_chi2_cdf(1.01, 1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn cdf_support_endpoints() {
        assert_eq!(noncentral_chi2_cdf(0.0, 0.3, 1.0).unwrap(), 0.0);
        assert_eq!(noncentral_chi2_cdf(f64::INFINITY, 0.3, 1.0).unwrap(), 1.0);
        assert!(noncentral_chi2_cdf(1e6, 0.3, 1.0).unwrap() > 1.0 - 1e-15);
    }

    #[test]
    fn small_cdf_keeps_relative_precision() {
        // For x → 0 the density at zero is exp(-s/(2ζ²)) / (2ζ²), so F(x) ≈ x · that.
        let (beta, h) = (0.3, 1.0);
        let zeta_sq = (1.0 - beta) / 2.0;
        let x = 1e-9;
        let approx = x * libm::exp(-beta * h / (2.0 * zeta_sq)) / (2.0 * zeta_sq);
        let got = noncentral_chi2_cdf(x, beta, h).unwrap();
        assert!((got - approx).abs() / approx < 1e-6, "{got} vs {approx}");
    }
}
