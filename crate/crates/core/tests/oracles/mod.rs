//! Independent reference implementations used to check the library.
//!
//! Nothing here calls the functions under test: the Bessel function comes from
//! its integral representation, the Marcum function from direct quadrature of
//! the Rician density, the chi-square CDF from sampling, the projection from
//! active-set enumeration and the subproblems from grid search.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `e^{-x} I0(x)` from `(1/π) ∫₀^π e^{x (cos t - 1)} dt` by the trapezoid rule.
///
/// The integrand is smooth and periodic, so the trapezoid rule converges
/// geometrically once the node count exceeds a few multiples of `√x`.
pub fn bessel_i0_scaled_trapezoid(x: f64) -> f64 {
    let x = x.abs();
    let n = 64 + (12.0 * x.sqrt()).ceil() as usize;
    let h = std::f64::consts::PI / n as f64;
    let f = |t: f64| (x * (t.cos() - 1.0)).exp();
    let mut sum = 0.5 * (f(0.0) + f(std::f64::consts::PI));
    for i in 1..n {
        sum += f(i as f64 * h);
    }
    sum * h / std::f64::consts::PI
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `Q1(a, b) = ∫_b^∞ x exp(-(x² + a²)/2) I0(a x) dx`, integrated piecewise
/// over `[b, max(a, b) + 40]` with the Bessel factor in scaled form.
pub fn marcum_q1_quadrature(a: f64, b: f64) -> f64 {
    let density = |x: f64| x * (-(x - a) * (x - a) / 2.0).exp() * bessel_i0_scaled_trapezoid(a * x);
    let upper = a.max(b) + 40.0;
    let pieces = 16;
    let width = (upper - b) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = b + i as f64 * width;
            adaptive_simpson(&density, lo, lo + width, 1e-14)
        })
        .sum()
}

/// Fraction of `n` samples of `|√β ĥ + √(1-β) e|²`, `e ~ CN(0, 1)`, that do not exceed `x`.
pub fn chi2_cdf_monte_carlo<R: Rng>(x: f64, beta: f64, h_hat_sq: f64, n: usize, rng: &mut R) -> f64 {
    let mean = (beta * h_hat_sq).sqrt();
    let sd = ((1.0 - beta) / 2.0).sqrt();
    let mut hits = 0usize;
    for _ in 0..n {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let (r, i) = (mean + sd * re, sd * im);
        if r * r + i * i <= x {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Euclidean projection onto `{p ≥ 0, Σ p ≤ budget}` by enumerating active sets.
///
/// For every support set `S` the projection onto `{p_i = 0, i ∉ S}` is
/// computed with and without the budget equality; the closest feasible
/// candidate is the projection.
pub fn projection_by_enumeration(raw: &[f64], budget: f64) -> Vec<f64> {
    let k = raw.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let mut candidates = Vec::new();
        let free: Vec<f64> = (0..k).map(|i| if mask & (1 << i) != 0 { raw[i] } else { 0.0 }).collect();
        candidates.push(free);
        if !support.is_empty() {
            let shift = (support.iter().map(|&i| raw[i]).sum::<f64>() - budget) / support.len() as f64;
            candidates.push((0..k).map(|i| if mask & (1 << i) != 0 { raw[i] - shift } else { 0.0 }).collect());
        }
        for c in candidates {
            let feasible = c.iter().all(|v| *v >= -1e-12) && c.iter().sum::<f64>() <= budget + 1e-12;
            if !feasible {
                continue;
            }
            let dist: f64 = c.iter().zip(raw).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().map_or(true, |(d, _)| dist < *d) {
                best = Some((dist, c));
            }
        }
    }
    best.expect("the origin is always feasible").1
}

/// Minimises `f` over a box by repeated grid refinement.
///
/// Each round evaluates `points` nodes per axis on the current box and
/// recentres on the best finite value. The box keeps its size while the best
/// node lies on an edge that is not a global bound, and otherwise shrinks every
/// side by `shrink`, stopping once the node spacing falls below `resolution`.
/// Infeasible points report `None`.
pub fn refine_grid(
    f: &dyn Fn(&[f64]) -> Option<f64>,
    lower: &[f64],
    upper: &[f64],
    points: usize,
    shrink: f64,
    resolution: f64,
) -> (Vec<f64>, f64) {
    let dim = lower.len();
    let (mut lo, mut hi) = (lower.to_vec(), upper.to_vec());
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let spacing: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / (points - 1) as f64).collect();
        let mut idx = vec![0usize; dim];
        loop {
            let z: Vec<f64> = (0..dim).map(|d| lo[d] + idx[d] as f64 * spacing[d]).collect();
            if let Some(v) = f(&z) {
                if best.as_ref().map_or(true, |(_, b)| v < *b) {
                    best = Some((z, v));
                }
            }
            let mut d = 0;
            while d < dim {
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == dim {
                break;
            }
        }
        let (centre, _) = best.as_ref().expect("grid contains a feasible point");
        let on_edge = (0..dim).any(|d| {
            let at_lo = centre[d] <= lo[d] + 0.5 * spacing[d] && lo[d] > lower[d];
            let at_hi = centre[d] >= hi[d] - 0.5 * spacing[d] && hi[d] < upper[d];
            at_lo || at_hi
        });
        if !on_edge && spacing.iter().all(|s| *s <= resolution) {
            break;
        }
        let factor = if on_edge { 1.0 } else { shrink };
        for d in 0..dim {
            let half = 0.5 * (hi[d] - lo[d]) * factor;
            lo[d] = (centre[d] - half).max(lower[d]);
            hi[d] = (centre[d] + half).min(upper[d]);
        }
    }
    best.expect("grid contains a feasible point")
}

/// Best point of `f` over `{p ≥ 0, Σ p = budget}` in three slots on a grid of `steps` divisions.
pub fn simplex_grid_3(f: &dyn Fn(&[f64]) -> f64, budget: f64, steps: usize) -> (Vec<f64>, f64) {
    let h = budget / steps as f64;
    let mut best = (vec![0.0; 3], f64::INFINITY);
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let p = [i as f64 * h, j as f64 * h, (steps - i - j) as f64 * h];
            let v = f(&p);
            if v < best.1 {
                best = (p.to_vec(), v);
            }
        }
    }
    best
}
