mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2xmp_core::special::{bessel_i0, bessel_i0_scaled, marcum_q1, noncentral_chi2_cdf, MarcumArgs};

#[test]
fn bessel_matches_integral_representation() {
    for x in [0.0, 0.1, 1.0, 2.5, 10.0, 29.9, 30.1, 50.0, 200.0, 700.0] {
        let reference = oracles::bessel_i0_scaled_trapezoid(x);
        let got = bessel_i0_scaled(x);
        assert!((got - reference).abs() <= 1e-13 * reference, "x={x}: {got} vs {reference}");
    }
    for x in [0.5, 5.0, 25.0] {
        let reference = oracles::bessel_i0_scaled_trapezoid(x) * f64::exp(x);
        let got = bessel_i0(x).unwrap();
        assert!((got - reference).abs() <= 1e-13 * reference, "x={x}");
    }
}

#[test]
fn marcum_q1_matches_quadrature_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (a, b) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let got = marcum_q1(MarcumArgs::new(a, b).unwrap());
        let reference = oracles::marcum_q1_quadrature(a, b);
        worst = worst.max((got - reference).abs());
    }
    assert!(worst <= 1e-10, "max deviation {worst:e}");
}

#[test]
fn marcum_q1_edge_values() {
    for a in [0.0, 1.0, 7.0] {
        assert_eq!(marcum_q1(MarcumArgs::new(a, 0.0).unwrap()), 1.0);
        assert_eq!(marcum_q1(MarcumArgs::new(a, f64::INFINITY).unwrap()), 0.0);
    }
    for b in [0.3, 1.0, 4.0] {
        let rayleigh = f64::exp(-b * b / 2.0);
        assert!((marcum_q1(MarcumArgs::new(0.0, b).unwrap()) - rayleigh).abs() < 1e-15);
    }
}

#[test]
fn chi2_cdf_matches_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let beta = rng.random_range(0.05..0.95);
        let h = -f64::ln(1.0 - rng.random::<f64>());
        let x = rng.random_range(0.01..4.0);
        let got = noncentral_chi2_cdf(x, beta, h).unwrap();
        let sampled = oracles::chi2_cdf_monte_carlo(x, beta, h, 10_000_000, &mut rng);
        assert!((got - sampled).abs() <= 3e-3, "beta={beta} h={h} x={x}: {got} vs {sampled}");
    }
}

#[test]
fn perfect_csi_cdf_is_a_step() {
    assert_eq!(noncentral_chi2_cdf(0.99, 1.0, 1.0).unwrap(), 0.0);
    assert_eq!(noncentral_chi2_cdf(1.01, 1.0, 1.0).unwrap(), 1.0);
}
