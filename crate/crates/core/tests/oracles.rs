//! Independent reference computations checked against the library.

use irt_core::analysis::{ece, kendall_tau};
use irt_core::irt::{beta_log_density, beta_shape, icc_1pl, log_sigmoid, ModelKind};
use irt_core::synth::{generate_parameters, generate_responses, GeneratorSpec};
use irt_core::vi::{elbo_estimate, fit, initial_posterior, FitConfig, HyperPriors, Observations};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

/// Tau-b by counting every pair.
fn kendall_brute(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
            let dy = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
            if dx == 0.0 {
                tie_x += 1;
            }
            if dy == 0.0 {
                tie_y += 1;
            }
            let s = dx * dy;
            if s > 0.0 {
                concordant += 1;
            } else if s < 0.0 {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (concordant - discordant) as f64 / (((n0 - tie_x) as f64) * ((n0 - tie_y) as f64)).sqrt()
}

#[test]
fn kendall_matches_pair_counting_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let n = rng.random_range(2..60);
        // few distinct values so ties are common
        let levels = rng.random_range(2..8);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
        let expected = kendall_brute(&x, &y);
        match kendall_tau(&x, &y) {
            Ok(t) => assert!((t - expected).abs() < 1e-12, "case {case}: {t} vs {expected}"),
            Err(_) => assert!(expected.is_nan(), "case {case}: refused a defined tau {expected}"),
        }
    }
}

/// Trapezoid rule in logit space, where `dy = y(1-y) dx` removes the
/// endpoint singularities. Beyond |x| = 25 the integrand is `e^{mx}/B` (or
/// `e^{-nx}/B`) to about 1e-11, so the tails are added in closed form;
/// stopping there also keeps `1 - y` well resolved in f64.
fn beta_moments(m: f64, n: f64) -> (f64, f64) {
    let ln_b = ln_gamma(m) + ln_gamma(n) - ln_gamma(m + n);
    let (lo, hi, h) = (-25.0, 25.0, 1e-3);
    let steps = ((hi - lo) / h) as usize;
    let (mut mass, mut mean) = (0.0, 0.0);
    for k in 0..=steps {
        let x = lo + k as f64 * h;
        let y = 1.0 / (1.0 + (-x).exp());
        let w = if k == 0 || k == steps { 0.5 * h } else { h };
        let f = (beta_log_density(y, m, n).unwrap() + log_sigmoid(x) + log_sigmoid(-x)).exp();
        mass += w * f;
        mean += w * f * y;
    }
    let lower = (m * lo - ln_b).exp() / m;
    let upper = (-n * hi - ln_b).exp() / n;
    (mass + lower + upper, mean + upper)
}

#[test]
fn beta_density_integrates_to_one_with_the_1pl_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases: Vec<(f64, f64)> = (0..20)
        .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
        .collect();
    // shapes past the large-shape switch
    cases.extend([(8.0, -8.0), (-8.0, 8.0), (0.0, 0.0)]);
    for (theta, b) in cases {
        let (m, n) = beta_shape(theta, b);
        let (mass, mean) = beta_moments(m, n);
        assert!((mass - 1.0).abs() < 1e-6, "θ={theta} b={b}: mass {mass}");
        assert!((mean - icc_1pl(theta, b)).abs() < 1e-6, "θ={theta} b={b}: mean {mean}");
    }
}

#[test]
fn ece_matches_hand_computed_bins() {
    // two bins of width 0.5: [0.2, 0.4] with one hit, [0.6, 0.8, 0.9] with two
    let conf = [0.2, 0.4, 0.6, 0.8, 0.9];
    let correct = [0, 1, 1, 1, 0];
    let low = (2.0 / 5.0) * (0.5f64 - 0.3).abs();
    let high = (3.0 / 5.0) * (2.0f64 / 3.0 - (0.6 + 0.8 + 0.9) / 3.0).abs();
    let got = ece(&conf, &correct, 2).unwrap();
    assert!((got - (low + high)).abs() < 1e-12);
}

#[test]
fn fitted_elbo_beats_the_starting_point() {
    let spec = GeneratorSpec::new(20, 60, ModelKind::TwoPL).unwrap();
    let truth = generate_parameters(&spec, 2).unwrap();
    let r = generate_responses(&truth, spec.model_ids(), spec.item_ids(), 2).unwrap();
    let priors = HyperPriors::default();
    let config = FitConfig {
        seed: 2,
        epochs: 400,
        ..FitConfig::default()
    };
    let fitted = fit(&r, ModelKind::TwoPL, &config, &priors).unwrap();
    let obs = Observations {
        responses: Some(&r),
        confidences: None,
    };
    let start = initial_posterior(ModelKind::TwoPL, spec.model_ids(), spec.item_ids());
    let before = elbo_estimate(&start, obs, &priors, 200, 9).unwrap();
    let after = elbo_estimate(&fitted.posterior, obs, &priors, 200, 9).unwrap();
    assert!(after > before + 100.0, "ELBO {before} -> {after}");
    // the same draws give the same estimate
    assert_eq!(after, elbo_estimate(&fitted.posterior, obs, &priors, 200, 9).unwrap());
}
