//! Transient solver against independent oracles.

use approx::assert_relative_eq;
use bdmix::bdchain::{
    build_mminf, build_mmn, choose_truncation, stationary, BirthDeathChain, RegimeSpec,
    StateDistribution,
};
use bdmix::lyapunov::mminf_certificate;
use bdmix::poincare::singleton_certificate;
use bdmix::regimes::{mixing_time_bound, theorem1_rate};
use bdmix::spectral::spectral_gap;
use bdmix::transient::{chi, chi_square, decay_trace, evolve, tv_distance};
use bdmix::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

/// Gillespie simulation of the queue length at time `t` from `q0`.
fn simulate(lambda: f64, mu: f64, n: usize, q0: usize, t: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut q = q0;
    let mut now = 0.0;
    loop {
        let up = lambda;
        let down = mu * q.min(n) as f64;
        let total = up + down;
        now += Exp::new(total).unwrap().sample(rng);
        if now > t {
            return q;
        }
        if rng.gen::<f64>() * total < up {
            q += 1;
        } else {
            q -= 1;
        }
    }
}

#[test]
fn evolve_matches_monte_carlo() {
    let spec = RegimeSpec::from_lambda(4, 3.0, 1.0).unwrap();
    let chain = build_mmn(&spec, 80).unwrap();
    let pt = evolve(
        &chain,
        &StateDistribution::dirac(0, 80).unwrap(),
        1.0,
        1e-12,
    )
    .unwrap();
    let paths = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hist = vec![0usize; 81];
    for _ in 0..paths {
        hist[simulate(3.0, 1.0, 4, 0, 1.0, &mut rng).min(80)] += 1;
    }
    for (q, &h) in hist.iter().enumerate().take(10) {
        let p = pt.get(q);
        let phat = h as f64 / paths as f64;
        let se = (p * (1.0 - p) / paths as f64).sqrt().max(1e-6);
        assert!(
            (phat - p).abs() <= 3.0 * se,
            "q={q}: mc {phat} vs {p} (se {se})"
        );
    }
}

#[test]
fn mminf_from_empty_is_poisson() {
    // Starting empty, q_t ~ Poisson(a(1 − e^{−μt})).
    let (lambda, mu, t) = (4.0, 1.0, 0.7);
    let chain = build_mminf(lambda, mu, 80).unwrap();
    let pt = evolve(&chain, &StateDistribution::dirac(0, 80).unwrap(), t, 1e-13).unwrap();
    let m: f64 = lambda / mu * (1.0 - (-mu * t).exp());
    let mut log_p = -m;
    for q in 0..30 {
        if q > 0 {
            log_p += m.ln() - (q as f64).ln();
        }
        assert_relative_eq!(pt.get(q), log_p.exp(), epsilon = 1e-12);
    }
}

#[test]
fn two_state_chain_closed_form() {
    // 0 ⇄ 1 with rates a, b: P_t(0→1) = a/(a+b)(1 − e^{−(a+b)t}).
    let (a, b) = (0.7, 1.9);
    let chain = BirthDeathChain::custom(vec![a, 0.0], vec![0.0, b]).unwrap();
    for t in [0.1, 1.0, 5.0] {
        let pt = evolve(&chain, &StateDistribution::dirac(0, 1).unwrap(), t, 1e-14).unwrap();
        let expected = a / (a + b) * (1.0 - (-(a + b) * t).exp());
        assert_relative_eq!(pt.get(1), expected, epsilon = 1e-13);
    }
}

#[test]
fn mm1_gap_and_singleton_rate() {
    let spec = RegimeSpec::from_lambda(1, 0.25, 1.0).unwrap();
    let g = spectral_gap(&build_mmn(&spec, 2000).unwrap()).unwrap().gap;
    assert!((g - 0.25).abs() <= 1e-6);
    let b = theorem1_rate(&spec).unwrap();
    assert_eq!(b.rate, 0.25);
    assert_eq!(b.provenance, "singleton");
}

#[test]
fn mminf_gap_and_certificate_rate() {
    let chain = build_mminf(4.0, 1.0, 100).unwrap();
    assert!((spectral_gap(&chain).unwrap().gap - 1.0).abs() <= 1e-6);
    let cert = singleton_certificate(&mminf_certificate(4.0, 1.0).unwrap()).unwrap();
    assert_relative_eq!(cert.mixing_rate, 1.0, epsilon = 1e-15);
}

#[test]
fn chi_decays_at_certified_rate() {
    let spec = RegimeSpec::from_alpha(16, 1.0).unwrap();
    let q = choose_truncation(&spec, 1e-13).unwrap();
    let chain = build_mmn(&spec, q).unwrap();
    let rate = (4.0 - spec.lambda.sqrt()).powi(2);
    let grid: Vec<f64> = (1..=40).map(|k| 0.5 * k as f64).collect();
    let nu = stationary(&chain).normalized();
    for start in [0, 48] {
        let pi0 = StateDistribution::dirac(start, q).unwrap();
        let chi0 = chi(&pi0, &nu).unwrap();
        for p in decay_trace(&chain, &pi0, &grid, 1e-13).unwrap() {
            let bound = (-rate * p.t).exp() * chi0 * (1.0 + 1e-6);
            assert!(
                p.chi <= bound,
                "start={start} t={}: {} > {bound}",
                p.t,
                p.chi
            );
        }
    }
}

#[test]
fn mixing_time_corollary() {
    let spec = RegimeSpec::from_alpha(4, 1.0).unwrap();
    let q = choose_truncation(&spec, 1e-13).unwrap();
    let chain = build_mmn(&spec, q).unwrap();
    let nu = stationary(&chain).normalized();
    let pi0 = StateDistribution::dirac(0, q).unwrap();
    let chi0 = chi(&pi0, &nu).unwrap();
    let bound = mixing_time_bound(&spec, chi0, 0.01).unwrap();
    assert!((bound - 16.0 * (chi0 / 0.01).ln()).abs() < 1e-9);
    let grid: Vec<f64> = (1..=1000).map(|k| 0.1 * k as f64).collect();
    let first = decay_trace(&chain, &pi0, &grid, 1e-13)
        .unwrap()
        .into_iter()
        .find(|p| p.chi <= 0.01)
        .map(|p| p.t)
        .unwrap();
    assert!(first <= bound, "{first} > {bound}");
}

#[test]
fn tv_is_bounded_by_half_chi() {
    let spec = RegimeSpec::from_alpha(8, 1.0).unwrap();
    let chain = build_mmn(&spec, 120).unwrap();
    let pi0 = StateDistribution::dirac(0, 120).unwrap();
    for p in decay_trace(&chain, &pi0, &[0.1, 1.0, 5.0, 20.0], 1e-13).unwrap() {
        assert!(p.tv <= 0.5 * p.chi + 1e-15);
    }
}

#[test]
fn tv_can_exceed_chi_square() {
    // p = (1/2 + e, 1/2 − e), q uniform: TV = e, χ² = 4e².
    let e = 0.1;
    let p = StateDistribution::from_probs(vec![0.5 + e, 0.5 - e]).unwrap();
    let q = StateDistribution::from_probs(vec![0.5, 0.5]).unwrap();
    assert_relative_eq!(tv_distance(&p, &q), e, epsilon = 1e-15);
    assert_relative_eq!(chi_square(&p, &q).unwrap(), 4.0 * e * e, epsilon = 1e-15);
    assert!(tv_distance(&p, &q) > chi_square(&p, &q).unwrap());
}

#[test]
fn chi_square_reports_missing_support() {
    let p = StateDistribution::from_probs(vec![0.5, 0.5]).unwrap();
    let q = StateDistribution::from_probs(vec![1.0, 0.0]).unwrap();
    match chi_square(&p, &q) {
        Err(Error::NotAbsolutelyContinuous { state, .. }) => assert_eq!(state, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn evolve_conserves_mass_in_window() {
    let spec = RegimeSpec::from_alpha(64, 0.75).unwrap();
    let chain = build_mmn(&spec, 400).unwrap();
    let pt = evolve(
        &chain,
        &StateDistribution::uniform(10, 90, 400).unwrap(),
        3.0,
        1e-12,
    )
    .unwrap();
    let mass: f64 = pt.probs.iter().sum();
    assert!((mass + pt.tail_mass - 1.0).abs() < 1e-12);
    assert!(pt.tail_mass < 1e-10);
}
