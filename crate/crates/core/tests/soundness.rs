//! Certified rates against the spectral-gap oracle, and the drift catalog.

use bdmix::bdchain::{build_mminf, build_mmn, choose_truncation, stationary, RegimeSpec};
use bdmix::lyapunov::{
    certify_drift, mean_field_certificate, mminf_certificate, sub_hw_certificate,
    super_hw_certificate, super_hw_singleton_certificate,
};
use bdmix::poincare::{
    canonical_path_constant, local_poincare_slack, poisson_restricted, probe_functions,
    roughly_uniform_bounds, super_hw_stitched_certificate, verify_poincare,
    weighted_poincare_super_hw,
};
use bdmix::regimes::{c_n, l_n, mean_field_rate, theorem1_rate};
use bdmix::spectral::spectral_gap;

fn gap(spec: &RegimeSpec) -> f64 {
    spectral_gap(&build_mmn(spec, spec.n + 10).unwrap())
        .unwrap()
        .gap
}

fn grid() -> Vec<(usize, f64)> {
    let mut g = Vec::new();
    for n in [4, 64, 512] {
        for a in [1.0, 2.0] {
            g.push((n, a));
        }
    }
    for n in [110, 500, 2000] {
        for a in [0.6, 0.75] {
            g.push((n, a));
        }
    }
    for n in [110, 1000] {
        g.push((n, 0.5));
    }
    for n in [100, 1000, 5000] {
        for a in [0.2, 0.25, 0.4] {
            g.push((n, a));
        }
    }
    g
}

#[test]
fn rate_never_exceeds_gap_on_grid() {
    for (n, alpha) in grid() {
        let spec = RegimeSpec::from_alpha(n, alpha).unwrap();
        let rate = theorem1_rate(&spec).unwrap().rate;
        let g = gap(&spec);
        assert!(rate > 0.0, "n={n} alpha={alpha}");
        assert!(
            rate <= g + 1e-9,
            "n={n} alpha={alpha}: rate {rate} > gap {g}"
        );
    }
}

#[test]
fn rate_is_tight_above_alpha_one() {
    for n in [4, 64] {
        for alpha in [1.0, 2.0] {
            let spec = RegimeSpec::from_alpha(n, alpha).unwrap();
            let q = choose_truncation(&spec, 1e-13).unwrap();
            let g = spectral_gap(&build_mmn(&spec, q).unwrap()).unwrap().gap;
            let rate = theorem1_rate(&spec).unwrap().rate;
            assert!(rate / g >= 0.999, "n={n} alpha={alpha}: {rate}/{g}");
        }
    }
}

#[test]
fn super_hw_drift_catalog_certifies() {
    for n in [2, 4, 7, 8, 16, 64, 110, 500, 2000] {
        for alpha in [0.6, 0.75, 0.9, 1.0, 1.5, 2.0] {
            let spec = RegimeSpec::from_alpha(n, alpha).unwrap();
            let cert = super_hw_certificate(&spec).unwrap();
            let chain = build_mmn(&spec, n + 400).unwrap();
            let r = certify_drift(&chain, &cert, 1e-9);
            assert!(r.pass, "n={n} alpha={alpha}: {r:?}");
        }
    }
}

#[test]
fn singleton_super_hw_certificate_certifies() {
    for n in [2, 4, 16, 64, 512] {
        for alpha in [1.0, 1.5, 2.0] {
            let spec = RegimeSpec::from_alpha(n, alpha).unwrap();
            let cert = super_hw_singleton_certificate(&spec).unwrap();
            assert_eq!(cert.k_size(), 1);
            let chain = build_mmn(&spec, n + 400).unwrap();
            assert!(
                certify_drift(&chain, &cert, 1e-9).pass,
                "n={n} alpha={alpha}"
            );
        }
    }
}

#[test]
fn sub_hw_drift_catalog_certifies() {
    // Integer loads (α ≈ 0.35 and 1/3) and fractional ones.
    let specs = [
        RegimeSpec::from_lambda(1000, 900.0, 1.0).unwrap(),
        RegimeSpec::from_lambda(100, 80.0, 1.0).unwrap(),
        RegimeSpec::from_alpha(100, 0.25).unwrap(),
        RegimeSpec::from_alpha(1000, 0.25).unwrap(),
        RegimeSpec::from_alpha(1000, 0.4).unwrap(),
        RegimeSpec::from_alpha(5000, 0.2).unwrap(),
    ];
    for spec in specs {
        let cert = sub_hw_certificate(&spec).unwrap();
        let chain = build_mmn(&spec, spec.n + 400).unwrap();
        let r = certify_drift(&chain, &cert, 1e-9);
        assert!(r.pass, "n={} load={}: {r:?}", spec.n, spec.load());
    }
}

#[test]
fn mean_field_and_mminf_catalog_certify() {
    for (n, load) in [(10, 3.0), (100, 30.0), (100, 90.0), (1000, 300.0)] {
        let spec = RegimeSpec::from_lambda(n, load, 1.0).unwrap();
        let (_, z) = l_n(n as f64, load).unwrap();
        let cert = mean_field_certificate(&spec, z).unwrap();
        let chain = build_mmn(&spec, n + 400).unwrap();
        let r = certify_drift(&chain, &cert, 1e-9);
        assert!(r.pass, "n={n} load={load}: {r:?}");
    }
    for (lambda, mu) in [(4.0, 1.0), (4.0, 2.0), (10.0, 1.0)] {
        let cert = mminf_certificate(lambda, mu).unwrap();
        let chain = build_mminf(lambda, mu, 200).unwrap();
        assert!(
            certify_drift(&chain, &cert, 1e-9).pass,
            "lambda={lambda} mu={mu}"
        );
    }
}

#[test]
fn mean_field_rate_below_gap() {
    for (n, load) in [(10, 3.0), (100, 30.0), (100, 90.0), (1000, 300.0)] {
        let spec = RegimeSpec::from_lambda(n, load, 1.0).unwrap();
        let rate = mean_field_rate(&spec).unwrap().rate;
        assert!(rate <= gap(&spec) + 1e-9, "n={n} load={load}");
    }
}

#[test]
fn canonical_path_on_super_hw_window() {
    let spec = RegimeSpec::from_alpha(110, 0.75).unwrap();
    let cert = super_hw_certificate(&spec).unwrap();
    let chain = build_mmn(&spec, 150).unwrap();
    let nu_k = poisson_restricted(spec.load(), cert.k_lo, cert.k_hi);
    let local = canonical_path_constant(&chain, cert.k_lo, cert.k_hi, &nu_k).unwrap();
    let size = cert.k_hi - cert.k_lo + 1;
    for (name, f) in probe_functions(size, 1000, 7, None) {
        let s = local_poincare_slack(&chain, cert.k_lo, &nu_k, &nu_k, local.c_local, &f);
        assert!(s >= -1e-9, "{name}: {s}");
    }
}

#[test]
fn roughly_uniform_sandwich() {
    for n in [110, 500, 2000] {
        let r = roughly_uniform_bounds(&RegimeSpec::from_alpha(n, 0.75).unwrap()).unwrap();
        assert!(r.holds, "n={n}: {r:?}");
    }
}

#[test]
fn stitched_pipeline_is_sound_and_matches_constant() {
    for n in [110, 500, 2000] {
        for alpha in [0.6, 0.75] {
            let spec = RegimeSpec::from_alpha(n, alpha).unwrap();
            let (cert, local) = super_hw_stitched_certificate(&spec).unwrap();
            let g = gap(&spec);
            assert!(
                cert.mixing_rate <= g + 1e-9,
                "n={n} alpha={alpha}: {} > {g}",
                cert.mixing_rate
            );
            let ratio = cert.mixing_rate / spec.gamma_critical();
            let c = c_n(n as f64, alpha).unwrap();
            assert!(
                ratio >= c - 1e-12,
                "n={n} alpha={alpha}: {ratio} < C_n {c}; local {local:?}"
            );
        }
    }
}

#[test]
fn weighted_local_inequality_holds_numerically() {
    // Var_τ(f) ≤ (C_b/ν(K))·Σ_K-edges ν(x)birth(x)(Δf)², τ = b·ν_K/T.
    for (n, alpha) in [(110, 0.75), (500, 0.6)] {
        let spec = RegimeSpec::from_alpha(n, alpha).unwrap();
        let local = weighted_poincare_super_hw(&spec).unwrap();
        let chain = build_mmn(&spec, n + 10).unwrap();
        let nu = stationary(&chain).normalized();
        let b = local.weight.clone().unwrap();
        let nu_k: Vec<f64> = (local.k_lo..=local.k_hi).map(|q| nu.get(q)).collect();
        let mass: f64 = nu_k.iter().sum();
        let nu_k: Vec<f64> = nu_k.iter().map(|p| p / mass).collect();
        let t: f64 = b.iter().zip(&nu_k).map(|(b, p)| b * p).sum();
        let tau: Vec<f64> = b.iter().zip(&nu_k).map(|(b, p)| b * p / t).collect();
        let size = local.k_hi - local.k_lo + 1;
        for (name, f) in probe_functions(size, 300, 11, None) {
            let s = local_poincare_slack(&chain, local.k_lo, &tau, &nu_k, local.c_local, &f);
            assert!(s >= -1e-9, "n={n} alpha={alpha} {name}");
        }
    }
}

#[test]
fn verify_poincare_accepts_stitched_certificate() {
    let spec = RegimeSpec::from_alpha(110, 0.75).unwrap();
    let (cert, _) = super_hw_stitched_certificate(&spec).unwrap();
    let r = verify_poincare(&build_mmn(&spec, 160).unwrap(), &cert, 200, 3).unwrap();
    assert!(r.pass, "{r:?}");
}
