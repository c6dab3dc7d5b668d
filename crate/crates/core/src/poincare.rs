//! Local Poincaré constants and their assembly into global certificates.
//!
//! Given a drift certificate `𝓛V ≤ −γV + b·1_K` and a local inequality on
//! `K`, the stitched constant is `C_P = (1 + T·C_b)/γ` with `T = Σ_K b·ν_K`
//! and `C_b` the constant of
//! `Var_τ(f) ≤ (C_b/ν(K))·⟨f, −𝓛f⟩_ν`, where `τ = b·ν_K/T` is the
//! *normalized* b-weighted measure on `K`.
//!
//! For the super-Halfin–Whitt family the reference closed form bounds
//! `½ΣΣ b(x)ν_K(x) b(y)ν_K(y)(f(x) − f(y))²`, i.e. the variance under the
//! unnormalized weights. It therefore becomes a constant for the normalized
//! `τ` only after division by `T²`; [`weighted_poincare_super_hw`] returns
//! that rescaled value in `c_local` and keeps the reference one alongside.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bdchain::{stationary, BirthDeathChain, RegimeSpec, StateDistribution};
use crate::error::{invalid, Error, Result};
use crate::lyapunov::{super_hw_b_top_closed_form, super_hw_certificate, DriftCertificate};
use crate::numeric::{compensated_sum, ln_factorial, log_sum_exp, KahanSum};
use crate::regimes::{appendix_constants, N0};
use crate::spectral::{dirichlet_form, second_eigenfunction, spectral_gap, variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalMethod {
    CanonicalPath,
    Truncation,
    ClosedFormSuperHw,
}

/// Local Poincaré constant on `K = {k_lo..=k_hi}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPoincareBound {
    pub c_local: f64,
    pub method: LocalMethod,
    pub k_lo: usize,
    pub k_hi: usize,
    /// `b` on `K` for the weighted variant.
    pub weight: Option<Vec<f64>>,
    /// `T = Σ_K b·ν_K` for the weighted variant.
    pub tau_mass: Option<f64>,
    /// Reference constant for the unnormalized weights, when applicable.
    pub c_b_unnormalized: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertMethod {
    Singleton,
    Stitching,
    ConstantB,
    Truncation,
    CanonicalPath,
    RegimeFormula,
    Explicit,
}

impl CertMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CertMethod::Singleton => "singleton",
            CertMethod::Stitching => "stitching",
            CertMethod::ConstantB => "constant_b",
            CertMethod::Truncation => "truncation",
            CertMethod::CanonicalPath => "canonical_path",
            CertMethod::RegimeFormula => "regime_formula",
            CertMethod::Explicit => "explicit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub method: CertMethod,
    pub gamma: Option<f64>,
    pub tau_mass: Option<f64>,
    pub c_local: Option<f64>,
}

/// Global Poincaré constant and the implied χ-decay rate `1/C_P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareCertificate {
    pub c_p: f64,
    pub mixing_rate: f64,
    pub provenance: Provenance,
}

impl PoincareCertificate {
    pub fn new(c_p: f64, provenance: Provenance) -> Result<Self> {
        if !(c_p > 0.0 && c_p.is_finite()) {
            return invalid(format!(
                "Poincaré constant must be positive and finite, got {c_p}"
            ));
        }
        Ok(Self {
            c_p,
            mixing_rate: 1.0 / c_p,
            provenance,
        })
    }

    pub fn explicit(c_p: f64) -> Result<Self> {
        Self::new(
            c_p,
            Provenance {
                method: CertMethod::Explicit,
                gamma: None,
                tau_mass: None,
                c_local: None,
            },
        )
    }
}

fn check_interval(chain: &BirthDeathChain, k_lo: usize, k_hi: usize) -> Result<()> {
    if k_lo > k_hi || k_hi > chain.q_max() {
        return invalid(format!(
            "K = {k_lo}..={k_hi} is not a non-empty interval of the window"
        ));
    }
    Ok(())
}

/// Canonical-path constant
/// `C_L = max_k Σ_{x ≤ k < y} (y − x)m(x)m(y) / (m(k)·birth(k))` over the
/// edges of `K`, with `m` the normalized `measure` (indexed over `K`).
pub fn canonical_path_constant(
    chain: &BirthDeathChain,
    k_lo: usize,
    k_hi: usize,
    measure: &[f64],
) -> Result<LocalPoincareBound> {
    check_interval(chain, k_lo, k_hi)?;
    let size = k_hi - k_lo + 1;
    if measure.len() != size {
        return invalid(format!(
            "measure has {} entries, K has {size}",
            measure.len()
        ));
    }
    if measure.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return invalid("measure must be positive on K");
    }
    let bound = |c_local| LocalPoincareBound {
        c_local,
        method: LocalMethod::CanonicalPath,
        k_lo,
        k_hi,
        weight: None,
        tau_mass: None,
        c_b_unnormalized: None,
    };
    if size == 1 {
        return Ok(bound(0.0));
    }
    let total = compensated_sum(measure.iter().copied());
    let m: Vec<f64> = measure.iter().map(|x| x / total).collect();
    // Positions relative to k_lo keep the prefix sums well conditioned.
    let mass_total = 1.0;
    let first_total = compensated_sum(m.iter().enumerate().map(|(i, p)| i as f64 * p));
    let mut mass_left = KahanSum::new();
    let mut first_left = KahanSum::new();
    let mut c_l: f64 = 0.0;
    for (k, &mk) in m.iter().enumerate().take(size - 1) {
        mass_left.add(mk);
        first_left.add(k as f64 * mk);
        let (ml, fl) = (mass_left.value(), first_left.value());
        // Σ_{x≤k<y} (y − x) m(x) m(y)
        let load = ml * (first_total - fl) - fl * (mass_total - ml);
        let rate = chain.birth(k_lo + k);
        if !(rate > 0.0) {
            return invalid(format!(
                "edge ({}, {}) has zero rate",
                k_lo + k,
                k_lo + k + 1
            ));
        }
        c_l = c_l.max(load / (mk * rate));
    }
    Ok(bound(c_l))
}

/// Slack `c·Σ_{edges in K} e(k)·birth(k)(Δf)² − Var_v(f)` of a local
/// inequality, with `var_measure` and `edge_measure` indexed over `K`
/// (each renormalized). Negative slack is a violation.
pub fn local_poincare_slack(
    chain: &BirthDeathChain,
    k_lo: usize,
    var_measure: &[f64],
    edge_measure: &[f64],
    c: f64,
    f: &[f64],
) -> f64 {
    let size = var_measure.len();
    let vt = compensated_sum(var_measure.iter().copied());
    let et = compensated_sum(edge_measure.iter().copied());
    let mean = compensated_sum((0..size).map(|i| var_measure[i] * f[i])) / vt;
    let var = compensated_sum((0..size).map(|i| var_measure[i] * (f[i] - mean).powi(2))) / vt;
    let edges = compensated_sum(
        (0..size.saturating_sub(1))
            .map(|i| edge_measure[i] * chain.birth(k_lo + i) * (f[i + 1] - f[i]).powi(2)),
    ) / et;
    c * edges - var
}

/// Inherit the outer chain's constant on `K` (e.g. `1/μ` from M/M/∞ for the
/// M/M/n states `{0..n}`, where the two chains have the same rates).
pub fn truncation_local_bound(
    outer_c_p: f64,
    chain: &BirthDeathChain,
    k_lo: usize,
    k_hi: usize,
) -> Result<LocalPoincareBound> {
    check_interval(chain, k_lo, k_hi)?;
    if !(outer_c_p > 0.0) {
        return invalid("outer Poincaré constant must be positive");
    }
    Ok(LocalPoincareBound {
        c_local: outer_c_p,
        method: LocalMethod::Truncation,
        k_lo,
        k_hi,
        weight: None,
        tau_mass: None,
        c_b_unnormalized: None,
    })
}

/// Normalized `ν_K(x) ∝ (λ/μ)^x/x!` on `K` — the M/M/n stationary law
/// restricted below the knee.
pub fn poisson_restricted(load: f64, k_lo: usize, k_hi: usize) -> Vec<f64> {
    let lw: Vec<f64> = (k_lo..=k_hi)
        .map(|x| x as f64 * load.ln() - ln_factorial(x))
        .collect();
    let z = log_sum_exp(&lw);
    lw.iter().map(|l| (l - z).exp()).collect()
}

/// b-weighted local constant for the super-Halfin–Whitt certificate,
/// `α ∈ [1/2, 1)`, `n ≥ 110`.
pub fn weighted_poincare_super_hw(spec: &RegimeSpec) -> Result<LocalPoincareBound> {
    let alpha = spec
        .alpha
        .ok_or_else(|| Error::InvalidParameter("alpha undefined".into()))?;
    if !(0.5..1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!(
            "weighted Poincaré constant needs alpha in [1/2, 1), got {alpha}"
        )));
    }
    if spec.n < N0 {
        return Err(Error::OutOfRange(format!(
            "weighted Poincaré constant is established for n >= {N0}, got {}",
            spec.n
        )));
    }
    let nf = spec.n as f64;
    let c = appendix_constants(nf, alpha);
    let cert = drift_for_weight(spec, alpha)?;
    let nu_k = poisson_restricted(spec.load(), cert.k_lo, cert.k_hi);
    let b = cert.b_values().to_vec();
    let tau_mass = compensated_sum(b.iter().zip(&nu_k).map(|(b, p)| b * p)) / spec.mu;
    // The g₁ term is linear in b(n−1); rescale it when the certificate had
    // to raise b(n−1) above the closed form.
    let kappa = (cert.b(spec.n - 1) / (spec.mu * super_hw_b_top_closed_form(nf, alpha))).max(1.0);
    let c_b =
        (kappa * c.g1 * nf.powf(2.0 - 4.0 * alpha) + c.g2 * nf.powf(3.0 - 6.0 * alpha)) / spec.mu;
    Ok(LocalPoincareBound {
        c_local: c_b / (tau_mass * tau_mass),
        method: LocalMethod::ClosedFormSuperHw,
        k_lo: cert.k_lo,
        k_hi: cert.k_hi,
        weight: Some(b),
        tau_mass: Some(tau_mass),
        c_b_unnormalized: Some(c_b),
    })
}

/// The super-HW certificate; at `α = 1/2` the same closed forms are
/// evaluated at the boundary of their range.
fn drift_for_weight(spec: &RegimeSpec, alpha: f64) -> Result<DriftCertificate> {
    if alpha > 0.5 {
        super_hw_certificate(spec)
    } else {
        super_hw_certificate(&spec.with_alpha_label(0.5 + 1e-12))
    }
}

/// `C_P = (1 + tau_mass·c_b)/γ`.
pub fn stitch(gamma: f64, tau_mass: f64, c_b: f64) -> Result<PoincareCertificate> {
    if !(gamma > 0.0) || tau_mass < 0.0 || c_b < 0.0 {
        return invalid("stitch needs gamma > 0 and nonnegative tau mass and local constant");
    }
    PoincareCertificate::new(
        (1.0 + tau_mass * c_b) / gamma,
        Provenance {
            method: CertMethod::Stitching,
            gamma: Some(gamma),
            tau_mass: Some(tau_mass),
            c_local: Some(c_b),
        },
    )
}

/// `C_P = 1/γ` for a drift certificate whose `K` is a single state.
pub fn singleton_certificate(cert: &DriftCertificate) -> Result<PoincareCertificate> {
    if cert.k_size() != 1 {
        return invalid(format!(
            "singleton certificate needs |K| = 1, got {}",
            cert.k_size()
        ));
    }
    let probe_hi = cert.k_hi + 64;
    if let Some(q) = (0..=probe_hi).find(|&q| q != cert.k_lo && !(cert.v.eval(q) > 0.0)) {
        return invalid(format!(
            "V must be positive off K (V({q}) = {})",
            cert.v.eval(q)
        ));
    }
    singleton_from_gamma(cert.gamma)
}

pub fn singleton_from_gamma(gamma: f64) -> Result<PoincareCertificate> {
    if !(gamma > 0.0) {
        return invalid("gamma must be positive");
    }
    PoincareCertificate::new(
        1.0 / gamma,
        Provenance {
            method: CertMethod::Singleton,
            gamma: Some(gamma),
            tau_mass: None,
            c_local: None,
        },
    )
}

/// `C_P = (1 + B·C_L)/γ` for constant `b ≡ B` on `K`.
pub fn constant_b_certificate(gamma: f64, big_b: f64, c_l: f64) -> Result<PoincareCertificate> {
    if !(gamma > 0.0) || big_b < 0.0 || c_l < 0.0 {
        return invalid("constant-b certificate needs gamma > 0, B >= 0, C_L >= 0");
    }
    PoincareCertificate::new(
        (1.0 + big_b * c_l) / gamma,
        Provenance {
            method: CertMethod::ConstantB,
            gamma: Some(gamma),
            tau_mass: Some(big_b),
            c_local: Some(c_l),
        },
    )
}

/// Full super-HW pipeline: drift certificate, weighted local constant, stitch.
pub fn super_hw_stitched_certificate(
    spec: &RegimeSpec,
) -> Result<(PoincareCertificate, LocalPoincareBound)> {
    let local = weighted_poincare_super_hw(spec)?;
    let tau = local.tau_mass.unwrap_or(0.0);
    let cert = stitch(spec.gamma_critical(), tau, local.c_local)?;
    Ok((cert, local))
}

/// Sub-HW certificate with fractional load: constant `b` and the
/// four-state canonical-path constant `12(λ+1)²/λ³`.
pub fn sub_hw_fractional_certificate(spec: &RegimeSpec) -> Result<PoincareCertificate> {
    let cert = crate::lyapunov::sub_hw_certificate(spec)?;
    let a = spec.load();
    let big_b = f64::max(a.ceil() + 2.0, 2.0 * a);
    let c_l = 12.0 * (a + 1.0).powi(2) / a.powi(3) / spec.mu;
    constant_b_certificate(cert.gamma, spec.mu * big_b, c_l)
}

/// Light-traffic certificate: knee-geometric drift on `{0..n}` plus the
/// M/M/∞ truncation constant `1/μ`.
pub fn mean_field_poincare(spec: &RegimeSpec, z: f64) -> Result<PoincareCertificate> {
    let (gamma, big_b) = crate::lyapunov::mean_field_constants(spec, z);
    constant_b_certificate(gamma, big_b, 1.0 / spec.mu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareReport {
    pub pass: bool,
    /// `min_f (C_P·𝓔(f,f) − Var_ν(f))/max(1, Var_ν(f))` over the probes.
    pub worst_slack: f64,
    pub worst_probe: String,
    pub probes_checked: usize,
    pub mixing_rate: f64,
    pub gap_oracle: f64,
    pub rate_valid: bool,
}

/// Probe functions for Poincaré checks: prefix indicators, polynomials,
/// exponentials, random mixtures and, when available, the second
/// eigenfunction. Deterministic for a given seed.
pub fn probe_functions(
    len: usize,
    n_tests: usize,
    seed: u64,
    eigen: Option<&[f64]>,
) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(String, Vec<f64>)> = Vec::with_capacity(n_tests + 1);
    if let Some(e) = eigen {
        out.push(("eigenfunction".into(), e.to_vec()));
    }
    let scale = (len.max(2) - 1) as f64;
    let mut i = 0usize;
    while out.len() < n_tests {
        let (name, f): (String, Vec<f64>) = match i % 5 {
            0 => {
                let k = rng.gen_range(0..len.max(1));
                (
                    format!("indicator<={k}"),
                    (0..len).map(|q| if q <= k { 1.0 } else { 0.0 }).collect(),
                )
            }
            1 => {
                let d = rng.gen_range(1..=4);
                let shift = rng.gen_range(0.0..1.0);
                (
                    format!("poly{d}@{shift:.3}"),
                    (0..len)
                        .map(|q| (q as f64 / scale - shift).powi(d))
                        .collect(),
                )
            }
            2 => {
                let s = rng.gen_range(-30.0..30.0);
                (
                    format!("exp{s:.3}"),
                    (0..len).map(|q| (s * q as f64 / scale).exp()).collect(),
                )
            }
            3 => {
                let center = rng.gen_range(0.0..1.0);
                let width = rng.gen_range(0.001..0.3);
                (
                    format!("bump@{center:.3}/{width:.3}"),
                    (0..len)
                        .map(|q| (-((q as f64 / scale - center) / width).powi(2)).exp())
                        .collect(),
                )
            }
            _ => {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                let s = rng.gen_range(-10.0..10.0);
                let k = rng.gen_range(0..len.max(1));
                (
                    format!("mix{i}"),
                    (0..len)
                        .map(|q| {
                            let x = q as f64 / scale;
                            a * x
                                + b * (s * x).exp()
                                + if q <= k { 1.0 } else { 0.0 }
                                + rng.gen_range(-0.1..0.1)
                        })
                        .collect(),
                )
            }
        };
        out.push((name, f));
        i += 1;
    }
    out
}

/// Check `Var_ν(f) ≤ C_P·𝓔(f,f)` on seeded probes and `1/C_P` against the
/// spectral gap.
pub fn verify_poincare(
    chain: &BirthDeathChain,
    cert: &PoincareCertificate,
    n_tests: usize,
    seed: u64,
) -> Result<PoincareReport> {
    let nu = stationary(chain);
    let eigen = second_eigenfunction(chain, &nu).ok().map(|(_, f)| f);
    let gap = spectral_gap(chain)?.gap;
    let probes = probe_functions(chain.len(), n_tests, seed, eigen.as_deref());
    let mut worst = (f64::INFINITY, String::new());
    let mut checked = 0;
    for (name, f) in &probes {
        let var = variance(&nu, f);
        let scale = f.iter().map(|x| x * x).fold(0.0, f64::max);
        if var <= 1e-28 * scale.max(1e-300) {
            continue; // constant on the support
        }
        checked += 1;
        let slack = (cert.c_p * dirichlet_form(chain, &nu, f) - var) / var.max(1.0);
        if slack < worst.0 {
            worst = (slack, name.clone());
        }
    }
    let rate_valid = cert.mixing_rate <= gap + 1e-9;
    Ok(PoincareReport {
        pass: worst.0 >= -1e-9 && rate_valid,
        worst_slack: worst.0,
        worst_probe: worst.1,
        probes_checked: checked,
        mixing_rate: cert.mixing_rate,
        gap_oracle: gap,
        rate_valid,
    })
}

/// Sandwich `L_K·n^{α−1} ≤ ν_K(x) ≤ U_K·n^{α−1}` on the super-HW `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoughlyUniform {
    pub l_k: f64,
    pub u_k: f64,
    /// `min_x ν_K(x)/n^{α−1}` and the max.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub holds: bool,
}

pub fn roughly_uniform_bounds(spec: &RegimeSpec) -> Result<RoughlyUniform> {
    let alpha = spec
        .alpha
        .ok_or_else(|| Error::InvalidParameter("alpha undefined".into()))?;
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!(
            "roughly-uniform bounds need alpha in (1/2, 1), got {alpha}"
        )));
    }
    if spec.n < N0 {
        return Err(Error::OutOfRange(format!(
            "roughly-uniform bounds need n >= {N0}, got {}",
            spec.n
        )));
    }
    let nf = spec.n as f64;
    let c = appendix_constants(nf, alpha);
    let cert = super_hw_certificate(spec)?;
    let nu_k = poisson_restricted(spec.load(), cert.k_lo, cert.k_hi);
    let unit = nf.powf(alpha - 1.0);
    let min_ratio = nu_k.iter().copied().fold(f64::INFINITY, f64::min) / unit;
    let max_ratio = nu_k.iter().copied().fold(0.0, f64::max) / unit;
    Ok(RoughlyUniform {
        l_k: c.l_k,
        u_k: c.u_k,
        min_ratio,
        max_ratio,
        holds: c.l_k <= min_ratio && max_ratio <= c.u_k,
    })
}

/// `ν_K` restricted from a stationary law (renormalized).
pub fn restrict(nu: &StateDistribution, k_lo: usize, k_hi: usize) -> Vec<f64> {
    let v: Vec<f64> = (k_lo..=k_hi).map(|q| nu.get(q)).collect();
    let t = compensated_sum(v.iter().copied());
    v.into_iter().map(|x| x / t).collect()
}
