//! Closed-form rate constants per traffic regime and the rate dispatch for
//! `λ = n − n^{1−α}`.
//!
//! | α            | regime              | rate                     |
//! |--------------|---------------------|--------------------------|
//! | `≥ 1`        | super-NDS           | `(√n − √λ)²`             |
//! | `(1/2, 1)`   | super-Halfin–Whitt  | `C_n·(√n − √λ)²`         |
//! | `1/2`        | Halfin–Whitt        | `H_n`                    |
//! | `(0, 1/2)`   | sub-Halfin–Whitt    | `D_n`, or `D̄_n` if λ ∈ ℤ |
//!
//! Rates are for unit service rate and are scaled by `μ` otherwise. Below
//! `n = 110` in `α ∈ [1/2, 1)` the explicit constants are not established and
//! the closed-form spectral lower bound is used instead.

use crate::bdchain::RegimeSpec;
use crate::error::{Error, Result};
use crate::lyapunov::sub_hw_gamma;
use crate::spectral::beta_hat_lower_bound;

/// Smallest `n` for which the explicit super-HW/HW constants hold.
pub const N0: usize = 110;

/// Cap on the τ mass used in `C_n`.
pub const G3_CAP: f64 = 3.48;
pub const G1_CAP: f64 = 384.0;
pub const G2_CAP: f64 = 395.93;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    SuperNds,
    SuperHw,
    HalfinWhitt,
    SubHw,
    SubHwInteger,
    MeanField,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::SuperNds => "super_nds",
            Regime::SuperHw => "super_hw",
            Regime::HalfinWhitt => "halfin_whitt",
            Regime::SubHw => "sub_hw",
            Regime::SubHwInteger => "sub_hw_integer",
            Regime::MeanField => "mean_field",
        }
    }

    /// Regime implied by α alone (fractional load assumed below 1/2).
    pub fn of_alpha(alpha: f64) -> Regime {
        if alpha >= 1.0 {
            Regime::SuperNds
        } else if (alpha - 0.5).abs() < 1e-12 {
            Regime::HalfinWhitt
        } else if alpha > 0.5 {
            Regime::SuperHw
        } else {
            Regime::SubHw
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingRateBound {
    /// χ-decay exponent: `χ(π_t, ν) ≤ e^{−rate·t} χ(π_0, ν)`.
    pub rate: f64,
    pub regime: Regime,
    pub constant_name: &'static str,
    pub constant: f64,
    /// Limit of the constant as `n → ∞`.
    pub asymptote: f64,
    /// How the rate was obtained.
    pub provenance: &'static str,
}

/// Explicit constants of the super-HW weighted Poincaré inequality and
/// roughly-uniform lemma, as functions of real `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixConstants {
    pub p: f64,
    pub s: f64,
    pub e: f64,
    pub l_k: f64,
    pub u_k: f64,
    pub q_l: f64,
    pub u1: f64,
    pub beta: f64,
    pub g1: f64,
    pub g2: f64,
    /// τ-mass constant in its reference form (second term uses `L_K`).
    pub g3: f64,
    /// Same with the second term bounded through `U_K`.
    pub g3_upper: f64,
}

pub fn appendix_constants(n: f64, alpha: f64) -> AppendixConstants {
    let na = n.powf(alpha);
    let nma = 1.0 / na;
    let p = (n * (-1.0 / (na - 2.0).powi(2)).ln_1p()).exp();
    let s2 = 1.0 - 2.0 * nma - 1.0 / n;
    let s = s2.sqrt();
    let e = (1.0 / (12.0 * (n - 2.0 * n.powf(1.0 - alpha)).floor())).exp();
    let denom = e * (2.0 + n.powf(alpha - 1.0));
    let l_k = p * s / denom;
    let u_k = e * s / (2.0 * p);
    let q_l = p * (1.0 - nma) * s / denom;
    let top = 1.0 + 1.0 / (4.0 * (na - 1.0));
    let stirling = (5.0 / (24.0 * n)).exp();
    let u1 = top * stirling * s2 / ((1.0 - nma) * p * p);
    let beta = n.powf(1.0 - 2.0 * alpha) / (1.0 - nma);
    let g1 = u1 / q_l;
    let g2 = 0.5 * (beta * beta.exp()).powi(2) * stirling * s2 / (p * p * q_l);
    let tail = beta.exp() / (1.0 - nma) * 2.0 * n.powf(1.0 - 2.0 * alpha);
    AppendixConstants {
        p,
        s,
        e,
        l_k,
        u_k,
        q_l,
        u1,
        beta,
        g1,
        g2,
        g3: top * u_k + tail * l_k,
        g3_upper: top * u_k + tail * u_k,
    }
}

fn check_super_hw_range(n: f64, alpha: f64) -> Result<()> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!(
            "C_n is defined for alpha in (1/2, 1), got {alpha}"
        )));
    }
    if n < N0 as f64 {
        return Err(Error::OutOfRange(format!("C_n needs n >= {N0}, got {n}")));
    }
    Ok(())
}

/// `1/(1 + 3.48(384 n^{2−4α} + 395.93 n^{3−6α}))`; identically 1 for α ≥ 1.
pub fn c_n(n: f64, alpha: f64) -> Result<f64> {
    if alpha >= 1.0 {
        return Ok(1.0);
    }
    check_super_hw_range(n, alpha)?;
    Ok(1.0
        / (1.0
            + G3_CAP * (G1_CAP * n.powf(2.0 - 4.0 * alpha) + G2_CAP * n.powf(3.0 - 6.0 * alpha))))
}

/// Sub-HW constant at unit service rate: `D̄_n = γ_n` for integer load, else
/// `D_n = γ_n/(1 + 24(λ+1)²/λ²)`, with `γ_n = 1 − n^{2α−1}/(1 + n^{α−1})`.
pub fn d_n(n: f64, alpha: f64, lambda_is_integer: bool) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::OutOfRange(format!(
            "D_n is defined for alpha in (0, 1/2), got {alpha}"
        )));
    }
    let lambda = n - n.powf(1.0 - alpha);
    if lambda < 3.0 {
        return Err(Error::OutOfRange(format!(
            "D_n needs lambda >= 3, got {lambda}"
        )));
    }
    let gamma = 1.0 - n.powf(2.0 * alpha - 1.0) / (1.0 + n.powf(alpha - 1.0));
    Ok(d_from_gamma(gamma, lambda, lambda_is_integer))
}

fn d_from_gamma(gamma: f64, lambda: f64, integer: bool) -> f64 {
    if integer {
        gamma
    } else {
        gamma / (1.0 + 24.0 * (lambda + 1.0).powi(2) / (lambda * lambda))
    }
}

/// Halfin–Whitt constant `1/(4(1 + g₃(g₁ + g₂)))` at `α = 1/2`.
pub fn h_n(n: f64) -> Result<f64> {
    if n < N0 as f64 {
        return Err(Error::OutOfRange(format!("H_n needs n >= {N0}, got {n}")));
    }
    let c = appendix_constants(n, 0.5);
    Ok(1.0 / (4.0 * (1.0 + c.g3 * (c.g1 + c.g2))))
}

/// Poincaré rate `1/C_P` of the knee-geometric certificate at a given `z`.
pub fn l_n_with_z(n: f64, lambda: f64, z: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < n) {
        return Err(Error::OutOfRange(format!(
            "L_n needs 0 < lambda < n, got lambda = {lambda}, n = {n}"
        )));
    }
    if !(z > 1.0 && z < n / lambda) {
        return Err(Error::OutOfRange(format!("z = {z} outside (1, n/lambda)")));
    }
    let k = n / (lambda * z) - 1.0;
    let c_p = 1.0 + 1.0 / k + 1.0 / (lambda * (z - 1.0) * k);
    Ok(1.0 / c_p)
}

/// `(rate, z)` with `z = min{1 + 1/ln n, (1 + n/λ)/2}`.
pub fn l_n(n: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0 && lambda < n) || n <= 1.0 {
        return Err(Error::OutOfRange(format!(
            "L_n needs 0 < lambda < n, got lambda = {lambda}, n = {n}"
        )));
    }
    let z = f64::min(1.0 + 1.0 / n.ln(), 0.5 * (1.0 + n / lambda));
    Ok((l_n_with_z(n, lambda, z)?, z))
}

/// `(rate, z)` with `z` chosen to maximize the rate over `(1, n/λ)`.
///
/// Any admissible `z` yields a valid certificate; the prescribed `z` of
/// [`l_n`] approaches its limit only logarithmically in `n`.
pub fn l_n_optimal(n: f64, lambda: f64) -> Result<(f64, f64)> {
    let (_, z0) = l_n(n, lambda)?;
    let hi = n / lambda;
    // The rate is unimodal in ln(z − 1) on (1, n/λ): golden-section search.
    let (mut a, mut b) = ((1e-300f64).max((hi - 1.0) * 1e-16).ln(), (hi - 1.0).ln());
    let rate_at = |t: f64| {
        let z = 1.0 + t.exp();
        if z > 1.0 && z < hi {
            l_n_with_z(n, lambda, z).unwrap_or(0.0)
        } else {
            0.0
        }
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if rate_at(c) >= rate_at(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let z = 1.0 + (0.5 * (a + b)).exp();
    let best = rate_at(0.5 * (a + b));
    let base = l_n_with_z(n, lambda, z0)?;
    Ok(if best >= base { (best, z) } else { (base, z0) })
}

/// `min{(√n − √λ)², ½√(λ/n)}·μ`.
pub fn zeta_spectral_bound(spec: &RegimeSpec) -> f64 {
    beta_hat_lower_bound(spec)
}

fn gamma_ratio(spec: &RegimeSpec, rate: f64) -> f64 {
    let g = spec.gamma_critical();
    if g > 0.0 {
        (rate / g).min(1.0)
    } else {
        1.0
    }
}

fn fallback(spec: &RegimeSpec, regime: Regime) -> MixingRateBound {
    let rate = zeta_spectral_bound(spec);
    MixingRateBound {
        rate,
        regime,
        constant_name: "zeta_n",
        constant: gamma_ratio(spec, rate),
        asymptote: f64::NAN,
        provenance: "spectral_lower_bound_fallback",
    }
}

/// Certified χ-decay rate for the M/M/n queue `spec`.
pub fn theorem1_rate(spec: &RegimeSpec) -> Result<MixingRateBound> {
    let gamma = spec.gamma_critical();
    let nf = spec.n as f64;
    let alpha = match spec.alpha {
        None => {
            return Ok(MixingRateBound {
                rate: gamma,
                regime: Regime::SuperNds,
                constant_name: "1",
                constant: 1.0,
                asymptote: 1.0,
                provenance: "singleton",
            })
        }
        Some(a) => a,
    };
    match Regime::of_alpha(alpha) {
        Regime::SuperNds => Ok(MixingRateBound {
            rate: gamma,
            regime: Regime::SuperNds,
            constant_name: "1",
            constant: 1.0,
            asymptote: 1.0,
            provenance: "singleton",
        }),
        Regime::SuperHw => {
            if spec.n < N0 {
                return Ok(fallback(spec, Regime::SuperHw));
            }
            let c = c_n(nf, alpha)?;
            Ok(MixingRateBound {
                rate: c * gamma,
                regime: Regime::SuperHw,
                constant_name: "C_n",
                constant: c,
                asymptote: 1.0,
                provenance: "stitching",
            })
        }
        Regime::HalfinWhitt => {
            if spec.n < N0 {
                return Ok(fallback(spec, Regime::HalfinWhitt));
            }
            let h = h_n(nf)?;
            Ok(MixingRateBound {
                rate: spec.mu * h,
                regime: Regime::HalfinWhitt,
                constant_name: "H_n",
                constant: h,
                asymptote: halfin_whitt_limit(),
                provenance: "stitching",
            })
        }
        _ => {
            let load = spec.load();
            let g = sub_hw_gamma(spec) / spec.mu;
            if load < 3.0 || g <= 0.0 {
                return Ok(fallback(spec, Regime::SubHw));
            }
            let integer = spec.integer_load().is_some();
            let d = d_from_gamma(g, load, integer);
            Ok(MixingRateBound {
                rate: spec.mu * d,
                regime: if integer {
                    Regime::SubHwInteger
                } else {
                    Regime::SubHw
                },
                constant_name: if integer { "D_bar_n" } else { "D_n" },
                constant: d,
                asymptote: if integer { 1.0 } else { 1.0 / 25.0 },
                provenance: if integer { "singleton" } else { "constant_b" },
            })
        }
    }
}

/// Rate for loads well below capacity, from the knee-geometric certificate.
pub fn mean_field_rate(spec: &RegimeSpec) -> Result<MixingRateBound> {
    let nf = spec.n as f64;
    let (l, _) = l_n(nf, spec.load())?;
    Ok(MixingRateBound {
        rate: spec.mu * l,
        regime: Regime::MeanField,
        constant_name: "L_n",
        constant: l,
        asymptote: 1.0 - spec.rho(),
        provenance: "constant_b",
    })
}

/// `n → ∞` value of `H_n`, from the limits of `g₁, g₂, g₃` at `α = 1/2`.
pub fn halfin_whitt_limit() -> f64 {
    let e = std::f64::consts::E;
    let g3 = e / 2.0 + 1.0;
    1.0 / (4.0 * (1.0 + g3 * (2.0 * e.powi(3) + e.powi(5))))
}

/// Time after which `χ(π_t, ν) ≤ eps` is guaranteed, given `χ(π_0, ν) = chi0`.
pub fn mixing_time_bound(spec: &RegimeSpec, chi0: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !(chi0 >= 0.0) {
        return Err(Error::InvalidParameter("need eps > 0 and chi0 >= 0".into()));
    }
    if eps >= chi0 {
        return Ok(0.0);
    }
    let log = (chi0 / eps).ln();
    let bound = theorem1_rate(spec)?;
    let nf = spec.n as f64;
    let t = match (spec.alpha, bound.provenance) {
        (Some(alpha), "singleton") if bound.regime == Regime::SuperNds => {
            4.0 * nf.powf(2.0 * alpha - 1.0) * log / spec.mu
        }
        (Some(alpha), "stitching") if bound.regime == Regime::SuperHw => {
            4.0 / bound.constant * nf.powf(2.0 * alpha - 1.0) * log / spec.mu
        }
        _ => log / bound.rate,
    };
    Ok(t)
}
