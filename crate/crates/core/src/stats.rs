//! Finite-time queue statistics implied by χ-decay, and their numerical
//! counterparts.

use crate::bdchain::{build_mmn, stationary, RegimeSpec, StateDistribution};
use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, KahanSum};
use crate::regimes::{MixingRateBound, Regime};
use crate::transient::chi_square;

/// `E[e^{θ(q − center)}]`; the geometric tail beyond the window is included
/// in closed form when the distribution carries one.
pub fn mgf(dist: &StateDistribution, theta: f64, center: f64) -> Result<f64> {
    let q_max = dist.q_max();
    let mut logs: Vec<f64> = (0..=q_max)
        .filter(|&q| dist.get(q) > 0.0)
        .map(|q| dist.ln_prob(q) + theta * (q as f64 - center))
        .collect();
    if let (Some(rho), true) = (dist.tail_ratio, dist.tail_mass > 0.0) {
        let r = rho.ln() + theta;
        if r >= 0.0 {
            return Err(Error::Divergent(format!(
                "geometric tail with ratio rho*e^theta = {} >= 1",
                r.exp()
            )));
        }
        // Σ_{k≥1} p(q_max) e^{θ(q_max + k − c)} ρ^k
        logs.push(dist.ln_prob(q_max) + theta * (q_max as f64 - center) + r - (-r.exp()).ln_1p());
    }
    if logs.is_empty() {
        return Ok(0.0);
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = compensated_sum(logs.iter().map(|l| (l - m).exp()));
    Ok(m.exp() * s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfReport {
    pub bound: f64,
    pub value: f64,
}

/// `E_ν[e^{ε(q−n)/(1+δ)}]` against `1 + 1/δ`, for `n ≥ max{65, 2^{1/α}}`.
pub fn mgf_steady_bound(spec: &RegimeSpec, delta: f64) -> Result<MgfReport> {
    if !(delta > 0.0) {
        return invalid("delta must be positive");
    }
    let alpha = spec
        .alpha
        .ok_or_else(|| Error::InvalidParameter("alpha undefined".into()))?;
    let n0 = f64::max(65.0, 2f64.powf(1.0 / alpha));
    if (spec.n as f64) < n0 {
        return Err(Error::OutOfRange(format!(
            "MGF bound needs n >= {n0}, got {}",
            spec.n
        )));
    }
    let chain = build_mmn(spec, spec.n + 10)?;
    let nu = stationary(&chain);
    let value = mgf(&nu, spec.epsilon / (1.0 + delta), spec.n as f64)?;
    Ok(MgfReport {
        bound: 1.0 + 1.0 / delta,
        value,
    })
}

fn moment(dist: &StateDistribution, k: u32) -> f64 {
    let total = dist.window_mass();
    compensated_sum(
        dist.probs
            .iter()
            .enumerate()
            .map(|(q, p)| p * (q as f64).powi(k as i32)),
    ) / total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub bound: f64,
    pub actual: f64,
}

/// `χ(p, q)·√Var_q(X^k)` against `|E_p X^k − E_q X^k|` (moments over the
/// windows).
pub fn moment_gap_bound(
    p: &StateDistribution,
    q: &StateDistribution,
    k: u32,
) -> Result<MomentReport> {
    if k == 0 {
        return invalid("moment order must be positive");
    }
    let chi = chi_square(p, q)?.sqrt();
    let var = (moment(q, 2 * k) - moment(q, k).powi(2)).max(0.0);
    Ok(MomentReport {
        bound: chi * var.sqrt(),
        actual: (moment(p, k) - moment(q, k)).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalReport {
    pub chi_square: f64,
    /// Largest `(E_p g − E_q g)²/Var_q g` over the supplied probes.
    pub max_ratio: f64,
    /// Ratio at the likelihood-ratio probe `g = p/q`.
    pub likelihood_ratio: f64,
    pub skipped: usize,
    pub pass: bool,
}

/// `χ² = sup_g (E_p g − E_q g)²/Var_q g`: every probe stays below `χ²` and
/// the likelihood ratio attains it.
pub fn chi_variational_check(
    p: &StateDistribution,
    q: &StateDistribution,
    probes: &[Vec<f64>],
) -> Result<VariationalReport> {
    let cs = chi_square(p, q)?;
    let len = p.probs.len().max(q.probs.len());
    let ratio = |g: &dyn Fn(usize) -> f64| -> Option<f64> {
        let mut ep = KahanSum::new();
        let mut eq = KahanSum::new();
        for x in 0..len {
            ep.add(p.get(x) * g(x));
            eq.add(q.get(x) * g(x));
        }
        let (ep, eq) = (ep.value(), eq.value());
        let var = compensated_sum((0..len).map(|x| q.get(x) * (g(x) - eq).powi(2)));
        (var > 1e-300).then(|| (ep - eq).powi(2) / var)
    };
    let mut max_ratio: f64 = 0.0;
    let mut skipped = 0;
    for g in probes {
        match ratio(&|x| g.get(x).copied().unwrap_or(0.0)) {
            Some(r) => max_ratio = max_ratio.max(r),
            None => skipped += 1,
        }
    }
    let lr = ratio(&|x| {
        let qx = q.get(x);
        if qx > 0.0 {
            p.get(x) / qx
        } else {
            0.0
        }
    })
    .unwrap_or(0.0);
    let pass = max_ratio <= cs + 1e-12 && (lr - cs).abs() <= 1e-10 * cs.max(1.0);
    Ok(VariationalReport {
        chi_square: cs,
        max_ratio,
        likelihood_ratio: lr,
        skipped,
        pass,
    })
}

/// `|E_{π_t}[q] − E_ν[q]|` envelope: `e^{−rate·t}√2(n + n^α)χ₀`, or
/// `e^{−rate·t}·n·χ₀` for the light-traffic rate.
pub fn mean_queue_envelope(
    spec: &RegimeSpec,
    bound: &MixingRateBound,
    t: f64,
    chi0: f64,
) -> Result<f64> {
    let nf = spec.n as f64;
    let decay = (-bound.rate * t).exp() * chi0;
    if bound.regime == Regime::MeanField {
        return Ok(decay * nf);
    }
    let alpha = spec
        .alpha
        .ok_or_else(|| Error::InvalidParameter("alpha undefined".into()))?;
    Ok(decay * std::f64::consts::SQRT_2 * (nf + nf.powf(alpha)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBound {
    pub value: f64,
    /// False when `n` is below the threshold where the prefactors are proven.
    pub in_validity_range: bool,
}

/// `P[ε(q − n) > x]` bound (`P[q − n > x]` for the light-traffic rate).
/// The MGF slack δ enters the proofs only through `n₀`.
pub fn tail_bound(
    spec: &RegimeSpec,
    bound: &MixingRateBound,
    t: f64,
    x: f64,
    chi0: f64,
) -> Result<TailBound> {
    if !(x > 0.0) {
        return invalid("tail level x must be positive");
    }
    let nf = spec.n as f64;
    let alpha = spec
        .alpha
        .ok_or_else(|| Error::InvalidParameter("alpha undefined".into()))?;
    let pre = 1.0 + (-bound.rate * t).exp() * chi0;
    let n0 = f64::max(65.0, 2f64.powf(1.0 / alpha));
    let value = match bound.regime {
        Regime::MeanField => {
            let c = spec.rho();
            let s = (-(1.0 - c) * nf.powf(1.0 - alpha) / 2.0).exp()
                + 2.0 * nf.powf(alpha - 1.0)
                + 8.0 * nf.powf(2.0 * alpha - 1.0) / (std::f64::consts::E * (1.0 - c));
            pre * s.sqrt() * (-x / 2.0).exp()
        }
        Regime::SubHw | Regime::SubHwInteger => {
            let s = 0.5 * (-2.0 * nf.powf(1.0 - 2.0 * alpha) / 7.0).exp()
                + 6.0 * nf.powf(2.0 * alpha - 1.0);
            pre * s.sqrt() * (std::f64::consts::E * x).sqrt() * (-x / 2.0).exp()
        }
        _ => pre * (std::f64::consts::E * x).sqrt() * (-x / 2.0).exp(),
    };
    Ok(TailBound {
        value,
        in_validity_range: nf >= n0,
    })
}

/// Numerical `P[ε(q − n) > x]` on a window distribution.
pub fn tail_probability(spec: &RegimeSpec, dist: &StateDistribution, x: f64) -> f64 {
    let nf = spec.n as f64;
    compensated_sum(
        dist.probs
            .iter()
            .enumerate()
            .filter(|(q, _)| spec.epsilon * (*q as f64 - nf) > x)
            .map(|(_, p)| *p),
    )
}

/// Numerical `P[q < n]` (some server idle).
pub fn idle_probability(spec: &RegimeSpec, dist: &StateDistribution) -> f64 {
    compensated_sum(dist.probs.iter().take(spec.n).copied())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upper,
    Lower,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Upper => "upper",
            Direction::Lower => "lower",
        }
    }

    pub fn respects(&self, bound: f64, numerical: f64, tol: f64) -> bool {
        match self {
            Direction::Upper => numerical <= bound + tol,
            Direction::Lower => numerical >= bound - tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdleBound {
    pub direction: Direction,
    pub value: f64,
}

/// Bound on `P[q < n]`: an upper bound above Halfin–Whitt, a lower bound
/// (with the unspecified constant `kappa`) below it.
pub fn idle_prob_bound(
    spec: &RegimeSpec,
    bound: &MixingRateBound,
    t: f64,
    chi0: f64,
    kappa: f64,
) -> Result<IdleBound> {
    let alpha = spec
        .alpha
        .ok_or_else(|| Error::InvalidParameter("alpha undefined".into()))?;
    let nf = spec.n as f64;
    let decay = (-bound.rate * t).exp() * chi0;
    let pi = std::f64::consts::PI;
    let e = std::f64::consts::E;
    if (alpha - 0.5).abs() < 1e-12 {
        return Err(Error::OutOfRange(
            "idle-server bound is not available at alpha = 1/2".into(),
        ));
    }
    if alpha > 0.5 {
        Ok(IdleBound {
            direction: Direction::Upper,
            value: 4.0 * e * pi * nf.powf(0.5 - alpha)
                + 2.0 * (e * pi).sqrt() * nf.powf(0.25 - alpha / 2.0) * decay,
        })
    } else {
        Ok(IdleBound {
            direction: Direction::Lower,
            value: 1.0 - kappa * nf.powf(alpha - 0.5) * (-nf.powf(0.5 - alpha)).exp() - decay,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub variance: f64,
    /// `2(n^α + n)²`.
    pub bound: f64,
    /// `n²`, the light-traffic form.
    pub light_traffic_bound: f64,
    pub pass: bool,
    pub light_traffic_pass: bool,
}

/// Exact stationary variance (window plus closed-form geometric tail)
/// against both variance bounds.
pub fn variance_bound_check(spec: &RegimeSpec) -> Result<VarianceReport> {
    let chain = build_mmn(spec, spec.n + 10)?;
    let nu = stationary(&chain);
    let (m1, m2) = stationary_moments(&nu);
    let variance = (m2 - m1 * m1).max(0.0);
    let nf = spec.n as f64;
    let alpha = spec.alpha.unwrap_or(1.0);
    let bound = 2.0 * (nf.powf(alpha) + nf).powi(2);
    let light = nf * nf;
    Ok(VarianceReport {
        variance,
        bound,
        light_traffic_bound: light,
        pass: variance <= bound,
        light_traffic_pass: variance <= light,
    })
}

/// `(E[q], E[q²])` including a geometric tail `p(s)ρ^k` at `s + k`, `k ≥ 1`.
fn stationary_moments(nu: &StateDistribution) -> (f64, f64) {
    let mut m1 = KahanSum::new();
    let mut m2 = KahanSum::new();
    for (q, p) in nu.probs.iter().enumerate() {
        m1.add(p * q as f64);
        m2.add(p * (q as f64).powi(2));
    }
    if let Some(r) = nu.tail_ratio {
        let s = nu.q_max() as f64;
        let ps = nu.get(nu.q_max());
        let g = 1.0 - r;
        m1.add(ps * (s * r / g + r / (g * g)));
        m2.add(ps * (s * s * r / g + 2.0 * s * r / (g * g) + r * (1.0 + r) / (g * g * g)));
    }
    (m1.value(), m2.value())
}
