//! Lyapunov functions for M/M/n-type chains and pointwise drift certificates
//! `𝓛V ≤ −γV + b·1_K`.
//!
//! Catalog certificates carry the closed-form `b` where the closed form is
//! valid. In the super-Halfin–Whitt family the closed form for `b(n−1)` can
//! fall below the exact drift `(λ/μ + n − 1)(√(nμ/λ) − 1)μ + γ` when
//! `α < 1`, so the certificate uses the larger of the two there.

use crate::bdchain::{generator_apply, BirthDeathChain, RegimeSpec};
use crate::error::{invalid, Error, Result};
use crate::numeric::as_integer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeTag {
    SuperHw,
    SubHwInteger,
    SubHwFractional,
    MeanField,
    Mminf,
    Custom,
}

impl RegimeTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeTag::SuperHw => "super_hw",
            RegimeTag::SubHwInteger => "sub_hw_integer",
            RegimeTag::SubHwFractional => "sub_hw_fractional",
            RegimeTag::MeanField => "mean_field",
            RegimeTag::Mminf => "mminf",
            RegimeTag::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// `e^{θ|q − pivot|}`.
    TwoSidedExp {
        theta: f64,
        pivot: usize,
    },
    /// `|q − c|` up to `n`, `(n − c)e^{θ(q−n)}` above, with optional
    /// overrides at the two integers around a fractional `c`.
    SubHw {
        theta: f64,
        n: usize,
        center: f64,
        fractional: bool,
    },
    /// `z^{q−n}` above `n`, 1 below.
    KneeGeometric {
        z: f64,
        n: usize,
    },
    /// `|q − c|`.
    Abs {
        center: f64,
    },
    /// `e^{θ(q − c)}`.
    Exp {
        theta: f64,
        center: f64,
    },
    Table(Vec<f64>),
}

/// Evaluable `V` with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovFunction {
    shape: Shape,
    pub regime_tag: RegimeTag,
}

impl LyapunovFunction {
    /// `e^{θ|q − (n−1)|}` with `θ = ln√(n/(λ/μ))`.
    pub fn super_hw(spec: &RegimeSpec) -> Self {
        Self::two_sided_exp(spec.theta_super(), spec.n - 1)
    }

    /// Same shape as [`Self::super_hw`] with a free exponent.
    pub fn two_sided_exp(theta: f64, pivot: usize) -> Self {
        Self {
            shape: Shape::TwoSidedExp { theta, pivot },
            regime_tag: RegimeTag::SuperHw,
        }
    }

    pub fn sub_hw(spec: &RegimeSpec) -> Self {
        let d = spec.headroom();
        let fractional = spec.integer_load().is_none();
        Self {
            shape: Shape::SubHw {
                theta: (1.0 / d).ln_1p(),
                n: spec.n,
                center: spec.load(),
                fractional,
            },
            regime_tag: if fractional {
                RegimeTag::SubHwFractional
            } else {
                RegimeTag::SubHwInteger
            },
        }
    }

    pub fn mean_field(n: usize, z: f64) -> Self {
        Self {
            shape: Shape::KneeGeometric { z, n },
            regime_tag: RegimeTag::MeanField,
        }
    }

    pub fn mminf(load: f64) -> Self {
        Self {
            shape: Shape::Abs { center: load },
            regime_tag: RegimeTag::Mminf,
        }
    }

    pub fn exponential(theta: f64, center: f64) -> Self {
        Self {
            shape: Shape::Exp { theta, center },
            regime_tag: RegimeTag::Custom,
        }
    }

    pub fn table(values: Vec<f64>) -> Self {
        Self {
            shape: Shape::Table(values),
            regime_tag: RegimeTag::Custom,
        }
    }

    pub fn eval(&self, q: usize) -> f64 {
        let qf = q as f64;
        match &self.shape {
            Shape::TwoSidedExp { theta, pivot } => (theta * (qf - *pivot as f64).abs()).exp(),
            Shape::SubHw {
                theta,
                n,
                center,
                fractional,
            } => {
                if q > *n {
                    (*n as f64 - center) * (theta * (q - n) as f64).exp()
                } else if *fractional && q == center.floor() as usize {
                    (qf - center - 1.0).abs()
                } else if *fractional && q == center.ceil() as usize {
                    (qf - center + 1.0).abs()
                } else {
                    (qf - center).abs()
                }
            }
            Shape::KneeGeometric { z, n } => {
                if q >= *n {
                    (z.ln() * (q - n) as f64).exp()
                } else {
                    1.0
                }
            }
            Shape::Abs { center } => (qf - center).abs(),
            Shape::Exp { theta, center } => (theta * (qf - center)).exp(),
            Shape::Table(v) => v.get(q).copied().unwrap_or(f64::NAN),
        }
    }

    pub fn values(&self, q_max: usize) -> Vec<f64> {
        (0..=q_max).map(|q| self.eval(q)).collect()
    }

    /// Named parameters (θ, ζ, z, center) for reporting.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match &self.shape {
            Shape::TwoSidedExp { theta, pivot } => {
                vec![("theta", *theta), ("center", *pivot as f64)]
            }
            Shape::SubHw {
                theta, n, center, ..
            } => {
                // ζ with ζe^{θ(n−c)} = n − c.
                let d = *n as f64 - center;
                vec![
                    ("theta", *theta),
                    ("zeta", d * (-theta * d).exp()),
                    ("center", *center),
                ]
            }
            Shape::KneeGeometric { z, n } => vec![("z", *z), ("center", *n as f64)],
            Shape::Abs { center } => vec![("center", *center)],
            Shape::Exp { theta, center } => vec![("theta", *theta), ("center", *center)],
            Shape::Table(_) => vec![],
        }
    }
}

/// `(V, γ, b, K)` with `K = {k_lo..=k_hi}` and `b` listed over `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCertificate {
    pub v: LyapunovFunction,
    pub gamma: f64,
    pub k_lo: usize,
    pub k_hi: usize,
    b_on_k: Vec<f64>,
    /// Worst `𝓛V + γV − b` found by the last certification, if any.
    pub slack: Option<f64>,
}

impl DriftCertificate {
    pub fn new(v: LyapunovFunction, gamma: f64, k_lo: usize, b_on_k: Vec<f64>) -> Result<Self> {
        if b_on_k.is_empty() {
            return invalid("K must be non-empty");
        }
        if b_on_k.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return invalid("b must be positive exactly on K");
        }
        let k_hi = k_lo + b_on_k.len() - 1;
        Ok(Self {
            v,
            gamma,
            k_lo,
            k_hi,
            b_on_k,
            slack: None,
        })
    }

    pub fn b(&self, q: usize) -> f64 {
        if (self.k_lo..=self.k_hi).contains(&q) {
            self.b_on_k[q - self.k_lo]
        } else {
            0.0
        }
    }

    pub fn b_values(&self) -> &[f64] {
        &self.b_on_k
    }

    pub fn b_max(&self) -> f64 {
        self.b_on_k.iter().copied().fold(0.0, f64::max)
    }

    pub fn k_size(&self) -> usize {
        self.k_hi - self.k_lo + 1
    }

    pub fn in_k(&self, q: usize) -> bool {
        (self.k_lo..=self.k_hi).contains(&q)
    }
}

fn require_alpha(spec: &RegimeSpec) -> Result<f64> {
    spec.alpha
        .ok_or_else(|| Error::InvalidParameter("regime needs n >= 2 (alpha undefined)".into()))
}

/// Exact `(𝓛V)(q)` for `V = e^{θ|q − (n−1)|}` on the infinite M/M/n chain.
fn super_hw_generator(spec: &RegimeSpec, theta: f64, q: usize) -> f64 {
    let n = spec.n;
    let v = |x: usize| (theta * (x as f64 - (n - 1) as f64).abs()).exp();
    let death = spec.mu * q.min(n) as f64;
    let down = if q > 0 {
        death * (v(q - 1) - v(q))
    } else {
        0.0
    };
    spec.lambda * (v(q + 1) - v(q)) + down
}

/// Reference closed form `μ·n^{1−α}(1 + 1/(4(n^α − 1)))` for `b(n−1)`.
pub fn super_hw_b_top_closed_form(n: f64, alpha: f64) -> f64 {
    n.powf(1.0 - alpha) * (1.0 + 1.0 / (4.0 * (n.powf(alpha) - 1.0)))
}

/// Closed-form `b` on `K∖{n−1}`: `βe^β` with `β = n^{1−2α}/(1 − n^{−α})`.
pub fn super_hw_b_interior(n: f64, alpha: f64) -> f64 {
    let beta = n.powf(1.0 - 2.0 * alpha) / (1.0 - n.powf(-alpha));
    beta * beta.exp()
}

/// Exact `b(n−1) = (𝓛V)(n−1) + γ`.
pub fn super_hw_b_top_exact(spec: &RegimeSpec) -> f64 {
    let r1 = spec.theta_super().exp_m1();
    spec.mu * (spec.load() + (spec.n - 1) as f64) * r1 + spec.gamma_critical()
}

/// Drift certificate for `α > 1/2`: `γ = (√n − √λ)²`,
/// `K = {[⌊2λ⌋ − n]⁺, …, n−1}`.
pub fn super_hw_certificate(spec: &RegimeSpec) -> Result<DriftCertificate> {
    let alpha = require_alpha(spec)?;
    if alpha <= 0.5 {
        return Err(Error::OutOfRange(format!(
            "super-Halfin-Whitt certificate needs alpha > 1/2, got {alpha}"
        )));
    }
    let n = spec.n;
    let gamma = spec.gamma_critical();
    let k_lo = ((2.0 * spec.load()).floor() as i64 - n as i64).max(0) as usize;
    let v = LyapunovFunction::super_hw(spec);
    let theta = spec.theta_super();
    if n > 7 {
        let nf = n as f64;
        let interior = spec.mu * super_hw_b_interior(nf, alpha);
        let top = f64::max(
            spec.mu * super_hw_b_top_closed_form(nf, alpha),
            super_hw_b_top_exact(spec),
        );
        let mut b: Vec<f64> = vec![interior; n - k_lo];
        *b.last_mut().unwrap() = top;
        return DriftCertificate::new(v, gamma, k_lo, b);
    }
    // Small n: take the exact positive part on K, dropping leading states
    // where the drift is already negative (the positive part is increasing
    // in q below n−1).
    let mut b: Vec<(usize, f64)> = (k_lo..n)
        .map(|q| (q, super_hw_generator(spec, theta, q) + gamma * v.eval(q)))
        .collect();
    while b.len() > 1 && b[0].1 <= 0.0 {
        b.remove(0);
    }
    let start = b[0].0;
    DriftCertificate::new(
        v,
        gamma,
        start,
        b.into_iter()
            .map(|(_, x)| x.max(f64::MIN_POSITIVE))
            .collect(),
    )
}

/// Singleton certificate `K = {n−1}` for `α ≥ 1` (or a single server),
/// where the drift below `n−1` is already `≤ −γV`.
pub fn super_hw_singleton_certificate(spec: &RegimeSpec) -> Result<DriftCertificate> {
    let nf = spec.n as f64;
    // Negative drift for every q ≤ n−2 holds iff h(1 + √(a/n)) ≤ 2.
    if spec.n > 1 && spec.headroom() * (1.0 + (spec.load() / nf).sqrt()) > 2.0 {
        return Err(Error::OutOfRange(format!(
            "singleton drift needs n - lambda/mu <= 1 (got {})",
            spec.headroom()
        )));
    }
    let v = LyapunovFunction::super_hw(spec);
    DriftCertificate::new(
        v,
        spec.gamma_critical(),
        spec.n - 1,
        vec![super_hw_b_top_exact(spec)],
    )
}

/// Drift certificate for `α ∈ (0, 1/2)` with load at least 3.
pub fn sub_hw_certificate(spec: &RegimeSpec) -> Result<DriftCertificate> {
    let alpha = require_alpha(spec)?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::OutOfRange(format!(
            "sub-Halfin-Whitt certificate needs alpha in (0, 1/2), got {alpha}"
        )));
    }
    let a = spec.load();
    if a < 3.0 {
        return Err(Error::OutOfRange(format!(
            "sub-Halfin-Whitt certificate needs lambda/mu >= 3, got {a}"
        )));
    }
    let gamma = sub_hw_gamma(spec);
    if gamma <= 0.0 {
        return Err(Error::NoNegativeDrift { gamma });
    }
    let v = LyapunovFunction::sub_hw(spec);
    match spec.integer_load() {
        Some(c) => DriftCertificate::new(v, gamma, c, vec![2.0 * spec.lambda]),
        None => {
            let lo = a.floor() as usize - 1;
            let b = spec.mu * (a.ceil() + 2.0);
            DriftCertificate::new(v, gamma, lo, vec![b; 4])
        }
    }
}

/// `μ(1 − (n/d²)/(1 + 1/d))` with `d = n − λ/μ`.
pub fn sub_hw_gamma(spec: &RegimeSpec) -> f64 {
    let d = spec.headroom();
    spec.mu * (1.0 - (spec.n as f64 / (d * d)) / (1.0 + 1.0 / d))
}

/// `V = z^{q−n}` above the knee: `γ = λ(z−1)(nμ/(λz) − 1)`, `b ≡ γ + λ(z−1)`
/// on `{0..n}`.
pub fn mean_field_certificate(spec: &RegimeSpec, z: f64) -> Result<DriftCertificate> {
    let a = spec.load();
    let nf = spec.n as f64;
    if !(z > 1.0 && z < nf / a) {
        return invalid(format!(
            "z must lie in (1, n/(lambda/mu)) = (1, {}), got {z}",
            nf / a
        ));
    }
    let (gamma, big_b) = mean_field_constants(spec, z);
    DriftCertificate::new(
        LyapunovFunction::mean_field(spec.n, z),
        gamma,
        0,
        vec![big_b; spec.n + 1],
    )
}

/// `(γ, B)` for the knee-geometric Lyapunov function.
pub fn mean_field_constants(spec: &RegimeSpec, z: f64) -> (f64, f64) {
    let a = spec.load();
    let nf = spec.n as f64;
    let gamma = spec.mu * a * (z - 1.0) * (nf / (a * z) - 1.0);
    (gamma, gamma + spec.mu * a * (z - 1.0))
}

/// `V = |q − λ/μ|`, `γ = μ`, `K = {λ/μ}`, `b = λ + μ·(λ/μ) = 2λ`.
pub fn mminf_certificate(lambda: f64, mu: f64) -> Result<DriftCertificate> {
    if !(lambda > 0.0 && mu > 0.0) {
        return invalid("rates must be positive");
    }
    let load = lambda / mu;
    let c = match as_integer(load, 1e-9) {
        Some(c) if c >= 1 => c,
        _ => {
            return Err(Error::OutOfRange(format!(
                "M/M/inf certificate needs an integer load lambda/mu, got {load}; \
                 the non-integer case is an open conjecture"
            )))
        }
    };
    DriftCertificate::new(LyapunovFunction::mminf(load), mu, c, vec![2.0 * lambda])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftReport {
    pub pass: bool,
    /// `max_q (𝓛V + γV − b)(q)`.
    pub slack: f64,
    /// State with the largest violation relative to `max(1, γV)`.
    pub worst_state: usize,
}

/// Pointwise check of `(𝓛V)(q) + γV(q) − b(q) ≤ tol·max(1, γV(q))` on
/// `q < q_max`.
pub fn certify_drift(chain: &BirthDeathChain, cert: &DriftCertificate, tol: f64) -> DriftReport {
    let v = cert.v.values(chain.q_max());
    let lv = generator_apply(chain, &v);
    let mut slack = f64::NEG_INFINITY;
    let mut worst = (f64::NEG_INFINITY, 0usize);
    for q in 0..chain.q_max() {
        let lhs = lv[q] + cert.gamma * v[q] - cert.b(q);
        slack = slack.max(lhs);
        let rel = lhs / f64::max(1.0, cert.gamma * v[q]);
        if rel > worst.0 || rel.is_nan() {
            worst = (if rel.is_nan() { f64::INFINITY } else { rel }, q);
        }
    }
    DriftReport {
        pass: worst.0 <= tol,
        slack,
        worst_state: worst.1,
    }
}

/// Certify and record the slack in the certificate.
pub fn certify_in_place(
    chain: &BirthDeathChain,
    cert: &mut DriftCertificate,
    tol: f64,
) -> DriftReport {
    let r = certify_drift(chain, cert, tol);
    cert.slack = Some(r.slack);
    r
}

/// Tightest `γ` outside `K` and matching `b` on `K` for a given `V`.
pub fn extract_drift(
    chain: &BirthDeathChain,
    v: &LyapunovFunction,
    k_lo: usize,
    k_hi: usize,
) -> Result<DriftCertificate> {
    if k_lo > k_hi || k_hi >= chain.q_max() {
        return invalid(format!(
            "K = {k_lo}..={k_hi} must be a non-empty interval below q_max"
        ));
    }
    let values = v.values(chain.q_max());
    let lv = generator_apply(chain, &values);
    let mut gamma = f64::INFINITY;
    for q in (0..chain.q_max()).filter(|q| !(k_lo..=k_hi).contains(q)) {
        if !(values[q] > 0.0) {
            return invalid(format!("V must be positive off K (V({q}) = {})", values[q]));
        }
        gamma = gamma.min(-lv[q] / values[q]);
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::NoNegativeDrift {
            gamma: if gamma.is_finite() { gamma } else { 0.0 },
        });
    }
    let b: Vec<f64> = (k_lo..=k_hi)
        .map(|q| (lv[q] + gamma * values[q]).max(0.0))
        .collect();
    // Keep K = {b > 0}: zero entries become the smallest positive weight.
    let b = b.into_iter().map(|x| x.max(f64::MIN_POSITIVE)).collect();
    DriftCertificate::new(v.clone(), gamma, k_lo, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdchain::{build_mminf, build_mmn, choose_truncation};

    #[test]
    fn super_hw_example_k() {
        let spec = RegimeSpec::from_alpha(64, 1.0).unwrap();
        let c = super_hw_certificate(&spec).unwrap();
        assert_eq!((c.k_lo, c.k_hi), (62, 63));
        assert!((c.gamma - (8.0 - 63f64.sqrt()).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn super_hw_top_uses_exact_value_when_larger() {
        let spec = RegimeSpec::from_alpha(64, 0.75).unwrap();
        let printed = super_hw_b_top_closed_form(64.0, 0.75);
        let c = super_hw_certificate(&spec).unwrap();
        assert!(c.b(63) >= printed);
        assert!((c.b(63) - super_hw_b_top_exact(&spec)).abs() < 1e-12);
    }

    #[test]
    fn mminf_b_is_twice_lambda() {
        let c = mminf_certificate(4.0, 2.0).unwrap();
        assert_eq!((c.k_lo, c.gamma, c.b(2)), (2, 2.0, 8.0));
        let chain = build_mminf(4.0, 2.0, 60).unwrap();
        assert!(certify_drift(&chain, &c, 1e-9).pass);
        assert!(mminf_certificate(4.5, 1.0).is_err());
    }

    #[test]
    fn sub_hw_k_sets() {
        let spec = RegimeSpec::from_alpha(100, 0.25).unwrap();
        let c = sub_hw_certificate(&spec).unwrap();
        assert_eq!((c.k_lo, c.k_hi), (67, 70));
        let spec = RegimeSpec::from_lambda(100, 68.0, 1.0).unwrap();
        let c = sub_hw_certificate(&spec).unwrap();
        assert_eq!((c.k_lo, c.k_hi), (68, 68));
        assert_eq!(c.v.eval(68), 0.0);
    }

    #[test]
    fn inflated_gamma_fails() {
        let spec = RegimeSpec::from_alpha(8, 1.0).unwrap();
        let q = choose_truncation(&spec, 1e-12).unwrap();
        let chain = build_mmn(&spec, q).unwrap();
        let mut c = super_hw_certificate(&spec).unwrap();
        assert!(certify_drift(&chain, &c, 1e-9).pass);
        c.gamma *= 1.01;
        let r = certify_drift(&chain, &c, 1e-9);
        assert!(!r.pass);
        assert!(r.worst_state >= 8);
    }
}
