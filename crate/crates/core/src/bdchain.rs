//! Birth–death chain construction, generators and stationary laws.
//!
//! Chains are truncated at `q_max` with a reflecting boundary: the birth rate
//! at `q_max` is stored as zero, so every chain here is a finite reversible
//! CTMC. For M/M/n and M/M/∞ the stationary law of the *infinite* chain is
//! returned on the window, and the mass beyond `q_max` is reported in
//! [`StateDistribution::tail_mass`].

use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, ln_factorial, log_sum_exp};

/// Hard ceiling for truncation levels.
pub const MAX_Q: usize = 100_000_000;

/// Parameters of an M/M/n queue in the heavy-traffic parameterization
/// `λ = μ(n − n^{1−α})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSpec {
    pub n: usize,
    /// `None` when it cannot be defined (single server).
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub epsilon: f64,
    /// Idle capacity `n − λ/μ`, kept separately to avoid cancellation when
    /// the load is within rounding of `n`.
    headroom: f64,
}

impl RegimeSpec {
    /// `λ = n − n^{1−α}` with unit service rate.
    pub fn from_alpha(n: usize, alpha: f64) -> Result<Self> {
        Self::from_alpha_mu(n, alpha, 1.0)
    }

    pub fn from_alpha_mu(n: usize, alpha: f64, mu: f64) -> Result<Self> {
        if n < 2 {
            return invalid("alpha parameterization needs n >= 2");
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return invalid(format!("alpha must be positive, got {alpha}"));
        }
        check_rate("mu", mu)?;
        let nf = n as f64;
        let headroom = nf.powf(1.0 - alpha);
        let load = nf - headroom;
        if load <= 0.0 {
            return invalid(format!(
                "alpha = {alpha} gives non-positive load at n = {n}"
            ));
        }
        Ok(Self {
            n,
            alpha: Some(alpha),
            lambda: mu * load,
            mu,
            epsilon: headroom / nf,
            headroom,
        })
    }

    /// Explicit arrival rate; α is derived when `n ≥ 2`.
    pub fn from_lambda(n: usize, lambda: f64, mu: f64) -> Result<Self> {
        if n == 0 {
            return invalid("n must be positive");
        }
        check_rate("lambda", lambda)?;
        check_rate("mu", mu)?;
        let nf = n as f64;
        let load = lambda / mu;
        if load >= nf {
            return Err(Error::Unstable {
                lambda,
                capacity: nf * mu,
            });
        }
        let headroom = nf - load;
        let alpha = (n >= 2).then(|| alpha_from_load(n, load));
        Ok(Self {
            n,
            alpha,
            lambda,
            mu,
            epsilon: headroom / nf,
            headroom,
        })
    }

    /// Offered load `λ/μ`.
    pub fn load(&self) -> f64 {
        self.lambda / self.mu
    }

    /// `n − λ/μ`.
    pub fn headroom(&self) -> f64 {
        self.headroom
    }

    /// Same chain with only the nominal exponent relabelled.
    pub(crate) fn with_alpha_label(&self, alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ..*self
        }
    }

    /// `1 − ln(n − λ/μ)/ln n` from the stored headroom, so the round trip
    /// through `from_alpha` does not suffer the cancellation in `n − λ`.
    pub fn implied_alpha(&self) -> Option<f64> {
        (self.n >= 2).then(|| 1.0 - self.headroom.ln() / (self.n as f64).ln())
    }

    /// Utilization `λ/(nμ)`.
    pub fn rho(&self) -> f64 {
        self.load() / self.n as f64
    }

    /// `(√n − √(λ/μ))²·μ` — the exact spectral gap above the knee —
    /// computed without cancellation.
    pub fn gamma_critical(&self) -> f64 {
        let s = (self.n as f64).sqrt() + self.load().sqrt();
        self.mu * (self.headroom / s).powi(2)
    }

    /// `ln√(n/(λ/μ))`, the super-Halfin–Whitt Lyapunov exponent.
    pub fn theta_super(&self) -> f64 {
        -0.5 * (-self.epsilon).ln_1p()
    }

    /// Integer load detection at tolerance 1e-9.
    pub fn integer_load(&self) -> Option<usize> {
        crate::numeric::as_integer(self.load(), 1e-9)
    }
}

/// Inverse of `λ = n − n^{1−α}`.
pub fn alpha_from_load(n: usize, load: f64) -> f64 {
    let nf = n as f64;
    1.0 - (nf - load).ln() / nf.ln()
}

fn check_rate(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be a positive finite rate, got {x}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChainKind {
    Mm1 {
        lambda: f64,
        mu: f64,
    },
    Mmn {
        n: usize,
        lambda: f64,
        mu: f64,
        headroom: f64,
    },
    Mminf {
        lambda: f64,
        mu: f64,
    },
    Custom,
}

/// Truncated birth–death generator on `{0..=q_max}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthDeathChain {
    birth: Vec<f64>,
    death: Vec<f64>,
    kind: ChainKind,
}

pub fn build_mmn(spec: &RegimeSpec, q_max: usize) -> Result<BirthDeathChain> {
    let n = spec.n;
    if spec.load() >= n as f64 {
        return Err(Error::Unstable {
            lambda: spec.lambda,
            capacity: n as f64 * spec.mu,
        });
    }
    if q_max < n {
        return Err(Error::Truncation(format!(
            "q_max = {q_max} cuts below the service knee n = {n}"
        )));
    }
    if q_max > MAX_Q {
        return Err(Error::CostGuard(format!("q_max = {q_max} exceeds {MAX_Q}")));
    }
    let mut birth = vec![spec.lambda; q_max + 1];
    birth[q_max] = 0.0;
    let death = (0..=q_max).map(|q| spec.mu * q.min(n) as f64).collect();
    let kind = if n == 1 {
        ChainKind::Mm1 {
            lambda: spec.lambda,
            mu: spec.mu,
        }
    } else {
        ChainKind::Mmn {
            n,
            lambda: spec.lambda,
            mu: spec.mu,
            headroom: spec.headroom(),
        }
    };
    Ok(BirthDeathChain { birth, death, kind })
}

pub fn build_mminf(lambda: f64, mu: f64, q_max: usize) -> Result<BirthDeathChain> {
    check_rate("lambda", lambda)?;
    check_rate("mu", mu)?;
    let load = lambda / mu;
    if (q_max as f64) < 4.0 * load {
        return Err(Error::Truncation(format!(
            "q_max = {q_max} below 4λ/μ = {}",
            4.0 * load
        )));
    }
    if q_max > MAX_Q {
        return Err(Error::CostGuard(format!("q_max = {q_max} exceeds {MAX_Q}")));
    }
    let tail = poisson_sf(load, q_max);
    if tail >= 1e-12 {
        return Err(Error::Truncation(format!(
            "Poisson({load}) mass beyond q_max = {q_max} is {tail:e} >= 1e-12"
        )));
    }
    let mut birth = vec![lambda; q_max + 1];
    birth[q_max] = 0.0;
    let death = (0..=q_max).map(|q| mu * q as f64).collect();
    Ok(BirthDeathChain {
        birth,
        death,
        kind: ChainKind::Mminf { lambda, mu },
    })
}

fn poisson_sf(mean: f64, q: usize) -> f64 {
    Poisson::new(mean)
        .map(|p| p.sf(q as u64))
        .unwrap_or(f64::NAN)
}

impl BirthDeathChain {
    /// Arbitrary rates. `birth[q_max]` is ignored (forced to zero) and
    /// `death[0]` must be zero.
    pub fn custom(mut birth: Vec<f64>, death: Vec<f64>) -> Result<Self> {
        if birth.is_empty() || birth.len() != death.len() {
            return invalid("birth and death vectors must be non-empty and of equal length");
        }
        if death[0] != 0.0 {
            return invalid("death(0) must be zero");
        }
        let q_max = birth.len() - 1;
        birth[q_max] = 0.0;
        for q in 0..q_max {
            if !(birth[q] > 0.0 && birth[q].is_finite())
                || !(death[q + 1] > 0.0 && death[q + 1].is_finite())
            {
                return invalid(format!(
                    "chain is not irreducible on the window at edge ({q},{})",
                    q + 1
                ));
            }
        }
        Ok(Self {
            birth,
            death,
            kind: ChainKind::Custom,
        })
    }

    pub fn q_max(&self) -> usize {
        self.birth.len() - 1
    }

    pub fn len(&self) -> usize {
        self.birth.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    /// Effective birth rate (zero at the reflecting boundary).
    pub fn birth(&self, q: usize) -> f64 {
        self.birth[q]
    }

    pub fn death(&self, q: usize) -> f64 {
        self.death[q]
    }

    pub fn births(&self) -> &[f64] {
        &self.birth
    }

    pub fn deaths(&self) -> &[f64] {
        &self.death
    }

    /// Uniformization rate `max_q (birth + death)`.
    pub fn max_rate(&self) -> f64 {
        self.birth
            .iter()
            .zip(&self.death)
            .map(|(b, d)| b + d)
            .fold(0.0, f64::max)
    }
}

/// Probability vector on `{0..=q_max}` plus accounting for mass outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub probs: Vec<f64>,
    /// Mass beyond the window (closed form for stationary laws, the raw
    /// deficit for transient ones).
    pub tail_mass: f64,
    pub log_probs: Option<Vec<f64>>,
    /// Ratio `ν(q+1)/ν(q)` beyond the window when the tail is geometric.
    pub tail_ratio: Option<f64>,
}

impl StateDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("empty distribution");
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("probabilities must be finite and nonnegative");
        }
        let total = compensated_sum(probs.iter().copied());
        if total > 1.0 + 1e-12 {
            return invalid(format!("total mass {total} exceeds 1"));
        }
        Ok(Self {
            probs,
            tail_mass: (1.0 - total).max(0.0),
            log_probs: None,
            tail_ratio: None,
        })
    }

    pub fn dirac(q: usize, q_max: usize) -> Result<Self> {
        if q > q_max {
            return invalid(format!("dirac state {q} outside window 0..={q_max}"));
        }
        let mut probs = vec![0.0; q_max + 1];
        probs[q] = 1.0;
        Ok(Self {
            probs,
            tail_mass: 0.0,
            log_probs: None,
            tail_ratio: None,
        })
    }

    /// Uniform on `{lo..=hi}`.
    pub fn uniform(lo: usize, hi: usize, q_max: usize) -> Result<Self> {
        if lo > hi || hi > q_max {
            return invalid(format!(
                "uniform support {lo}..={hi} outside window 0..={q_max}"
            ));
        }
        let w = 1.0 / (hi - lo + 1) as f64;
        let probs = (0..=q_max)
            .map(|q| if (lo..=hi).contains(&q) { w } else { 0.0 })
            .collect();
        Ok(Self {
            probs,
            tail_mass: 0.0,
            log_probs: None,
            tail_ratio: None,
        })
    }

    pub fn q_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn window_mass(&self) -> f64 {
        compensated_sum(self.probs.iter().copied())
    }

    pub fn get(&self, q: usize) -> f64 {
        self.probs.get(q).copied().unwrap_or(0.0)
    }

    /// `ln p(q)`, from the log-domain twin when present.
    pub fn ln_prob(&self, q: usize) -> f64 {
        match &self.log_probs {
            Some(lp) if q < lp.len() => lp[q],
            _ => self.get(q).ln(),
        }
    }

    /// Restriction renormalized to the window (tail discarded).
    pub fn normalized(&self) -> Self {
        let total = self.window_mass();
        let probs = self.probs.iter().map(|p| p / total).collect();
        let log_probs = self.log_probs.as_ref().map(|lp| {
            let lt = total.ln();
            lp.iter().map(|l| l - lt).collect()
        });
        Self {
            probs,
            tail_mass: 0.0,
            log_probs,
            tail_ratio: None,
        }
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.probs.iter().enumerate().map(|(q, p)| q as f64 * p))
    }
}

/// Unnormalized log weights from the detailed-balance recursion.
/// Unnormalized log weights as (high, low) pairs: the running sum of
/// `ln(birth/death)` is carried in double-double so that each stored value
/// is rounded once, which keeps per-edge ratios exact to about one ulp.
fn log_weights(chain: &BirthDeathChain) -> Vec<(f64, f64)> {
    let mut w = Vec::with_capacity(chain.len());
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    w.push((hi, lo));
    for q in 0..chain.q_max() {
        let r = (chain.birth(q) / chain.death(q + 1)).ln();
        let (s, e) = two_sum(hi, r);
        let (h, l) = two_sum(s, lo + e);
        hi = h;
        lo = l;
        w.push((hi, lo));
    }
    w
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

pub fn stationary(chain: &BirthDeathChain) -> StateDistribution {
    let ww = log_weights(chain);
    let w: Vec<f64> = ww.iter().map(|(h, l)| h + l).collect();
    let q_max = chain.q_max();
    let (log_z, tail_ratio) = match chain.kind {
        ChainKind::Mm1 { lambda, mu } => {
            let rho = lambda / mu;
            // Σ_q ρ^q = 1/(1−ρ)
            (-(-rho).ln_1p(), Some(rho))
        }
        ChainKind::Mmn {
            n,
            headroom,
            lambda,
            mu,
        } => {
            let nf = n as f64;
            let rho = lambda / (mu * nf);
            let mut terms: Vec<f64> = w[..n].to_vec();
            // Σ_{q≥n} w(n)ρ^{q−n} = w(n)/(1−ρ), with 1−ρ = headroom/n.
            terms.push(w[n] - (headroom / nf).ln());
            (log_sum_exp(&terms), Some(rho))
        }
        ChainKind::Mminf { lambda, mu } => (lambda / mu, None),
        ChainKind::Custom => (log_sum_exp(&w), None),
    };
    let log_probs: Vec<f64> = ww
        .iter()
        .map(|&(h, l)| {
            let (s, e) = two_sum(h, -log_z);
            s + (e + l)
        })
        .collect();
    let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
    let tail_mass = match (chain.kind, tail_ratio) {
        (ChainKind::Custom, _) => 0.0,
        (_, Some(rho)) => (log_probs[q_max] + rho.ln() - (-rho).ln_1p()).exp(),
        (ChainKind::Mminf { lambda, mu }, None) => poisson_sf(lambda / mu, q_max),
        _ => 0.0,
    };
    StateDistribution {
        probs,
        tail_mass,
        log_probs: Some(log_probs),
        tail_ratio: if chain.kind == ChainKind::Custom {
            None
        } else {
            tail_ratio
        },
    }
}

/// `(𝓛f)(q) = birth(q)(f(q+1) − f(q)) + death(q)(f(q−1) − f(q))`.
pub fn generator_apply(chain: &BirthDeathChain, f: &[f64]) -> Vec<f64> {
    assert_eq!(
        f.len(),
        chain.len(),
        "function must be defined on the whole window"
    );
    let q_max = chain.q_max();
    (0..=q_max)
        .map(|q| {
            let up = if q < q_max {
                chain.birth(q) * (f[q + 1] - f[q])
            } else {
                0.0
            };
            let down = if q > 0 {
                chain.death(q) * (f[q - 1] - f[q])
            } else {
                0.0
            };
            up + down
        })
        .collect()
}

/// Smallest `q_max ≥ n` whose stationary tail beyond it is below `mass_tol`,
/// never below `n + 10`.
pub fn choose_truncation(spec: &RegimeSpec, mass_tol: f64) -> Result<usize> {
    if !(mass_tol > 0.0 && mass_tol <= 1e-6) {
        return invalid(format!("mass_tol must lie in (0, 1e-6], got {mass_tol}"));
    }
    let n = spec.n;
    let nf = n as f64;
    let a = spec.load();
    let rho = spec.rho();
    let one_minus_rho = spec.headroom() / nf;
    // ln ν(n) of the infinite chain.
    let mut terms = Vec::with_capacity(n + 1);
    for q in 0..n {
        terms.push(q as f64 * a.ln() - ln_factorial(q));
    }
    let ln_wn = nf * a.ln() - ln_factorial(n);
    terms.push(ln_wn - one_minus_rho.ln());
    let ln_nu_n = ln_wn - log_sum_exp(&terms);
    let ln_tail = |m: usize| ln_nu_n + (m - n) as f64 * rho.ln() + rho.ln() - one_minus_rho.ln();
    let target = mass_tol.ln();
    let mut m = if ln_tail(n) < target {
        n
    } else {
        let steps = ((target - ln_tail(n)) / rho.ln()).floor();
        if !steps.is_finite() || steps + nf > MAX_Q as f64 {
            return Err(Error::CostGuard(format!(
                "truncation would exceed {MAX_Q} states"
            )));
        }
        n + steps as usize
    };
    while ln_tail(m) >= target {
        m += 1;
    }
    while m > n && ln_tail(m - 1) < target {
        m -= 1;
    }
    let m = m.max(n + 10);
    if m > MAX_Q {
        return Err(Error::CostGuard(format!("truncation {m} exceeds {MAX_Q}")));
    }
    Ok(m)
}
