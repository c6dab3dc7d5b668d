//! Spectral-gap oracle, Dirichlet forms, and closed-form gap bounds for M/M/n.
//!
//! `−𝓛` is similar to the symmetric tridiagonal matrix with diagonal
//! `birth(q) + death(q)` and off-diagonal `−√(birth(q)·death(q+1))`, whose
//! eigenvalues are located by Sturm-sequence bisection.
//!
//! For M/M/n chains the states above the knee form a homogeneous
//! birth–death block, and the gap is computed for the *infinite* chain by
//! closing the recurrence with the block's exact Schur complement. A
//! reflecting truncation at `q_max` overestimates the gap by roughly
//! `√(λnμ)·π²/q_max²`, which near critical load dominates the gap itself.
//! Other chains (M/M/∞, custom) use the truncated matrix, whose gap converges
//! exponentially fast in `q_max` there.

use crate::bdchain::{BirthDeathChain, ChainKind, RegimeSpec, StateDistribution};
use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, KahanSum};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralResult {
    pub gap: f64,
    /// Closed-form lower bound for the same chain (zero when none applies).
    pub beta_hat_lb: f64,
    pub q_max_used: usize,
    /// Width of the final bisection bracket (zero when the gap is the edge
    /// of the continuous spectrum).
    pub residual: f64,
}

/// Symmetric tridiagonal form of `−𝓛`: diagonal and squared off-diagonal.
struct Tridiagonal {
    diag: Vec<f64>,
    off_sq: Vec<f64>,
}

impl Tridiagonal {
    fn from_chain(chain: &BirthDeathChain, upto: usize) -> Self {
        let diag = (0..=upto)
            .map(|q| chain.birth(q) + chain.death(q))
            .collect();
        let off_sq = (0..upto)
            .map(|q| chain.birth(q) * chain.death(q + 1))
            .collect();
        Self { diag, off_sq }
    }

    /// Number of eigenvalues strictly below `x` (LDLᵀ inertia from the top).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..self.diag.len() {
            let e2 = if i == 0 { 0.0 } else { self.off_sq[i - 1] };
            d = self.diag[i] - x - if i == 0 { 0.0 } else { e2 / d };
            if d == 0.0 {
                d = -f64::EPSILON * (self.diag[i].abs() + x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }
}

/// M/M/n generator with the homogeneous tail `{n, n+1, …}` closed exactly.
struct ClosedTail {
    head: Tridiagonal,
    /// Rates of the homogeneous block.
    a: f64,
    c2: f64,
    edge: f64,
}

impl ClosedTail {
    fn new(n: usize, lambda: f64, mu: f64, headroom: f64) -> Self {
        let nf = n as f64;
        let diag = (0..n).map(|q| lambda + mu * q as f64).collect();
        // Couplings (q, q+1) for q < n; the last couples the head to the block.
        let off_sq = (0..n).map(|q| lambda * mu * (q + 1) as f64).collect();
        let s = (nf * mu).sqrt() + lambda.sqrt();
        Self {
            head: Tridiagonal { diag, off_sq },
            a: lambda + nf * mu,
            c2: lambda * nf * mu,
            edge: (mu * headroom / s).powi(2),
        }
    }

    /// Eigenvalues of the infinite operator below `x`; valid for
    /// `x < edge`, where the block's Schur pivot is the larger root of
    /// `u² − (A − x)u + c² = 0`.
    fn count_below(&self, x: f64) -> usize {
        let ax = self.a - x;
        let mut u = 0.5 * (ax + (ax * ax - 4.0 * self.c2).max(0.0).sqrt());
        let n = self.head.diag.len();
        let mut count = 0;
        for k in (0..n).rev() {
            u = self.head.diag[k] - x - self.head.off_sq[k] / u;
            if u == 0.0 {
                u = -f64::EPSILON * (self.head.diag[k].abs() + x.abs() + 1.0);
            }
            if u < 0.0 {
                count += 1;
            }
        }
        count
    }
}

fn bisection_tolerance(scale: f64) -> f64 {
    f64::max(1e-10, 1e-12 * scale)
}

/// Smallest `x` in `(lo, hi)` where `count(x) ≥ 2`, i.e. the second
/// eigenvalue; returns (value, bracket width).
fn bisect_second(
    count: impl Fn(f64) -> usize,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok((0.5 * (lo + hi), hi - lo));
        }
        if count(mid) >= 2 {
            hi = mid;
        } else {
            lo = mid;
        }
        let width = hi - lo;
        // Absolute target, then keep refining to ~1e-10 relative when cheap.
        if width < tol && (width <= 1e-10 * lo || width <= 4.0 * f64::EPSILON * hi) {
            return Ok((0.5 * (lo + hi), width));
        }
    }
    Err(Error::NonConvergence(format!(
        "bisection stalled in [{lo:e}, {hi:e}]"
    )))
}

fn check_ground_state(count: impl Fn(f64) -> usize, tol: f64, ceiling: f64) -> Result<()> {
    let zero_tol = f64::max(1e-9, 2.0 * tol);
    if count(-zero_tol) != 0 || count(zero_tol.min(ceiling)) < 1 {
        return Err(Error::BrokenChain(format!(
            "smallest eigenvalue of −𝓛 is not within {zero_tol:e} of zero"
        )));
    }
    Ok(())
}

pub fn spectral_gap(chain: &BirthDeathChain) -> Result<SpectralResult> {
    match chain.kind() {
        ChainKind::Mmn {
            n,
            lambda,
            mu,
            headroom,
        } => mmn_gap(chain, n, lambda, mu, headroom),
        ChainKind::Mm1 { lambda, mu } => mmn_gap(chain, 1, lambda, mu, 1.0 - lambda / mu),
        ChainKind::Mminf { mu, .. } => {
            let mut r = truncated_gap(chain)?;
            r.beta_hat_lb = mu;
            Ok(r)
        }
        ChainKind::Custom => truncated_gap(chain),
    }
}

fn mmn_gap(
    chain: &BirthDeathChain,
    n: usize,
    lambda: f64,
    mu: f64,
    headroom: f64,
) -> Result<SpectralResult> {
    let op = ClosedTail::new(n, lambda, mu, headroom);
    let scale = op.a + 2.0 * op.c2.sqrt();
    let tol = bisection_tolerance(scale);
    let count = |x: f64| op.count_below(x);
    let edge = op.edge;
    // The closure is only valid below the continuous spectrum.
    check_ground_state(count, tol, 0.5 * edge)?;
    let spec = RegimeSpec::from_lambda(n, lambda, mu)?;
    let beta_hat_lb = beta_hat_lower_bound(&spec);
    if count(edge * (1.0 - 1e-10)) <= 1 {
        return Ok(SpectralResult {
            gap: edge,
            beta_hat_lb,
            q_max_used: chain.q_max(),
            residual: 0.0,
        });
    }
    let (gap, residual) = bisect_second(count, 0.0, edge, tol.min(1e-6 * edge))?;
    Ok(SpectralResult {
        gap,
        beta_hat_lb,
        q_max_used: chain.q_max(),
        residual,
    })
}

/// Gap of the reflecting truncation itself (no tail closure).
pub fn truncated_gap(chain: &BirthDeathChain) -> Result<SpectralResult> {
    if chain.q_max() == 0 {
        return invalid("a single-state chain has no spectral gap");
    }
    let t = Tridiagonal::from_chain(chain, chain.q_max());
    let upper = (0..t.diag.len())
        .map(|i| {
            let l = if i > 0 { t.off_sq[i - 1].sqrt() } else { 0.0 };
            let r = if i < t.off_sq.len() {
                t.off_sq[i].sqrt()
            } else {
                0.0
            };
            t.diag[i] + l + r
        })
        .fold(0.0, f64::max);
    let tol = bisection_tolerance(chain.max_rate());
    let count = |x: f64| t.count_below(x);
    check_ground_state(count, tol, f64::INFINITY)?;
    let (gap, residual) = bisect_second(count, 0.0, upper * (1.0 + 1e-12) + 1e-12, tol)?;
    Ok(SpectralResult {
        gap,
        beta_hat_lb: 0.0,
        q_max_used: chain.q_max(),
        residual,
    })
}

/// Second eigenpair of the truncated chain: `(eigenvalue, f)` with
/// `−𝓛f = eigenvalue·f`, `f` normalized to unit `ν`-variance.
pub fn second_eigenfunction(
    chain: &BirthDeathChain,
    nu: &StateDistribution,
) -> Result<(f64, Vec<f64>)> {
    let gap = truncated_gap(chain)?.gap;
    let t = Tridiagonal::from_chain(chain, chain.q_max());
    let len = t.diag.len();
    let off: Vec<f64> = t.off_sq.iter().map(|e| -e.sqrt()).collect();
    // Inverse iteration on T − σI with σ just below the eigenvalue.
    let sigma = gap * (1.0 - 1e-9) - 1e-14;
    let mut v: Vec<f64> = (0..len)
        .map(|i| 1.0 + (i as f64 * 0.7).sin() * 0.5)
        .collect();
    for _ in 0..6 {
        v = solve_shifted(&t.diag, &off, sigma, &v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonConvergence("inverse iteration broke down".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
    // v = D^{1/2} f
    let nu = nu.normalized();
    let f: Vec<f64> = (0..len)
        .map(|q| v[q] * (-0.5 * nu.ln_prob(q)).exp())
        .collect();
    let var = variance(&nu, &f);
    let s = var.sqrt();
    Ok((gap, f.iter().map(|x| x / s).collect()))
}

/// Thomas algorithm for `(T − σI)x = rhs` with symmetric off-diagonal `off`.
fn solve_shifted(diag: &[f64], off: &[f64], sigma: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0] - sigma;
    if piv == 0.0 {
        piv = f64::EPSILON;
    }
    c[0] = if n > 1 { off[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - sigma - off[i - 1] * c[i - 1];
        if piv == 0.0 {
            piv = f64::EPSILON * (diag[i].abs() + 1.0);
        }
        c[i] = if i + 1 < n { off[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / piv;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn weights(nu: &StateDistribution) -> (Vec<f64>, f64) {
    let total = nu.window_mass();
    (nu.probs.clone(), total)
}

/// `𝓔(f,f) = Σ ν(q)·birth(q)·(f(q+1) − f(q))²`, with `ν` renormalized on
/// the window.
pub fn dirichlet_form(chain: &BirthDeathChain, nu: &StateDistribution, f: &[f64]) -> f64 {
    let (w, total) = weights(nu);
    let s = compensated_sum((0..chain.q_max()).map(|q| {
        let d = f[q + 1] - f[q];
        w[q] * chain.birth(q) * d * d
    }));
    s / total
}

/// `⟨f, −𝓛f⟩_ν`; equals [`dirichlet_form`] by reversibility.
pub fn dirichlet_inner(chain: &BirthDeathChain, nu: &StateDistribution, f: &[f64]) -> f64 {
    let (w, total) = weights(nu);
    let lf = crate::bdchain::generator_apply(chain, f);
    -compensated_sum((0..chain.len()).map(|q| w[q] * f[q] * lf[q])) / total
}

/// `Var_ν(f)` with `ν` renormalized on its window (two-pass).
pub fn variance(nu: &StateDistribution, f: &[f64]) -> f64 {
    let (w, total) = weights(nu);
    let mean = compensated_sum(w.iter().zip(f).map(|(p, x)| p * x)) / total;
    let mut s = KahanSum::new();
    for (p, x) in w.iter().zip(f) {
        let d = x - mean;
        s.add(p * d * d);
    }
    (s.value() / total).max(0.0)
}

/// `𝓔(f,f)/Var_ν(f)`.
pub fn rayleigh(chain: &BirthDeathChain, nu: &StateDistribution, f: &[f64]) -> Result<f64> {
    let var = variance(nu, f);
    let scale = f.iter().map(|x| x * x).fold(0.0, f64::max);
    if var <= 1e-300 || var <= 1e-28 * scale {
        return invalid("rayleigh quotient of a (numerically) constant function");
    }
    Ok(dirichlet_form(chain, nu, f) / var)
}

/// `μ·min{½√(a/n), (√n − √a)²}` with `a = λ/μ`.
pub fn beta_hat_lower_bound(spec: &RegimeSpec) -> f64 {
    let nf = spec.n as f64;
    let first = 0.5 * (spec.load() / nf).sqrt();
    f64::min(spec.mu * first, spec.gamma_critical())
}

/// Infimum over `k ≥ 1` of `a + min{k,n} − √(a·min{k−1,n}) − √(a·min{k,n})`
/// (times μ); the `k > n` branch is `(√n − √a)²`.
pub fn van_doorn_bound(spec: &RegimeSpec) -> f64 {
    let a = spec.load();
    let inner = (1..=spec.n)
        .map(|k| {
            let k = k as f64;
            a + k - (a * (k - 1.0)).sqrt() - (a * k).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    f64::min(spec.mu * inner, spec.gamma_critical())
}

/// `min_{1≤k≤n} (√λ − √k)² + √λ/(√k + √(k−1))`, the large-n profile of the
/// sub-Halfin–Whitt decay parameter (unit service rate).
pub fn f_star(n: usize, lambda: f64) -> f64 {
    let sl = lambda.sqrt();
    (1..=n)
        .map(|k| {
            let k = k as f64;
            (sl - k.sqrt()).powi(2) + sl / (k.sqrt() + (k - 1.0).sqrt())
        })
        .fold(f64::INFINITY, f64::min)
}
