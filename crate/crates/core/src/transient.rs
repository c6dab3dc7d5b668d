//! Transient laws by uniformization, and divergences between distributions.

use crate::bdchain::{stationary, BirthDeathChain, StateDistribution};
use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, ln_factorial, KahanSum};

/// Largest admissible `Λt` for a single [`evolve`] call.
pub const MAX_UNIFORMIZED_MEAN: f64 = 1e7;

/// Poisson(m) window `[left, right]` whose two discarded tails each carry
/// less than `tol/2`, using Chernoff bounds `P[N ≥ k] ≤ e^{−m}(em/k)^k`
/// (k > m) and the mirror bound below the mean.
fn poisson_window(m: f64, tol: f64) -> (usize, usize) {
    let half = (0.5 * tol).ln();
    // ln of the Chernoff bound; at k = 0 it is −m (the exact P[N = 0]).
    let chernoff = |k: f64| {
        if k == 0.0 {
            -m
        } else {
            -m + k * (1.0 + m.ln() - k.ln())
        }
    };
    let mode = m.floor() as usize;

    // Right cutoff: smallest r ≥ mode with P[N ≥ r + 1] < tol/2.
    let (mut lo, mut hi) = (mode, mode + 1);
    while chernoff((hi + 1) as f64) >= half {
        lo = hi;
        hi = 2 * hi + 1;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if chernoff((mid + 1) as f64) < half {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let right = if chernoff((lo + 1) as f64) < half {
        lo
    } else {
        hi
    };

    // Left cutoff: largest l ≤ mode with P[N ≤ l − 1] < tol/2.
    let left = if mode == 0 || chernoff(0.0) >= half {
        0
    } else {
        // chernoff is increasing on [0, m); find the last k < mode below `half`.
        let (mut lo, mut hi) = (0usize, mode);
        if chernoff((mode - 1) as f64) < half {
            lo = mode - 1;
        } else {
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if chernoff(mid as f64) < half {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        lo + 1
    };
    (left.min(mode), right)
}

/// One step of the uniformized kernel `P = I + 𝓛/Λ` acting on row vectors.
fn uniformized_step(chain: &BirthDeathChain, lam: f64, v: &[f64], out: &mut [f64]) {
    let q_max = chain.q_max();
    for j in 0..=q_max {
        let stay = 1.0 - (chain.birth(j) + chain.death(j)) / lam;
        let mut x = v[j] * stay;
        if j > 0 {
            x += v[j - 1] * chain.birth(j - 1) / lam;
        }
        if j < q_max {
            x += v[j + 1] * chain.death(j + 1) / lam;
        }
        out[j] = x;
    }
}

/// Law at time `t` started from `pi0`. The discarded Poisson mass and any
/// input deficit stay in `tail_mass`; probabilities are not renormalized.
pub fn evolve(
    chain: &BirthDeathChain,
    pi0: &StateDistribution,
    t: f64,
    tol: f64,
) -> Result<StateDistribution> {
    if pi0.probs.len() != chain.len() {
        return invalid(format!(
            "initial law has {} states, chain window has {}",
            pi0.probs.len(),
            chain.len()
        ));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return invalid(format!("time must be finite and nonnegative, got {t}"));
    }
    if !(tol > 0.0 && tol <= 1e-6) {
        return invalid(format!("tol must lie in (0, 1e-6], got {tol}"));
    }
    let lam = chain.max_rate();
    if t == 0.0 || lam == 0.0 {
        return Ok(pi0.clone());
    }
    let m = lam * t;
    if m > MAX_UNIFORMIZED_MEAN {
        return Err(Error::CostGuard(format!(
            "Λt = {m:e} exceeds {MAX_UNIFORMIZED_MEAN:e}; split the horizon into shorter evolve calls or loosen tol"
        )));
    }
    let (left, right) = poisson_window(m, tol);
    let mut v = pi0.probs.clone();
    let mut scratch = vec![0.0; v.len()];
    for _ in 0..left {
        uniformized_step(chain, lam, &v, &mut scratch);
        std::mem::swap(&mut v, &mut scratch);
    }
    let mut acc: Vec<KahanSum> = vec![KahanSum::new(); v.len()];
    let mut lw = -m + left as f64 * m.ln() - ln_factorial(left);
    for k in left..=right {
        if k > left {
            uniformized_step(chain, lam, &v, &mut scratch);
            std::mem::swap(&mut v, &mut scratch);
            lw += m.ln() - (k as f64).ln();
        }
        let w = lw.exp();
        if w > 0.0 {
            for (a, x) in acc.iter_mut().zip(&v) {
                a.add(w * x);
            }
        }
    }
    let probs: Vec<f64> = acc.iter().map(|a| a.value().max(0.0)).collect();
    let tail_mass = (1.0 - compensated_sum(probs.iter().copied())).max(0.0);
    Ok(StateDistribution {
        probs,
        tail_mass,
        log_probs: None,
        tail_ratio: None,
    })
}

/// `Σ (p − q)²/q` over the union of the two windows; states missing from a
/// window count as zero mass.
pub fn chi_square(p: &StateDistribution, q: &StateDistribution) -> Result<f64> {
    let len = p.probs.len().max(q.probs.len());
    let mut sum = KahanSum::new();
    for x in 0..len {
        let (px, qx) = (p.get(x), q.get(x));
        if qx <= 0.0 {
            if px > 0.0 {
                return Err(Error::NotAbsolutelyContinuous { state: x, mass: px });
            }
            continue;
        }
        let d = (px - qx).abs();
        if d == 0.0 {
            continue;
        }
        let term = if qx < 1e-300 {
            (2.0 * d.ln() - q.ln_prob(x)).exp()
        } else {
            d * d / qx
        };
        sum.add(term);
    }
    Ok(sum.value().max(0.0))
}

pub fn chi(p: &StateDistribution, q: &StateDistribution) -> Result<f64> {
    chi_square(p, q).map(f64::sqrt)
}

/// `½ Σ |p − q|` over the union of the windows.
pub fn tv_distance(p: &StateDistribution, q: &StateDistribution) -> f64 {
    let len = p.probs.len().max(q.probs.len());
    (0.5 * compensated_sum((0..len).map(|x| (p.get(x) - q.get(x)).abs()))).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPoint {
    pub t: f64,
    pub chi: f64,
    pub chi_square: f64,
    pub tv: f64,
    pub mass_deficit: f64,
}

/// Divergences from the chain's own (window-normalized) stationary law along
/// a time grid, evolving incrementally between grid points.
pub fn decay_trace(
    chain: &BirthDeathChain,
    pi0: &StateDistribution,
    t_grid: &[f64],
    tol: f64,
) -> Result<Vec<DecayPoint>> {
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return invalid("time grid must be ascending");
    }
    if t_grid.first().is_some_and(|&t| t < 0.0) {
        return invalid("time grid must be nonnegative");
    }
    let nu = stationary(chain).normalized();
    let mut cur = pi0.clone();
    let mut t_prev = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        cur = evolve(chain, &cur, t - t_prev, tol)?;
        t_prev = t;
        let chi_square = chi_square(&cur, &nu)?;
        out.push(DecayPoint {
            t,
            chi: chi_square.sqrt(),
            chi_square,
            tv: tv_distance(&cur, &nu),
            mass_deficit: cur.tail_mass,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdchain::{build_mmn, RegimeSpec};

    #[test]
    fn poisson_window_covers_mass() {
        for &m in &[0.1, 1.0, 15.5, 400.0, 1e5] {
            let (l, r) = poisson_window(m, 1e-12);
            let lw = |k: usize| (-m + k as f64 * f64::ln(m) - ln_factorial(k)).exp();
            let inside: f64 = compensated_sum((l..=r).map(lw));
            assert!(1.0 - inside < 1e-12, "m = {m}: missing {}", 1.0 - inside);
            assert!(l as f64 <= m && r as f64 >= m);
        }
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let spec = RegimeSpec::from_lambda(1, 0.25, 1.0).unwrap();
        let c = build_mmn(&spec, 50).unwrap();
        let p0 = StateDistribution::dirac(3, 50).unwrap();
        assert_eq!(evolve(&c, &p0, 0.0, 1e-12).unwrap(), p0);
    }

    #[test]
    fn chi_square_of_dirac() {
        let spec = RegimeSpec::from_lambda(1, 0.25, 1.0).unwrap();
        let c = build_mmn(&spec, 60).unwrap();
        let nu = stationary(&c);
        let p0 = StateDistribution::dirac(0, 60).unwrap();
        assert!((chi_square(&p0, &nu).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absolute_continuity_violation_names_state() {
        let p = StateDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        let q = StateDistribution::from_probs(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            chi_square(&p, &q),
            Err(Error::NotAbsolutelyContinuous { state: 1, .. })
        ));
    }

    #[test]
    fn cost_guard() {
        let spec = RegimeSpec::from_lambda(1, 0.25, 1.0).unwrap();
        let c = build_mmn(&spec, 20).unwrap();
        let p0 = StateDistribution::dirac(0, 20).unwrap();
        assert!(matches!(
            evolve(&c, &p0, 1e7, 1e-12),
            Err(Error::CostGuard(_))
        ));
    }
}
