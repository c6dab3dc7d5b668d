//! Subcommand implementations. Each returns a table and whether every
//! bound it reports held against its oracle.

use bdmix::bdchain::{
    build_mminf, build_mmn, choose_truncation, stationary, BirthDeathChain, RegimeSpec,
    StateDistribution,
};
use bdmix::lyapunov::{
    certify_in_place, mean_field_certificate, mminf_certificate, sub_hw_certificate,
    super_hw_certificate, super_hw_singleton_certificate, DriftCertificate,
};
use bdmix::poincare::{
    singleton_certificate, sub_hw_fractional_certificate, super_hw_stitched_certificate,
    verify_poincare, CertMethod, PoincareCertificate, Provenance,
};
use bdmix::regimes::{l_n, mean_field_rate, theorem1_rate, MixingRateBound, Regime, N0};
use bdmix::spectral::{spectral_gap, van_doorn_bound};
use bdmix::stats::{
    idle_prob_bound, idle_probability, mean_queue_envelope, mgf_steady_bound, tail_bound,
    tail_probability, variance_bound_check, Direction,
};
use bdmix::transient::{chi, decay_trace, evolve};
use bdmix::Error;
use rayon::prelude::*;

use crate::output::{Cell, Table};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Drift-certification tolerance used throughout.
const DRIFT_TOL: f64 = 1e-9;
/// Slack allowed when comparing a certified rate with the gap oracle.
const RATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub enum Model {
    Mmn(RegimeSpec),
    Mminf { lambda: f64, mu: f64 },
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n: String,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub mu: f64,
    pub q_max: Option<usize>,
    pub mass_tol: f64,
}

impl ModelSpec {
    pub fn model(&self) -> CliResult<Model> {
        if self.n.eq_ignore_ascii_case("inf") {
            if self.alpha.is_some() {
                return usage("--alpha is not defined for --n inf; give --lambda");
            }
            let Some(lambda) = self.lambda else {
                return usage("--n inf needs --lambda");
            };
            return Ok(Model::Mminf {
                lambda,
                mu: self.mu,
            });
        }
        let n: usize = self.n.parse().map_err(|_| {
            CliError::Usage(format!(
                "--n must be a positive integer or 'inf', got {}",
                self.n
            ))
        })?;
        let spec = match (self.alpha, self.lambda) {
            (Some(a), None) => RegimeSpec::from_alpha_mu(n, a, self.mu)?,
            (None, Some(l)) => RegimeSpec::from_lambda(n, l, self.mu)?,
            (Some(_), Some(_)) => return usage("--alpha and --lambda are mutually exclusive"),
            (None, None) => return usage("one of --alpha or --lambda is required"),
        };
        Ok(Model::Mmn(spec))
    }

    pub fn build(&self) -> CliResult<(Model, BirthDeathChain)> {
        let model = self.model()?;
        let chain = match model {
            Model::Mmn(spec) => {
                let q = match self.q_max {
                    Some(q) => q,
                    None => choose_truncation(&spec, self.mass_tol)?,
                };
                build_mmn(&spec, q)?
            }
            Model::Mminf { lambda, mu } => match self.q_max {
                Some(q) => build_mminf(lambda, mu, q)?,
                None => mminf_default(lambda, mu)?,
            },
        };
        Ok((model, chain))
    }
}

/// Smallest window (growing geometrically) accepted by `build_mminf`.
fn mminf_default(lambda: f64, mu: f64) -> CliResult<BirthDeathChain> {
    let a = lambda / mu;
    let mut q = (4.0 * a).ceil() as usize + 20;
    loop {
        match build_mminf(lambda, mu, q) {
            Err(Error::Truncation(_)) if q < bdmix::bdchain::MAX_Q / 2 => q = q * 3 / 2,
            other => return Ok(other?),
        }
    }
}

fn alpha_cell(spec: &RegimeSpec) -> Cell {
    spec.alpha.into()
}

pub fn cmd_stationary(m: &ModelSpec) -> CliResult<(Table, bool)> {
    let (_, chain) = m.build()?;
    let nu = stationary(&chain);
    let mut t = Table::new(vec!["q", "prob", "log_prob"]);
    for q in 0..=chain.q_max() {
        t.push(vec![q.into(), nu.get(q).into(), nu.ln_prob(q).into()]);
    }
    Ok((t, true))
}

/// `lo:hi:step`, inclusive of `hi` up to rounding.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some([lo, hi, step]) if *step > 0.0 && hi >= lo && *lo >= 0.0 => {
            let count = ((hi - lo) / step + 1e-9).floor() as usize;
            Ok((0..=count).map(|k| lo + k as f64 * step).collect())
        }
        _ => usage(format!(
            "--t-grid must be lo:hi:step with 0 <= lo <= hi and step > 0, got {s}"
        )),
    }
}

/// `dirac:<q>` or `uniform:<lo>,<hi>`.
pub fn parse_init(s: &str, q_max: usize) -> CliResult<StateDistribution> {
    let bad = || {
        CliError::Usage(format!(
            "--init must be dirac:<q> or uniform:<lo>,<hi>, got {s}"
        ))
    };
    let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "dirac" => {
            let q: usize = arg.trim().parse().map_err(|_| bad())?;
            Ok(StateDistribution::dirac(q, q_max)?)
        }
        "uniform" => {
            let (lo, hi) = arg.split_once(',').ok_or_else(bad)?;
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().parse().map_err(|_| bad())?;
            Ok(StateDistribution::uniform(lo, hi, q_max)?)
        }
        _ => Err(bad()),
    }
}

fn certified_rate(model: &Model) -> CliResult<f64> {
    Ok(match model {
        Model::Mmn(spec) => theorem1_rate(spec)?.rate,
        Model::Mminf { mu, .. } => *mu,
    })
}

pub fn cmd_transient(m: &ModelSpec, grid: &str, init: &str, tol: f64) -> CliResult<(Table, bool)> {
    let (model, chain) = m.build()?;
    let grid = parse_grid(grid)?;
    let pi0 = parse_init(init, chain.q_max())?;
    let nu = stationary(&chain).normalized();
    let chi0 = chi(&pi0, &nu)?;
    let rate = certified_rate(&model)?;
    let mut t = Table::new(vec![
        "t",
        "chi",
        "chi_square",
        "tv",
        "mass_deficit",
        "chi_bound",
        "valid",
    ]);
    let mut all = true;
    for p in decay_trace(&chain, &pi0, &grid, tol)? {
        let bound = (-rate * p.t).exp() * chi0;
        let valid = p.chi <= bound * (1.0 + 1e-6) + tol;
        all &= valid;
        t.push(vec![
            p.t.into(),
            p.chi.into(),
            p.chi_square.into(),
            p.tv.into(),
            p.mass_deficit.into(),
            bound.into(),
            valid.into(),
        ]);
    }
    Ok((t, all))
}

pub fn cmd_gap(m: &ModelSpec) -> CliResult<(Table, bool)> {
    let (model, chain) = m.build()?;
    let r = spectral_gap(&chain)?;
    let mut t = Table::new(vec![
        "n",
        "alpha",
        "lambda",
        "mu",
        "gap",
        "beta_hat_lb",
        "van_doorn",
        "bound_rate",
        "q_max_used",
        "residual",
        "valid",
    ]);
    let (n, alpha, lambda, mu, vd): (Cell, Cell, f64, f64, f64) = match model {
        Model::Mmn(spec) => (
            spec.n.into(),
            alpha_cell(&spec),
            spec.lambda,
            spec.mu,
            van_doorn_bound(&spec),
        ),
        Model::Mminf { lambda, mu } => ("inf".into(), f64::NAN.into(), lambda, mu, f64::NAN),
    };
    let rate = certified_rate(&model)?;
    let valid = rate <= r.gap + RATE_TOL;
    t.push(vec![
        n,
        alpha,
        lambda.into(),
        mu.into(),
        r.gap.into(),
        r.beta_hat_lb.into(),
        vd.into(),
        rate.into(),
        r.q_max_used.into(),
        r.residual.into(),
        valid.into(),
    ]);
    Ok((t, valid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DriftFamily {
    Auto,
    SuperHw,
    SuperHwSingleton,
    SubHw,
    MeanField,
    Mminf,
}

fn drift_certificate(
    model: &Model,
    family: DriftFamily,
    z: Option<f64>,
) -> CliResult<(&'static str, DriftCertificate)> {
    let spec = match model {
        Model::Mminf { lambda, mu } => {
            return match family {
                DriftFamily::Auto | DriftFamily::Mminf => {
                    Ok(("mminf", mminf_certificate(*lambda, *mu)?))
                }
                _ => usage("only the mminf family applies to --n inf"),
            }
        }
        Model::Mmn(spec) => spec,
    };
    let family = match family {
        DriftFamily::Auto => match spec.alpha {
            None => DriftFamily::SuperHw,
            Some(a) if a > 0.5 => DriftFamily::SuperHw,
            Some(a) if a < 0.5 && spec.load() >= 3.0 => DriftFamily::SubHw,
            _ => DriftFamily::MeanField,
        },
        f => f,
    };
    Ok(match family {
        DriftFamily::SuperHw => ("super_hw", super_hw_certificate(spec)?),
        DriftFamily::SuperHwSingleton => {
            ("super_hw_singleton", super_hw_singleton_certificate(spec)?)
        }
        DriftFamily::SubHw => ("sub_hw", sub_hw_certificate(spec)?),
        DriftFamily::MeanField => {
            let z = match z {
                Some(z) => z,
                None => l_n(spec.n as f64, spec.load())?.1,
            };
            ("mean_field", mean_field_certificate(spec, z)?)
        }
        DriftFamily::Mminf => return usage("the mminf family needs --n inf"),
        DriftFamily::Auto => unreachable!(),
    })
}

pub fn cmd_drift(m: &ModelSpec, family: DriftFamily, z: Option<f64>) -> CliResult<(Table, bool)> {
    let (model, chain) = m.build()?;
    let (name, mut cert) = drift_certificate(&model, family, z)?;
    let r = certify_in_place(&chain, &mut cert, DRIFT_TOL);
    let mut t = Table::new(vec![
        "family",
        "gamma",
        "k_lo",
        "k_hi",
        "b_max",
        "pass",
        "slack",
        "worst_state",
    ]);
    t.push(vec![
        name.into(),
        cert.gamma.into(),
        cert.k_lo.into(),
        cert.k_hi.into(),
        cert.b_max().into(),
        r.pass.into(),
        r.slack.into(),
        r.worst_state.into(),
    ]);
    Ok((t, r.pass))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CertChoice {
    Auto,
    Singleton,
    Stitching,
    ConstantB,
    RegimeFormula,
}

fn regime_formula(rate: f64) -> CliResult<PoincareCertificate> {
    Ok(PoincareCertificate::new(
        1.0 / rate,
        Provenance {
            method: CertMethod::RegimeFormula,
            gamma: None,
            tau_mass: None,
            c_local: None,
        },
    )?)
}

fn poincare_certificate(model: &Model, choice: CertChoice) -> CliResult<PoincareCertificate> {
    let spec = match model {
        Model::Mminf { lambda, mu } => {
            return Ok(singleton_certificate(&mminf_certificate(*lambda, *mu)?)?)
        }
        Model::Mmn(spec) => spec,
    };
    let alpha = spec.alpha;
    let integer = spec.integer_load().is_some();
    let choice = match choice {
        CertChoice::Auto => match alpha {
            None => CertChoice::Singleton,
            Some(a) if a >= 1.0 => {
                if super_hw_singleton_certificate(spec).is_ok() {
                    CertChoice::Singleton
                } else {
                    CertChoice::RegimeFormula
                }
            }
            Some(a) if a > 0.5 && spec.n >= N0 => CertChoice::Stitching,
            Some(a) if a < 0.5 && spec.load() >= 3.0 && integer => CertChoice::Singleton,
            Some(a) if a < 0.5 && spec.load() >= 3.0 => CertChoice::ConstantB,
            _ => CertChoice::RegimeFormula,
        },
        c => c,
    };
    match choice {
        CertChoice::Singleton => {
            let cert = match alpha {
                Some(a) if a < 0.5 => sub_hw_certificate(spec)?,
                _ => super_hw_singleton_certificate(spec)?,
            };
            Ok(singleton_certificate(&cert)?)
        }
        CertChoice::Stitching => Ok(super_hw_stitched_certificate(spec)?.0),
        CertChoice::ConstantB => Ok(sub_hw_fractional_certificate(spec)?),
        CertChoice::RegimeFormula => regime_formula(theorem1_rate(spec)?.rate),
        CertChoice::Auto => unreachable!(),
    }
}

pub fn cmd_certify(
    m: &ModelSpec,
    choice: CertChoice,
    tests: usize,
    seed: u64,
) -> CliResult<(Table, bool)> {
    let (model, chain) = m.build()?;
    let cert = poincare_certificate(&model, choice)?;
    let r = verify_poincare(&chain, &cert, tests, seed)?;
    let (n, alpha): (Cell, Cell) = match model {
        Model::Mmn(spec) => (spec.n.into(), alpha_cell(&spec)),
        Model::Mminf { .. } => ("inf".into(), f64::NAN.into()),
    };
    let mut t = Table::new(vec![
        "method",
        "n",
        "alpha",
        "c_p",
        "mixing_rate",
        "gap_oracle",
        "valid",
    ]);
    t.push(vec![
        cert.provenance.method.as_str().into(),
        n,
        alpha,
        cert.c_p.into(),
        cert.mixing_rate.into(),
        r.gap_oracle.into(),
        r.pass.into(),
    ]);
    Ok((t, r.pass))
}

pub struct BoundsArgs<'a> {
    pub grid: &'a str,
    pub init: &'a str,
    pub xs: &'a [f64],
    pub delta: f64,
    pub kappa: f64,
    pub tol: f64,
}

pub fn cmd_bounds(m: &ModelSpec, a: &BoundsArgs) -> CliResult<(Table, bool)> {
    let (model, chain) = m.build()?;
    let Model::Mmn(spec) = model else {
        return usage("bounds are defined for M/M/n only");
    };
    if spec.alpha.is_none() {
        return usage("bounds need n >= 2 (alpha undefined for n = 1)");
    }
    let alpha = spec.alpha.unwrap_or(f64::NAN);
    let grid = parse_grid(a.grid)?;
    let pi0 = parse_init(a.init, chain.q_max())?;
    let nu = stationary(&chain).normalized();
    let chi0 = chi(&pi0, &nu)?;
    let bound = theorem1_rate(&spec)?;
    let nu_mean = nu.mean();
    let mut t = Table::new(vec![
        "n",
        "alpha",
        "t",
        "quantity",
        "bound",
        "numerical",
        "direction",
        "valid",
        "in_validity_range",
    ]);
    let mut all = true;
    let mut row =
        |t_: f64, q: String, b: f64, x: f64, dir: Direction, in_range: bool, table: &mut Table| {
            let valid = dir.respects(b, x, 1e-9);
            all &= valid;
            table.push(vec![
                spec.n.into(),
                alpha.into(),
                t_.into(),
                q.into(),
                b.into(),
                x.into(),
                dir.as_str().into(),
                valid.into(),
                in_range.into(),
            ]);
        };
    let n0_tail = f64::max(65.0, 2f64.powf(1.0 / alpha));
    let mut cur = pi0.clone();
    let mut t_prev = 0.0;
    for &time in &grid {
        cur = evolve(&chain, &cur, time - t_prev, a.tol)?;
        t_prev = time;
        let env = mean_queue_envelope(&spec, &bound, time, chi0)?;
        row(
            time,
            "mean_queue".into(),
            env,
            (cur.mean() - nu_mean).abs(),
            Direction::Upper,
            true,
            &mut t,
        );
        for &x in a.xs {
            let tb = tail_bound(&spec, &bound, time, x, chi0)?;
            row(
                time,
                format!("tail@{x}"),
                tb.value,
                tail_probability(&spec, &cur, x),
                Direction::Upper,
                tb.in_validity_range,
                &mut t,
            );
        }
        if (alpha - 0.5).abs() >= 1e-12 {
            let ib = idle_prob_bound(&spec, &bound, time, chi0, a.kappa)?;
            row(
                time,
                "idle".into(),
                ib.value,
                idle_probability(&spec, &cur),
                ib.direction,
                true,
                &mut t,
            );
        }
    }
    if (spec.n as f64) >= n0_tail {
        let r = mgf_steady_bound(&spec, a.delta)?;
        row(
            f64::INFINITY,
            format!("mgf@delta={}", a.delta),
            r.bound,
            r.value,
            Direction::Upper,
            true,
            &mut t,
        );
    }
    let v = variance_bound_check(&spec)?;
    row(
        f64::INFINITY,
        "variance".into(),
        v.bound,
        v.variance,
        Direction::Upper,
        true,
        &mut t,
    );
    Ok((t, all))
}

/// Lyapunov family and finite-set method behind a rate, as in the regime table.
fn table1_labels(b: &MixingRateBound) -> (&'static str, &'static str) {
    let lyapunov = match b.regime {
        Regime::SuperNds | Regime::SuperHw | Regime::HalfinWhitt => "two_sided_exponential",
        Regime::SubHw | Regime::SubHwInteger => "piecewise_linear_exponential",
        Regime::MeanField => "knee_geometric",
    };
    let finite = match b.provenance {
        "singleton" => "singleton",
        "stitching" => "weighted_poincare_closed_form",
        "constant_b" if b.regime == Regime::MeanField => "truncation_mminf",
        "constant_b" => "canonical_path",
        _ => "spectral_lower_bound",
    };
    if b.provenance == "spectral_lower_bound_fallback" {
        return ("none", finite);
    }
    (lyapunov, finite)
}

pub struct SweepPoint {
    pub n: usize,
    pub alpha: f64,
}

fn sweep_row(p: &SweepPoint, table1: bool, mean_field: bool) -> CliResult<(Vec<Cell>, bool)> {
    let spec = RegimeSpec::from_alpha(p.n, p.alpha)?;
    let b = if mean_field {
        mean_field_rate(&spec)?
    } else {
        theorem1_rate(&spec)?
    };
    let gap = spectral_gap(&build_mmn(&spec, spec.n + 10)?)?.gap;
    let valid = b.rate <= gap + RATE_TOL;
    let mut row: Vec<Cell> = vec![
        p.n.into(),
        p.alpha.into(),
        b.regime.as_str().into(),
        b.rate.into(),
        b.constant.into(),
        gap.into(),
        (b.rate / gap).into(),
        valid.into(),
    ];
    if table1 {
        let (l, f) = table1_labels(&b);
        row.push(l.into());
        row.push(f.into());
    }
    Ok((row, valid))
}

pub fn cmd_sweep(
    ns: &[usize],
    alphas: &[f64],
    table1: bool,
    mean_field: bool,
    jobs: usize,
) -> CliResult<(Table, bool)> {
    let points: Vec<SweepPoint> = ns
        .iter()
        .flat_map(|&n| alphas.iter().map(move |&alpha| SweepPoint { n, alpha }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<CliResult<(Vec<Cell>, bool)>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| sweep_row(p, table1, mean_field))
            .collect()
    });
    let mut header = vec![
        "n",
        "alpha",
        "regime",
        "bound_rate",
        "constant",
        "gap_oracle",
        "ratio",
        "valid",
    ];
    if table1 {
        header.extend(["lyapunov", "finite_set"]);
    }
    let mut t = Table::new(header);
    let mut all = true;
    for r in results {
        let (row, valid) = r?;
        all &= valid;
        t.push(row);
    }
    Ok((t, all))
}
