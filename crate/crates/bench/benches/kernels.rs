//! Timing of the three hot kernels: stationary law, spectral gap, transient solve.

use bdmix::bdchain::{
    build_mminf, build_mmn, choose_truncation, stationary, RegimeSpec, StateDistribution,
};
use bdmix::spectral::{spectral_gap, truncated_gap};
use bdmix::transient::evolve;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn chain_for(n: usize, alpha: f64) -> bdmix::bdchain::BirthDeathChain {
    let spec = RegimeSpec::from_alpha(n, alpha).unwrap();
    build_mmn(&spec, choose_truncation(&spec, 1e-12).unwrap()).unwrap()
}

fn bench_stationary(c: &mut Criterion) {
    let mut g = c.benchmark_group("stationary");
    for n in [110, 2000, 20000] {
        let chain = chain_for(n, 0.75);
        g.bench_with_input(BenchmarkId::from_parameter(n), &chain, |b, chain| {
            b.iter(|| stationary(black_box(chain)))
        });
    }
    g.finish();
}

fn bench_gap(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectral_gap");
    for (n, alpha) in [(110, 0.75), (2000, 0.5), (5000, 0.25)] {
        let chain = chain_for(n, alpha);
        g.bench_with_input(
            BenchmarkId::new("mmn", format!("{n}/{alpha}")),
            &chain,
            |b, chain| b.iter(|| spectral_gap(black_box(chain)).unwrap()),
        );
    }
    let chain = build_mminf(50.0, 1.0, 200).unwrap();
    g.bench_function("mminf_truncated/50", |b| {
        b.iter(|| truncated_gap(black_box(&chain)).unwrap())
    });
    g.finish();
}

fn bench_evolve(c: &mut Criterion) {
    let mut g = c.benchmark_group("evolve");
    for (n, t) in [(16, 10.0), (500, 1.0)] {
        let chain = chain_for(n, 1.0);
        let pi0 = StateDistribution::dirac(0, chain.q_max()).unwrap();
        g.bench_with_input(
            BenchmarkId::new("dirac0", format!("n{n}/t{t}")),
            &(chain, pi0),
            |b, (chain, pi0)| {
                b.iter(|| evolve(black_box(chain), black_box(pi0), t, 1e-12).unwrap())
            },
        );
    }
    g.finish();
}

criterion_group!(benches, bench_stationary, bench_gap, bench_evolve);
criterion_main!(benches);
