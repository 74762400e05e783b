use std::hint::black_box;

use afddim::channel::{propagate_chain, HopConfig};
use afddim::detect::{ddim_decode, ml_decode};
use afddim::infotheory::{mi_via_immse, mmse_discrete, mmse_discrete_with_order};
use afddim::poweralloc::solve;
use afddim::rng::seeded;
use afddim::signal::draw_block;
use afddim::{AllocationProblem, Constellation, DetectorConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn mmse(c: &mut Criterion) {
    let mut g = c.benchmark_group("mmse_discrete");
    for m in [4, 16, 64, 256] {
        let qam = Constellation::square_qam(m).unwrap();
        g.bench_with_input(BenchmarkId::new("separable", m), &qam, |b, q| {
            b.iter(|| mmse_discrete(q, black_box(10.0)))
        });
    }
    let q16 = Constellation::square_qam(16).unwrap();
    g.bench_function("hermite40/16", |b| {
        b.iter(|| mmse_discrete_with_order(&q16, black_box(10.0), 40))
    });
    g.bench_function("mi_via_immse/16", |b| b.iter(|| mi_via_immse(&q16, black_box(10.0))));
    g.finish();
}

fn decode(c: &mut Criterion) {
    let mut g = c.benchmark_group("decode_64x64");
    g.sample_size(20);
    for m in [4, 16, 64] {
        let qam = Constellation::square_qam(m).unwrap();
        let mut rng = seeded(1);
        let block = draw_block(&qam, 64, &mut rng).unwrap();
        let out = propagate_chain(&block, &vec![HopConfig::awgn(0.01); 10], &mut rng).unwrap();
        g.bench_with_input(BenchmarkId::new("ml", m), &qam, |b, q| {
            b.iter(|| ml_decode(&out.block, &out.stats, q).unwrap())
        });
        for steps in [1, 10] {
            let cfg = DetectorConfig::exact_bayes(qam.clone(), steps);
            g.bench_with_input(BenchmarkId::new(format!("ddim_bayes_t{steps}"), m), &cfg, |b, cfg| {
                b.iter(|| ddim_decode(&out.block, &out.stats, cfg).unwrap())
            });
        }
    }
    g.finish();
}

fn allocation(c: &mut Criterion) {
    let mut g = c.benchmark_group("poweralloc_solve");
    for t in [2usize, 10, 100] {
        let cs: Vec<f64> = (0..t).map(|i| 0.5 + i as f64 * 0.37).collect();
        let pr = AllocationProblem::uncapped(cs, 1.0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(t), &pr, |b, pr| b.iter(|| solve(pr).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, mmse, decode, allocation);
criterion_main!(benches);
