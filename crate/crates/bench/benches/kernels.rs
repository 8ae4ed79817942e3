use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satde::channels::{ChannelFamily, ChannelKind};
use satde::de::{de_step, DeMode};
use satde::mc::{build_regular_graph, decode, DecoderConfig};
use satde::{EnsembleSpec, Grid, QuantizedDensity};

fn awgn(sigma: f64) -> QuantizedDensity {
    ChannelFamily::new(ChannelKind::Biawgn).make_channel(sigma, Grid::default()).unwrap()
}

fn kernels(c: &mut Criterion) {
    let a = awgn(0.8);
    let b = awgn(0.9).saturate_sym(20.0).unwrap();
    c.bench_function("var_convolve", |bench| bench.iter(|| black_box(&a).var_convolve(black_box(&b)).unwrap()));
    c.bench_function("chk_convolve", |bench| bench.iter(|| black_box(&a).chk_convolve(black_box(&b)).unwrap()));

    let ens = EnsembleSpec::regular(3, 6).unwrap();
    let x = a.clone();
    let mut group = c.benchmark_group("de_step");
    group.sample_size(20);
    for mode in [DeMode::Bp, DeMode::SymSat] {
        let k = mode.is_saturated().then_some(20.0);
        group.bench_function(mode.to_string(), |bench| {
            bench.iter(|| de_step(black_box(&a), black_box(&x), &ens, mode, k).unwrap())
        });
    }
    group.finish();

    let n = 10_000;
    let graph = build_regular_graph(n, 3, 6, 1).unwrap();
    let llrs = ChannelFamily::new(ChannelKind::Bsc)
        .sample_llrs(0.04, n, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap();
    let cfg = DecoderConfig::new(20.0, 10);
    let mut group = c.benchmark_group("decode");
    group.sample_size(10);
    group.bench_function("bp_n10000_10iters", |bench| bench.iter(|| decode(&graph, black_box(&llrs), &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
