use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use classtie_bench::{bag, mention, model};
use classtie_core::encoder::encode;
use classtie_core::model::bag_gradient;
use classtie_core::{Rng, Variant};

fn encoder(c: &mut Criterion) {
    let (params, cfg, _) = model(1);
    let mut group = c.benchmark_group("encode");
    for len in [20, 60] {
        let m = mention(len, &mut Rng::new(2));
        group.bench_with_input(BenchmarkId::from_parameter(len), &m, |b, m| {
            b.iter(|| encode(black_box(m), &params.encoder, cfg.encoder.clip, cfg.keep_prob, None).unwrap())
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let (params, cfg, schema) = model(1);
    let nr = schema.nr_index();
    let b = bag(4, 30, &[0, 1], &schema, 3);
    let mut group = c.benchmark_group("bag_gradient");
    for variant in Variant::ALL {
        group.bench_function(variant.to_string(), |bench| {
            bench.iter(|| {
                let mut rng = Rng::new(4);
                bag_gradient(&params, black_box(&b), variant, nr, &cfg, Some(&mut rng)).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, encoder, gradient);
criterion_main!(benches);
