use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wlhn_core::datasets::{gen_barabasi_albert, TaskKind};
use wlhn_core::gradnet::{Forward, Mode, Tape};
use wlhn_core::hypgeo::raw;
use wlhn_core::sarkar2d::{embed_tree, Tree};
use wlhn_core::wlcolor::wl_colorings;
use wlhn_core::wlhn::{Arm, Model, ModelConfig, PreparedBatch};

fn point(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = raw::norm(&v);
    v.iter().map(|c| c * 0.9 / n).collect()
}

fn distance(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("distance");
    for dim in [2, 32, 128] {
        let (x, y) = (point(&mut rng, dim), point(&mut rng, dim));
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| raw::distance(black_box(&x), black_box(&y)))
        });
    }
    group.finish();
}

fn refine(c: &mut Criterion) {
    let corpus = gen_barabasi_albert(1000, 5, 1, 0).unwrap();
    c.bench_function("wl_colorings/ba1000/T4", |b| {
        b.iter(|| wl_colorings(black_box(&corpus.graphs), 4))
    });
}

fn forward(c: &mut Criterion) {
    let corpus = gen_barabasi_albert(1000, 5, 1, 0).unwrap();
    let g = &corpus.graphs[0];
    let mut group = c.benchmark_group("forward/ba1000");
    group.sample_size(20);
    for arm in [Arm::Wlhn, Arm::Gin] {
        let prep = PreparedBatch::new(&[g], 2);
        let cfg = ModelConfig {
            dim: 64,
            layers: 2,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, arm, TaskKind::NodeRegression, g.feature_dim(), 1, 0).unwrap();
        group.bench_function(format!("{arm:?}"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let fwd = Forward::new(&tape, &m.params, Mode::Eval, 0);
                let out = m.forward(&fwd, &prep);
                let s = tape.value(out.output).sum();
                black_box(s)
            })
        });
    }
    group.finish();
}

fn sarkar(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let parents: Vec<Option<usize>> = (0..2000)
        .map(|i| if i == 0 { None } else { Some(rng.gen_range(0..i)) })
        .collect();
    let tree = Tree::from_parents(&parents).unwrap();
    c.bench_function("embed_tree/random2000", |b| b.iter(|| embed_tree(black_box(&tree), 1.0).unwrap()));
}

criterion_group!(benches, distance, refine, forward, sarkar);
criterion_main!(benches);
