use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mug_core::data::generate;
use mug_core::losses::stage1_loss;
use mug_core::meta::{meta_step, MetaConfig, MetaTask};
use mug_core::model::{Batch, Mucn};
use mug_core::pipeline::{build_model, Config};
use mug_core::{Graph, Modality, Tensor};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("matmul");
    for n in [32, 128, 256] {
        let a = random(&mut rng, n, n);
        let b = random(&mut rng, n, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| bench.iter(|| a.matmul(&b)));
    }
    group.finish();
}

fn stage1_step(c: &mut Criterion) {
    let cfg = Config::default();
    let data = generate(&cfg.data).unwrap().0;
    let model = build_model(&cfg, data.feature_dims().unwrap()).unwrap();
    let params = model.init(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let batch = Batch::from_slice(&data.train.observations[..cfg.batch_size]).unwrap();
    let weights = cfg.stage1_weights();
    c.bench_function("stage1 loss and gradients, batch 32", |bench| {
        bench.iter(|| {
            let graph = Graph::new();
            let attached = params.attach(&graph);
            let loss = stage1_loss(&model, &attached, &batch, &weights).unwrap().total;
            attached.gradients(&loss).unwrap()
        })
    });
}

fn gated_meta_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = Config::default().d_a;
    let mucn = Mucn::new(Modality::Acoustic, d, 3.0).unwrap();
    let params = mucn.init(&mut rng).unwrap();
    let cfg = MetaConfig::default();
    let (n, big) = (cfg.batch_size, cfg.batch_size * (1 + cfg.oversample));
    let task = MetaTask {
        x_uni: random(&mut rng, n, d),
        noisy: random(&mut rng, n, 1),
        target: random(&mut rng, n, 1),
        x_proj: random(&mut rng, big, d),
        noisy_proj: random(&mut rng, big, 1),
        y: random(&mut rng, big, 1),
    };
    c.bench_function("meta step, acoustic width", |bench| {
        bench.iter(|| {
            let mut p = params.clone();
            meta_step(&mucn, &mut p, &task, &cfg).unwrap()
        })
    });
}

criterion_group!(benches, matmul, stage1_step, gated_meta_step);
criterion_main!(benches);
