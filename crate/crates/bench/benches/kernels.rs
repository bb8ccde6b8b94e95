use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rif_core::analysis::{count_unique_patterns, mean_shift, AnalysisConfig, Kernel};
use rif_core::data::{synth_oriented_patches, Standardization, SynthConfig};
use rif_core::model::{train_epoch, OptimState, ToyNet, TrainConfig, TrainSet};
use rif_core::tensor::{ops, Tensor};
use rif_core::{rng, FilterBank};

fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0f32..1.0))
}

fn conv(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let x = uniform(&[32, 3, 11, 11], &mut r);
    let k = uniform(&[16, 3, 3, 3], &mut r);
    let y = ops::conv2d_forward(&x, &k, 1, 1).unwrap();
    let g = uniform(y.shape(), &mut r);
    c.bench_function("conv2d_forward 32x3x11x11 * 16x3x3x3", |b| {
        b.iter(|| ops::conv2d_forward(&x, &k, 1, 1).unwrap())
    });
    c.bench_function("conv2d_backward 32x3x11x11 * 16x3x3x3", |b| {
        b.iter(|| ops::conv2d_backward(&x, &k, &g, 1, 1, true).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<Vec<f64>> = (0..64)
        .map(|i| {
            let centre = (i % 4) as f64;
            (0..5).map(|_| centre + 0.1 * r.random_range(-1.0..1.0)).collect()
        })
        .collect();
    c.bench_function("mean_shift flat 64x5", |b| {
        b.iter(|| mean_shift(&points, 0.5, Kernel::Flat).unwrap())
    });
    c.bench_function("mean_shift gaussian 64x5", |b| {
        b.iter(|| mean_shift(&points, 0.5, Kernel::Gaussian).unwrap())
    });
    let filters: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..27).map(|_| r.random_range(-0.3..0.3)).collect())
        .collect();
    let bank = FilterBank::from_filters(3, 3, &filters).unwrap();
    c.bench_function("count_unique_patterns 64 filters", |b| {
        b.iter(|| count_unique_patterns(&bank, 1e-3, &AnalysisConfig::default(), false).unwrap())
    });
}

fn epoch(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    let ds = synth_oriented_patches(&SynthConfig::default()).unwrap();
    let idx = ds.train_indices();
    let data = TrainSet {
        images: Standardization::fit(&ds).apply::<f32>(&ds, &idx),
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
    };
    let mut net = ToyNet::<f32>::new(cfg.filters, ds.classes);
    net.init_weights(0, cfg.init_std);
    let shapes = net.param_shapes();
    let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let opt = OptimState::new(cfg.lr, cfg.momentum, cfg.weight_decay, &refs);
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function(format!("train_epoch f32, {} images", data.len()), |b| {
        b.iter_batched(
            || (net.clone(), opt.clone()),
            |(mut n, mut o)| {
                train_epoch(&mut n, &data, &mut o, &mut rng::shuffle_stream(0, 1), cfg.batch_size, 1).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, conv, clustering, epoch);
criterion_main!(benches);
