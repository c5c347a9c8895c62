//! Criterion benchmarks for the hot kernels: convolution forward passes,
//! bilinear resizing and streaming image building.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowimage::dataset::{ClassLabel, FlowRecord, NUM_FEATURES};
use flowimage::featurize::{
    bilinear_resize, ImageBuilder, ImageTensor, NormalizationStats, Resolution,
};
use flowimage::nn::{Graph, Padding, Tensor};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(&mut rng, &[1, 36, 36, 8]);
    let k = random_tensor(&mut rng, &[3, 3, 8, 8]);
    c.bench_function("conv2d 36x36x8 k3 s1", |b| {
        b.iter_batched(
            || (x.clone(), k.clone()),
            |(x, k)| {
                let mut g = Graph::new();
                let xid = g.leaf(x);
                let kid = g.leaf(k);
                g.conv2d(xid, kid, 1, Padding::Same)
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_depthwise(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[1, 36, 36, 16]);
    let k = random_tensor(&mut rng, &[3, 3, 16]);
    c.bench_function("depthwise 36x36x16 k3 s1", |b| {
        b.iter_batched(
            || (x.clone(), k.clone()),
            |(x, k)| {
                let mut g = Graph::new();
                let xid = g.leaf(x);
                let kid = g.leaf(k);
                g.depthwise_conv2d(xid, kid, 1, Padding::Same)
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_bilinear_resize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bytes: Vec<u8> = (0..16 * 16 * 3).map(|_| rng.gen()).collect();
    let image = ImageTensor::from_bytes(bytes, ClassLabel::DDoS, 0);
    for target in [Resolution::R32, Resolution::R71, Resolution::R75] {
        c.bench_function(&format!("bilinear 16 -> {}", target.side()), |b| {
            b.iter(|| bilinear_resize(&image, target))
        });
    }
}

fn bench_image_building(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<FlowRecord> = (0..480)
        .map(|i| {
            let mut features = [0.0; NUM_FEATURES];
            for f in features.iter_mut() {
                *f = rng.gen_range(0.0..100.0);
            }
            FlowRecord {
                features,
                label: ClassLabel::DoS,
                seq_index: i as u64,
            }
        })
        .collect();
    let stats = NormalizationStats::fit(records.iter()).unwrap();
    c.bench_function("image building 480 records", |b| {
        b.iter(|| {
            let mut builder = ImageBuilder::new(ClassLabel::DoS);
            let mut images = Vec::new();
            for r in &records {
                if let Some(img) = builder.push(&stats.normalize(r), r.seq_index) {
                    images.push(img);
                }
            }
            images
        })
    });
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_depthwise,
    bench_bilinear_resize,
    bench_image_building
);
criterion_main!(benches);
