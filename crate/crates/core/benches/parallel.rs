//! Compares the data-parallel batch kernels against their sequential
//! counterparts. Build with `--no-default-features` to measure the fully
//! sequential crate; by default the parallel side uses rayon.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use cekd_core::augment::{apply_augmentation, sample_pairing, MixKind, MixMethod};
use cekd_core::model::{
    backward_batch, forward_batch, forward_batch_seq, init_params, NetConfig,
};
use cekd_core::numerics::{RngStream, Tensor};

fn bench_setup() -> (NetConfig, cekd_core::model::Params, Tensor) {
    let config = NetConfig {
        input_channels: 1,
        input_hw: 16,
        conv_channels: vec![8, 16],
        pool_after: vec![true, true],
        num_classes: 4,
    };
    let mut rng = RngStream::new(7);
    let params = init_params(&config, &mut rng).unwrap();
    let n = 16;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut irng = rng.child_indexed("img", i as u64);
        let data: Vec<f64> = (0..16 * 16).map(|_| irng.next_f64()).collect();
        images.push(Tensor::from_vec(&[1, 16, 16], data).unwrap());
    }
    let batch = Tensor::stack(&images).unwrap();
    (config, params, batch)
}

fn forward_benches(c: &mut Criterion) {
    let (config, params, batch) = bench_setup();
    let mut group = c.benchmark_group("forward_batch");
    group.bench_function("parallel", |b| {
        b.iter(|| forward_batch(&params, &config, &batch).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| forward_batch_seq(&params, &config, &batch).unwrap())
    });
    group.finish();
}

fn backward_benches(c: &mut Criterion) {
    let (config, params, batch) = bench_setup();
    let (logits, traces) = forward_batch(&params, &config, &batch).unwrap();
    let dlogits = logits.map(|v| v * 0.01);
    let mut group = c.benchmark_group("backward_batch");
    group.bench_function("parallel", |b| {
        b.iter_batched(
            || (),
            |_| backward_batch(&params, &config, &traces, &dlogits).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn augment_benches(c: &mut Criterion) {
    let rng = RngStream::new(11);
    let n = 32;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut irng = rng.child_indexed("img", i as u64);
        let data: Vec<f64> = (0..32 * 32).map(|_| irng.next_f64()).collect();
        images.push(Tensor::from_vec(&[1, 32, 32], data).unwrap());
        labels.push(i % 4);
    }
    let pairing = sample_pairing(n, &mut rng.child("pairing"));
    let method = MixMethod {
        kind: MixKind::CutMix,
        alpha: 5.0,
        apply_prob: 1.0,
    };
    c.bench_function("apply_augmentation/cutmix", |b| {
        b.iter(|| {
            apply_augmentation(&images, &labels, &pairing, &method, None, &rng.child("mix"))
                .unwrap()
        })
    });
}

criterion_group!(benches, forward_benches, backward_benches, augment_benches);
criterion_main!(benches);
