use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psae_core::evaluation::roc_auc;
use psae_core::model::{Autoencoder, AutoencoderConfig};
use psae_core::tensor::conv::{conv3d, conv3d_backward, conv_transpose3d};
use psae_core::tensor::ConvParams;
use psae_core::{Graph, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // first encoder layer and last decoder layer of the desk-scale model
    let x = random(&[4, 8, 1, 64, 64], &mut rng);
    let k = random(&[16, 1, 3, 3, 3], &mut rng);
    let p = ConvParams::new([1, 2, 2], [1, 1, 1]);
    let y = conv3d(&x, &k, &p).unwrap();
    let dy = random(y.shape(), &mut rng);
    c.bench_function("conv3d_fwd_4x8x1x64x64", |b| b.iter(|| conv3d(black_box(&x), &k, &p).unwrap()));
    c.bench_function("conv3d_bwd_4x8x1x64x64", |b| {
        b.iter(|| conv3d_backward(black_box(&x), &k, dy.data(), &p, true).unwrap())
    });
    let z = random(&[4, 8, 16, 32, 32], &mut rng);
    let kt = random(&[16, 1, 3, 3, 3], &mut rng);
    let pt = ConvParams::new([1, 2, 2], [1, 1, 1]).with_output_padding([0, 1, 1]);
    c.bench_function("conv_transpose3d_fwd_4x8x16x32x32", |b| {
        b.iter(|| conv_transpose3d(black_box(&z), &kt, &pt).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Autoencoder::<f32>::new(AutoencoderConfig::desk_scale(8, 64, 64), 0).unwrap();
    let x = Tensor::new(
        vec![4, 8, 1, 64, 64],
        (0..4 * 8 * 64 * 64).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    c.bench_function("desk_forward_backward_batch4", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let input = g.constant(x.clone());
            let y = model.forward(&mut g, &params, input).unwrap();
            let loss = g.mse_loss(y, input).unwrap();
            g.backward(loss).unwrap();
            black_box(g.grad(params[0]).map(|d| d[0]))
        })
    });
}

fn auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores: Vec<f64> = (0..10_000).map(|_| (rng.random_range(0..1000) as f64) / 1000.0).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
    c.bench_function("roc_auc_10k_tied", |b| b.iter(|| roc_auc(black_box(&scores), &labels).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(5));
    targets = conv_kernels, train_step, auc
}
criterion_main!(benches);
