//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use psae_core::dataset::synth::{synth_benchmark, Benchmark, SynthConfig};
use psae_core::model::AutoencoderConfig;
use psae_core::tensor::ConvParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn idx5(shape: &[usize], i: [usize; 5]) -> usize {
    (((i[0] * shape[1] + i[1]) * shape[2] + i[2]) * shape[3] + i[3]) * shape[4] + i[4]
}

/// Maps an output coordinate and a kernel tap to the input coordinate it
/// reads, if it falls inside the input.
fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let p = (o * stride + k) as i64 - pad as i64;
    (p >= 0 && (p as usize) < extent).then_some(p as usize)
}

pub struct LinearResult {
    pub output: Vec<f64>,
    pub output_shape: Vec<usize>,
    pub grad_input: Vec<f64>,
    pub grad_kernel: Vec<f64>,
}

/// Direct seven-deep loop over output positions and kernel taps.
/// Layout `[N, T, C, H, W]`, kernel `[C_out, C_in, kT, kH, kW]`.
pub fn naive_conv3d(
    input: &[f64],
    ishape: &[usize],
    kernel: &[f64],
    kshape: &[usize],
    p: &ConvParams,
    grad_out: Option<&[f64]>,
) -> LinearResult {
    let [n, t, ci, h, w] = [ishape[0], ishape[1], ishape[2], ishape[3], ishape[4]];
    let [co, _, kt, kh, kw] = [kshape[0], kshape[1], kshape[2], kshape[3], kshape[4]];
    let ext = |i: usize, k: usize, a: usize| (i + 2 * p.padding[a] - k) / p.stride[a] + 1;
    let oshape = vec![n, ext(t, kt, 0), co, ext(h, kh, 1), ext(w, kw, 2)];
    let mut out = vec![0.0; oshape.iter().product()];
    let mut gi = vec![0.0; input.len()];
    let mut gk = vec![0.0; kernel.len()];
    for b in 0..n {
        for to in 0..oshape[1] {
            for c_o in 0..co {
                for ho in 0..oshape[3] {
                    for wo in 0..oshape[4] {
                        let oi = idx5(&oshape, [b, to, c_o, ho, wo]);
                        let g = grad_out.map_or(0.0, |g| g[oi]);
                        for c_i in 0..ci {
                            for a in 0..kt {
                                let Some(ti) = source(to, a, p.stride[0], p.padding[0], t) else { continue };
                                for bb in 0..kh {
                                    let Some(hi) = source(ho, bb, p.stride[1], p.padding[1], h) else { continue };
                                    for c in 0..kw {
                                        let Some(wi) = source(wo, c, p.stride[2], p.padding[2], w) else { continue };
                                        let ii = idx5(ishape, [b, ti, c_i, hi, wi]);
                                        let ki = idx5(kshape, [c_o, c_i, a, bb, c]);
                                        out[oi] += input[ii] * kernel[ki];
                                        gi[ii] += g * kernel[ki];
                                        gk[ki] += g * input[ii];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    LinearResult {
        output: out,
        output_shape: oshape,
        grad_input: gi,
        grad_kernel: gk,
    }
}

/// Transposed convolution as a scatter: every input element adds its
/// kernel-weighted copy into the output. Kernel `[C_in, C_out, kT, kH, kW]`.
pub fn scatter_conv_transpose3d(
    input: &[f64],
    ishape: &[usize],
    kernel: &[f64],
    kshape: &[usize],
    p: &ConvParams,
    grad_out: Option<&[f64]>,
) -> LinearResult {
    let [n, t, ci, h, w] = [ishape[0], ishape[1], ishape[2], ishape[3], ishape[4]];
    let [_, co, kt, kh, kw] = [kshape[0], kshape[1], kshape[2], kshape[3], kshape[4]];
    let ext = |i: usize, k: usize, a: usize| (i - 1) * p.stride[a] + k + p.output_padding[a] - 2 * p.padding[a];
    let oshape = vec![n, ext(t, kt, 0), co, ext(h, kh, 1), ext(w, kw, 2)];
    let mut out = vec![0.0; oshape.iter().product()];
    let mut gi = vec![0.0; input.len()];
    let mut gk = vec![0.0; kernel.len()];
    for b in 0..n {
        for ti in 0..t {
            for c_i in 0..ci {
                for hi in 0..h {
                    for wi in 0..w {
                        let ii = idx5(ishape, [b, ti, c_i, hi, wi]);
                        for c_o in 0..co {
                            for a in 0..kt {
                                let Some(to) = source(ti, a, p.stride[0], p.padding[0], oshape[1]) else { continue };
                                for bb in 0..kh {
                                    let Some(ho) = source(hi, bb, p.stride[1], p.padding[1], oshape[3]) else { continue };
                                    for c in 0..kw {
                                        let Some(wo) = source(wi, c, p.stride[2], p.padding[2], oshape[4]) else { continue };
                                        let oi = idx5(&oshape, [b, to, c_o, ho, wo]);
                                        let ki = idx5(kshape, [c_i, c_o, a, bb, c]);
                                        let g = grad_out.map_or(0.0, |g| g[oi]);
                                        out[oi] += input[ii] * kernel[ki];
                                        gi[ii] += g * kernel[ki];
                                        gk[ki] += g * input[ii];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    LinearResult {
        output: out,
        output_shape: oshape,
        grad_input: gi,
        grad_kernel: gk,
    }
}

/// Counts positive/negative pairs: correct order scores 2, a tie 1.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

pub fn loop_mse(a: &[f32], b: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        sum += d * d;
    }
    sum / a.len() as f64
}

pub fn loop_psnr(a: &[f32], b: &[f32]) -> f64 {
    let mut mse = loop_mse(a, b);
    if mse < 1e-10 {
        mse = 1e-10;
    }
    10.0 * (1.0 / mse).log10()
}

/// 440-parameter model used for finite-difference checks.
pub fn shrunk_config() -> AutoencoderConfig {
    AutoencoderConfig {
        frames: 4,
        channels: 1,
        height: 8,
        width: 8,
        encoder_channels: vec![2, 3],
        strides: vec![[1, 2, 2], [2, 2, 2]],
        kernel: [3, 3, 3],
        leaky_slope: 0.2,
    }
}

/// Small benchmark: 16x16 frames, 48-frame videos.
pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        frame_size: 16,
        video_len: 48,
        train_videos: 3,
        test_videos: 4,
        sprite_size: [4, 6],
        max_sprites: 2,
        normal_speed: [1, 1],
        anomaly_speed: [3, 4],
        anomalous_fraction: [0.3, 0.5],
    }
}

pub fn tiny_benchmark(seed: u64) -> Benchmark {
    synth_benchmark(seed, &tiny_synth()).expect("tiny benchmark")
}

pub fn write_tiny_benchmark(seed: u64, dir: &Path) -> Benchmark {
    let b = tiny_benchmark(seed);
    b.write(dir).expect("write benchmark");
    b
}

/// Training config on a tiny benchmark at `root`, with `[pseudo.skip]` when
/// `p > 0`.
pub fn tiny_train_config(root: &Path, p: f64, epochs: usize) -> psae_core::trainer::TrainConfig {
    let mut text = format!(
        "[data]\nroot = {root:?}\nwindow = 4\n[model]\nencoder_channels = [4, 8]\nstrides = [[1, 2, 2], [2, 2, 2]]\n\
         [train]\nepochs = {epochs}\nbatch_size = 2\nlr = 1e-3\nseed = 7\np = {p}\nwindows_per_epoch = 12\n"
    );
    if p > 0.0 {
        text.push_str("[pseudo.skip]\nstrides = [2, 3]\n");
    }
    psae_core::trainer::TrainConfig::from_toml(&text).expect("tiny config")
}

/// Central difference of `f` at `x`, starting from step `h`. When the step
/// and half-step quotients disagree, a kink of a piecewise activation lies
/// within reach and the step shrinks tenfold. Returns the quotient and the
/// step that produced it.
pub fn kink_free_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let mut h = h;
    loop {
        let full = (f(x + h) - f(x - h)) / (2.0 * h);
        let half = (f(x + h / 2.0) - f(x - h / 2.0)) / h;
        if (full - half).abs() <= 1e-5 * full.abs().max(half.abs()) + 1e-10 || h < 1e-7 {
            return (full, h);
        }
        h /= 10.0;
    }
}
