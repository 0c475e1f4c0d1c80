//! Training loop mixing normal windows with pseudo anomalies.

pub mod checkpoint;
pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, FrameSequence, Video};
use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::pseudoanom::{sample_training_input, Generator, IntruderKind, IntruderSource, PseudoMeta, TrainingInput};
use crate::tensor::{Adam, Graph};

pub use checkpoint::{Checkpoint, RngState};
pub use config::{ModelSection, PseudoSection, TrainConfig, TrainSection};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,step,loss,pseudo_fraction";
pub const FINAL_CHECKPOINT: &str = "ckpt_final.bin";

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4521;

pub fn checkpoint_name(epoch: u64) -> String {
    format!("ckpt_epoch_{epoch:04}.bin")
}

/// Generator for the sample with global index `index`; independent of how
/// samples are grouped into batches or epochs.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn shuffle_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);
    rng.set_stream(epoch);
    rng
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: u64,
    pub step: u64,
    pub loss: f32,
    /// Share of pseudo samples among all samples drawn so far in the run.
    pub pseudo_fraction: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{:.8},{:.6}", self.epoch, self.step, self.loss, self.pseudo_fraction)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: u64,
    pub steps: u64,
    pub mean_loss: f64,
    pub samples: u64,
    pub pseudo_samples: u64,
}

fn describe(batch: &[TrainingInput], windows: &[(String, usize)]) -> String {
    let mut s = String::new();
    for (b, (id, start)) in batch.iter().zip(windows) {
        let kind = match &b.pseudo {
            None => "normal".to_string(),
            Some(PseudoMeta::Skip { stride, start, .. }) => format!("skip s={stride} n={start}"),
            Some(PseudoMeta::Patch(p)) => format!("patch {:?} {}", p.mask.kind(), p.intruder_id),
        };
        let _ = write!(s, "[{id}@{start}: {kind}] ");
    }
    s.trim_end().to_string()
}

/// Training state: model, optimizer and position in the sample stream.
pub struct Trainer {
    config: TrainConfig,
    model: Autoencoder<f32>,
    adam: Adam<f32>,
    videos: Vec<Video>,
    windows: Vec<(usize, usize)>,
    generator: Generator,
    epoch: u64,
    step: u64,
    samples: u64,
    pseudo_samples: u64,
}

impl Trainer {
    /// Starts a fresh run on `videos`, which must all be unlabeled.
    pub fn new(config: TrainConfig, videos: Vec<Video>) -> Result<Self> {
        config.validate()?;
        let (height, width) = Self::check_videos(&config, &videos)?;
        let arch = config.model.autoencoder(config.data.window, height, width);
        let model = Autoencoder::new(arch, config.train.seed)?;
        let adam = Adam::new(config.train.adam(), &model.params().tensors);
        let generator = Self::generator(&config, &videos)?;
        let windows = Self::windows(&videos, config.data.window);
        Ok(Self {
            config,
            model,
            adam,
            videos,
            windows,
            generator,
            epoch: 0,
            step: 0,
            samples: 0,
            pseudo_samples: 0,
        })
    }

    /// Continues a run from `ckpt`. The configuration may only differ from
    /// the checkpointed one in its epoch budget and checkpoint cadence.
    pub fn resume(config: TrainConfig, videos: Vec<Video>, ckpt: &Checkpoint) -> Result<Self> {
        if config.trajectory_hash() != ckpt.config_hash {
            return Err(Error::Config(
                "checkpoint was written by a run with different settings".into(),
            ));
        }
        let mut t = Self::new(config, videos)?;
        t.model = ckpt.autoencoder_for(t.model.config())?;
        t.adam.state = ckpt.adam.clone();
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        t.samples = ckpt.rng.samples;
        t.pseudo_samples = ckpt.pseudo_samples;
        Ok(t)
    }

    fn check_videos(config: &TrainConfig, videos: &[Video]) -> Result<(usize, usize)> {
        let first = videos
            .first()
            .ok_or_else(|| Error::Dataset("no training videos".into()))?;
        for v in videos {
            if v.labels.is_some() {
                return Err(Error::Dataset(format!("training video {} carries labels", v.id)));
            }
            if (v.width, v.height) != (first.width, first.height) {
                return Err(Error::Dataset(format!(
                    "training video {} is {}x{}, expected {}x{}",
                    v.id, v.width, v.height, first.width, first.height
                )));
            }
        }
        if videos.iter().all(|v| v.len() < config.data.window) {
            return Err(Error::Dataset(format!(
                "no training video has {} frames",
                config.data.window
            )));
        }
        Ok((first.height, first.width))
    }

    /// Pseudo-anomaly generator for `config`, with `videos` as the source of
    /// self-dataset intruders.
    pub fn generator(config: &TrainConfig, videos: &[Video]) -> Result<Generator> {
        let patch = match &config.pseudo.patch {
            None => None,
            Some(pc) => {
                let source = match pc.intruder {
                    IntruderKind::ProceduralTextures => IntruderSource::procedural(),
                    IntruderKind::ImageDirectory => IntruderSource::image_directory(
                        pc.intruder_dir.as_deref().expect("validated intruder_dir"),
                    )?,
                    IntruderKind::SelfDataset => IntruderSource::self_dataset(Arc::new(videos.to_vec()))?,
                };
                Some((pc.clone(), source))
            }
        };
        Ok(Generator {
            patch,
            skip: config.pseudo.skip.clone(),
        })
    }

    fn windows(videos: &[Video], window: usize) -> Vec<(usize, usize)> {
        videos
            .iter()
            .enumerate()
            .flat_map(|(i, v)| (0..(v.len() + 1).saturating_sub(window)).map(move |n| (i, n)))
            .collect()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Autoencoder<f32> {
        &self.model
    }

    pub fn into_model(self) -> Autoencoder<f32> {
        self.model
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn pseudo_samples(&self) -> u64 {
        self.pseudo_samples
    }

    pub fn pseudo_fraction(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.pseudo_samples as f64 / self.samples as f64
        }
    }

    /// Windows visited in epoch `epoch` (1-based), in visiting order.
    pub fn epoch_plan(&self, epoch: u64) -> Vec<(usize, usize)> {
        let mut order = self.windows.clone();
        order.shuffle(&mut shuffle_rng(self.config.train.seed, epoch));
        if let Some(cap) = self.config.train.windows_per_epoch {
            order.truncate(cap);
        }
        order
    }

    /// Draws the next training sample for window `start` of video `video`.
    pub fn draw_sample(&mut self, video: usize, start: usize) -> Result<TrainingInput> {
        let mut rng = sample_rng(self.config.train.seed, self.samples);
        let sample = sample_training_input(
            &self.videos[video],
            start,
            self.config.data.window,
            self.config.train.p,
            &self.generator,
            &mut rng,
        )?;
        self.samples += 1;
        if sample.is_pseudo() {
            self.pseudo_samples += 1;
        }
        Ok(sample)
    }

    /// One optimizer update on `batch`. Each element is reconstructed from
    /// its input and compared with its own target; the loss is the mean
    /// squared error over the whole batch.
    pub fn train_step(&mut self, batch: &[TrainingInput]) -> Result<f32> {
        let inputs: Vec<&FrameSequence> = batch.iter().map(|b| &b.input).collect();
        let targets: Vec<&FrameSequence> = batch.iter().map(|b| &b.target).collect();
        let mut graph = Graph::new();
        let params = self.model.bind(&mut graph, true);
        let x = graph.constant(FrameSequence::stack(&inputs)?);
        let y = graph.constant(FrameSequence::stack(&targets)?);
        let out = self.model.forward(&mut graph, &params, x)?;
        let loss = graph.mse_loss(out, y)?;
        let value = graph.value(loss).item().unwrap_or(f32::NAN);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step + 1,
                detail: format!("loss {value}"),
            });
        }
        graph.backward(loss)?;
        let grads: Vec<&[f32]> = params
            .iter()
            .map(|&p| graph.grad(p).expect("parameter gradient"))
            .collect();
        let tensors = &mut self.model.params_mut().tensors;
        self.adam.step(tensors, &grads)?;
        self.step += 1;
        Ok(value)
    }

    /// Runs the next epoch, calling `on_step` after every update.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&LogRow)) -> Result<EpochReport> {
        let epoch = self.epoch + 1;
        let plan = self.epoch_plan(epoch);
        let (samples0, pseudo0) = (self.samples, self.pseudo_samples);
        let mut total = 0.0f64;
        let mut steps = 0u64;
        for chunk in plan.chunks(self.config.train.batch_size) {
            let batch = chunk
                .iter()
                .map(|&(v, n)| self.draw_sample(v, n))
                .collect::<Result<Vec<_>>>()?;
            let loss = self.train_step(&batch).map_err(|e| match e {
                Error::NonFiniteLoss { step, detail } => {
                    let ids: Vec<(String, usize)> =
                        chunk.iter().map(|&(v, n)| (self.videos[v].id.clone(), n)).collect();
                    Error::NonFiniteLoss {
                        step,
                        detail: format!("{detail}; batch {}", describe(&batch, &ids)),
                    }
                }
                other => other,
            })?;
            total += loss as f64;
            steps += 1;
            on_step(&LogRow {
                epoch,
                step: self.step,
                loss,
                pseudo_fraction: self.pseudo_fraction(),
            });
        }
        self.epoch = epoch;
        Ok(EpochReport {
            epoch,
            steps,
            mean_loss: if steps == 0 { 0.0 } else { total / steps as f64 },
            samples: self.samples - samples0,
            pseudo_samples: self.pseudo_samples - pseudo0,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            config_hash: self.config.trajectory_hash(),
            epoch: self.epoch,
            step: self.step,
            rng: RngState {
                seed: self.config.train.seed,
                samples: self.samples,
            },
            pseudo_samples: self.pseudo_samples,
            model: self.model.config().clone(),
            params: self.model.params().clone(),
            adam: self.adam.state.clone(),
        }
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: Autoencoder<f32>,
    pub epochs: Vec<EpochReport>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub pseudo_fraction: f64,
}

fn read_log_prefix(path: &Path, through_epoch: u64) -> Result<String> {
    let mut out = format!("{LOG_HEADER}\n");
    if let Ok(text) = std::fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let epoch: Option<u64> = line.split(',').next().and_then(|e| e.parse().ok());
            if epoch.is_some_and(|e| e <= through_epoch) {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Trains on the dataset's training videos for `config.train.epochs` epochs,
/// writing the log and checkpoints into `out`. With `resume`, training
/// continues after the checkpoint's epoch.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    out: &Path,
    resume: Option<&Checkpoint>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    let videos = dataset.train_videos()?;
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(config.clone(), videos, ckpt)?,
        None => Trainer::new(config.clone(), videos)?,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(LOG_FILE);
    let mut log = read_log_prefix(&log_path, if resume.is_some() { trainer.epoch() } else { 0 })?;
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();
    let every = config.train.checkpoint_every as u64;
    while trainer.epoch() < config.train.epochs as u64 {
        let report = trainer.run_epoch(|row| {
            log.push_str(&row.csv());
            log.push('\n');
        })?;
        std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        if every > 0 && report.epoch % every == 0 {
            let path = out.join(checkpoint_name(report.epoch));
            trainer.checkpoint().save(&path)?;
            checkpoints.push(path);
        }
        on_epoch(&report);
        epochs.push(report);
    }
    if !log_path.exists() {
        std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&final_checkpoint)?;
    let pseudo_fraction = trainer.pseudo_fraction();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        epochs,
        checkpoints,
        final_checkpoint,
        pseudo_fraction,
    })
}
