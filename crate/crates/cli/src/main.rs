use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;

use psae_core::dataset::synth::{synth_benchmark, SynthConfig};
use psae_core::dataset::{
    load_video_dir_with, AccessAudit, AnomalyKind, Dataset, FrameSequence, GrayImage, LabelPolicy, Role,
    Video,
};
use psae_core::evaluation::{dataset_hash, evaluate, sha256_hex};
use psae_core::pseudoanom::{make_patch_pseudo, make_skip_pseudo, MaskKind};
use psae_core::scoring::{score_video_detailed, write_heatmaps, write_scores_csv};
use psae_core::sweep::{parse_grid, run_sweep, SweepParam};
use psae_core::trainer::{self, sample_rng, Checkpoint, TrainConfig, Trainer};

const PROVENANCE_FILE: &str = "provenance.toml";

/// Video anomaly detection with reconstruction autoencoders trained on
/// pseudo anomalies.
#[derive(Parser)]
#[command(name = "psae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic moving-sprites benchmark.
    Synth(SynthArgs),
    /// Write input / target / mask image strips for pseudo-anomaly samples.
    PreviewAug(PreviewArgs),
    /// Train an autoencoder from a TOML config.
    Train(TrainArgs),
    /// Score test videos with a checkpoint.
    Score(ScoreArgs),
    /// Compute frame-level ROC-AUC of a checkpoint on labelled test videos.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of one hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frames per video.
    #[arg(long)]
    frames: Option<usize>,
    /// Number of training videos.
    #[arg(long)]
    videos: Option<usize>,
    /// Number of test videos.
    #[arg(long)]
    test_videos: Option<usize>,
    /// Frame edge in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AugKind {
    Patch,
    Skip,
}

#[derive(Args)]
struct PreviewArgs {
    /// Dataset directory containing manifest.toml.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the image strips.
    #[arg(long)]
    out: PathBuf,
    /// Pseudo-anomaly type to preview.
    #[arg(long, value_enum)]
    kind: AugKind,
    /// Training config whose [pseudo] settings and window are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the patch mask kind (smoothmix_s, cutmix, smoothmix_c, mixup_patch).
    #[arg(long)]
    mask: Option<MaskKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of samples to draw.
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Frames per sample when no config is given.
    #[arg(long, default_value_t = 8)]
    window: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config TOML.
    #[arg(long)]
    config: PathBuf,
    /// Run directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint of the same run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Checkpoint file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory containing manifest.toml.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for scores.csv and heatmaps.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-frame error heatmaps under heatmaps/<video>/.
    #[arg(long)]
    heatmaps: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Motion,
    Appearance,
}

impl From<KindArg> for AnomalyKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Motion => AnomalyKind::Motion,
            KindArg::Appearance => AnomalyKind::Appearance,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory containing manifest.toml.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for report.toml, roc.csv and scores.csv.
    #[arg(long)]
    out: PathBuf,
    /// Only evaluate test videos with this anomaly type.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base training config TOML.
    #[arg(long)]
    config: PathBuf,
    /// Parameter to vary: p, s, alpha or beta.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values; repeats are dropped.
    #[arg(long)]
    grid: String,
    /// Output directory; one run directory per value plus sweep.csv.
    #[arg(long)]
    out: PathBuf,
    /// Only evaluate test videos with this anomaly type.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Override train.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct Provenance {
    version: String,
    command: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<String>,
}

impl Provenance {
    fn new(seed: Option<u64>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: std::env::args().collect(),
            seed,
            inputs: BTreeMap::new(),
            config: None,
        }
    }

    fn input(mut self, key: &str, value: String) -> Self {
        self.inputs.insert(key.to_string(), value);
        self
    }

    fn config(mut self, text: String) -> Self {
        self.config = Some(text);
        self
    }

    fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(PROVENANCE_FILE);
        std::fs::write(&path, toml::to_string(self)?).with_context(|| format!("writing {}", path.display()))
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn is_nonempty_dir(dir: &Path) -> bool {
    std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = args.frames {
        config.video_len = v;
    }
    if let Some(v) = args.videos {
        config.train_videos = v;
    }
    if let Some(v) = args.test_videos {
        config.test_videos = v;
    }
    if let Some(v) = args.size {
        config.frame_size = v;
    }
    config.validate()?;
    if is_nonempty_dir(&args.out) && !args.force {
        bail!("{} is not empty; pass --force to write into it", args.out.display());
    }
    let bench = synth_benchmark(args.seed, &config)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let manifest = bench.write(&args.out)?;
    Provenance::new(Some(args.seed)).config(toml::to_string(&config)?).write(&args.out)?;
    println!(
        "wrote {} training and {} test videos to {}",
        manifest.entries(Role::Train).count(),
        manifest.entries(Role::Test).count(),
        args.out.display()
    );
    Ok(())
}

fn strip(panels: &[&[f32]], width: usize, height: usize) -> GrayImage {
    let mut values = vec![0.0; panels.len() * width * height];
    for y in 0..height {
        for (i, p) in panels.iter().enumerate() {
            let row = &p[y * width..(y + 1) * width];
            let at = (y * panels.len() + i) * width;
            values[at..at + width].copy_from_slice(row);
        }
    }
    GrayImage::from_unit(panels.len() * width, height, &values)
}

fn preview_aug(args: PreviewArgs) -> Result<()> {
    let dataset = Dataset::open(&args.data)?;
    let videos = dataset.train_videos()?;
    let config = match &args.config {
        Some(path) => Some(TrainConfig::load(path)?),
        None => None,
    };
    let window = config.as_ref().map_or(args.window, |c| c.data.window);
    let mut patch = config
        .as_ref()
        .and_then(|c| c.pseudo.patch.clone())
        .unwrap_or_default();
    if let Some(mask) = args.mask {
        patch.mask = mask;
    }
    patch.validate()?;
    let skip = config
        .as_ref()
        .and_then(|c| c.pseudo.skip.clone())
        .unwrap_or_default();
    skip.validate()?;
    let mut source_config = config.clone().unwrap_or_else(|| {
        TrainConfig::from_toml("[data]\nroot = \".\"\n[train]\np = 0.0\n").expect("static config")
    });
    source_config.pseudo.patch = Some(patch.clone());
    let generator = Trainer::generator(&source_config, &videos)?;
    let (_, source) = generator.patch.expect("patch generator configured");

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.count {
        let mut rng = sample_rng(args.seed, i as u64);
        let video = &videos[i % videos.len()];
        let (w, h) = (video.width, video.height);
        let dir = args.out.join(format!("sample_{i:03}"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        match args.kind {
            AugKind::Patch => {
                ensure!(video.len() >= window, "video {} is shorter than {window} frames", video.id);
                let start = rng.random_range(0..=video.len() - window);
                let frames: Vec<&[f32]> = (start..start + window).map(|t| video.frame(t)).collect();
                let xn = FrameSequence::from_frames(h, w, &frames);
                let sample = make_patch_pseudo(&xn, &source, &patch, &mut rng)?;
                let psae_core::pseudoanom::PseudoMeta::Patch(state) = &sample.meta else {
                    unreachable!("patch generator returns patch metadata")
                };
                for t in 0..window {
                    let mask = state.mask_at(t)?;
                    let img = strip(&[sample.input.frame(t), sample.target.frame(t), &mask.values], w, h);
                    img.write(&dir.join(format!("t{t:02}.pgm")))?;
                }
            }
            AugKind::Skip => {
                let stride = skip.strides[rng.random_range(0..skip.strides.len())];
                let span = (window - 1) * stride + 1;
                ensure!(video.len() >= span, "video {} is shorter than {span} frames", video.id);
                let start = rng.random_range(0..=video.len() - span);
                let sample = make_skip_pseudo(video, start, window, stride)?;
                for t in 0..window {
                    let diff: Vec<f32> = sample
                        .input
                        .frame(t)
                        .iter()
                        .zip(sample.target.frame(t))
                        .map(|(a, b)| (a - b).abs())
                        .collect();
                    let img = strip(&[sample.input.frame(t), sample.target.frame(t), &diff], w, h);
                    img.write(&dir.join(format!("t{t:02}.pgm")))?;
                }
            }
        }
    }
    Provenance::new(Some(args.seed))
        .input("dataset_manifest_sha256", file_sha256(&args.data.join(psae_core::dataset::MANIFEST_FILE))?)
        .config(source_config.to_toml())
        .write(&args.out)?;
    println!("wrote {} samples to {}", args.count, args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    config.validate()?;
    let resume = match &args.resume {
        Some(path) => Some(Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?),
        None => None,
    };
    let dataset = Dataset::open(&config.data.root)?;
    let outcome = trainer::train(&config, &dataset, &args.out, resume.as_ref(), |r| {
        println!(
            "epoch {} steps {} mean loss {:.6} pseudo {}/{}",
            r.epoch, r.steps, r.mean_loss, r.pseudo_samples, r.samples
        );
    })?;
    let mut prov = Provenance::new(Some(config.train.seed)).config(config.to_toml());
    if let Some(path) = &args.resume {
        prov = prov.input("resume_sha256", file_sha256(path)?);
    }
    prov.write(&args.out)?;
    println!(
        "final checkpoint {} (pseudo fraction {:.4})",
        outcome.final_checkpoint.display(),
        outcome.pseudo_fraction
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(psae_core::model::Autoencoder<f32>, String)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((ckpt.autoencoder()?, file_sha256(path)?))
}

fn score(args: ScoreArgs) -> Result<()> {
    let (model, ckpt_hash) = load_model(&args.ckpt)?;
    let dataset = Dataset::open(&args.data)?;
    let audit = AccessAudit::disabled();
    let videos = dataset
        .manifest()
        .entries(Role::Test)
        .map(|e| {
            let mut v = load_video_dir_with(&dataset.video_path(e), LabelPolicy::Ignore, &audit)?;
            v.id = e.id.clone();
            Ok(v)
        })
        .collect::<psae_core::Result<Vec<Video>>>()?;
    ensure!(!videos.is_empty(), "manifest lists no test videos");
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut series = Vec::with_capacity(videos.len());
    for v in &videos {
        let (s, maps) = score_video_detailed(&model, v, args.heatmaps)?;
        if args.heatmaps {
            write_heatmaps(&args.out.join("heatmaps").join(&v.id), &maps)?;
        }
        series.push(s);
    }
    write_scores_csv(&args.out.join("scores.csv"), &series)?;
    Provenance::new(None)
        .input("checkpoint_sha256", ckpt_hash)
        .input("dataset_sha256", dataset_hash(&videos))
        .write(&args.out)?;
    println!("scored {} videos into {}", videos.len(), args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let (model, ckpt_hash) = load_model(&args.ckpt)?;
    let dataset = Dataset::open(&args.data)?;
    let videos = dataset.test_videos(args.kind.map(Into::into))?;
    let mut evaluation = evaluate(&model, &videos)?;
    evaluation.report.provenance.checkpoint_sha256 = Some(ckpt_hash.clone());
    evaluation.write(&args.out)?;
    Provenance::new(None)
        .input("checkpoint_sha256", ckpt_hash)
        .input("dataset_sha256", evaluation.report.provenance.dataset_sha256.clone())
        .write(&args.out)?;
    println!("auc {:.4} over {} frames", evaluation.report.auc, evaluation.report.frames);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = TrainConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let grid = parse_grid(&args.grid)?;
    let dataset = Dataset::open(&config.data.root)?;
    Provenance::new(Some(config.train.seed)).config(config.to_toml()).write(&args.out)?;
    let rows = run_sweep(&config, args.param, &grid, &dataset, args.kind.map(Into::into), &args.out, |row| {
        match (&row.auc, &row.error) {
            (Some(auc), _) => println!("{}={} auc {auc:.4}", args.param.name(), row.value),
            (_, Some(e)) => eprintln!("{}={} failed: {e}", args.param.name(), row.value),
            _ => {}
        }
    })?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    ensure!(failed < rows.len(), "every sweep point failed");
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::PreviewAug(a) => preview_aug(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
