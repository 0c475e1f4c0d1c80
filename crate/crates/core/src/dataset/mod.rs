//! Videos on disk, sliding windows over them, and the synthetic benchmark.
//!
//! A video is a directory of `frame_%06d.pgm` files with an optional
//! `labels.txt` (one `0`/`1` per frame). A dataset root holds a
//! `manifest.toml` that lists video directories and their roles.

mod audit;
pub mod pgm;
pub mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use audit::AccessAudit;
pub use pgm::GrayImage;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LABELS_FILE: &str = "labels.txt";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

/// A grayscale video with intensities in `[0, 1]`, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pixels: Vec<f32>,
    /// Per-frame anomaly flags; only test videos carry them.
    pub labels: Option<Vec<bool>>,
}

impl Video {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        frames: Vec<Vec<f32>>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        let id = id.into();
        let plane = width * height;
        if let Some(bad) = frames.iter().position(|f| f.len() != plane) {
            return Err(Error::Dataset(format!(
                "video {id}: frame {bad} has {} pixels, expected {plane}",
                frames[bad].len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != frames.len() {
                return Err(Error::Dataset(format!(
                    "video {id}: {} labels for {} frames",
                    l.len(),
                    frames.len()
                )));
            }
        }
        Ok(Self {
            id,
            width,
            height,
            pixels: frames.concat(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        if self.width * self.height == 0 {
            0
        } else {
            self.pixels.len() / (self.width * self.height)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.pixels[index * plane..(index + 1) * plane]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.pixels.chunks_exact(self.width * self.height)
    }

    /// Copy of this video without its labels.
    pub fn unlabeled(&self) -> Video {
        Video {
            labels: None,
            ..self.clone()
        }
    }
}

/// A `T x C x H x W` block of intensities, the unit of model input and output.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FrameSequence {
    pub fn from_frames(height: usize, width: usize, frames: &[&[f32]]) -> Self {
        Self {
            frames: frames.len(),
            channels: 1,
            height,
            width,
            data: frames.concat(),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    /// Stacks sequences of identical shape into an `[N, T, C, H, W]` tensor.
    pub fn stack(seqs: &[&FrameSequence]) -> Result<Tensor<f32>> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::shape("stack", "no sequences"))?;
        let mut data = Vec::with_capacity(seqs.len() * first.data.len());
        for s in seqs {
            crate::tensor::ensure_same_shape("stack", &s.shape(), &first.shape())?;
            data.extend_from_slice(&s.data);
        }
        let [t, c, h, w] = first.shape();
        Tensor::new(vec![seqs.len(), t, c, h, w], data)
    }
}

/// Indices `n, n+1, .., n+T-1` of a temporally consistent window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSample {
    pub video_id: String,
    pub start: usize,
    pub len: usize,
}

impl WindowSample {
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |t| self.start + t)
    }
}

/// Extracts the window of `len` consecutive frames starting at `start`.
pub fn sample_window(video: &Video, start: usize, len: usize) -> Result<(WindowSample, FrameSequence)> {
    if len == 0 || start + len > video.len() {
        return Err(Error::WindowRange {
            start,
            len,
            frames: video.len(),
        });
    }
    let sample = WindowSample {
        video_id: video.id.clone(),
        start,
        len,
    };
    let frames: Vec<&[f32]> = sample.indices().map(|i| video.frame(i)).collect();
    let seq = FrameSequence::from_frames(video.height, video.width, &frames);
    Ok((sample, seq))
}

/// What to do with a video directory's `labels.txt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Read it if present.
    Optional,
    /// Fail if it is missing.
    Required,
    /// Never open it.
    Ignore,
}

/// Loads a video directory, reading labels if present.
pub fn load_video_dir(path: &Path) -> Result<Video> {
    load_video_dir_with(path, LabelPolicy::Optional, &AccessAudit::disabled())
}

pub fn load_video_dir_with(path: &Path, labels: LabelPolicy, audit: &AccessAudit) -> Result<Video> {
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(num) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".pgm"))
        {
            let index: usize = num.parse().map_err(|_| {
                Error::Dataset(format!("{}: unparsable frame file {name}", path.display()))
            })?;
            indices.push(index);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::Dataset(format!("{}: no frame files", path.display())));
    }
    if let Some(missing) = indices.iter().enumerate().find(|(i, v)| *i != **v).map(|(i, _)| i) {
        return Err(Error::Dataset(format!(
            "{}: frame {missing} is missing",
            path.display()
        )));
    }
    let mut frames = Vec::with_capacity(indices.len());
    let mut dims = None;
    for i in indices {
        let file = path.join(frame_file_name(i));
        audit.record(&file);
        let img = GrayImage::read(&file)?;
        match dims {
            None => dims = Some((img.width, img.height)),
            Some(d) if d != (img.width, img.height) => {
                return Err(Error::Dataset(format!(
                    "{}: frame {i} is {}x{}, earlier frames are {}x{}",
                    path.display(),
                    img.width,
                    img.height,
                    d.0,
                    d.1
                )))
            }
            Some(_) => {}
        }
        frames.push(img.to_unit());
    }
    let (width, height) = dims.expect("at least one frame");
    let label_path = path.join(LABELS_FILE);
    let labels = match labels {
        LabelPolicy::Ignore => None,
        LabelPolicy::Optional if !label_path.exists() => None,
        LabelPolicy::Optional | LabelPolicy::Required => {
            audit.record(&label_path);
            Some(read_labels(&label_path)?)
        }
    };
    if let Some(l) = &labels {
        if l.len() != frames.len() {
            return Err(Error::Dataset(format!(
                "{}: {} labels for {} frames",
                label_path.display(),
                l.len(),
                frames.len()
            )));
        }
    }
    let id = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("video")
        .to_string();
    Video::new(id, width, height, frames, labels)
}

fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Dataset(format!(
                "{}: line {}: expected 0 or 1, got {other:?}",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

/// Writes frames (and labels, if any) in the on-disk video format.
pub fn write_video_dir(video: &Video, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in video.frames().enumerate() {
        GrayImage::from_unit(video.width, video.height, frame).write(&dir.join(frame_file_name(i)))?;
    }
    if let Some(labels) = &video.labels {
        let text: String = labels.iter().map(|&l| if l { "1\n" } else { "0\n" }).collect();
        let path = dir.join(LABELS_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// Which kind of anomaly a synthetic test video contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    /// A normal-looking sprite moving too fast.
    Motion,
    /// A sprite of unseen shape and texture.
    Appearance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Directory relative to the dataset root.
    pub path: PathBuf,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<AnomalyKind>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<synth::SynthRecord>,
    #[serde(default)]
    pub videos: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.videos.iter().filter(move |e| e.role == role)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Training window length and where the data lives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory containing `manifest.toml`.
    pub root: PathBuf,
    /// Frames per input sequence.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    8
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!(
                "window length must be at least 2, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

/// A dataset root opened through its manifest. Every file read goes through
/// the attached [`AccessAudit`].
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
    audit: AccessAudit,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        Self::open_audited(root, AccessAudit::disabled())
    }

    pub fn open_audited(root: &Path, audit: AccessAudit) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        audit.record(&path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            audit,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn audit(&self) -> &AccessAudit {
        &self.audit
    }

    pub fn video_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Loads all training videos. Label files are never opened; a training
    /// video that ships one is rejected, since training data must be normal.
    pub fn train_videos(&self) -> Result<Vec<Video>> {
        let entries: Vec<_> = self.manifest.entries(Role::Train).collect();
        if entries.is_empty() {
            return Err(Error::Dataset("manifest lists no training videos".into()));
        }
        entries
            .into_iter()
            .map(|e| {
                let dir = self.video_path(e);
                if dir.join(LABELS_FILE).exists() {
                    return Err(Error::Dataset(format!(
                        "training video {} carries a labels file",
                        e.id
                    )));
                }
                let mut v = load_video_dir_with(&dir, LabelPolicy::Ignore, &self.audit)?;
                v.id = e.id.clone();
                Ok(v)
            })
            .collect()
    }

    /// Loads labelled test videos, optionally only those of one anomaly kind.
    pub fn test_videos(&self, kind: Option<AnomalyKind>) -> Result<Vec<Video>> {
        let entries: Vec<_> = self
            .manifest
            .entries(Role::Test)
            .filter(|e| kind.is_none() || e.anomaly == kind)
            .collect();
        if entries.is_empty() {
            return Err(Error::Dataset("manifest lists no matching test videos".into()));
        }
        entries
            .into_iter()
            .map(|e| {
                let dir = self.video_path(e);
                if !dir.join(LABELS_FILE).exists() {
                    return Err(Error::Dataset(format!(
                        "test video {} has no {LABELS_FILE}",
                        e.id
                    )));
                }
                let mut v = load_video_dir_with(&dir, LabelPolicy::Required, &self.audit)?;
                v.id = e.id.clone();
                Ok(v)
            })
            .collect()
    }
}
