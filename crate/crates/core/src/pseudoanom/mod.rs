//! Pseudo-anomaly generators.
//!
//! A pseudo anomaly is a normal window altered so that it no longer looks
//! normal, paired with the unaltered window as its reconstruction target.
//! Two kinds exist: a moving patch of foreign texture blended over every
//! frame, and a window sampled with a temporal stride larger than one.

pub mod intruder;
pub mod mask;

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_window, FrameSequence, Video};
use crate::error::{Error, Result};

pub use intruder::{Intruder, IntruderKind, IntruderSource};
pub use mask::{build_mask, patch_bounds, Mask, MaskKind, MaskProfile};

/// Smallest patch side in pixels.
pub const MIN_PATCH: usize = 10;
const PATCH_ATTEMPTS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    /// Maximum patch side as a fraction of the frame side.
    pub alpha: f32,
    /// Maximum per-frame displacement of the patch centre, in pixels.
    pub beta: u32,
    pub mask: MaskKind,
    pub intruder: IntruderKind,
    /// Directory of `.pgm` images, for `intruder = "image_directory"`.
    pub intruder_dir: Option<PathBuf>,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 3,
            mask: MaskKind::SmoothmixS,
            intruder: IntruderKind::ProceduralTextures,
            intruder_dir: None,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("pseudo.patch.alpha must be in (0, 1], got {}", self.alpha)));
        }
        match (self.intruder, &self.intruder_dir) {
            (IntruderKind::ImageDirectory, None) => Err(Error::Config(
                "pseudo.patch.intruder_dir is required for intruder = \"image_directory\"".into(),
            )),
            (IntruderKind::ImageDirectory, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(Error::Config(
                "pseudo.patch.intruder_dir is only used with intruder = \"image_directory\"".into(),
            )),
        }
    }

    /// Inclusive range of patch sides for a frame side of `extent` pixels.
    pub fn size_range(&self, extent: usize) -> (usize, usize) {
        let hi = ((self.alpha * extent as f32).floor() as usize).clamp(1, extent);
        (MIN_PATCH.min(hi), hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipConfig {
    /// Strides drawn uniformly per sample; all must exceed one.
    pub strides: Vec<usize>,
}

impl Default for SkipConfig {
    fn default() -> Self {
        Self {
            strides: vec![2, 3, 4, 5],
        }
    }
}

impl SkipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() {
            return Err(Error::Config("pseudo.skip.strides is empty".into()));
        }
        if let Some(s) = self.strides.iter().find(|&&s| s < 2) {
            return Err(Error::Config(format!("pseudo.skip.strides must all exceed 1, got {s}")));
        }
        Ok(())
    }
}

/// Geometry and content reference of one patch pseudo anomaly.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchState {
    /// `(w, h)` in pixels.
    pub size: (usize, usize),
    pub mask: MaskProfile,
    pub intruder_id: String,
    /// Patch centre per frame; `centers[0]` is the initial draw.
    pub centers: Vec<(usize, usize)>,
    /// Displacement drawn before each frame after the first.
    pub deltas: Vec<(i32, i32)>,
    pub frame: (usize, usize),
}

impl PatchState {
    pub fn bounds(&self, t: usize) -> (i64, i64, i64, i64) {
        patch_bounds(self.centers[t], self.size)
    }

    pub fn mask_at(&self, t: usize) -> Result<Mask> {
        build_mask(self.mask, self.centers[t], self.size, self.frame)
    }
}

/// Moves `center` by `delta` and clamps the result inside the frame.
pub fn move_center(center: (usize, usize), delta: (i32, i32), frame: (usize, usize)) -> (usize, usize) {
    let step = |c: usize, d: i32, extent: usize| (c as i64 + d as i64).clamp(0, extent as i64 - 1) as usize;
    (step(center.0, delta.0, frame.0), step(center.1, delta.1, frame.1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoKind {
    Patch,
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PseudoMeta {
    Patch(PatchState),
    Skip {
        stride: usize,
        start: usize,
        input_indices: Vec<usize>,
        target_indices: Vec<usize>,
    },
}

impl PseudoMeta {
    pub fn kind(&self) -> PseudoKind {
        match self {
            PseudoMeta::Patch(_) => PseudoKind::Patch,
            PseudoMeta::Skip { .. } => PseudoKind::Skip,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoAnomalySample {
    pub input: FrameSequence,
    pub target: FrameSequence,
    pub meta: PseudoMeta,
}

impl PseudoAnomalySample {
    pub fn kind(&self) -> PseudoKind {
        self.meta.kind()
    }
}

fn overlay(xn: &FrameSequence, intruder: &Intruder, state: &PatchState) -> Result<FrameSequence> {
    let mut xp = xn.clone();
    let plane = xn.height * xn.width;
    for t in 0..xn.frames {
        let mask = state.mask_at(t)?;
        let content = intruder.frame(t);
        for channel in xp.frame_mut(t).chunks_exact_mut(plane) {
            for ((x, &m), &a) in channel.iter_mut().zip(&mask.values).zip(content) {
                if m > 0.0 {
                    *x = ((1.0 - m) * *x + m * a).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(xp)
}

/// Blends a moving intruder patch over every frame of `xn`.
///
/// The patch size is drawn once; its centre starts uniformly over the frame
/// and takes a random step in `{-beta..=beta}` per axis before each later
/// frame. Content is read from the intruder at the patch's current position.
pub fn make_patch_pseudo<R: Rng + ?Sized>(
    xn: &FrameSequence,
    intruder: &IntruderSource,
    config: &PatchConfig,
    rng: &mut R,
) -> Result<PseudoAnomalySample> {
    let frame = (xn.width, xn.height);
    let (wlo, whi) = config.size_range(xn.width);
    let (hlo, hhi) = config.size_range(xn.height);
    let beta = config.beta as i32;
    let mut last = None;
    for _ in 0..PATCH_ATTEMPTS {
        let size = (rng.random_range(wlo..=whi), rng.random_range(hlo..=hhi));
        let mut center = (rng.random_range(0..xn.width), rng.random_range(0..xn.height));
        let mut centers = vec![center];
        let mut deltas = Vec::with_capacity(xn.frames.saturating_sub(1));
        for _ in 1..xn.frames {
            let d = (rng.random_range(-beta..=beta), rng.random_range(-beta..=beta));
            center = move_center(center, d, frame);
            deltas.push(d);
            centers.push(center);
        }
        let profile = config.mask.resolve(rng);
        let content = intruder.sample(rng, xn.frames, xn.height, xn.width)?;
        let state = PatchState {
            size,
            mask: profile,
            intruder_id: content.id.clone(),
            centers,
            deltas,
            frame,
        };
        let input = overlay(xn, &content, &state)?;
        let changed = input.data != xn.data;
        let sample = PseudoAnomalySample {
            input,
            target: xn.clone(),
            meta: PseudoMeta::Patch(state),
        };
        if changed {
            return Ok(sample);
        }
        last = Some(sample);
    }
    Ok(last.expect("at least one attempt"))
}

/// Frames `n, n+s, .., n+(T-1)s` as input against the consistent window
/// `n, .., n+T-1` as target.
pub fn make_skip_pseudo(video: &Video, start: usize, len: usize, stride: usize) -> Result<PseudoAnomalySample> {
    if stride < 2 {
        return Err(Error::Config(format!("skip stride must exceed 1, got {stride}")));
    }
    if len == 0 {
        return Err(Error::WindowRange {
            start,
            len,
            frames: video.len(),
        });
    }
    let last = start + (len - 1) * stride;
    if last >= video.len() {
        return Err(Error::SkipRange {
            start,
            len,
            stride,
            last,
            frames: video.len(),
        });
    }
    let input_indices: Vec<usize> = (0..len).map(|t| start + t * stride).collect();
    let frames: Vec<&[f32]> = input_indices.iter().map(|&i| video.frame(i)).collect();
    let input = FrameSequence::from_frames(video.height, video.width, &frames);
    let (window, target) = sample_window(video, start, len)?;
    Ok(PseudoAnomalySample {
        input,
        target,
        meta: PseudoMeta::Skip {
            stride,
            start,
            input_indices,
            target_indices: window.indices().collect(),
        },
    })
}

/// Which pseudo kinds a training run may draw, with their settings.
#[derive(Clone, Debug)]
pub struct Generator {
    pub patch: Option<(PatchConfig, IntruderSource)>,
    pub skip: Option<SkipConfig>,
}

impl Generator {
    pub fn none() -> Self {
        Self { patch: None, skip: None }
    }

    pub fn is_empty(&self) -> bool {
        self.patch.is_none() && self.skip.is_none()
    }
}

/// One training example: `input` is fed to the model, `target` is what it
/// must reconstruct.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInput {
    pub input: FrameSequence,
    pub target: FrameSequence,
    pub pseudo: Option<PseudoMeta>,
}

impl TrainingInput {
    pub fn is_pseudo(&self) -> bool {
        self.pseudo.is_some()
    }
}

/// Returns a pseudo anomaly with probability `p` and the plain window at
/// `start` otherwise. When both kinds are enabled each is picked with equal
/// chance. A skip draw that runs past the end of the video moves the start,
/// keeping the stride.
pub fn sample_training_input<R: Rng + ?Sized>(
    video: &Video,
    start: usize,
    len: usize,
    p: f64,
    generator: &Generator,
    rng: &mut R,
) -> Result<TrainingInput> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("p must be in [0, 1], got {p}")));
    }
    if !rng.random_bool(p) || generator.is_empty() {
        let (_, window) = sample_window(video, start, len)?;
        return Ok(TrainingInput {
            input: window.clone(),
            target: window,
            pseudo: None,
        });
    }
    let use_patch = match (&generator.patch, &generator.skip) {
        (Some(_), Some(_)) => rng.random_bool(0.5),
        (Some(_), None) => true,
        _ => false,
    };
    let sample = if use_patch {
        let (config, intruder) = generator.patch.as_ref().expect("patch enabled");
        let (_, window) = sample_window(video, start, len)?;
        make_patch_pseudo(&window, intruder, config, rng)?
    } else {
        let skip = generator.skip.as_ref().expect("skip enabled");
        let stride = skip.strides[rng.random_range(0..skip.strides.len())];
        let span = (len.max(1) - 1) * stride;
        let start = if start + span < video.len() {
            start
        } else if span < video.len() {
            rng.random_range(0..video.len() - span)
        } else {
            start
        };
        make_skip_pseudo(video, start, len, stride)?
    };
    Ok(TrainingInput {
        input: sample.input,
        target: sample.target,
        pseudo: Some(sample.meta),
    })
}
