//! Frame-level anomaly scores from reconstruction quality.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{sample_window, FrameSequence, GrayImage, Video};
use crate::error::{Error, Result};
use crate::model::Autoencoder;

/// Lower bound on the mean squared error, which caps PSNR at 100 dB.
pub const MSE_FLOOR: f64 = 1e-10;
/// Largest pixel value for intensities in `[0, 1]`.
pub const PEAK: f64 = 1.0;
/// Windows reconstructed per forward pass while scoring.
pub const SCORE_BATCH: usize = 8;

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("mse", format!("{} vs {} pixels", a.len(), b.len())));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in decibels with peak value [`PEAK`].
pub fn psnr(frame: &[f32], reconstruction: &[f32]) -> Result<f64> {
    Ok(psnr_from_mse(mse(frame, reconstruction)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (PEAK * PEAK / mse.max(MSE_FLOOR)).log10()
}

/// Maps PSNR values to `[0, 1]` so that the worst-reconstructed frame scores
/// 1 and the best scores 0. A constant series maps to all zeros.
pub fn normalize_scores(psnr: &[f64]) -> Result<Vec<f64>> {
    if psnr.is_empty() {
        return Err(Error::Metric("cannot normalize an empty score series".into()));
    }
    if psnr.iter().any(|p| !p.is_finite()) {
        return Err(Error::Metric("non-finite PSNR value".into()));
    }
    let lo = psnr.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = psnr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.0; psnr.len()]);
    }
    Ok(psnr.iter().map(|&p| (1.0 - (p - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
}

/// Per-frame PSNR and normalized score for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub video_id: String,
    pub psnr: Vec<f64>,
    pub score: Vec<f64>,
    /// For each frame, the frame whose reconstruction produced its PSNR.
    /// Frames near either end borrow from the nearest scored frame.
    pub source_frame: Vec<usize>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }
}

/// Squared reconstruction error per pixel, scaled to `[0, 1]` within the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub frame_idx: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_unit(self.width, self.height, &self.values)
    }
}

pub fn heatmap(frame: &[f32], reconstruction: &[f32], width: usize, height: usize) -> Result<Heatmap> {
    if frame.len() != reconstruction.len() || frame.len() != width * height {
        return Err(Error::shape(
            "heatmap",
            format!("{} vs {} pixels for a {width}x{height} frame", frame.len(), reconstruction.len()),
        ));
    }
    let err: Vec<f32> = frame.iter().zip(reconstruction).map(|(a, b)| (a - b) * (a - b)).collect();
    let lo = err.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = err.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let values = if hi > lo {
        err.iter().map(|&e| ((e - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; err.len()]
    };
    Ok(Heatmap {
        frame_idx: 0,
        width,
        height,
        values,
    })
}

/// Offset of the scored frame inside a window of `window` frames.
pub fn center_offset(window: usize) -> usize {
    window / 2
}

/// Scores every frame of `video` with the model's window length.
pub fn score_video(model: &Autoencoder<f32>, video: &Video) -> Result<ScoreSeries> {
    score_video_detailed(model, video, false).map(|(s, _)| s)
}

/// Slides a stride-1 window over the video, reconstructs each window and
/// scores its centre frame. Optionally also returns one heatmap per scored
/// frame. Labels are never consulted.
pub fn score_video_detailed(
    model: &Autoencoder<f32>,
    video: &Video,
    heatmaps: bool,
) -> Result<(ScoreSeries, Vec<Heatmap>)> {
    let window = model.config().frames;
    let k = video.len();
    if k < window {
        return Err(Error::WindowRange {
            start: 0,
            len: window,
            frames: k,
        });
    }
    let offset = center_offset(window);
    let starts: Vec<usize> = (0..=k - window).collect();
    let mut scored = Vec::with_capacity(starts.len());
    let mut maps = Vec::new();
    for chunk in starts.chunks(SCORE_BATCH) {
        let windows = chunk
            .iter()
            .map(|&n| sample_window(video, n, window).map(|(_, w)| w))
            .collect::<Result<Vec<FrameSequence>>>()?;
        let refs: Vec<&FrameSequence> = windows.iter().collect();
        let input = FrameSequence::stack(&refs)?;
        let output = model.reconstruct(&input)?;
        let per_window = windows[0].data.len();
        let plane = windows[0].frame_len();
        for (i, (&n, w)) in chunk.iter().zip(&windows).enumerate() {
            let recon = &output.data()[i * per_window..(i + 1) * per_window];
            let recon_frame = &recon[offset * plane..(offset + 1) * plane];
            scored.push(psnr(w.frame(offset), recon_frame)?);
            if heatmaps {
                let mut h = heatmap(w.frame(offset), recon_frame, video.width, video.height)?;
                h.frame_idx = n + offset;
                maps.push(h);
            }
        }
    }
    let last_scored = offset + scored.len() - 1;
    let source_frame: Vec<usize> = (0..k).map(|t| t.clamp(offset, last_scored)).collect();
    let psnr: Vec<f64> = source_frame.iter().map(|&t| scored[t - offset]).collect();
    let score = normalize_scores(&psnr)?;
    Ok((
        ScoreSeries {
            video_id: video.id.clone(),
            psnr,
            score,
            source_frame,
        },
        maps,
    ))
}

pub const SCORES_HEADER: &str = "video_id,frame_idx,psnr_db,score";

/// Scores as CSV rows `video_id,frame_idx,psnr_db,score`.
pub fn scores_csv(series: &[ScoreSeries]) -> String {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for s in series {
        for (t, (p, sc)) in s.psnr.iter().zip(&s.score).enumerate() {
            writeln!(out, "{},{t},{p:.6},{sc:.6}", s.video_id).expect("write to string");
        }
    }
    out
}

pub fn write_scores_csv(path: &Path, series: &[ScoreSeries]) -> Result<()> {
    std::fs::write(path, scores_csv(series)).map_err(|e| Error::io(path, e))
}

/// Writes `heat_%06d.pgm` files into `dir`.
pub fn write_heatmaps(dir: &Path, maps: &[Heatmap]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for h in maps {
        h.to_image().write(&dir.join(format!("heat_{:06}.pgm", h.frame_idx)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        assert_eq!(psnr(&[0.5; 4], &[0.5; 4]).unwrap(), 100.0);
        assert!((psnr(&[0.1; 9], &[0.0; 9]).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_scores(&[30.0, 20.0, 25.0]).unwrap(), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize_scores(&[10.0, 20.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(normalize_scores(&[7.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(normalize_scores(&[]).is_err());
    }

    #[test]
    fn heatmap_single_pixel() {
        let a = [0.2f32; 6];
        let mut b = a;
        b[4] = 0.9;
        let h = heatmap(&a, &b, 3, 2).unwrap();
        assert_eq!(h.values, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(heatmap(&a, &a, 3, 2).unwrap().values, vec![0.0; 6]);
    }

    #[test]
    fn csv_layout() {
        let s = ScoreSeries {
            video_id: "v".into(),
            psnr: vec![20.0, 30.0],
            score: vec![1.0, 0.0],
            source_frame: vec![0, 1],
        };
        assert_eq!(
            scores_csv(&[s]),
            "video_id,frame_idx,psnr_db,score\nv,0,20.000000,1.000000\nv,1,30.000000,0.000000\n"
        );
    }
}
