//! Frame-level ROC-AUC and evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Video;
use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::scoring::{score_video, ScoreSeries};

pub const HISTOGRAM_BINS: usize = 10;

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "ROC-AUC needs both classes, got {pos} positive and {neg} negative frames"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve, computed as the probability that a random
/// positive frame outscores a random negative one, with ties counting half.
///
/// Ranks are kept doubled so every intermediate is an integer and the result
/// is the exact ratio of two integers.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based positions i+1 ..= j+1 share the midrank (i+j+2)/2
        let twice_mid = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * tied_pos;
        i = j + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * neg as u128) as f64)
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Area under a piecewise-linear curve through `points`.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in points {
        writeln!(out, "{f:.6},{t:.6}").expect("write to string");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAuc {
    pub video_id: String,
    pub frames: usize,
    pub anomalous_frames: usize,
    /// Absent when the video holds only one class.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Counts over equal-width bins spanning `[0, 1]`.
    pub normal: Vec<u64>,
    pub anomalous: Vec<u64>,
}

impl Histogram {
    pub fn build(scores: &[f64], labels: &[bool], bins: usize) -> Self {
        let mut h = Histogram {
            normal: vec![0; bins],
            anomalous: vec![0; bins],
        };
        for (&s, &l) in scores.iter().zip(labels) {
            let b = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            if l {
                h.anomalous[b] += 1;
            } else {
                h.normal[b] += 1;
            }
        }
        h
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_sha256: Option<String>,
    pub dataset_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub frames: usize,
    pub anomalous_frames: usize,
    pub provenance: Provenance,
    pub histogram: Histogram,
    pub videos: Vec<VideoAuc>,
}

impl EvalReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Metric(format!("serializing report: {e}")))
    }
}

/// Everything produced by one evaluation run.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub series: Vec<ScoreSeries>,
    pub roc: Vec<(f64, f64)>,
}

impl Evaluation {
    /// Writes `report.toml`, `roc.csv` and `scores.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("report.toml", self.report.to_toml()?)?;
        write("roc.csv", roc_csv(&self.roc))?;
        write("scores.csv", crate::scoring::scores_csv(&self.series))
    }
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").expect("write to string");
        s
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

/// Content hash over ids, dimensions, pixels and labels of `videos`.
pub fn dataset_hash(videos: &[Video]) -> String {
    let mut h = Sha256::new();
    for v in videos {
        h.update(v.id.as_bytes());
        h.update([0]);
        h.update((v.width as u64).to_le_bytes());
        h.update((v.height as u64).to_le_bytes());
        for f in v.frames() {
            for p in f {
                h.update(p.to_le_bytes());
            }
        }
        if let Some(labels) = &v.labels {
            h.update(labels.iter().map(|&l| l as u8).collect::<Vec<_>>());
        }
    }
    to_hex(&h.finalize())
}

/// Scores every labeled test video, then computes the AUC over all frames
/// concatenated plus a per-video breakdown.
pub fn evaluate(model: &Autoencoder<f32>, videos: &[Video]) -> Result<Evaluation> {
    if videos.is_empty() {
        return Err(Error::Metric("no test videos to evaluate".into()));
    }
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut series = Vec::with_capacity(videos.len());
    let mut per_video = Vec::with_capacity(videos.len());
    for v in videos {
        let labels = v
            .labels
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("test video {} has no labels", v.id)))?;
        let s = score_video(model, v)?;
        let anomalous = labels.iter().filter(|&&l| l).count();
        let auc = if anomalous == 0 || anomalous == labels.len() {
            None
        } else {
            Some(roc_auc(&s.score, labels)?)
        };
        per_video.push(VideoAuc {
            video_id: v.id.clone(),
            frames: labels.len(),
            anomalous_frames: anomalous,
            auc,
        });
        all_scores.extend_from_slice(&s.score);
        all_labels.extend_from_slice(labels);
        series.push(s);
    }
    let auc = roc_auc(&all_scores, &all_labels)?;
    let roc = roc_curve(&all_scores, &all_labels)?;
    let report = EvalReport {
        auc,
        frames: all_labels.len(),
        anomalous_frames: all_labels.iter().filter(|&&l| l).count(),
        provenance: Provenance {
            checkpoint_sha256: None,
            dataset_sha256: dataset_hash(videos),
        },
        histogram: Histogram::build(&all_scores, &all_labels, HISTOGRAM_BINS),
        videos: per_video,
    };
    Ok(Evaluation { report, series, roc })
}
