//! One-parameter hyperparameter sweeps: train and evaluate once per grid value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnomalyKind, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, sha256_hex};
use crate::pseudoanom::{PatchConfig, SkipConfig};
use crate::trainer::{self, Checkpoint, TrainConfig, FINAL_CHECKPOINT};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "param,value,auc,error";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Pseudo-anomaly probability.
    P,
    /// Single skip stride.
    S,
    /// Maximum patch size fraction.
    Alpha,
    /// Maximum patch displacement per frame.
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::P => "p",
            SweepParam::S => "s",
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }

    /// `base` with this parameter set to `value`. Stride and patch parameters
    /// add the corresponding pseudo section with defaults when it is missing.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut c = base.clone();
        let whole = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(Error::Config(format!("{} takes whole numbers, got {v}", self.name())))
            }
        };
        match self {
            SweepParam::P => c.train.p = value,
            SweepParam::S => {
                let skip = c.pseudo.skip.get_or_insert_with(SkipConfig::default);
                skip.strides = vec![whole(value)? as usize];
            }
            SweepParam::Alpha => {
                c.pseudo.patch.get_or_insert_with(PatchConfig::default).alpha = value as f32;
            }
            SweepParam::Beta => {
                c.pseudo.patch.get_or_insert_with(PatchConfig::default).beta = whole(value)? as u32;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(SweepParam::P),
            "s" => Ok(SweepParam::S),
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?}, expected one of p, s, alpha, beta"
            ))),
        }
    }
}

/// Parses a comma-separated grid, dropping repeated values while keeping the
/// order of first appearance.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: f64 = part
            .parse()
            .map_err(|_| Error::Config(format!("grid value {part:?} is not a number")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("grid value {part:?} is not finite")));
        }
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub auc: Option<f64>,
    pub error: Option<String>,
    pub run_dir: PathBuf,
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let auc = r.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
        writeln!(out, "{},{},{auc},{err}", param.name(), r.value).expect("write to string");
    }
    out
}

fn run_point(
    config: &TrainConfig,
    dataset: &Dataset,
    kind: Option<AnomalyKind>,
    dir: &Path,
) -> Result<f64> {
    let final_path = dir.join(FINAL_CHECKPOINT);
    let cached = Checkpoint::load(&final_path).ok().filter(|c| {
        c.config_hash == config.trajectory_hash() && c.epoch >= config.train.epochs as u64
    });
    let model = match cached {
        Some(ckpt) => ckpt.autoencoder()?,
        None => trainer::train(config, dataset, dir, None, |_| {})?.model,
    };
    let bytes = std::fs::read(&final_path).map_err(|e| Error::io(&final_path, e))?;
    let mut eval = evaluate(&model, &dataset.test_videos(kind)?)?;
    eval.report.provenance.checkpoint_sha256 = Some(sha256_hex(&bytes));
    eval.write(dir)?;
    Ok(eval.report.auc)
}

/// Trains and evaluates one run per grid value under `out/<param>_<value>/`.
/// A finished run whose final checkpoint matches the point's configuration is
/// evaluated without retraining. Failures are recorded in the row and the
/// sweep moves on. Writes `sweep.csv` into `out`.
pub fn run_sweep(
    base: &TrainConfig,
    param: SweepParam,
    grid: &[f64],
    dataset: &Dataset,
    kind: Option<AnomalyKind>,
    out: &Path,
    mut on_point: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::with_capacity(grid.len());
    let mut seen: Vec<f64> = Vec::new();
    for &value in grid {
        if seen.contains(&value) {
            continue;
        }
        seen.push(value);
        let run_dir = out.join(format!("{}_{value}", param.name()));
        let result = param
            .apply(base, value)
            .and_then(|c| run_point(&c, dataset, kind, &run_dir));
        let row = match result {
            Ok(auc) => SweepRow {
                value,
                auc: Some(auc),
                error: None,
                run_dir,
            },
            Err(e) => SweepRow {
                value,
                auc: None,
                error: Some(e.to_string()),
                run_dir,
            },
        };
        on_point(&row);
        rows.push(row);
    }
    let path = out.join(SWEEP_FILE);
    std::fs::write(&path, sweep_csv(param, &rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
