use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::model::AutoencoderConfig;
use crate::pseudoanom::{PatchConfig, SkipConfig};
use crate::tensor::AdamHyper;

/// A training run as read from TOML with sections `[data]`, `[model]`,
/// `[train]`, `[pseudo.patch]` and `[pseudo.skip]`. Unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub pseudo: PseudoSection,
}

/// Architecture settings; the input extents come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_channels: Vec<usize>,
    pub strides: Vec<[usize; 3]>,
    pub kernel: [usize; 3],
    pub leaky_slope: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = AutoencoderConfig::desk_scale(8, 64, 64);
        Self {
            encoder_channels: d.encoder_channels,
            strides: d.strides,
            kernel: d.kernel,
            leaky_slope: d.leaky_slope,
        }
    }
}

impl ModelSection {
    pub fn autoencoder(&self, frames: usize, height: usize, width: usize) -> AutoencoderConfig {
        AutoencoderConfig {
            frames,
            channels: 1,
            height,
            width,
            encoder_channels: self.encoder_channels.clone(),
            strides: self.strides.clone(),
            kernel: self.kernel,
            leaky_slope: self.leaky_slope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Probability that a training sample is a pseudo anomaly.
    pub p: f64,
    /// Write `ckpt_epoch_%04d.bin` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Train on a random subset of this many windows per epoch instead of
    /// every window.
    pub windows_per_epoch: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamHyper::default();
        Self {
            epochs: 10,
            batch_size: 4,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            p: 0.2,
            checkpoint_every: 1,
            windows_per_epoch: None,
        }
    }
}

impl TrainSection {
    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoSection {
    pub patch: Option<PatchConfig>,
    pub skip: Option<SkipConfig>,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let t = &self.train;
        if !(0.0..=1.0).contains(&t.p) {
            return Err(Error::Config(format!("train.p must be in [0, 1], got {}", t.p)));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", t.lr)));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || t.eps <= 0.0 {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if t.windows_per_epoch == Some(0) {
            return Err(Error::Config("train.windows_per_epoch must be positive".into()));
        }
        if t.p > 0.0 && self.pseudo.patch.is_none() && self.pseudo.skip.is_none() {
            return Err(Error::Config(
                "train.p > 0 needs a [pseudo.patch] or [pseudo.skip] section".into(),
            ));
        }
        if let Some(patch) = &self.pseudo.patch {
            patch.validate()?;
        }
        if let Some(skip) = &self.pseudo.skip {
            skip.validate()?;
        }
        Ok(())
    }

    /// Hash of every setting that shapes the training trajectory. The epoch
    /// budget and checkpoint cadence are excluded so a finished run can be
    /// resumed with a larger budget.
    pub fn trajectory_hash(&self) -> [u8; 32] {
        let mut identity = self.clone();
        identity.train.epochs = 0;
        identity.train.checkpoint_every = 0;
        Sha256::digest(identity.to_toml().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nroot = \"bench\"\n[train]\np = 0.0\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let c = TrainConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.data.window, 8);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.model, ModelSection::default());
        assert!(c.pseudo.patch.is_none());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = TrainConfig::from_toml(&format!("{MINIMAL}[pseudoo]\nx = 1\n")).unwrap_err();
        assert!(err.to_string().contains("pseudoo"), "{err}");
        let err = TrainConfig::from_toml(&format!("{MINIMAL}[pseudo.skip]\nstride = [2]\n")).unwrap_err();
        assert!(err.to_string().contains("stride"), "{err}");
    }

    #[test]
    fn pseudo_probability_needs_a_generator() {
        let text = "[data]\nroot = \"b\"\n[train]\np = 0.2\n";
        assert!(TrainConfig::from_toml(text).is_err());
        let text = "[data]\nroot = \"b\"\n[train]\np = 0.2\n[pseudo.skip]\n";
        let c = TrainConfig::from_toml(text).unwrap();
        assert_eq!(c.pseudo.skip.unwrap().strides, vec![2, 3, 4, 5]);
        assert!(TrainConfig::from_toml("[data]\nroot = \"b\"\n[train]\np = 1.5\n").is_err());
    }

    #[test]
    fn trajectory_hash_ignores_epoch_budget() {
        let a = TrainConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.train.epochs = 99;
        assert_eq!(a.trajectory_hash(), b.trajectory_hash());
        b.train.seed = 1;
        assert_ne!(a.trajectory_hash(), b.trajectory_hash());
    }

    #[test]
    fn round_trips_through_toml() {
        let text = "[data]\nroot = \"b\"\n[pseudo.patch]\nmask = \"cutmix\"\n";
        let c = TrainConfig::from_toml(text).unwrap();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
