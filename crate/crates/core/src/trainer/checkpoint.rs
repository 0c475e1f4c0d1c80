//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PSAE" | u32 version | [u8; 32] config hash | u32 len, config TOML
//! u64 epoch | u64 step | u64 seed | u64 samples | u64 pseudo samples | u64 adam step
//! u32 entries, each: u16 len, name | u8 dtype | u8 rank | u32 dims[rank]
//! f32 payload of every entry, in manifest order
//! u32 CRC32 of all preceding bytes
//! ```

use std::path::Path;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Autoencoder, AutoencoderConfig, ModelParams};
use crate::tensor::{AdamState, Tensor};

pub const MAGIC: &[u8; 4] = b"PSAE";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Position of the per-sample random streams: the run seed and how many
/// samples have been drawn from it so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: [u8; 32],
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: RngState,
    pub pseudo_samples: u64,
    pub model: AutoencoderConfig,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
}

fn adam_names<'a>(params: &'a ModelParams<f32>, prefix: &str) -> impl Iterator<Item = String> + 'a {
    let prefix = prefix.to_string();
    params.names.iter().map(move |n| format!("{prefix}/{n}"))
}

impl Checkpoint {
    pub fn autoencoder(&self) -> Result<Autoencoder<f32>> {
        Autoencoder::from_params(self.model.clone(), self.params.clone())
    }

    /// Parameters loaded into an architecture given by the caller, failing on
    /// any name or shape difference.
    pub fn autoencoder_for(&self, config: &AutoencoderConfig) -> Result<Autoencoder<f32>> {
        Autoencoder::from_params(config.clone(), self.params.clone())
    }

    fn entries(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .params
            .names
            .iter()
            .zip(&self.params.tensors)
            .map(|(n, t)| NamedTensor {
                name: n.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        for (prefix, buffers) in [("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            for ((name, buf), t) in adam_names(&self.params, prefix).zip(buffers).zip(&self.params.tensors) {
                out.push(NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: buf.clone(),
                });
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.config_hash);
        let text = self.snapshot_toml();
        b.extend_from_slice(&(text.len() as u32).to_le_bytes());
        b.extend_from_slice(text.as_bytes());
        for v in [
            self.epoch,
            self.step,
            self.rng.seed,
            self.rng.samples,
            self.pseudo_samples,
            self.adam.step,
        ] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let entries = self.entries();
        b.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for e in &entries {
            b.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            b.extend_from_slice(e.name.as_bytes());
            b.push(DTYPE_F32);
            b.push(e.shape.len() as u8);
            for &d in &e.shape {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for e in &entries {
            for v in &e.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    fn snapshot_toml(&self) -> String {
        #[derive(serde::Serialize)]
        struct Snapshot<'a> {
            model: &'a AutoencoderConfig,
            run: &'a TrainConfig,
        }
        toml::to_string(&Snapshot {
            model: &self.model,
            run: &self.config,
        })
        .expect("snapshot serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            return Err(Error::CheckpointCorrupt("missing PSAE header".into()));
        }
        if bytes.len() < 12 {
            return Err(Error::CheckpointChecksum);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::CheckpointChecksum);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::CheckpointCorrupt("config snapshot is not UTF-8".into()))?;
        #[derive(serde::Deserialize)]
        struct Snapshot {
            model: AutoencoderConfig,
            run: TrainConfig,
        }
        let snap: Snapshot = toml::from_str(text)
            .map_err(|e| Error::CheckpointCorrupt(format!("config snapshot: {e}")))?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let samples = r.u64()?;
        let pseudo_samples = r.u64()?;
        let adam_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::CheckpointCorrupt("tensor name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::CheckpointCorrupt(format!("{name}: unknown dtype {dtype}")));
            }
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            manifest.push((name, shape));
        }
        let mut entries = Vec::with_capacity(count);
        for (name, shape) in manifest {
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            entries.push(NamedTensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "{} trailing bytes after payload",
                body.len() - r.pos
            )));
        }
        Self::assemble(snap.run, snap.model, config_hash, [epoch, step, seed, samples, pseudo_samples, adam_step], entries)
    }

    fn assemble(
        config: TrainConfig,
        model: AutoencoderConfig,
        config_hash: [u8; 32],
        counters: [u64; 6],
        entries: Vec<NamedTensor>,
    ) -> Result<Self> {
        let [epoch, step, seed, samples, pseudo_samples, adam_step] = counters;
        let (weights, rest): (Vec<_>, Vec<_>) = entries.into_iter().partition(|e| !e.name.starts_with("adam."));
        let tensors = weights
            .iter()
            .map(|e| Tensor::new(e.shape.clone(), e.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams {
            names: weights.iter().map(|e| e.name.clone()).collect(),
            tensors,
        };
        let moments = |prefix: &str| -> Result<Vec<Vec<f32>>> {
            adam_names(&params, prefix)
                .zip(&params.tensors)
                .map(|(name, t)| {
                    let e = rest
                        .iter()
                        .find(|e| e.name == name)
                        .ok_or_else(|| Error::CheckpointCorrupt(format!("missing {name}")))?;
                    if e.shape != t.shape() {
                        return Err(Error::ShapeSignature(format!("{name} has shape {:?}", e.shape)));
                    }
                    Ok(e.data.clone())
                })
                .collect()
        };
        let m = moments("adam.m")?;
        let v = moments("adam.v")?;
        if rest.len() != m.len() + v.len() {
            return Err(Error::CheckpointCorrupt("unexpected optimizer entries".into()));
        }
        Ok(Checkpoint {
            config,
            config_hash,
            epoch,
            step,
            rng: RngState { seed, samples },
            pseudo_samples,
            model,
            params,
            adam: AdamState {
                step: adam_step,
                m,
                v,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CheckpointCorrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
