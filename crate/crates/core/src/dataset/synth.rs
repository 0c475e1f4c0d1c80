//! Procedural "moving sprites" benchmark.
//!
//! Training videos show 1..=N striped squares drifting slowly over a smooth
//! static background. Each test video contains one anomaly type during one
//! or two segments: a square that suddenly moves fast (motion), or an extra
//! flat bright disk (appearance). A frame is labelled anomalous exactly when
//! an anomalous sprite is drawn in it.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pgm::quantize;
use super::{write_video_dir, AnomalyKind, Manifest, ManifestEntry, Role, Video, MANIFEST_FILE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Square frame edge in pixels.
    pub frame_size: usize,
    pub video_len: usize,
    pub train_videos: usize,
    /// Test videos alternate motion / appearance anomalies.
    pub test_videos: usize,
    /// Inclusive sprite edge range in pixels.
    pub sprite_size: [usize; 2],
    pub max_sprites: usize,
    /// Inclusive per-axis speed range, pixels per frame.
    pub normal_speed: [usize; 2],
    pub anomaly_speed: [usize; 2],
    /// Range of the anomalous share of each test video.
    pub anomalous_fraction: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frame_size: 64,
            video_len: 200,
            train_videos: 8,
            test_videos: 6,
            sprite_size: [8, 14],
            max_sprites: 3,
            normal_speed: [1, 2],
            anomaly_speed: [4, 6],
            anomalous_fraction: [0.3, 0.6],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let [smin, smax] = self.sprite_size;
        if smin == 0 || smin > smax {
            return fail(format!("invalid sprite size range {smin}..={smax}"));
        }
        if self.frame_size < 2 * smax {
            return fail(format!(
                "frame size {} is too small for sprites up to {smax} px (needs at least {})",
                self.frame_size,
                2 * smax
            ));
        }
        if self.video_len < 40 {
            return fail(format!("videos need at least 40 frames, got {}", self.video_len));
        }
        if self.train_videos == 0 || self.test_videos == 0 || self.max_sprites == 0 {
            return fail("video and sprite counts must be positive".into());
        }
        let [nlo, nhi] = self.normal_speed;
        let [alo, ahi] = self.anomaly_speed;
        if nlo == 0 || nlo > nhi || alo > ahi || alo <= nhi {
            return fail(format!(
                "speed ranges must satisfy 0 < normal {nlo}..={nhi} < anomalous {alo}..={ahi}"
            ));
        }
        if ahi >= self.frame_size - smax {
            return fail("anomalous speed exceeds the free space in the frame".into());
        }
        let [flo, fhi] = self.anomalous_fraction;
        if !(0.0 < flo && flo <= fhi && fhi <= 0.7) {
            return fail(format!("anomalous fraction range {flo}..={fhi} must lie in (0, 0.7]"));
        }
        Ok(())
    }
}

/// Generation parameters as recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRecord {
    pub seed: u64,
    pub config: SynthConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub video: Video,
    pub role: Role,
    pub anomaly: Option<AnomalyKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub record: SynthRecord,
    pub videos: Vec<SynthVideo>,
}

impl Benchmark {
    pub fn train(&self) -> impl Iterator<Item = &Video> {
        self.videos.iter().filter(|v| v.role == Role::Train).map(|v| &v.video)
    }

    pub fn test(&self, kind: Option<AnomalyKind>) -> impl Iterator<Item = &Video> {
        self.videos
            .iter()
            .filter(move |v| v.role == Role::Test && (kind.is_none() || v.anomaly == kind))
            .map(|v| &v.video)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            synth: Some(self.record.clone()),
            videos: self
                .videos
                .iter()
                .map(|v| {
                    let split = match v.role {
                        Role::Train => "train",
                        Role::Test => "test",
                    };
                    ManifestEntry {
                        id: v.video.id.clone(),
                        path: Path::new(split).join(&v.video.id),
                        role: v.role,
                        anomaly: v.anomaly,
                    }
                })
                .collect(),
        }
    }

    /// Writes `train/`, `test/` and `manifest.toml` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let manifest = self.manifest();
        for (entry, v) in manifest.videos.iter().zip(&self.videos) {
            write_video_dir(&v.video, &dir.join(&entry.path))?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Generates the full benchmark deterministically from `seed`.
pub fn synth_benchmark(seed: u64, config: &SynthConfig) -> Result<Benchmark> {
    config.validate()?;
    let mut videos = Vec::with_capacity(config.train_videos + config.test_videos);
    for i in 0..config.train_videos {
        let mut rng = stream(seed, i as u64);
        videos.push(SynthVideo {
            video: render(&mut rng, config, format!("train_{i:03}"), None)?,
            role: Role::Train,
            anomaly: None,
        });
    }
    for i in 0..config.test_videos {
        let mut rng = stream(seed, (1 << 32) + i as u64);
        let kind = if i % 2 == 0 {
            AnomalyKind::Motion
        } else {
            AnomalyKind::Appearance
        };
        videos.push(SynthVideo {
            video: render(&mut rng, config, format!("test_{i:03}"), Some(kind))?,
            role: Role::Test,
            anomaly: Some(kind),
        });
    }
    Ok(Benchmark {
        record: SynthRecord {
            seed,
            config: config.clone(),
        },
        videos,
    })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug)]
enum Look {
    Stripes {
        vertical: bool,
        period: usize,
        hi: f32,
        lo: f32,
    },
    Disk {
        value: f32,
    },
}

#[derive(Clone, Debug)]
struct Sprite {
    x: i64,
    y: i64,
    size: usize,
    vx: i64,
    vy: i64,
    look: Look,
}

impl Sprite {
    fn step(&mut self, frame: usize) {
        let limit = (frame - self.size) as i64;
        let reflect = |p: &mut i64, v: &mut i64| {
            *p += *v;
            if *p < 0 {
                *p = -*p;
                *v = -*v;
            } else if *p > limit {
                *p = 2 * limit - *p;
                *v = -*v;
            }
            *p = (*p).clamp(0, limit);
        };
        reflect(&mut self.x, &mut self.vx);
        reflect(&mut self.y, &mut self.vy);
    }

    fn draw(&self, canvas: &mut [f32], frame: usize) {
        let r = self.size as f32 / 2.0;
        for dy in 0..self.size {
            for dx in 0..self.size {
                let value = match self.look {
                    Look::Stripes {
                        vertical,
                        period,
                        hi,
                        lo,
                    } => {
                        let along = if vertical { dx } else { dy };
                        if (along / period) % 2 == 0 {
                            hi
                        } else {
                            lo
                        }
                    }
                    Look::Disk { value } => {
                        let (fx, fy) = (dx as f32 + 0.5 - r, dy as f32 + 0.5 - r);
                        if fx * fx + fy * fy > r * r {
                            continue;
                        }
                        value
                    }
                };
                let (px, py) = (self.x as usize + dx, self.y as usize + dy);
                canvas[py * frame + px] = value;
            }
        }
    }
}

fn velocity(rng: &mut ChaCha8Rng, speed: [usize; 2]) -> (i64, i64) {
    let s = rng.random_range(speed[0]..=speed[1]) as i64;
    loop {
        let dx = rng.random_range(-1i64..=1);
        let dy = rng.random_range(-1i64..=1);
        if dx != 0 || dy != 0 {
            return (dx * s, dy * s);
        }
    }
}

fn normal_sprite(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Sprite {
    let size = rng.random_range(cfg.sprite_size[0]..=cfg.sprite_size[1]);
    let limit = (cfg.frame_size - size) as i64;
    let (vx, vy) = velocity(rng, cfg.normal_speed);
    let hi = rng.random_range(0.7..0.95f32);
    Sprite {
        x: rng.random_range(0..=limit),
        y: rng.random_range(0..=limit),
        size,
        vx,
        vy,
        look: Look::Stripes {
            vertical: rng.random_bool(0.5),
            period: rng.random_range(4..=5),
            hi,
            lo: hi - rng.random_range(0.2..0.3f32),
        },
    }
}

fn anomalous_sprite(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Sprite {
    let size = rng.random_range(cfg.sprite_size[0]..=cfg.sprite_size[1]);
    let limit = (cfg.frame_size - size) as i64;
    let (vx, vy) = velocity(rng, cfg.normal_speed);
    Sprite {
        x: rng.random_range(0..=limit),
        y: rng.random_range(0..=limit),
        size,
        vx,
        vy,
        look: Look::Disk {
            value: rng.random_range(0.55..0.75f32),
        },
    }
}

fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f32> {
    let base = rng.random_range(0.15..0.35f32);
    let gx = rng.random_range(-0.1..0.1f32);
    let gy = rng.random_range(-0.1..0.1f32);
    let amp = rng.random_range(0.02..0.05f32);
    let fx = rng.random_range(0.5..1.5f32);
    let fy = rng.random_range(0.5..1.5f32);
    let phase = rng.random_range(0.0..2.0 * PI);
    let n = size as f32;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f32 / n, y as f32 / n);
            out.push(base + gx * (u - 0.5) + gy * (v - 0.5) + amp * (2.0 * PI * (fx * u + fy * v) + phase).sin());
        }
    }
    out
}

/// Frame ranges `[start, end)` that contain the anomaly.
fn segments(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<(usize, usize)> {
    let len = cfg.video_len;
    let frac = rng.random_range(cfg.anomalous_fraction[0]..=cfg.anomalous_fraction[1]);
    let total = ((frac * len as f64).round() as usize).max(2);
    let margin = len / 10;
    if rng.random_bool(0.5) {
        let start = rng.random_range(margin..=len - total - margin / 2);
        vec![(start, start + total)]
    } else {
        let first = total / 2;
        let second = total - first;
        let half = len / 2;
        let a = rng.random_range(margin..=half - first);
        let b = rng.random_range(half + 1..=len - second - 1);
        vec![(a, a + first), (b, b + second)]
    }
}

fn render(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String, kind: Option<AnomalyKind>) -> Result<Video> {
    let size = cfg.frame_size;
    let bg = background(rng, size);
    let count = rng.random_range(1..=cfg.max_sprites);
    let mut sprites: Vec<Sprite> = (0..count).map(|_| normal_sprite(rng, cfg)).collect();
    let segs = if kind.is_some() { segments(rng, cfg) } else { Vec::new() };
    let mut intruder: Option<Sprite> = None;
    let mut frames = Vec::with_capacity(cfg.video_len);
    let mut labels = Vec::with_capacity(cfg.video_len);
    for t in 0..cfg.video_len {
        let starting = segs.iter().any(|&(s, _)| s == t);
        let ending = segs.iter().any(|&(_, e)| e == t);
        if ending {
            match kind {
                Some(AnomalyKind::Motion) => {
                    let (vx, vy) = velocity(rng, cfg.normal_speed);
                    sprites[0].vx = vx;
                    sprites[0].vy = vy;
                }
                Some(AnomalyKind::Appearance) => intruder = None,
                None => {}
            }
        }
        if starting {
            match kind {
                Some(AnomalyKind::Motion) => {
                    let (vx, vy) = velocity(rng, cfg.anomaly_speed);
                    sprites[0].vx = vx;
                    sprites[0].vy = vy;
                }
                Some(AnomalyKind::Appearance) => intruder = Some(anomalous_sprite(rng, cfg)),
                None => {}
            }
        }
        let anomalous = segs.iter().any(|&(s, e)| (s..e).contains(&t));
        let mut canvas = bg.clone();
        for s in &sprites {
            s.draw(&mut canvas, size);
        }
        if let Some(s) = &intruder {
            s.draw(&mut canvas, size);
        }
        canvas.iter_mut().for_each(|v| *v = f32::from(quantize(*v)) / 255.0);
        frames.push(canvas);
        labels.push(anomalous);
        for s in sprites.iter_mut().chain(intruder.iter_mut()) {
            s.step(size);
        }
    }
    Video::new(id, size, size, frames, kind.map(|_| labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            frame_size: 32,
            video_len: 60,
            train_videos: 2,
            test_videos: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_benchmark() {
        let a = synth_benchmark(5, &small()).unwrap();
        let b = synth_benchmark(5, &small()).unwrap();
        assert_eq!(a, b);
        let c = synth_benchmark(6, &small()).unwrap();
        assert_ne!(a.videos[0].video, c.videos[0].video);
    }

    #[test]
    fn training_split_is_unlabelled() {
        let b = synth_benchmark(1, &small()).unwrap();
        assert!(b.train().all(|v| v.labels.is_none()));
        assert!(b.test(None).all(|v| v.labels.is_some()));
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let cfg = SynthConfig {
            frame_size: 16,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_benchmark(0, &cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            anomaly_speed: [2, 3],
            ..SynthConfig::default()
        };
        assert!(synth_benchmark(0, &cfg).is_err());
    }

    #[test]
    fn sprite_motion_stays_in_frame() {
        let mut s = Sprite {
            x: 1,
            y: 60,
            size: 4,
            vx: -3,
            vy: 5,
            look: Look::Disk { value: 1.0 },
        };
        for _ in 0..100 {
            s.step(64);
            assert!((0..=60).contains(&s.x) && (0..=60).contains(&s.y));
        }
    }
}
