//! Sources of foreign image content for patch pseudo anomalies.

use std::f32::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::pgm::{resize_bilinear, GrayImage};
use crate::dataset::Video;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntruderKind {
    ProceduralTextures,
    ImageDirectory,
    SelfDataset,
}

/// One sampled intruder, already resized to the frame: either a single
/// still image shared by all frames, or one image per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Intruder {
    pub id: String,
    pub frames: Vec<Vec<f32>>,
}

impl Intruder {
    pub fn frame(&self, t: usize) -> &[f32] {
        if self.frames.len() == 1 {
            &self.frames[0]
        } else {
            &self.frames[t]
        }
    }
}

#[derive(Clone, Debug)]
struct StillImage {
    id: String,
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

#[derive(Clone, Debug)]
enum Source {
    Procedural,
    Images(Arc<Vec<StillImage>>),
    Videos(Arc<Vec<Video>>),
}

/// Where patch content comes from. All sampling goes through the caller's
/// generator, so identical seeds give identical intruders.
#[derive(Clone, Debug)]
pub struct IntruderSource {
    source: Source,
}

impl IntruderSource {
    /// Seeded noise, checkerboards, stripes and gradients.
    pub fn procedural() -> Self {
        Self {
            source: Source::Procedural,
        }
    }

    /// Every `.pgm` file in `dir`, in file-name order.
    pub fn image_directory(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Dataset(format!(
                "{}: no .pgm intruder images",
                dir.display()
            )));
        }
        let images = paths
            .iter()
            .map(|p| {
                let img = GrayImage::read(p)?;
                Ok(StillImage {
                    id: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                    width: img.width,
                    height: img.height,
                    pixels: img.to_unit(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source: Source::Images(Arc::new(images)),
        })
    }

    /// Windows of the given (normal) videos, aligned frame by frame with the
    /// input sequence.
    pub fn self_dataset(videos: Arc<Vec<Video>>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Dataset("self-dataset intruder needs at least one video".into()));
        }
        Ok(Self {
            source: Source::Videos(videos),
        })
    }

    pub fn kind(&self) -> IntruderKind {
        match self.source {
            Source::Procedural => IntruderKind::ProceduralTextures,
            Source::Images(_) => IntruderKind::ImageDirectory,
            Source::Videos(_) => IntruderKind::SelfDataset,
        }
    }

    /// Draws one intruder resized to `width x height`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<Intruder> {
        match &self.source {
            Source::Procedural => {
                let (name, pixels) = procedural_texture(rng, width, height);
                Ok(Intruder {
                    id: name,
                    frames: vec![pixels],
                })
            }
            Source::Images(images) => {
                let img = &images[rng.random_range(0..images.len())];
                Ok(Intruder {
                    id: img.id.clone(),
                    frames: vec![resize_bilinear(&img.pixels, img.width, img.height, width, height)],
                })
            }
            Source::Videos(videos) => {
                let usable: Vec<&Video> = videos.iter().filter(|v| v.len() >= frames).collect();
                if usable.is_empty() {
                    return Err(Error::Dataset(format!(
                        "no intruder video has {frames} frames"
                    )));
                }
                let v = usable[rng.random_range(0..usable.len())];
                let start = rng.random_range(0..=v.len() - frames);
                Ok(Intruder {
                    id: format!("{}@{start}", v.id),
                    frames: (start..start + frames)
                        .map(|i| resize_bilinear(v.frame(i), v.width, v.height, width, height))
                        .collect(),
                })
            }
        }
    }
}

fn two_tones<R: Rng + ?Sized>(rng: &mut R) -> (f32, f32) {
    loop {
        let a = rng.random_range(0.0..1.0f32);
        let b = rng.random_range(0.0..1.0f32);
        if (a - b).abs() >= 0.4 {
            return (a, b);
        }
    }
}

/// A checkerboard, zigzag gradient or value-noise texture, each with contrast of at least 0.4.
pub fn procedural_texture<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> (String, Vec<f32>) {
    let (a, b) = two_tones(rng);
    let mut out = vec![0.0f32; width * height];
    let name = match rng.random_range(0..3) {
        0 => {
            let cell = rng.random_range(2..=8usize);
            for y in 0..height {
                for x in 0..width {
                    out[y * width + x] = if (x / cell + y / cell) % 2 == 0 { a } else { b };
                }
            }
            format!("checker{cell}")
        }
        1 => {
            let theta = rng.random_range(0.0..2.0 * PI);
            let (c, s) = (theta.cos(), theta.sin());
            // tight gradient so a patch-sized crop still spans both tones
            let scale = rng.random_range(8.0..24.0f32);
            for y in 0..height {
                for x in 0..width {
                    let t = ((x as f32 * c + y as f32 * s) / scale).rem_euclid(2.0);
                    let w = if t > 1.0 { 2.0 - t } else { t };
                    out[y * width + x] = a + (b - a) * w;
                }
            }
            "gradient".to_string()
        }
        _ => {
            let cell = rng.random_range(3..=8usize);
            let gw = width / cell + 2;
            let gh = height / cell + 2;
            let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(0.0..1.0f32)).collect();
            for y in 0..height {
                for x in 0..width {
                    let fx = x as f32 / cell as f32;
                    let fy = y as f32 / cell as f32;
                    let (x0, y0) = (fx as usize, fy as usize);
                    let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
                    let g = |i: usize, j: usize| grid[j * gw + i];
                    let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
                    let bottom = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
                    out[y * width + x] = top * (1.0 - ty) + bottom * ty;
                }
            }
            format!("noise{cell}")
        }
    };
    (name, out)
}
