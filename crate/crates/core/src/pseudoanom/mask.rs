//! Blending masks for patch pseudo anomalies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of each half-extent over which the smooth rectangular mask ramps
/// from 1 down to 0.
pub const SMOOTH_RAMP: f32 = 0.2;
/// Range of the constant blend weight of a mixup patch.
pub const MIXUP_LAMBDA: (f32, f32) = (0.3, 0.7);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Rectangle with a raised-cosine border.
    SmoothmixS,
    /// Hard binary rectangle.
    Cutmix,
    /// Disk with a Gaussian falloff.
    SmoothmixC,
    /// Rectangle with a constant blend weight.
    MixupPatch,
}

impl MaskKind {
    pub const ALL: [MaskKind; 4] = [
        MaskKind::SmoothmixS,
        MaskKind::Cutmix,
        MaskKind::SmoothmixC,
        MaskKind::MixupPatch,
    ];

    /// Fixes any per-sample randomness of the mask family.
    pub fn resolve<R: Rng + ?Sized>(self, rng: &mut R) -> MaskProfile {
        match self {
            MaskKind::SmoothmixS => MaskProfile::SmoothRect,
            MaskKind::Cutmix => MaskProfile::HardRect,
            MaskKind::SmoothmixC => MaskProfile::SmoothDisk,
            MaskKind::MixupPatch => MaskProfile::Blend {
                lambda: rng.random_range(MIXUP_LAMBDA.0..=MIXUP_LAMBDA.1),
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::SmoothmixS => "smoothmix_s",
            MaskKind::Cutmix => "cutmix",
            MaskKind::SmoothmixC => "smoothmix_c",
            MaskKind::MixupPatch => "mixup_patch",
        }
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mask kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskProfile {
    SmoothRect,
    HardRect,
    SmoothDisk,
    Blend { lambda: f32 },
}

impl MaskProfile {
    pub fn kind(self) -> MaskKind {
        match self {
            MaskProfile::SmoothRect => MaskKind::SmoothmixS,
            MaskProfile::HardRect => MaskKind::Cutmix,
            MaskProfile::SmoothDisk => MaskKind::SmoothmixC,
            MaskProfile::Blend { .. } => MaskKind::MixupPatch,
        }
    }

    /// Mask value at the patch centre.
    pub fn peak(self) -> f32 {
        match self {
            MaskProfile::Blend { lambda } => lambda,
            _ => 1.0,
        }
    }
}

/// Per-pixel blend weights in `[0, 1]` for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Mask {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` a patch of `size` centred at
/// `center` occupies, before clipping to the frame.
pub fn patch_bounds(center: (usize, usize), size: (usize, usize)) -> (i64, i64, i64, i64) {
    let x0 = center.0 as i64 - (size.0 / 2) as i64;
    let y0 = center.1 as i64 - (size.1 / 2) as i64;
    (x0, y0, x0 + size.0 as i64, y0 + size.1 as i64)
}

fn raised_cosine(u: f32) -> f32 {
    let core = 1.0 - SMOOTH_RAMP;
    if u <= core {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f32::consts::PI * (u - core) / SMOOTH_RAMP).cos())
    }
}

/// Builds the mask of a `size = (w, h)` patch centred on pixel `center` in a
/// `frame = (W, H)` frame. The mask is zero outside [`patch_bounds`] and is
/// clipped at the frame border.
pub fn build_mask(
    profile: MaskProfile,
    center: (usize, usize),
    size: (usize, usize),
    frame: (usize, usize),
) -> Result<Mask> {
    let (w, h) = size;
    let (fw, fh) = frame;
    if w == 0 || h == 0 || w > fw || h > fh || center.0 >= fw || center.1 >= fh {
        return Err(Error::MaskBounds {
            width: w,
            height: h,
            cx: center.0,
            cy: center.1,
            frame_width: fw,
            frame_height: fh,
        });
    }
    let (x0, y0, x1, y1) = patch_bounds(center, size);
    let mut values = vec![0.0f32; fw * fh];
    // continuous rectangle centre, in pixel-edge coordinates
    let rect_cx = x0 as f32 + w as f32 / 2.0;
    let rect_cy = y0 as f32 + h as f32 / 2.0;
    // disk centre sits on the centre pixel so that its value is exactly 1
    let disk_cx = center.0 as f32 + 0.5;
    let disk_cy = center.1 as f32 + 0.5;
    let radius = w.min(h) as f32 / 2.0;
    let sigma = radius / 2.0;
    let floor = (-(radius * radius) / (2.0 * sigma * sigma)).exp();
    for y in y0.max(0)..y1.min(fh as i64) {
        for x in x0.max(0)..x1.min(fw as i64) {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let m = match profile {
                MaskProfile::HardRect => 1.0,
                MaskProfile::Blend { lambda } => lambda,
                MaskProfile::SmoothRect => {
                    let u = (px - rect_cx).abs() / (w as f32 / 2.0);
                    let v = (py - rect_cy).abs() / (h as f32 / 2.0);
                    raised_cosine(u) * raised_cosine(v)
                }
                MaskProfile::SmoothDisk => {
                    let d2 = (px - disk_cx).powi(2) + (py - disk_cy).powi(2);
                    if d2 >= radius * radius {
                        0.0
                    } else {
                        ((-d2 / (2.0 * sigma * sigma)).exp() - floor) / (1.0 - floor)
                    }
                }
            };
            values[y as usize * fw + x as usize] = m.clamp(0.0, 1.0);
        }
    }
    Ok(Mask {
        width: fw,
        height: fh,
        values,
    })
}
