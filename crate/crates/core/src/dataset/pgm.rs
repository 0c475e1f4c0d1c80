//! Binary portable graymap (P5) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Quantizes `[0, 1]` intensities to 8 bits (values outside are clamped).
    pub fn from_unit(width: usize, height: usize, values: &[f32]) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            pixels: values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn to_unit(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| f32::from(p) / 255.0).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Image {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut pos = 0;
        let mut fields = [0usize; 3];
        if bytes.get(..2) != Some(b"P5") {
            return Err(bad("not a binary graymap (missing P5 magic)"));
        }
        pos += 2;
        for field in fields.iter_mut() {
            // whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => return Err(bad("truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("malformed header field"))?;
        }
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit graymaps are supported"));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(bad("missing separator before raster"));
        }
        pos += 1;
        let raster = &bytes[pos..];
        if raster.len() < width * height {
            return Err(bad("raster shorter than width x height"));
        }
        let mut pixels = raster[..width * height].to_vec();
        if maxval != 255 {
            for p in &mut pixels {
                *p = ((u32::from(*p) * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8;
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear resampling of a single-channel `[0, 1]` image.
pub fn resize_bilinear(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let mut out = vec![0.0; dw * dh];
    let sx = sw as f32 / dw as f32;
    let sy = sh as f32 / dh as f32;
    for y in 0..dh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f32;
        for x in 0..dw {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bottom = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out[y * dw + x] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}
