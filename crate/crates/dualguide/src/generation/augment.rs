//! Random crop and rotation for guide images.
//!
//! The draw order from the stream is fixed (area fraction, crop x, crop y,
//! angle), so a fixed stream position reproduces the exact output. The
//! augmented image is resized back to the input dimensions; callers hand in
//! images already at the backend's input size.

use image::{DynamicImage, Rgba, RgbaImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Crop area fraction range, a subrange of (0, 1].
    pub crop_scale_range: (f64, f64),
    /// Maximum absolute rotation in degrees.
    pub rotation_degrees: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            crop_scale_range: (0.7, 1.0),
            rotation_degrees: 15.0,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop_scale_range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return Err(Error::Config(format!(
                "rotation_degrees must be >= 0, got {}",
                self.rotation_degrees
            )));
        }
        Ok(())
    }
}

/// Parameters actually drawn for one augmentation; recorded in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedAugmentation {
    pub crop_area_fraction: f64,
    pub rotation_degrees: f64,
}

/// Random crop (area fraction within the configured range) followed by a
/// uniform rotation within the configured bound, resized back to the input
/// dimensions. Disabled configs pass the image through bit-identically.
pub fn augment(
    image: &DynamicImage,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Result<(DynamicImage, Option<AppliedAugmentation>)> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok((image.clone(), None));
    }
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot augment an empty image"));
    }

    let (lo, hi) = cfg.crop_scale_range;
    let area: f64 = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let side = area.sqrt();
    let cw = ((w as f64 * side).round() as u32).clamp(1, w);
    let ch = ((h as f64 * side).round() as u32).clamp(1, h);
    let x0 = if cw < w { rng.random_range(0..=(w - cw)) } else { 0 };
    let y0 = if ch < h { rng.random_range(0..=(h - ch)) } else { 0 };

    let angle = if cfg.rotation_degrees == 0.0 {
        0.0
    } else {
        rng.random_range(-cfg.rotation_degrees..=cfg.rotation_degrees)
    };

    let cropped = image.crop_imm(x0, y0, cw, ch);
    let rotated = if angle == 0.0 {
        cropped
    } else {
        rotate_bilinear(&cropped.to_rgba8(), angle.to_radians())
    };
    let restored = rotated.resize_exact(w, h, image::imageops::FilterType::Triangle);
    Ok((
        restored,
        Some(AppliedAugmentation {
            crop_area_fraction: area,
            rotation_degrees: angle,
        }),
    ))
}

/// Rotate about the image center with bilinear sampling; out-of-bounds
/// source pixels are transparent black.
fn rotate_bilinear(src: &RgbaImage, radians: f64) -> DynamicImage {
    let (w, h) = (src.width(), src.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = radians.sin_cos();
    let mut out = RgbaImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate the output coordinate back into the source
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            out.put_pixel(x, y, sample_bilinear(src, sx, sy));
        }
    }
    DynamicImage::ImageRgba8(out)
}

fn sample_bilinear(src: &RgbaImage, x: f64, y: f64) -> Rgba<u8> {
    let (w, h) = (src.width() as i64, src.height() as i64);
    let x0 = x.floor() as i64;
    let y0 = y.floor() as i64;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;

    let fetch = |px: i64, py: i64| -> [f64; 4] {
        if px < 0 || py < 0 || px >= w || py >= h {
            [0.0; 4]
        } else {
            let p = src.get_pixel(px as u32, py as u32);
            [p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64]
        }
    };

    let p00 = fetch(x0, y0);
    let p10 = fetch(x0 + 1, y0);
    let p01 = fetch(x0, y0 + 1);
    let p11 = fetch(x0 + 1, y0 + 1);

    let mut px = [0u8; 4];
    for c in 0..4 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        px[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgba(px)
}
