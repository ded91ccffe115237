use serde::{Deserialize, Serialize};

use super::Rect;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 2.0;

/// How the center distance enters the Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNormalization {
    /// Raw Euclidean pixel distance.
    #[default]
    Pixels,
    /// Distance divided by half the bbox diagonal.
    BboxRelative,
}

/// Soft per-pixel attention for one bounding box, row-major `H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub bbox: Rect,
    pub sigma: f64,
}

impl AttentionMask {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    /// Mask values as `f32`, for stacking with image channels.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&x| x as f32).collect()
    }

    pub fn mirrored(&self) -> AttentionMask {
        let mut values = vec![0.0; self.values.len()];
        for v in 0..self.height {
            for u in 0..self.width {
                values[v * self.width + (self.width - 1 - u)] = self.values[v * self.width + u];
            }
        }
        AttentionMask { values, bbox: self.bbox.mirrored(self.width as i32), ..self.clone() }
    }
}

/// Gaussian distance transform around the bbox center:
/// `a(u,v) = 1/(σ√(2π)) · exp(−½((1 − d_uv)/σ)²)`.
///
/// Values are floored at the smallest normal `f32` so they stay strictly
/// positive after conversion.
pub fn attention_mask(
    bbox: Rect,
    width: usize,
    height: usize,
    sigma: f64,
    normalization: DistanceNormalization,
) -> Result<AttentionMask> {
    if bbox.is_degenerate() {
        return Err(Error::InvalidArgument(format!("degenerate bbox {bbox:?}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let image = Rect::new(0, 0, width as i32, height as i32);
    if width == 0 || height == 0 || !image.contains_rect(&bbox) {
        return Err(Error::InvalidArgument(format!("bbox {bbox:?} outside {width}x{height} image")));
    }
    let (cx, cy) = bbox.center();
    let scale = match normalization {
        DistanceNormalization::Pixels => 1.0,
        DistanceNormalization::BboxRelative => 0.5 * (bbox.w as f64).hypot(bbox.h as f64),
    };
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let floor = f32::MIN_POSITIVE as f64;
    let mut values = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let d = (u as f64 - cx).hypot(v as f64 - cy) / scale;
            let z = (1.0 - d) / sigma;
            values.push((norm * (-0.5 * z * z).exp()).max(floor));
        }
    }
    Ok(AttentionMask { width, height, values, bbox, sigma })
}

/// 1 inside the bbox, 0 elsewhere.
pub fn binary_mask(bbox: Rect, width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0; width * height];
    for v in 0..height {
        for u in 0..width {
            if bbox.contains(u as i32, v as i32) {
                out[v * width + u] = 1.0;
            }
        }
    }
    out
}
