//! Injection point for a feature-space image comparison.
//!
//! No pretrained network ships with this crate. Callers that have one wrap
//! it in [`PerceptualExtractor`]; [`IdentityExtractor`] compares raw pixels
//! and exists for testing the plumbing.

use super::Mask;
use crate::error::{Error, Result};

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    /// Per-pixel product with a (soft) mask.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "mask {}×{} vs image {}×{}",
                mask.width(),
                mask.height(),
                self.width,
                self.height
            )));
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .zip(mask.values())
                .map(|(p, &m)| [p[0] * m, p[1] * m, p[2] * m])
                .collect(),
        })
    }
}

/// Feature map of one layer: `channels` values per spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    /// Size of the spatial domain.
    pub fn spatial_size(&self) -> usize {
        self.width * self.height
    }
}

pub trait PerceptualExtractor: Send + Sync {
    fn layer_count(&self) -> usize;
    /// Must be deterministic and return equal shapes for equal input shapes.
    fn features(&self, layer: usize, image: &RgbImage) -> FeatureMap;
}

/// One layer whose features are the raw RGB values.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl PerceptualExtractor for IdentityExtractor {
    fn layer_count(&self) -> usize {
        1
    }

    fn features(&self, _layer: usize, image: &RgbImage) -> FeatureMap {
        FeatureMap {
            width: image.width,
            height: image.height,
            channels: 3,
            data: image.pixels.iter().flatten().copied().collect(),
        }
    }
}

/// `Σ_ℓ (1/|Ω_ℓ|)·‖φ_ℓ(rendered) − φ_ℓ(mask ⊙ observed)‖₁`.
pub fn perceptual_loss(
    extractor: Option<&dyn PerceptualExtractor>,
    rendered: &RgbImage,
    observed: &RgbImage,
    mask: &Mask,
) -> Result<f64> {
    let extractor = extractor.ok_or(Error::ExtractorUnavailable)?;
    if rendered.width != observed.width || rendered.height != observed.height {
        return Err(Error::DimensionMismatch(format!(
            "rendered {}×{} vs observed {}×{}",
            rendered.width, rendered.height, observed.width, observed.height
        )));
    }
    let target = observed.masked(mask)?;
    let mut total = 0.0;
    for layer in 0..extractor.layer_count() {
        let a = extractor.features(layer, rendered);
        let b = extractor.features(layer, &target);
        if a.data.len() != b.data.len() || a.spatial_size() != b.spatial_size() {
            return Err(Error::DimensionMismatch(format!(
                "layer {layer} produced differently shaped features"
            )));
        }
        let l1: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
        total += l1 / a.spatial_size().max(1) as f64;
    }
    Ok(total)
}
