//! Silhouette rendering and the mask-based alignment terms: Dice overlap,
//! boundary distance-transform loss and the pluggable perceptual term.

mod edt;
mod perceptual;
mod pgm;
mod raster;

pub use edt::{boundary_pixels, distance_transform, edge_distance_field};
pub use perceptual::{
    perceptual_loss, FeatureMap, IdentityExtractor, PerceptualExtractor, RgbImage,
};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use raster::{rasterize_silhouette, SUBSAMPLES_PER_AXIS};
pub(crate) use raster::{rasterize_with_bounds, PixelRect};


use crate::error::{Error, Result};

/// Stabilizer shared by the Dice and distance-transform losses.
pub const LOSS_EPSILON: f64 = 1e-7;

/// Per-pixel values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "{} values for a {width}×{height} mask",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidMask(format!(
                "value {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Callers guarantee the length and the `[0, 1]` range.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Binary mask from a predicate on pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(if f(x, y) { 1.0 } else { 0.0 });
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Threshold at 0.5 into a 0/1 mask.
    pub fn binarized(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    fn check_same_size(&self, w: usize, h: usize, what: &str) -> Result<()> {
        if self.width != w || self.height != h {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}×{} vs {w}×{h}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Euclidean distance (pixels) to the nearest boundary pixel of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DistanceField {
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn from_mask(mask: &Mask) -> Result<Self> {
        distance_transform(mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// `1 − 2Σα̂M / (Σα̂ + ΣM + ε)`.
pub fn dice_loss(rendered: &Mask, observed: &Mask) -> Result<f64> {
    rendered.check_same_size(observed.width, observed.height, "dice_loss")?;
    let mut inter = 0.0;
    let mut sum_r = 0.0;
    let mut sum_o = 0.0;
    for (&a, &m) in rendered.values.iter().zip(&observed.values) {
        inter += a * m;
        sum_r += a;
        sum_o += m;
    }
    Ok(1.0 - 2.0 * inter / (sum_r + sum_o + LOSS_EPSILON))
}

/// Central-difference gradient magnitude of a mask, replicating the border.
pub fn gradient_magnitude(mask: &Mask) -> Vec<f64> {
    let (w, h) = (mask.width, mask.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = 0.5 * (mask.get(xr, y) - mask.get(xl, y));
            let gy = 0.5 * (mask.get(x, yd) - mask.get(x, yu));
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// `Σ‖∇α̂‖·D / (Σ‖∇α̂‖ + ε)`. A rendered mask without edges scores 0 and
/// logs a warning.
pub fn dt_loss(rendered: &Mask, gt_field: &DistanceField) -> Result<f64> {
    rendered.check_same_size(gt_field.width, gt_field.height, "dt_loss")?;
    let grad = gradient_magnitude(rendered);
    let mut num = 0.0;
    let mut den = 0.0;
    for (g, d) in grad.iter().zip(&gt_field.values) {
        num += g * d;
        den += g;
    }
    if den == 0.0 {
        log::warn!("dt_loss: rendered mask has no edges; returning 0");
        return Ok(0.0);
    }
    Ok(num / (den + LOSS_EPSILON))
}

/// [`dice_loss`] for a mask whose nonzero pixels lie in `bounds`, given
/// the observed mask's full sum. Skipping exact zeros and keeping row-major
/// order reproduces the full-image sums bit for bit.
pub(crate) fn dice_loss_within(
    rendered: &Mask,
    bounds: Option<PixelRect>,
    observed: &Mask,
    observed_sum: f64,
) -> f64 {
    let mut inter = 0.0;
    let mut sum_r = 0.0;
    if let Some(r) = bounds {
        let w = rendered.width;
        for y in r.y0..=r.y1 {
            let row = y * w;
            for i in row + r.x0..=row + r.x1 {
                let a = rendered.values[i];
                inter += a * observed.values[i];
                sum_r += a;
            }
        }
    }
    1.0 - 2.0 * inter / (sum_r + observed_sum + LOSS_EPSILON)
}

/// [`dt_loss`] for a mask whose nonzero pixels lie in `bounds`; the
/// gradient vanishes outside the box grown by one pixel.
pub(crate) fn dt_loss_within(rendered: &Mask, bounds: Option<PixelRect>, field: &DistanceField) -> f64 {
    let (w, h) = (rendered.width, rendered.height);
    let mut num = 0.0;
    let mut den = 0.0;
    if let Some(r) = bounds {
        let r = r.grown(1, w, h);
        for y in r.y0..=r.y1 {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in r.x0..=r.x1 {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let gx = 0.5 * (rendered.get(xr, y) - rendered.get(xl, y));
                let gy = 0.5 * (rendered.get(x, yd) - rendered.get(x, yu));
                let g = (gx * gx + gy * gy).sqrt();
                num += g * field.values[y * w + x];
                den += g;
            }
        }
    }
    if den == 0.0 {
        log::warn!("dt_loss: rendered mask has no edges; returning 0");
        return 0.0;
    }
    num / (den + LOSS_EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_restricted_losses_are_bit_identical() {
        use crate::geom::{CameraIntrinsics, Pose, Rotation};
        use crate::mesh::primitives::ellipsoid;
        use nalgebra::Vector3;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::new(90.0, 90.0, 20.0, 16.0, 40, 32).unwrap();
        let body = ellipsoid(Vector3::new(0.1, 0.06, 0.04), 12, 16);
        let observed = Mask::from_fn(40, 32, |x, y| (x * 7 + y * 3) % 11 < 6);
        let field = edge_distance_field(&observed).unwrap();
        let observed_sum: f64 = observed.values().iter().sum();
        for i in 0..30 {
            let t = Vector3::new(0.02 * (i % 5) as f64 - 0.04, 0.0, 0.5 + 0.1 * (i % 7) as f64);
            // some poses push the silhouette over the image border
            let t = if i % 6 == 0 { t + Vector3::new(0.2, 0.1, 0.0) } else { t };
            let pose = Pose::new(Rotation::random(&mut rng), t);
            let (m, bounds) = rasterize_with_bounds(&body, &pose, &k).unwrap();
            assert_eq!(
                dice_loss_within(&m, bounds, &observed, observed_sum),
                dice_loss(&m, &observed).unwrap()
            );
            assert_eq!(dt_loss_within(&m, bounds, &field), dt_loss(&m, &field).unwrap());
        }
        let far = Pose::new(Rotation::identity(), Vector3::new(5.0, 0.0, 1.0));
        let (m, bounds) = rasterize_with_bounds(&body, &far, &k).unwrap();
        assert!(bounds.is_none());
        assert_eq!(dice_loss_within(&m, bounds, &observed, observed_sum), dice_loss(&m, &observed).unwrap());
        assert_eq!(dt_loss_within(&m, bounds, &field), 0.0);
    }

    fn square(w: usize, x0: usize, y0: usize, size: usize) -> Mask {
        Mask::from_fn(w, w, |x, y| {
            (x0..x0 + size).contains(&x) && (y0..y0 + size).contains(&y)
        })
    }

    #[test]
    fn mask_validation() {
        assert!(Mask::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Mask::new(1, 1, vec![1.5]).is_err());
        assert!(Mask::new(1, 1, vec![0.25]).is_ok());
    }

    #[test]
    fn dice_examples() {
        let a = square(32, 5, 5, 10);
        assert!(dice_loss(&a, &a).unwrap() <= 1e-8);
        let far = square(32, 20, 20, 10);
        assert!((dice_loss(&a, &far).unwrap() - 1.0).abs() < 1e-12);
        let shifted = square(32, 10, 5, 10);
        // 50 px overlap, 100 px each
        assert!((dice_loss(&a, &shifted).unwrap() - 0.5).abs() < 1e-8);
        assert!(dice_loss(&a, &Mask::zeros(31, 32)).is_err());
    }

    #[test]
    fn dice_is_bounded_and_symmetric_on_binary_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = rng.random_range(0.05..0.95);
            let q = rng.random_range(0.05..0.95);
            let a = Mask::from_fn(12, 9, |_, _| rng.random::<f64>() < p);
            let b = Mask::from_fn(12, 9, |_, _| rng.random::<f64>() < q);
            let ab = dice_loss(&a, &b).unwrap();
            assert!((0.0..=1.0).contains(&ab));
            assert_eq!(ab, dice_loss(&b, &a).unwrap());
        }
    }

    #[test]
    fn dt_loss_small_when_edges_coincide() {
        // A binary step puts half its gradient mass on the inner side of the
        // edge (boundary pixels, D = 0) and half on the outer side (D = 1).
        let gt = Mask::from_fn(40, 12, |x, _| x >= 20);
        let field = distance_transform(&gt).unwrap();
        let l = dt_loss(&gt, &field).unwrap();
        assert!(l <= 0.5, "{l}");
        let l = dt_loss(&square(40, 10, 10, 20), &distance_transform(&square(40, 10, 10, 20)).unwrap()).unwrap();
        assert!(l < 0.51, "{l}");
        let flat = Mask::new(40, 12, vec![0.5; 480]).unwrap();
        assert_eq!(dt_loss(&flat, &field).unwrap(), 0.0);
    }

    #[test]
    fn dt_loss_zero_on_two_sided_edge_field() {
        let gt = square(40, 10, 10, 20);
        let field = edge_distance_field(&gt).unwrap();
        assert_eq!(dt_loss(&gt, &field).unwrap(), 0.0);
        // straight edge 3 px inside: gradient mass at D = 2 and D = 3
        let gt = Mask::from_fn(48, 16, |x, _| x >= 20);
        let field = edge_distance_field(&gt).unwrap();
        let l = dt_loss(&Mask::from_fn(48, 16, |x, _| x >= 23), &field).unwrap();
        assert_eq!(l, 40.0 / (16.0 + LOSS_EPSILON));
        assert!((l - 3.0).abs() <= 0.5 + 1e-6, "{l}");
        // inset square: corners sit closer to the outline than the sides
        let field = edge_distance_field(&square(40, 10, 10, 20)).unwrap();
        let l = dt_loss(&square(40, 13, 13, 14), &field).unwrap();
        assert!(l > 2.45 && l < 2.5, "{l}");
    }

    #[test]
    fn dt_loss_edge_offset_three_pixels() {
        // GT foreground x ≥ 20 over the full height: one vertical boundary
        // through pixel centers x = 20.
        let gt = Mask::from_fn(48, 16, |x, _| x >= 20);
        let field = distance_transform(&gt).unwrap();
        // rendered edge at x = 22.5: mass 8 at D = 2 and 8 at D = 3
        let rendered = Mask::from_fn(48, 16, |x, _| x >= 23);
        let l = dt_loss(&rendered, &field).unwrap();
        assert_eq!(l, 40.0 / (16.0 + LOSS_EPSILON));
        assert!((l - 3.0).abs() <= 0.5 + 1e-6, "{l}");
        let rendered = Mask::from_fn(48, 16, |x, _| x >= 17);
        let l = dt_loss(&rendered, &field).unwrap();
        assert!((l - 3.0).abs() <= 0.5 + 1e-6, "{l}");
        // concentric squares 3 px apart: the straight-edge value 2.5, pulled
        // slightly down by the four corners
        let gt = square(48, 12, 12, 24);
        let field = distance_transform(&gt).unwrap();
        let l = dt_loss(&square(48, 15, 15, 18), &field).unwrap();
        assert!(l < 2.5 && l > 2.45, "{l}");
    }

    #[test]
    fn dt_loss_blank_mask_is_zero() {
        let field = distance_transform(&square(16, 4, 4, 6)).unwrap();
        assert_eq!(dt_loss(&Mask::zeros(16, 16), &field).unwrap(), 0.0);
        assert!(dt_loss(&Mask::zeros(15, 16), &field).is_err());
    }

    #[test]
    fn dt_loss_is_non_negative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let gt = square(24, 6, 6, 10);
        let field = distance_transform(&gt).unwrap();
        for _ in 0..50 {
            let vals = (0..24 * 24).map(|_| rng.random::<f64>()).collect();
            let m = Mask::new(24, 24, vals).unwrap();
            assert!(dt_loss(&m, &field).unwrap() >= 0.0);
        }
    }
}
