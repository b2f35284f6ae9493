//! Coverage rasterizer for silhouettes.
//!
//! Each pixel carries a 4×4 grid of sample points at offsets
//! `(k + 0.5) / 4`; a sample is covered when it lies inside (or on an edge
//! of) any triangle whose three vertices are in front of the camera. The
//! pixel value is the covered fraction, so fully interior pixels are exactly
//! 1 and pixels no triangle touches are exactly 0. No depth ordering is
//! needed for a silhouette.

use nalgebra::{Point2, Vector3};

use super::Mask;
use crate::error::{Error, Result};
use crate::geom::{project, CameraIntrinsics, Pose};
use crate::mesh::TriMesh;

pub const SUBSAMPLES_PER_AXIS: usize = 4;
const SUBSAMPLES: u32 = (SUBSAMPLES_PER_AXIS * SUBSAMPLES_PER_AXIS) as u32;
const NEAR: f64 = 1e-9;

/// Inclusive pixel rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    fn include(r: &mut Option<PixelRect>, x0: usize, x1: usize, y: usize) {
        match r {
            None => *r = Some(PixelRect { x0, y0: y, x1, y1: y }),
            Some(r) => {
                r.x0 = r.x0.min(x0);
                r.x1 = r.x1.max(x1);
                r.y0 = r.y0.min(y);
                r.y1 = r.y1.max(y);
            }
        }
    }

    /// Grown by `m` pixels, clipped to a `w × h` image.
    pub fn grown(&self, m: usize, w: usize, h: usize) -> PixelRect {
        PixelRect {
            x0: self.x0.saturating_sub(m),
            y0: self.y0.saturating_sub(m),
            x1: (self.x1 + m).min(w - 1),
            y1: (self.y1 + m).min(h - 1),
        }
    }
}

/// Directed triangle edge, reduced to what the row test needs.
#[derive(Clone, Copy)]
struct Edge {
    origin: Point2<f64>,
    /// dx/dy; unused for horizontal edges.
    slope: f64,
    /// Sign of dy, or of dx for horizontal edges.
    dy_sign: f64,
    horizontal: bool,
}

impl Edge {
    fn new(p: Point2<f64>, q: Point2<f64>) -> Self {
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        if dy == 0.0 {
            Self {
                origin: p,
                slope: 0.0,
                dy_sign: dx.signum(),
                horizontal: true,
            }
        } else {
            Self {
                origin: p,
                slope: dx / dy,
                dy_sign: dy.signum(),
                horizontal: false,
            }
        }
    }
}

/// Edges of a counter-clockwise (pixel coordinates) triangle.
fn triangle_edges(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> [Edge; 3] {
    [Edge::new(a, b), Edge::new(b, c), Edge::new(c, a)]
}

/// Sample x-range `[lo, hi]` a triangle covers on the row at `py`: the
/// samples on the inner side of, or exactly on, every edge.
fn row_interval(edges: &[Edge; 3], py: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for e in edges {
        if e.horizontal {
            // inner side lies below a rightward edge
            if e.dy_sign * (py - e.origin.y) < 0.0 {
                return None;
            }
            continue;
        }
        let x = e.origin.x + e.slope * (py - e.origin.y);
        if e.dy_sign > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Renders the silhouette of `mesh` posed by `pose` (object → camera).
pub fn rasterize_silhouette(mesh: &TriMesh, pose: &Pose, k: &CameraIntrinsics) -> Result<Mask> {
    Ok(rasterize_with_bounds(mesh, pose, k)?.0)
}

/// [`rasterize_silhouette`] plus the rectangle holding every nonzero pixel
/// (`None` when nothing is covered).
pub(crate) fn rasterize_with_bounds(
    mesh: &TriMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<(Mask, Option<PixelRect>)> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let cam: Vec<Vector3<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| pose.transform_point(v))
        .collect();
    if !cam.iter().any(|p| p.z > NEAR) {
        return Err(Error::FullyBehindCamera);
    }
    let px: Vec<Option<Point2<f64>>> = cam.iter().map(|p| project(p, k).ok()).collect();

    let (w, h) = (k.width, k.height);
    let mut bits = vec![0u16; w * h];
    let mut bounds: Option<PixelRect> = None;
    let s = SUBSAMPLES_PER_AXIS as f64;
    let (sw, sh) = ((w * SUBSAMPLES_PER_AXIS) as i64, (h * SUBSAMPLES_PER_AXIS) as i64);

    for tri in mesh.triangles() {
        let (a, b, c) = match (px[tri[0]], px[tri[1]], px[tri[2]]) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue,
        };
        let area2 = (b - a).perp(&(c - a));
        if !(area2.abs() > 0.0) {
            continue;
        }
        // Counter-clockwise in pixel coordinates so inside means E ≥ 0.
        let (b, c) = if area2 > 0.0 { (b, c) } else { (c, b) };
        let edges = triangle_edges(a, b, c);
        let min_y = a.y.min(b.y).min(c.y);
        let max_y = a.y.max(b.y).max(c.y);
        let min_x = a.x.min(b.x).min(c.x);
        let max_x = a.x.max(b.x).max(c.x);
        // sample index i sits at (i + 0.5) / s
        let sx0 = ((min_x * s - 0.5).ceil() as i64 - 1).max(0);
        let sx1 = ((max_x * s - 0.5).floor() as i64 + 1).min(sw - 1);
        let sy0 = ((min_y * s - 0.5).ceil() as i64 - 1).max(0);
        let sy1 = ((max_y * s - 0.5).floor() as i64 + 1).min(sh - 1);
        if sx0 > sx1 || sy0 > sy1 {
            continue;
        }
        let sample = |i: i64| (i as f64 + 0.5) / s;

        for sy in sy0..=sy1 {
            let Some((xl, xr)) = row_interval(&edges, sample(sy)) else {
                continue;
            };
            let mut lo = ((xl * s - 0.5).ceil().max(sx0 as f64 - 1.0) as i64).clamp(sx0, sx1 + 1);
            while lo > sx0 && sample(lo - 1) >= xl {
                lo -= 1;
            }
            while lo <= sx1 && sample(lo) < xl {
                lo += 1;
            }
            let mut hi = ((xr * s - 0.5).floor().min(sx1 as f64 + 1.0) as i64).clamp(sx0 - 1, sx1);
            while hi < sx1 && sample(hi + 1) <= xr {
                hi += 1;
            }
            while hi >= sx0 && sample(hi) > xr {
                hi -= 1;
            }
            if lo > hi {
                continue;
            }
            let y = sy as usize / SUBSAMPLES_PER_AXIS;
            let row = y * w;
            let bit_row = (sy as usize % SUBSAMPLES_PER_AXIS) * SUBSAMPLES_PER_AXIS;
            let (lo, hi) = (lo as usize, hi as usize);
            let (p_lo, p_hi) = (lo / SUBSAMPLES_PER_AXIS, hi / SUBSAMPLES_PER_AXIS);
            let row_bits = |from: usize, to: usize| -> u16 {
                (((1u32 << (to - from + 1)) - 1) << (bit_row + from)) as u16
            };
            let last = SUBSAMPLES_PER_AXIS - 1;
            if p_lo == p_hi {
                bits[row + p_lo] |= row_bits(lo % SUBSAMPLES_PER_AXIS, hi % SUBSAMPLES_PER_AXIS);
            } else {
                bits[row + p_lo] |= row_bits(lo % SUBSAMPLES_PER_AXIS, last);
                let full = row_bits(0, last);
                for b in &mut bits[row + p_lo + 1..row + p_hi] {
                    *b |= full;
                }
                bits[row + p_hi] |= row_bits(0, hi % SUBSAMPLES_PER_AXIS);
            }
            PixelRect::include(
                &mut bounds,
                p_lo,
                p_hi,
                y,
            );
        }
    }

    let values = bits
        .into_iter()
        .map(|b| b.count_ones() as f64 / SUBSAMPLES as f64)
        .collect();
    Ok((Mask::from_raw(w, h, values), bounds))
}

/// Reference rasterizer: tests every sample in the triangle's bounding box.
#[cfg(test)]
fn rasterize_brute_force(mesh: &TriMesh, pose: &Pose, k: &CameraIntrinsics) -> Mask {
    let (w, h) = (k.width, k.height);
    let mut bits = vec![0u16; w * h];
    let s = SUBSAMPLES_PER_AXIS as f64;
    let px: Vec<Option<Point2<f64>>> = mesh
        .vertices()
        .iter()
        .map(|v| project(&pose.transform_point(v), k).ok())
        .collect();
    for tri in mesh.triangles() {
        let (a, b, c) = match (px[tri[0]], px[tri[1]], px[tri[2]]) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue,
        };
        let area2 = (b - a).perp(&(c - a));
        if !(area2.abs() > 0.0) {
            continue;
        }
        let (b, c) = if area2 > 0.0 { (b, c) } else { (c, b) };
        let edges = triangle_edges(a, b, c);
        for sy in 0..h * SUBSAMPLES_PER_AXIS {
            for sx in 0..w * SUBSAMPLES_PER_AXIS {
                let (x, y) = ((sx as f64 + 0.5) / s, (sy as f64 + 0.5) / s);
                if row_interval(&edges, y).is_some_and(|(lo, hi)| lo <= x && x <= hi) {
                    let bit = (sy % SUBSAMPLES_PER_AXIS) * SUBSAMPLES_PER_AXIS + sx % SUBSAMPLES_PER_AXIS;
                    bits[(sy / SUBSAMPLES_PER_AXIS) * w + sx / SUBSAMPLES_PER_AXIS] |= 1 << bit;
                }
            }
        }
    }
    Mask::from_raw(
        w,
        h,
        bits.into_iter().map(|b| b.count_ones() as f64 / SUBSAMPLES as f64).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;
    use crate::mesh::primitives::{icosphere, rectangle};

    fn camera() -> CameraIntrinsics {
        // 1 m depth: one pixel = 1/100 m
        CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 40, 30).unwrap()
    }

    #[test]
    fn axis_aligned_square_fills_exact_pixels() {
        let sq = rectangle(0.10, 0.20, 0.10, 0.20, 1.0);
        let m = rasterize_silhouette(&sq, &Pose::identity(), &camera()).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                let inside = (10..20).contains(&x) && (10..20).contains(&y);
                assert_eq!(m.get(x, y), if inside { 1.0 } else { 0.0 }, "({x},{y})");
            }
        }
        assert_eq!(m.sum(), 100.0);
    }

    #[test]
    fn one_pixel_translation_shifts_mask() {
        let sq = rectangle(0.103, 0.187, 0.052, 0.141, 1.0);
        let k = camera();
        let a = rasterize_silhouette(&sq, &Pose::identity(), &k).unwrap();
        let b = rasterize_silhouette(
            &sq,
            &Pose::from_translation(Vector3::new(0.01, 0.0, 0.0)),
            &k,
        )
        .unwrap();
        for y in 0..30 {
            assert_eq!(b.get(0, y), 0.0);
            for x in 1..40 {
                assert_eq!(b.get(x, y), a.get(x - 1, y), "({x},{y})");
            }
        }
    }

    #[test]
    fn spans_match_per_sample_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let k = CameraIntrinsics::new(60.0, 60.0, 12.0, 10.0, 24, 20).unwrap();
        for _ in 0..40 {
            let sphere = icosphere(rng.random_range(0.05..0.2), 1);
            let pose = Pose::new(
                Rotation::random(&mut rng),
                Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 1.0),
            );
            let (fast, rect) = rasterize_with_bounds(&sphere, &pose, &k).unwrap();
            assert_eq!(fast, rasterize_brute_force(&sphere, &pose, &k));
            let rect = rect.unwrap();
            for y in 0..20 {
                for x in 0..24 {
                    let inside = (rect.x0..=rect.x1).contains(&x) && (rect.y0..=rect.y1).contains(&y);
                    assert!(inside || fast.get(x, y) == 0.0);
                }
            }
        }
        // edges through sample points exercise the inclusive tie rule
        let sq = rectangle(0.0125, 0.1375, 0.0375, 0.1125, 1.0);
        let k = camera();
        assert_eq!(
            rasterize_silhouette(&sq, &Pose::identity(), &k).unwrap(),
            rasterize_brute_force(&sq, &Pose::identity(), &k)
        );
    }

    #[test]
    fn behind_camera_is_an_error() {
        let sq = rectangle(0.1, 0.2, 0.1, 0.2, -1.0);
        assert!(matches!(
            rasterize_silhouette(&sq, &Pose::identity(), &camera()),
            Err(Error::FullyBehindCamera)
        ));
    }

    #[test]
    fn interior_one_exterior_zero_edges_fractional() {
        let k = CameraIntrinsics::new(200.0, 200.0, 32.0, 32.0, 64, 64).unwrap();
        let sphere = icosphere(0.1, 3);
        let pose = Pose::new(Rotation::rot_x(0.3), Vector3::new(0.0, 0.0, 1.0));
        let m = rasterize_silhouette(&sphere, &pose, &k).unwrap();
        let mut fractional = 0;
        for y in 0..64 {
            for x in 0..64 {
                let v = m.get(x, y);
                let r = ((x as f64 + 0.5 - 32.0).powi(2) + (y as f64 + 0.5 - 32.0).powi(2)).sqrt();
                // projected radius ≈ 200·0.1/√(1 − 0.01) ≈ 20.1 px
                if r < 18.0 {
                    assert_eq!(v, 1.0);
                } else if r > 22.0 {
                    assert_eq!(v, 0.0);
                } else if v > 0.0 && v < 1.0 {
                    fractional += 1;
                }
            }
        }
        assert!(fractional > 50);
    }

    #[test]
    fn partially_behind_camera_still_renders() {
        let k = CameraIntrinsics::new(100.0, 100.0, 20.0, 15.0, 40, 30).unwrap();
        let near = rectangle(-0.05, 0.05, -0.05, 0.05, 1.0);
        let far_behind = rectangle(-0.05, 0.05, -0.05, 0.05, -1.0);
        let mut v = near.vertices().to_vec();
        v.extend_from_slice(far_behind.vertices());
        let mesh = TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [1, 5, 6]]).unwrap();
        let m = rasterize_silhouette(&mesh, &Pose::identity(), &k).unwrap();
        // the square survives; the triangles touching z < 0 are dropped
        assert_eq!(m.sum(), 100.0);
    }
}
