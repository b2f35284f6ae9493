//! 2×2×2 lattice deformation over a mesh's bounding box.
//!
//! A deformation is 8 corner displacements, flattened into 24 numbers. Corner
//! `c` has bits `(ix, iy, iz)` with `c = 4·ix + 2·iy + iz`, and occupies
//! entries `3c..3c+3` as `(dx, dy, dz)`. A vertex with normalized box
//! coordinates `t ∈ [0,1]³` moves by `Σ_c w_c(t)·offset_c` where
//! `w_c(t) = Π_a (ix_a ? h(t_a) : 1 − h(t_a))`.
//!
//! With the default quintic blend `h(t) = 6t⁵ − 15t⁴ + 10t³` the field is C²,
//! interpolates the corner offsets at the corners, and the weights always sum
//! to one.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation};
use crate::mesh::{Aabb, TriMesh};

/// Vertices within this distance outside the box are clamped onto it.
pub const BOX_SLACK: f64 = 1e-9;

pub const CORNERS: usize = 8;
pub const PARAMS: usize = 24;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendFunction {
    #[default]
    Quintic,
    Trilinear,
}

impl BlendFunction {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            BlendFunction::Quintic => t * t * t * (t * (t * 6.0 - 15.0) + 10.0),
            BlendFunction::Trilinear => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeDeformation {
    pub offsets: [f64; PARAMS],
}

impl Default for LatticeDeformation {
    fn default() -> Self {
        Self::zero()
    }
}

impl LatticeDeformation {
    pub fn zero() -> Self {
        Self {
            offsets: [0.0; PARAMS],
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let offsets: [f64; PARAMS] = v.try_into().map_err(|_| {
            Error::InvalidDeformation(format!("expected {PARAMS} numbers, got {}", v.len()))
        })?;
        if !offsets.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidDeformation("non-finite offset".into()));
        }
        Ok(Self { offsets })
    }

    pub fn uniform(d: Vector3<f64>) -> Self {
        let mut offsets = [0.0; PARAMS];
        for c in 0..CORNERS {
            offsets[3 * c..3 * c + 3].copy_from_slice(d.as_slice());
        }
        Self { offsets }
    }

    pub fn corner(&self, c: usize) -> Vector3<f64> {
        Vector3::new(
            self.offsets[3 * c],
            self.offsets[3 * c + 1],
            self.offsets[3 * c + 2],
        )
    }

    pub fn set_corner(&mut self, c: usize, d: Vector3<f64>) {
        self.offsets[3 * c..3 * c + 3].copy_from_slice(d.as_slice());
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            offsets: self.offsets.map(|x| x * s),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            offsets: std::array::from_fn(|i| self.offsets[i] + other.offsets[i]),
        }
    }
}

/// Corner bits of corner index `c`.
pub fn corner_bits(c: usize) -> [bool; 3] {
    [c & 4 != 0, c & 2 != 0, c & 1 != 0]
}

/// Blend weights of the 8 corners at normalized coordinates `t`.
pub fn corner_weights(t: &Vector3<f64>, blend: BlendFunction) -> [f64; CORNERS] {
    let h = [blend.eval(t.x), blend.eval(t.y), blend.eval(t.z)];
    std::array::from_fn(|c| {
        let bits = corner_bits(c);
        (0..3)
            .map(|a| if bits[a] { h[a] } else { 1.0 - h[a] })
            .product()
    })
}

/// Normalized coordinates of `v` in `bx`. Zero-extent axes map to 0.
pub fn normalized_coords(v: &Vector3<f64>, bx: &Aabb) -> Option<Vector3<f64>> {
    let ext = bx.extent();
    let mut t = Vector3::zeros();
    for a in 0..3 {
        if v[a] < bx.min[a] - BOX_SLACK || v[a] > bx.max[a] + BOX_SLACK {
            return None;
        }
        let clamped = v[a].clamp(bx.min[a], bx.max[a]);
        t[a] = if ext[a] > 0.0 {
            ((clamped - bx.min[a]) / ext[a]).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    Some(t)
}

/// Displacement of the lattice field at normalized coordinates `t`.
pub fn displacement_at(t: &Vector3<f64>, d: &LatticeDeformation, blend: BlendFunction) -> Vector3<f64> {
    let w = corner_weights(t, blend);
    let mut out = Vector3::zeros();
    for (c, wc) in w.iter().enumerate() {
        out += d.corner(c) * *wc;
    }
    out
}

/// Warps `mesh` with the default quintic blend.
pub fn deform(mesh: &TriMesh, bx: &Aabb, d: &LatticeDeformation) -> Result<TriMesh> {
    deform_with(mesh, bx, d, BlendFunction::Quintic)
}

pub fn deform_with(
    mesh: &TriMesh,
    bx: &Aabb,
    d: &LatticeDeformation,
    blend: BlendFunction,
) -> Result<TriMesh> {
    let moved: Result<Vec<Vector3<f64>>> = mesh
        .vertices()
        .par_iter()
        .enumerate()
        .map(|(index, v)| {
            let t = normalized_coords(v, bx).ok_or(Error::VertexOutsideLattice { index })?;
            Ok(v + displacement_at(&t, d, blend))
        })
        .collect();
    mesh.with_vertices(moved?)
}

/// Rigid (unit-scale) least-squares alignment: the pose `T` minimizing
/// `Σ‖T·sᵢ − tᵢ‖²`, from the SVD of the cross-covariance with a reflection
/// guard.
pub fn umeyama_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Pose> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch(format!(
            "{} source points vs {} target points",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 3 correspondences, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_t = target.iter().sum::<Vector3<f64>>() * inv_n;
    let mut cov = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        cov += (t - mu_t) * (s - mu_s).transpose();
    }
    cov *= inv_n;

    let svd = cov.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = source
        .iter()
        .chain(target)
        .map(|p| p.norm_squared())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    if !(sv[1] > 1e-12 * scale) {
        return Err(Error::DegenerateConfiguration(format!(
            "cross-covariance rank < 2 (singular values {sv:?})"
        )));
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD failed".into())),
    };
    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    // Re-project to clear accumulated round-off before wrapping.
    let rotation = Rotation::project(&r)?;
    let translation = mu_t - rotation.apply(&mu_s);
    Ok(Pose::new(rotation, translation))
}

/// Removes the rigid component of a deformation: returns `deformed` moved
/// by its best rigid alignment onto `base`.
pub fn canonicalize(base: &TriMesh, deformed: &TriMesh) -> Result<TriMesh> {
    if base.vertices().len() != deformed.vertices().len()
        || base.triangles() != deformed.triangles()
    {
        return Err(Error::LengthMismatch(
            "canonicalize needs meshes with identical topology".into(),
        ));
    }
    let t = umeyama_align(deformed.vertices(), base.vertices())?;
    Ok(deformed.transformed(&t))
}

/// Per-category sampling bound, as a fraction of the box diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationBounds {
    pub max_offset_fraction: f64,
}

impl DeformationBounds {
    pub fn new(max_offset_fraction: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&max_offset_fraction) {
            return Err(Error::InvalidDeformation(format!(
                "max_offset_fraction {max_offset_fraction} outside [0, 0.5]"
            )));
        }
        Ok(Self {
            max_offset_fraction,
        })
    }
}

/// Each of the 24 components uniform in `[-h, h]`, `h = fraction·‖diag‖`.
pub fn sample_deformation(bounds: &DeformationBounds, bx: &Aabb, seed: u64) -> LatticeDeformation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_deformation_with(bounds, bx, &mut rng)
}

pub fn sample_deformation_with<R: Rng + ?Sized>(
    bounds: &DeformationBounds,
    bx: &Aabb,
    rng: &mut R,
) -> LatticeDeformation {
    let h = bounds.max_offset_fraction * bx.diagonal();
    if !(h > 0.0) {
        return LatticeDeformation::zero();
    }
    LatticeDeformation {
        offsets: std::array::from_fn(|_| rng.random_range(-h..=h)),
    }
}

/// On-disk deformation: offsets plus the lattice they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationFile {
    pub offsets: [f64; PARAMS],
    #[serde(rename = "box")]
    pub lattice_box: Aabb,
    #[serde(default)]
    pub blend: BlendFunction,
}

impl DeformationFile {
    pub fn deformation(&self) -> LatticeDeformation {
        LatticeDeformation {
            offsets: self.offsets,
        }
    }

    pub fn apply(&self, mesh: &TriMesh) -> Result<TriMesh> {
        deform_with(mesh, &self.lattice_box, &self.deformation(), self.blend)
    }
}
