//! Rigid-body algebra, the continuous 6D rotation encoding, pinhole
//! projection and crop-relative translation codes.
//!
//! Rotations are stored as 3×3 matrices. Quaternions only appear inside
//! [`Rotation::random`] for uniform sampling.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Point2, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance for the orthonormality and determinant checks on [`Rotation`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

const MIN_NORM: f64 = 1e-12;
const MIN_DEPTH: f64 = 1e-9;

/// A proper rotation matrix (`mᵀm = I`, `det m = +1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `m` against [`ROTATION_TOLERANCE`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!(
                "orthonormality residual {ortho:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        Ok(Self(m))
    }

    /// Wraps `m` without checks. Callers must guarantee `m ∈ SO(3)`.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Nearest rotation in the Frobenius sense (SVD projection).
    pub fn project(m: &Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::DegenerateInput("SVD did not converge")),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(Self(u * d * v_t))
    }

    /// Rotation by `|v|` radians about `v / |v|`.
    pub fn from_scaled_axis(v: Vector3<f64>) -> Self {
        Self(*Rotation3::new(v).matrix())
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        Self::from_scaled_axis(axis.normalize() * angle)
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_scaled_axis(Vector3::x() * angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_scaled_axis(Vector3::y() * angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_scaled_axis(Vector3::z() * angle)
    }

    /// Uniformly distributed rotation (normalized Gaussian quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q = Quaternion::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            if q.norm() > 1e-6 {
                let unit = UnitQuaternion::from_quaternion(q);
                return Self(*unit.to_rotation_matrix().matrix());
            }
        }
    }

    /// Axis-angle vector of this rotation.
    pub fn log(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.0).scaled_axis()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn angle(&self) -> f64 {
        geodesic_distance(&Rotation::identity(), self)
    }

    /// First two columns, the 6D encoding of this rotation.
    pub fn to_6d(&self) -> [f64; 6] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ]
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut rows = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rows[r * 3 + c] = self.0[(r, c)];
            }
        }
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[f64; 9]>::deserialize(d)?;
        let m = Matrix3::from_row_slice(&rows);
        validate_or_project(m).map_err(serde::de::Error::custom)
    }
}

/// Accepts matrices that are rotations to within 1e-6 and snaps them onto
/// SO(3) when they miss the strict tolerance (text round-off in files).
fn validate_or_project(m: Matrix3<f64>) -> Result<Rotation> {
    match Rotation::new(m) {
        Ok(r) => Ok(r),
        Err(_) => {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidRotation("non-finite entry".into()));
            }
            let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
            if ortho > 1e-6 || m.determinant() < 0.0 {
                return Err(Error::InvalidRotation(format!(
                    "orthonormality residual {ortho:e}"
                )));
            }
            Rotation::project(&m)
        }
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vector3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.transpose();
        Self::new(r_inv, -(r_inv.apply(&self.translation)))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 layout used in every JSON file.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(a: &[f64; 16]) -> Result<Self> {
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let bottom = [a[12], a[13], a[14], a[15]];
        if bottom
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(x, y)| (x - y).abs() > 1e-9)
        {
            return Err(Error::InvalidPose(format!(
                "last row must be (0, 0, 0, 1), got {bottom:?}"
            )));
        }
        let r = Matrix3::new(a[0], a[1], a[2], a[4], a[5], a[6], a[8], a[9], a[10]);
        let rotation = validate_or_project(r)?;
        Ok(Self::new(rotation, Vector3::new(a[3], a[7], a[11])))
    }

    /// Left perturbation: rotation `exp(ω)·R` about the pose origin and
    /// translation `t + δ`, both expressed in the parent frame.
    pub fn perturbed(&self, omega: &Vector3<f64>, delta: &Vector3<f64>) -> Self {
        Self::new(
            Rotation::from_scaled_axis(*omega) * self.rotation,
            self.translation + delta,
        )
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        compose(&self, &rhs)
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 16]>::deserialize(d)?;
        Pose::from_row_major(&a).map_err(serde::de::Error::custom)
    }
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.rotation * b.rotation,
        a.rotation.apply(&b.translation) + a.translation,
    )
}

/// Angle of `aᵀb` in `[0, π]`.
///
/// Equal to `acos((tr(aᵀb) − 1) / 2)`, evaluated through `atan2` of the
/// skew and symmetric parts so that small angles keep full precision.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = a.matrix().transpose() * b.matrix();
    let cos_part = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_part = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        )
        .norm();
    sin_part.atan2(cos_part)
}

/// Gram–Schmidt on the two column 3-vectors of a 6D rotation code.
pub fn orthonormalize_6d(v: &[f64; 6]) -> Result<Rotation> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if !(n1 >= MIN_NORM) {
        return Err(Error::DegenerateInput("first 6D column has zero length"));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    if !(n2 >= MIN_NORM) {
        return Err(Error::DegenerateInput(
            "second 6D column is parallel to the first",
        ));
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok(Rotation::from_matrix_unchecked(Matrix3::from_columns(&[
        b1, b2, b3,
    ])))
}

/// Pinhole camera with square pixels addressed by their top-left corner:
/// pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite principal point".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be at least 1×1".into()));
        }
        Ok(())
    }

    /// Unit-depth viewing ray through pixel coordinate `(u, v)`.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }
}

pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Point2<f64>> {
    if !(p.z > MIN_DEPTH) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok(Point2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Detection crop placed inside the full image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub center_x: f64,
    pub center_y: f64,
    pub crop_w: f64,
    pub crop_h: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl CropGeometry {
    pub fn new(
        center_x: f64,
        center_y: f64,
        crop_w: f64,
        crop_h: f64,
        image_w: f64,
        image_h: f64,
    ) -> Result<Self> {
        let c = Self {
            center_x,
            center_y,
            crop_w,
            crop_h,
            image_w,
            image_h,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crop_w > 0.0 && self.crop_h > 0.0) {
            return Err(Error::InvalidCrop("crop size must be positive".into()));
        }
        if !(self.image_w > 0.0 && self.image_h > 0.0) {
            return Err(Error::InvalidCrop("image size must be positive".into()));
        }
        let inside = |c: f64, hi: f64| (0.0..=hi).contains(&c);
        if !inside(self.center_x, self.image_w) || !inside(self.center_y, self.image_h) {
            return Err(Error::InvalidCrop("crop center outside the image".into()));
        }
        Ok(())
    }

    /// The normalized placement vector `(cx/W, cy/H, w/W, h/H)`.
    pub fn placement(&self) -> [f64; 4] {
        [
            self.center_x / self.image_w,
            self.center_y / self.image_h,
            self.crop_w / self.image_w,
            self.crop_h / self.image_h,
        ]
    }
}

/// Crop-relative code of a camera-frame translation: the projected center
/// offset from the crop center in crop units, and depth scaled by
/// `crop_w / image_w`.
pub fn encode_crop_translation(
    t: &Vector3<f64>,
    crop: &CropGeometry,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    let px = project(t, k)?;
    Ok(Vector3::new(
        (px.x - crop.center_x) / crop.crop_w,
        (px.y - crop.center_y) / crop.crop_h,
        t.z * crop.crop_w / crop.image_w,
    ))
}

/// Inverse of [`encode_crop_translation`].
pub fn decode_crop_translation(
    code: &Vector3<f64>,
    crop: &CropGeometry,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    if !(code.z > 0.0) || !code.z.is_finite() {
        return Err(Error::InvalidDepth(code.z));
    }
    let z = code.z * crop.image_w / crop.crop_w;
    if !(z > MIN_DEPTH) {
        return Err(Error::InvalidDepth(code.z));
    }
    let u = code.x * crop.crop_w + crop.center_x;
    let v = code.y * crop.crop_h + crop.center_y;
    Ok(k.backproject(u, v, z))
}
