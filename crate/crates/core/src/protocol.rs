//! Spherical capture protocol: cameras on concentric spheres around the
//! scene center, all looking at it.
//!
//! World frame: robot base at the origin, `+z` up. Azimuth 0 lies in the
//! vertical plane through the base and the scene center, on the base side;
//! azimuths spread symmetrically about it. Camera frames follow the pinhole
//! convention (`+z` forward, `+x` right, `+y` down).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSpec {
    pub scene_center: [f64; 3],
    pub radii: Vec<f64>,
    pub lateral_elevations: Vec<f64>,
    pub azimuth_count: usize,
    pub arc_span: f64,
    pub topdown_elevation: f64,
    pub topdown_count: usize,
    pub topdown_span: f64,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            scene_center: [0.8, 0.0, 0.0],
            radii: vec![0.5, 0.6, 0.7],
            lateral_elevations: vec![15.0, 30.0, 45.0],
            azimuth_count: 11,
            arc_span: 80.0,
            topdown_elevation: 80.0,
            topdown_count: 3,
            topdown_span: 20.0,
        }
    }
}

impl ProtocolSpec {
    pub fn placement_count(&self) -> usize {
        self.radii.len() * (self.lateral_elevations.len() * self.azimuth_count + self.topdown_count)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !self.scene_center.iter().all(|c| c.is_finite()) {
            return bad("scene_center must be finite".into());
        }
        if self.radii.is_empty() {
            return bad("at least one radius is required".into());
        }
        if let Some(r) = self.radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return bad(format!("radius {r} must be positive"));
        }
        let elevation_ok = |e: &f64| (-90.0..=90.0).contains(e);
        if let Some(e) = self.lateral_elevations.iter().find(|e| !elevation_ok(e)) {
            return bad(format!("elevation {e}° outside [-90, 90]"));
        }
        if !self.lateral_elevations.is_empty() && self.azimuth_count == 0 {
            return bad("azimuth_count must be at least 1".into());
        }
        let span_ok = |s: f64| s > 0.0 && s <= 360.0;
        if !span_ok(self.arc_span) {
            return bad(format!("arc_span {} outside (0, 360]", self.arc_span));
        }
        if self.topdown_count > 0 {
            if !span_ok(self.topdown_span) {
                return bad(format!("topdown_span {} outside (0, 360]", self.topdown_span));
            }
            if !elevation_ok(&self.topdown_elevation) {
                return bad(format!(
                    "topdown_elevation {}° outside [-90, 90]",
                    self.topdown_elevation
                ));
            }
        }
        if self.placement_count() == 0 {
            return bad("spec yields no placements".into());
        }
        Ok(())
    }

    fn center(&self) -> Vector3<f64> {
        Vector3::from(self.scene_center)
    }

    /// Horizontal direction from the scene center back toward the base.
    fn reference_direction(&self) -> Vector3<f64> {
        let h = Vector3::new(-self.scene_center[0], -self.scene_center[1], 0.0);
        if h.norm() > 1e-12 {
            h.normalize()
        } else {
            -Vector3::x()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPlacement {
    /// Camera-to-world transform.
    pub extrinsic: Pose,
    pub radius: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub radius_index: usize,
    /// Lateral rings first; the top-down ring follows them.
    pub elevation_index: usize,
    pub azimuth_index: usize,
    pub topdown: bool,
}

impl CameraPlacement {
    pub fn position(&self) -> Vector3<f64> {
        self.extrinsic.translation
    }
}

/// Camera-to-world pose at `position` whose `+z` axis points at `target`
/// and whose `+y` axis is the part of `up_hint` orthogonal to the view.
pub fn lookat_pose(
    position: &Vector3<f64>,
    target: &Vector3<f64>,
    up_hint: &Vector3<f64>,
) -> Result<Pose> {
    let view = target - position;
    let dist = view.norm();
    if !(dist > 1e-12) {
        return Err(Error::DegenerateLookAt("position coincides with target"));
    }
    let z = view / dist;
    let y_raw = up_hint - z * z.dot(up_hint);
    let y_norm = y_raw.norm();
    if !(y_norm > 1e-9 * up_hint.norm()) || up_hint.norm() == 0.0 {
        return Err(Error::DegenerateLookAt("up hint is parallel to the view direction"));
    }
    let y = y_raw / y_norm;
    let x = y.cross(&z);
    let m = Matrix3::from_columns(&[x, y, z]);
    Ok(Pose::new(Rotation::project(&m)?, *position))
}

/// Unit vector from the scene center to a camera at the given angles.
fn spherical_direction(reference: &Vector3<f64>, azimuth: f64, elevation: f64) -> Vector3<f64> {
    let side = Vector3::z().cross(reference);
    let horizontal = reference * azimuth.cos() + side * azimuth.sin();
    horizontal * elevation.cos() + Vector3::z() * elevation.sin()
}

fn azimuths(count: usize, span_deg: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    let step = span_deg / (count - 1) as f64;
    (0..count).map(|i| -span_deg / 2.0 + step * i as f64).collect()
}

pub fn generate_protocol(spec: &ProtocolSpec) -> Result<Vec<CameraPlacement>> {
    spec.validate()?;
    let center = spec.center();
    let reference = spec.reference_direction();
    // image "up" is world up, so camera +y (image down) follows world down
    let down = -Vector3::z();

    let mut rings: Vec<(f64, Vec<f64>, bool)> = spec
        .lateral_elevations
        .iter()
        .map(|&e| (e, azimuths(spec.azimuth_count, spec.arc_span), false))
        .collect();
    if spec.topdown_count > 0 {
        rings.push((
            spec.topdown_elevation,
            azimuths(spec.topdown_count, spec.topdown_span),
            true,
        ));
    }

    let mut out = Vec::with_capacity(spec.placement_count());
    for (ri, &radius) in spec.radii.iter().enumerate() {
        for (ei, (elevation, azs, topdown)) in rings.iter().enumerate() {
            for (ai, &az) in azs.iter().enumerate() {
                let dir = spherical_direction(&reference, az.to_radians(), elevation.to_radians());
                let position = center + dir * radius;
                out.push(CameraPlacement {
                    extrinsic: lookat_pose(&position, &center, &down)?,
                    radius,
                    elevation_deg: *elevation,
                    azimuth_deg: az,
                    radius_index: ri,
                    elevation_index: ei,
                    azimuth_index: ai,
                    topdown: *topdown,
                });
            }
        }
    }
    Ok(out)
}

/// Distance from `target` to the optical axis of `extrinsic`, plus a
/// penalty if the target is behind the camera.
pub fn lookat_residual(extrinsic: &Pose, target: &Vector3<f64>) -> f64 {
    let d = extrinsic.inverse().transform_point(target);
    let lateral = (d.x * d.x + d.y * d.y).sqrt();
    if d.z > 0.0 {
        lateral
    } else {
        lateral + d.z.abs() + 1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolFile {
    pub count: usize,
    pub spec: ProtocolSpec,
    pub placements: Vec<CameraPlacement>,
}

impl ProtocolFile {
    pub fn generate(spec: &ProtocolSpec) -> Result<Self> {
        let placements = generate_protocol(spec)?;
        Ok(Self {
            count: placements.len(),
            spec: spec.clone(),
            placements,
        })
    }
}
