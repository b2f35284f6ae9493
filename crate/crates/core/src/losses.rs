//! Supervision losses for a single-view pose-and-shape regressor whose heads
//! emit a 6D rotation code, a crop-relative translation code and 24 lattice
//! offsets. Predictions are plain vectors so any learner can consume these.
//!
//! Translation code decoding goes through the crop geometry and intrinsics;
//! every loss below that needs a translation sees the decoded absolute one.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    decode_crop_translation, geodesic_distance, orthonormalize_6d, project, CameraIntrinsics,
    CropGeometry, Pose, Rotation,
};
use crate::lattice::{deform, LatticeDeformation, PARAMS};
use crate::mesh::{Aabb, TriMesh};

/// Raw head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedPrediction {
    pub rotation6d: [f64; 6],
    pub translation_code: [f64; 3],
    pub lattice_offsets: [f64; PARAMS],
}

/// Ground truth for one crop. `translation` is the absolute camera-frame
/// translation in meters; `mesh` is the undeformed base mesh and `box` its
/// lattice box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTarget {
    pub rotation: Rotation,
    pub translation: [f64; 3],
    pub lattice_offsets: [f64; PARAMS],
    pub mesh: TriMesh,
    #[serde(rename = "box")]
    pub bbox: Aabb,
    pub intrinsics: CameraIntrinsics,
    pub crop: CropGeometry,
}

impl SeedTarget {
    fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// The prediction that reproduces this target exactly in every head.
    pub fn perfect_prediction(&self) -> Result<SeedPrediction> {
        let code =
            crate::geom::encode_crop_translation(&self.translation(), &self.crop, &self.intrinsics)?;
        Ok(SeedPrediction {
            rotation6d: self.rotation.to_6d(),
            translation_code: code.into(),
            lattice_offsets: self.lattice_offsets,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedLossWeights {
    pub rotation: f64,
    pub translation: f64,
    pub deformation: f64,
    pub regularization: f64,
    pub vertex3d: f64,
    pub projection2d: f64,
}

impl Default for SeedLossWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl SeedLossWeights {
    pub fn uniform(w: f64) -> Self {
        Self {
            rotation: w,
            translation: w,
            deformation: w,
            regularization: w,
            vertex3d: w,
            projection2d: w,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.rotation,
            self.translation,
            self.deformation,
            self.regularization,
            self.vertex3d,
            self.projection2d,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "loss weights must be finite and non-negative".into(),
            ))
        }
    }
}

/// Unweighted per-term values plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rotation: f64,
    pub translation: f64,
    pub deformation: f64,
    pub regularization: f64,
    pub vertex3d: f64,
    pub projection2d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 6] {
        [
            self.rotation,
            self.translation,
            self.deformation,
            self.regularization,
            self.vertex3d,
            self.projection2d,
        ]
    }

    /// `Σ wᵢ·termᵢ` in term order.
    pub fn weighted_sum(&self, w: &SeedLossWeights) -> f64 {
        self.terms()
            .iter()
            .zip(w.as_array())
            .fold(0.0, |acc, (t, w)| acc + w * t)
    }
}

/// Geodesic angle in radians between the decoded 6D code and `gt`.
pub fn rotation_loss(pred: &[f64; 6], gt: &Rotation) -> Result<f64> {
    Ok(geodesic_distance(&orthonormalize_6d(pred)?, gt))
}

/// `‖pred − gt‖²` in m².
pub fn translation_loss(pred: &Vector3<f64>, gt: &Vector3<f64>) -> f64 {
    (pred - gt).norm_squared()
}

pub fn translation_loss_gradient(pred: &Vector3<f64>, gt: &Vector3<f64>) -> Vector3<f64> {
    (pred - gt) * 2.0
}

/// Mean over the 24 components of the squared offset error.
pub fn deformation_loss(pred: &[f64; PARAMS], gt: &[f64; PARAMS]) -> f64 {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / PARAMS as f64
}

pub fn deformation_loss_gradient(pred: &[f64; PARAMS], gt: &[f64; PARAMS]) -> [f64; PARAMS] {
    std::array::from_fn(|i| 2.0 * (pred[i] - gt[i]) / PARAMS as f64)
}

/// Mean squared offset; zero for the undeformed mesh.
pub fn deformation_reg(pred: &[f64; PARAMS]) -> f64 {
    pred.iter().map(|p| p * p).sum::<f64>() / PARAMS as f64
}

pub fn deformation_reg_gradient(pred: &[f64; PARAMS]) -> [f64; PARAMS] {
    std::array::from_fn(|i| 2.0 * pred[i] / PARAMS as f64)
}

/// A prediction decoded into a rotation, an absolute translation and a
/// lattice deformation.
#[derive(Debug, Clone, Copy)]
pub struct DecodedPrediction {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub deformation: LatticeDeformation,
}

pub fn decode_prediction(pred: &SeedPrediction, tgt: &SeedTarget) -> Result<DecodedPrediction> {
    check_finite(pred)?;
    Ok(DecodedPrediction {
        rotation: orthonormalize_6d(&pred.rotation6d)?,
        translation: decode_crop_translation(
            &Vector3::from(pred.translation_code),
            &tgt.crop,
            &tgt.intrinsics,
        )?,
        deformation: LatticeDeformation {
            offsets: pred.lattice_offsets,
        },
    })
}

fn check_finite(pred: &SeedPrediction) -> Result<()> {
    let all = pred
        .rotation6d
        .iter()
        .chain(&pred.translation_code)
        .chain(&pred.lattice_offsets);
    if all.clone().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::DegenerateInput("prediction has a non-finite entry"))
    }
}

/// Camera-frame vertices of the deformed, posed mesh.
fn posed_vertices(
    tgt: &SeedTarget,
    rotation: Rotation,
    translation: Vector3<f64>,
    deformation: &LatticeDeformation,
) -> Result<Vec<Vector3<f64>>> {
    let pose = Pose::new(rotation, translation);
    let warped = deform(&tgt.mesh, &tgt.bbox, deformation)?;
    Ok(warped
        .vertices()
        .iter()
        .map(|v| pose.transform_point(v))
        .collect())
}

fn both_posed(
    pred: &SeedPrediction,
    tgt: &SeedTarget,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let d = decode_prediction(pred, tgt)?;
    let p = posed_vertices(tgt, d.rotation, d.translation, &d.deformation)?;
    let g = posed_vertices(
        tgt,
        tgt.rotation,
        tgt.translation(),
        &LatticeDeformation {
            offsets: tgt.lattice_offsets,
        },
    )?;
    if p.is_empty() {
        return Err(Error::EmptyMesh);
    }
    Ok((p, g))
}

/// Mean squared camera-frame distance between corresponding vertices, in m².
pub fn vertex3d_loss(pred: &SeedPrediction, tgt: &SeedTarget) -> Result<f64> {
    let (p, g) = both_posed(pred, tgt)?;
    Ok(p.iter().zip(&g).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / p.len() as f64)
}

/// Mean squared distance between projected vertices, with pixel coordinates
/// divided by the image width and height.
pub fn projection2d_loss(pred: &SeedPrediction, tgt: &SeedTarget) -> Result<f64> {
    let (p, g) = both_posed(pred, tgt)?;
    let (w, h) = (tgt.intrinsics.width as f64, tgt.intrinsics.height as f64);
    let mut sum = 0.0;
    for (a, b) in p.iter().zip(&g) {
        let pa = project(a, &tgt.intrinsics)?;
        let pb = project(b, &tgt.intrinsics)?;
        let dx = (pa.x - pb.x) / w;
        let dy = (pa.y - pb.y) / h;
        sum += dx * dx + dy * dy;
    }
    Ok(sum / p.len() as f64)
}

/// All six terms and their weighted sum.
pub fn total_loss(
    pred: &SeedPrediction,
    tgt: &SeedTarget,
    w: &SeedLossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    let d = decode_prediction(pred, tgt)?;
    let mut b = LossBreakdown {
        rotation: geodesic_distance(&d.rotation, &tgt.rotation),
        translation: translation_loss(&d.translation, &tgt.translation()),
        deformation: deformation_loss(&pred.lattice_offsets, &tgt.lattice_offsets),
        regularization: deformation_reg(&pred.lattice_offsets),
        vertex3d: vertex3d_loss(pred, tgt)?,
        projection2d: projection2d_loss(pred, tgt)?,
        total: 0.0,
    };
    b.total = b.weighted_sum(w);
    Ok(b)
}

/// A prediction/target bundle with optional expected values, used for
/// regression checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFixture {
    pub prediction: SeedPrediction,
    pub target: SeedTarget,
    #[serde(default)]
    pub weights: SeedLossWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<LossBreakdown>,
}

impl LossFixture {
    pub fn evaluate(&self) -> Result<LossBreakdown> {
        total_loss(&self.prediction, &self.target, &self.weights)
    }

    /// Largest absolute difference to the expected breakdown, if any.
    pub fn max_deviation(&self, got: &LossBreakdown) -> Option<f64> {
        let e = self.expected?;
        let mut a = e.terms().to_vec();
        a.push(e.total);
        let mut b = got.terms().to_vec();
        b.push(got.total);
        Some(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }
}
