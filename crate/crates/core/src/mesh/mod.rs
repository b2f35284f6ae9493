//! Indexed triangle meshes, bounding boxes and area-uniform surface sampling.

mod io;
pub mod primitives;

pub use io::{load_mesh, read_obj, read_ply, save_mesh, write_obj, write_ply};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// Minimum total area accepted by [`sample_surface`].
pub const MIN_SAMPLING_AREA: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMesh", into = "RawMesh")]
pub struct TriMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
struct RawMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

impl TryFrom<RawMesh> for TriMesh {
    type Error = Error;
    fn try_from(raw: RawMesh) -> Result<Self> {
        TriMesh::new(
            raw.vertices.into_iter().map(Vector3::from).collect(),
            raw.triangles,
        )
    }
}

impl From<TriMesh> for RawMesh {
    fn from(m: TriMesh) -> Self {
        RawMesh {
            vertices: m.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            triangles: m.triangles,
        }
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        for (ti, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {ti} references a vertex out of range ({} vertices)",
                    vertices.len()
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidMesh(format!(
                    "triangle {ti} repeats a vertex index"
                )));
            }
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Self::new(vertices, self.triangles.clone())
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| pose.transform_point(v))
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn centroid(&self) -> Result<Vector3<f64>> {
        if self.vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let sum: Vector3<f64> = self.vertices.iter().sum();
        Ok(sum / self.vertices.len() as f64)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAabb", into = "RawAabb")]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawAabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<RawAabb> for Aabb {
    type Error = Error;
    fn try_from(raw: RawAabb) -> Result<Self> {
        Aabb::new(raw.min.into(), raw.max.into())
    }
}

impl From<Aabb> for RawAabb {
    fn from(b: Aabb) -> Self {
        RawAabb {
            min: b.min.into(),
            max: b.max.into(),
        }
    }
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if !(min.iter().chain(max.iter()).all(|v| v.is_finite())) {
            return Err(Error::InvalidMesh("non-finite box corner".into()));
        }
        if min.iter().zip(max.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::InvalidMesh(format!(
                "box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// Corner selected by bits `(ix, iy, iz)`.
    pub fn corner(&self, bits: [bool; 3]) -> Vector3<f64> {
        Vector3::from_fn(|a, _| if bits[a] { self.max[a] } else { self.min[a] })
    }
}

pub fn bounding_box(mesh: &TriMesh) -> Result<Aabb> {
    let first = mesh.vertices.first().ok_or(Error::EmptyMesh)?;
    let (min, max) = mesh
        .vertices
        .iter()
        .fold((*first, *first), |(lo, hi), v| (lo.inf(v), hi.sup(v)));
    Ok(Aabb { min, max })
}

/// Draws `n` points uniformly by area.
///
/// The generator is ChaCha8 seeded with `seed`; each sample consumes three
/// `f64` draws in order: triangle selection (inverted cumulative area), then
/// the two barycentric variates `(r1, r2)` mapped through
/// `(1-√r1) a + √r1 (1-r2) b + √r1 r2 c`.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
    if n == 0 {
        return Err(Error::EmptyInput("sample count must be at least 1"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    if !(total >= MIN_SAMPLING_AREA) {
        return Err(Error::DegenerateMesh(total));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let tri = cumulative
                .partition_point(|&c| c <= target)
                .min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(tri);
            let s = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect();
    Ok(points)
}
