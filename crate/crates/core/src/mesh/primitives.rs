//! Procedural meshes for tests and synthetic scenes.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::TriMesh;

/// Axis-aligned unit cube centered at the origin (8 vertices, 12 triangles).
pub fn unit_cube() -> TriMesh {
    let v = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -0.5 } else { 0.5 },
                if i & 2 == 0 { -0.5 } else { 0.5 },
                if i & 4 == 0 { -0.5 } else { 0.5 },
            )
        })
        .collect();
    let t = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    TriMesh::new(v, t).expect("static cube")
}

/// `[0,1]²` in the z = 0 plane, two triangles.
pub fn unit_square() -> TriMesh {
    let v = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(1.0, 1.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ];
    TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).expect("static square")
}

/// Axis-aligned rectangle `[x0,x1] × [y0,y1]` at height `z`.
pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, z: f64) -> TriMesh {
    let v = vec![
        Vector3::new(x0, y0, z),
        Vector3::new(x1, y0, z),
        Vector3::new(x1, y1, z),
        Vector3::new(x0, y1, z),
    ];
    TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).expect("rectangle")
}

/// Icosahedron subdivided `subdivisions` times, projected onto a sphere.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let verts = verts.into_iter().map(|v| v * radius).collect();
    TriMesh::new(verts, tris).expect("icosphere")
}

/// Closed latitude/longitude surface `dir(θ, φ) ↦ shape(dir)`.
fn lat_long(rings: usize, segments: usize, shape: impl Fn(Vector3<f64>) -> Vector3<f64>) -> TriMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut verts = vec![shape(Vector3::z())];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            let d = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            verts.push(shape(d));
        }
    }
    verts.push(shape(-Vector3::z()));
    let south = verts.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);
    let mut tris = Vec::new();
    for s in 0..segments {
        tris.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            tris.push([a, c, d]);
            tris.push([a, d, b]);
        }
    }
    for s in 0..segments {
        tris.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    TriMesh::new(verts, tris).expect("lat-long mesh")
}

pub fn ellipsoid(semi_axes: Vector3<f64>, rings: usize, segments: usize) -> TriMesh {
    lat_long(rings, segments, |d| d.component_mul(&semi_axes))
}

/// Asymmetric pear-like body about 14 cm tall: tapered toward +z, bent
/// toward +x, flattened along y, with a lobe on the +y flank and a stem
/// leaning toward +y. No rotational or mirror symmetry, so its silhouettes
/// pin down all three rotation axes.
pub fn produce_body(rings: usize, segments: usize) -> TriMesh {
    let lobe_dir = Vector3::new(-0.2, 1.0, 0.1).normalize();
    lat_long(rings, segments, |d| {
        let h = d.z; // [-1, 1]
        let taper = 1.0 - 0.38 * smooth01((h + 0.1) / 1.1);
        let lobe = 1.0 + 0.35 * ((d.dot(&lobe_dir) - 1.0) / 0.12).exp();
        let stem = ((h - 1.0) / 0.04).exp();
        let x = 0.045 * taper * lobe * d.x + 0.018 * (h + 1.0).powi(2) / 4.0;
        let y = 0.036 * taper * lobe * d.y + 0.01 * stem;
        let z = 0.06 * h + 0.02 * stem;
        Vector3::new(x, y, z)
    })
}

fn smooth01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_vertices_on_sphere() {
        let m = icosphere(2.0, 2);
        assert_eq!(m.vertices().len(), 162);
        assert_eq!(m.triangles().len(), 320);
        assert!(m.vertices().iter().all(|v| (v.norm() - 2.0).abs() < 1e-12));
    }

    #[test]
    fn lat_long_is_closed() {
        // Closed manifold: every edge is shared by exactly two triangles.
        let m = produce_body(8, 12);
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }
}
