use deformpose_core::consensus::{consistency_loss, HypothesisSet};
use deformpose_core::geom::{compose, geodesic_distance, orthonormalize_6d, Pose, Rotation};
use deformpose_core::lattice::{
    corner_weights, displacement_at, BlendFunction, LatticeDeformation, PARAMS,
};
use deformpose_core::protocol::{generate_protocol, lookat_residual, ProtocolSpec};
use deformpose_core::silhouette::{boundary_pixels, distance_transform, Mask};
use nalgebra::Vector3;
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn unit_coords() -> impl Strategy<Value = Vector3<f64>> {
    (0.0..=1.0, 0.0..=1.0, 0.0..=1.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    vec3(3.0).prop_map(Rotation::from_scaled_axis)
}

proptest! {
    #[test]
    fn blend_weights_are_a_partition_of_unity(t in unit_coords()) {
        for blend in [BlendFunction::Quintic, BlendFunction::Trilinear] {
            let w = corner_weights(&t, blend);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_offsets_displace_uniformly(t in unit_coords(), d in vec3(0.1)) {
        let field = displacement_at(&t, &LatticeDeformation::uniform(d), BlendFunction::Quintic);
        prop_assert!((field - d).amax() <= 1e-12);
    }

    #[test]
    fn displacement_is_linear_in_offsets(
        t in unit_coords(),
        a in prop::collection::vec(-0.1..0.1f64, PARAMS),
        s in -3.0..3.0f64,
    ) {
        let d = LatticeDeformation::from_slice(&a).unwrap();
        let one = displacement_at(&t, &d, BlendFunction::Quintic);
        let scaled = displacement_at(&t, &d.scaled(s), BlendFunction::Quintic);
        prop_assert!((scaled - one * s).amax() <= 1e-12);
    }

    #[test]
    fn six_d_codes_decode_to_rotations(r in rotation(), s in 0.1..10.0f64) {
        let mut code = r.to_6d();
        for v in &mut code {
            *v *= s;
        }
        let back = orthonormalize_6d(&code).unwrap();
        prop_assert!(geodesic_distance(&back, &r) < 1e-7);
        let m = back.matrix();
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).amax() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geodesic_distance_is_a_symmetric_angle(a in rotation(), b in rotation()) {
        let d = geodesic_distance(&a, &b);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&d));
        prop_assert!((d - geodesic_distance(&b, &a)).abs() < 1e-12);
        prop_assert_eq!(geodesic_distance(&a, &a), 0.0);
    }

    #[test]
    fn pose_inverse_cancels(r in rotation(), t in vec3(1.0), p in vec3(1.0)) {
        let pose = Pose::new(r, t);
        let id = compose(&pose, &pose.inverse());
        prop_assert!((id.to_matrix() - Pose::identity().to_matrix()).amax() < 1e-12);
        let back = pose.inverse().transform_point(&pose.transform_point(&p));
        prop_assert!((back - p).amax() < 1e-12);
    }

    #[test]
    fn identical_hypotheses_are_consistent(r in rotation(), t in vec3(1.0), n in 2usize..6) {
        let h = HypothesisSet::new(vec![Pose::new(r, t); n]);
        prop_assert_eq!(consistency_loss(&h, 100.0, 1e4).unwrap(), 0.0);
    }

    #[test]
    fn protocol_cameras_face_the_center(
        radii in prop::collection::vec(0.2..2.0f64, 1..3),
        elevations in prop::collection::vec(-60.0..60.0f64, 1..3),
        azimuths in 1usize..8,
        topdown in 0usize..4,
    ) {
        let spec = ProtocolSpec {
            radii,
            lateral_elevations: elevations,
            azimuth_count: azimuths,
            topdown_count: topdown,
            ..ProtocolSpec::default()
        };
        let placements = generate_protocol(&spec).unwrap();
        prop_assert_eq!(placements.len(), spec.placement_count());
        let center = Vector3::from(spec.scene_center);
        for p in &placements {
            prop_assert!(lookat_residual(&p.extrinsic, &center) < 1e-9);
            prop_assert!(((p.position() - center).norm() - p.radius).abs() < 1e-9);
        }
    }

    #[test]
    fn distance_transform_matches_brute_force(
        w in 1usize..12,
        h in 1usize..12,
        bits in prop::collection::vec(any::<bool>(), 144),
    ) {
        let mask = Mask::from_fn(w, h, |x, y| bits[y * 12 + x]);
        let boundary = boundary_pixels(&mask);
        match distance_transform(&mask) {
            Err(_) => prop_assert!(boundary.iter().all(|b| !b)),
            Ok(field) => {
                for y in 0..h {
                    for x in 0..w {
                        let mut best = usize::MAX;
                        for (i, _) in boundary.iter().enumerate().filter(|(_, b)| **b) {
                            let (bx, by) = (i % w, i / w);
                            best = best.min(bx.abs_diff(x).pow(2) + by.abs_diff(y).pow(2));
                        }
                        prop_assert_eq!(field.get(x, y), (best as f64).sqrt());
                    }
                }
            }
        }
    }
}
