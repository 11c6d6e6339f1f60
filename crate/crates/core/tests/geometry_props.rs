use active_perception::geometry::{
    axis_angle, geodesic_rotation_distance, object_in_base, project_to_so3, Pose, Rot6D,
};
use nalgebra::{Matrix4, Vector3};
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..std::f64::consts::PI,
        prop::array::uniform3(-2.0f64..2.0),
    )
        .prop_filter("axis must be nonzero", |(a, _, _)| Vector3::from(*a).norm() > 1e-3)
        .prop_map(|(a, angle, t)| Pose::new(axis_angle(&Vector3::from(a), angle), Vector3::from(t)))
}

fn close(a: &Matrix4<f64>, b: &Matrix4<f64>) -> bool {
    (a - b).amax() < 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn composition_matches_matrix_product(a in pose(), b in pose()) {
        prop_assert!(close(&a.compose(&b).to_homogeneous(), &(a.to_homogeneous() * b.to_homogeneous())));
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!(close(&left.to_homogeneous(), &right.to_homogeneous()));
    }

    #[test]
    fn inverse_and_identity(a in pose()) {
        let id = Pose::identity().to_homogeneous();
        prop_assert!(close(&a.compose(&a.inverse()).to_homogeneous(), &id));
        prop_assert!(close(&a.inverse().compose(&a).to_homogeneous(), &id));
        prop_assert!(close(&a.compose(&Pose::identity()).to_homogeneous(), &a.to_homogeneous()));
        prop_assert!(a.orthonormality_residual() < 1e-12);
    }

    #[test]
    fn rot6d_round_trip(a in pose()) {
        let back = Rot6D::from_rotation(&a.rotation).to_rotation().unwrap();
        prop_assert!((back - a.rotation).amax() < 1e-9);
    }

    #[test]
    fn rot6d_decodes_perturbed_inputs_to_rotations(a in pose(), noise in prop::array::uniform6(-0.2f64..0.2)) {
        let mut v = Rot6D::from_rotation(&a.rotation).0;
        for (x, n) in v.iter_mut().zip(noise) {
            *x += n;
        }
        let r = Rot6D(v).to_rotation().unwrap();
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn array7_round_trip(a in pose()) {
        let back = Pose::from_array7(&a.to_array7()).unwrap();
        prop_assert!(close(&back.to_homogeneous(), &a.to_homogeneous()));
    }

    #[test]
    fn wrist_camera_chain_matches_homogeneous_oracle(obj in pose(), ee in pose(), hand_eye in pose()) {
        let c_t_o = (ee.to_homogeneous() * hand_eye.to_homogeneous()).try_inverse().unwrap() * obj.to_homogeneous();
        let seen = Pose::from_homogeneous(&c_t_o);
        let got = object_in_base(&seen.inverse(), &ee.inverse(), &hand_eye);
        prop_assert!(close(&got.to_homogeneous(), &obj.to_homogeneous()));
    }

    #[test]
    fn geodesic_distance_is_a_bi_invariant_metric(a in pose(), b in pose(), g in pose()) {
        let d = geodesic_rotation_distance(&a, &b);
        prop_assert!((d - geodesic_rotation_distance(&b, &a)).abs() < 1e-9);
        prop_assert!((d - geodesic_rotation_distance(&g.compose(&a), &g.compose(&b))).abs() < 1e-7);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&d));
    }

    #[test]
    fn projection_fixes_rotations(a in pose()) {
        prop_assert!((project_to_so3(&a.rotation) - a.rotation).amax() < 1e-9);
    }
}
