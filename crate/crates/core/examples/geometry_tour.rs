//! Rigid transforms, the 6D rotation encoding and the wrist-camera chain.
//!
//! ```text
//! cargo run --example geometry_tour
//! ```

use active_perception::geometry::{
    axis_angle, geodesic_rotation_distance, in_frustum, look_at, object_in_base, CameraIntrinsics, Pose, Rot6D,
};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = Pose::new(
        axis_angle(&Vector3::new(1.0, 2.0, 0.5), 0.8),
        Vector3::new(0.1, -0.2, 0.3),
    );
    let b = Pose::new(axis_angle(&Vector3::z(), -1.2), Vector3::new(0.0, 0.4, 0.0));

    let ab = a.compose(&b);
    let via_matrices = Pose::from_homogeneous(&(a.to_homogeneous() * b.to_homogeneous()));
    println!("a∘b translation       {:.6?}", ab.translation.as_slice());
    println!(
        "matrix product agrees  {:.1e}",
        (ab.to_homogeneous() - via_matrices.to_homogeneous()).amax()
    );
    println!(
        "a∘a⁻¹ residual         {:.1e}",
        (a.compose(&a.inverse()).to_homogeneous() - Pose::identity().to_homogeneous()).amax()
    );

    let r6 = Rot6D::from_rotation(&a.rotation);
    let back = r6.to_rotation()?;
    println!("6D encoding            {:.4?}", r6.0);
    println!("6D round trip          {:.1e}", (back - a.rotation).amax());

    let q = a.to_array7();
    println!("[t, q] array           {:.4?}", q);
    println!(
        "array round trip       {:.1e}",
        (Pose::from_array7(&q)?.to_homogeneous() - a.to_homogeneous()).amax()
    );

    // A wrist camera: object seen in the camera, chained back to the base.
    let ee = look_at(&Vector3::new(0.3, 0.0, 0.4), &Vector3::new(0.45, 0.0, 0.0));
    let hand_eye = Pose::from_translation(Vector3::new(0.0, -0.06, 0.04));
    let camera = ee.compose(&hand_eye);
    let object = Pose::new(axis_angle(&Vector3::z(), 0.4), Vector3::new(0.45, 0.02, 0.0));
    let seen = camera.inverse().compose(&object);
    let recovered = object_in_base(&seen.inverse(), &ee.inverse(), &hand_eye);
    println!(
        "chain error            {:.1e} m, {:.1e} rad",
        (recovered.translation - object.translation).norm(),
        geodesic_rotation_distance(&recovered, &object)
    );
    println!(
        "object in frustum      {}",
        in_frustum(&camera, &CameraIntrinsics::default(), &object.translation)
    );
    Ok(())
}
