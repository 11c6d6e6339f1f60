//! Rigid-body pose algebra, rotation encodings, and the pinhole frustum test.
//!
//! Conventions used across the crate:
//!
//! * A [`Pose`] maps points from its own frame into the reference frame:
//!   `x_ref = R * x_local + t`.
//! * Cameras follow the pinhole convention with the optical axis along `+z`,
//!   `+x` to the right and `+y` down in the image.
//! * Units are meters and radians.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Columns with a norm below this are treated as degenerate when decoding
/// the 6D rotation representation.
pub const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(&'static str),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid quaternion (norm {0})")]
    InvalidQuaternion(f64),
}

/// A rigid SE(3) transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        invert(self)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Unit quaternion of the rotation, sign-normalized so that `w >= 0`.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        }
    }

    /// `[tx, ty, tz, qw, qx, qy, qz]`, the on-disk form.
    pub fn to_array7(&self) -> [f64; 7] {
        let q = self.quaternion();
        let t = self.translation;
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
    }

    pub fn from_array7(a: &[f64; 7]) -> Result<Pose, GeometryError> {
        let q = Quaternion::new(a[3], a[4], a[5], a[6]);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(GeometryError::InvalidQuaternion(n));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Pose::new(
            uq.to_rotation_matrix().into_inner(),
            Vector3::new(a[0], a[1], a[2]),
        ))
    }

    /// Largest absolute entry of `RᵀR − I` and `|det R − 1|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = &self.rotation;
        let gram = r.transpose() * r - Matrix3::identity();
        gram.amax().max((r.determinant() - 1.0).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array7().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose::from_array7(&a).map_err(serde::de::Error::custom)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(a.rotation * b.rotation, a.rotation * b.translation + a.translation)
}

pub fn invert(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose::new(rt, -(rt * p.translation))
}

/// Object pose in the robot base frame from the wrist-camera measurement.
///
/// Arguments use the `ʳᵉᶠT_tgt` naming of the tracking loop: `o_t_c` is the
/// inverse of the object's pose in the camera frame, `e_t_b` the inverse of the
/// end-effector pose in the base frame, and `e_t_c` the camera pose in the
/// end-effector frame (hand-eye calibration). Both inversions are taken here,
/// giving `ᵇT_o = (ᵉT_b)⁻¹ · ᵉT_c · (ᵒT_c)⁻¹`.
pub fn object_in_base(o_t_c: &Pose, e_t_b: &Pose, e_t_c: &Pose) -> Pose {
    let c_t_o = invert(o_t_c);
    let b_t_e = invert(e_t_b);
    compose(&compose(&b_t_e, e_t_c), &c_t_o)
}

/// Angle of `Raᵀ Rb`, in `[0, π]`.
pub fn geodesic_rotation_distance(a: &Pose, b: &Pose) -> f64 {
    rotation_angle_between(&a.rotation, &b.rotation)
}

/// atan2 form: acos of the trace loses about eight digits near zero.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = (rel.trace() - 1.0) / 2.0;
    let s = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        / 2.0;
    s.atan2(c)
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), angle).into_inner()
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner()
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner()
}

/// Rotation of `angle` about `axis` (need not be normalized; zero axis gives identity).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = axis.norm();
    if n < 1e-15 {
        return Matrix3::identity();
    }
    Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis / n), angle).into_inner()
}

/// Nearest rotation (Frobenius norm) to an arbitrary 3×3 matrix.
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Continuous 6D rotation encoding: the first two columns of a rotation
/// matrix, stored column-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        Rot6D([r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]])
    }

    pub fn from_slice(s: &[f64]) -> Self {
        let mut a = [0.0; 6];
        a.copy_from_slice(&s[..6]);
        Rot6D(a)
    }

    /// Gram-Schmidt decode: normalize the first column, orthogonalize and
    /// normalize the second, third column is their cross product.
    pub fn to_rotation(&self) -> Result<Matrix3<f64>, GeometryError> {
        let a1 = Vector3::new(self.0[0], self.0[1], self.0[2]);
        let a2 = Vector3::new(self.0[3], self.0[4], self.0[5]);
        if !a1.iter().chain(a2.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::DegenerateRotation("non-finite entries"));
        }
        let n1 = a1.norm();
        if n1 < DEGENERATE_NORM {
            return Err(GeometryError::DegenerateRotation("first column near zero"));
        }
        let b1 = a1 / n1;
        let u2 = a2 - b1 * b1.dot(&a2);
        let n2 = u2.norm();
        if n2 < DEGENERATE_NORM {
            return Err(GeometryError::DegenerateRotation(
                "second column parallel to first or near zero",
            ));
        }
        let b2 = u2 / n2;
        let b3 = b1.cross(&b2);
        Ok(Matrix3::from_columns(&[b1, b2, b3]))
    }
}

/// Pinhole camera model with clip planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for CameraIntrinsics {
    /// A 640×480 sensor with roughly 56°×44° field of view.
    fn default() -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            near: 0.05,
            far: 3.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            self.near,
            self.far,
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(
                "all parameters must be finite and strictly positive",
            ));
        }
        if self.near >= self.far {
            return Err(GeometryError::InvalidIntrinsics("near must be < far"));
        }
        Ok(())
    }

    /// Pixel coordinates and depth of a camera-frame point.
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64, f64) {
        let z = p_cam.z;
        (self.fx * p_cam.x / z + self.cx, self.fy * p_cam.y / z + self.cy, z)
    }
}

/// True iff `point` (world frame) projects inside the image rectangle
/// (borders inclusive) and its depth lies within `[near, far]`.
pub fn in_frustum(camera: &Pose, intrinsics: &CameraIntrinsics, point: &Vector3<f64>) -> bool {
    let p_cam = invert(camera).transform_point(point);
    if p_cam.z < intrinsics.near || p_cam.z > intrinsics.far {
        return false;
    }
    let (u, v, _) = intrinsics.project(&p_cam);
    (0.0..=intrinsics.width).contains(&u) && (0.0..=intrinsics.height).contains(&v)
}

/// Camera pose at `eye` with its optical axis through `target`.
///
/// Image-up follows world `+z` projected onto the image plane. When the
/// optical axis is (anti)parallel to `+z`, world `+x` is used as image-up when
/// looking down and `-x` when looking up.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let mut up = Vector3::z();
    let mut up_proj = up - forward * forward.dot(&up);
    if up_proj.norm() < 1e-9 {
        up = if forward.z < 0.0 { Vector3::x() } else { -Vector3::x() };
        up_proj = up - forward * forward.dot(&up);
    }
    let y = -up_proj.normalize();
    let x = y.cross(&forward);
    Pose::new(Matrix3::from_columns(&[x, y, forward]), *eye)
}

/// Interpolates from `a` toward `b` by `s ∈ [0, 1]` (lerp on translation,
/// slerp on rotation).
pub fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
    let qa = a.quaternion();
    let qb = b.quaternion();
    let q = qa.try_slerp(&qb, s, 1e-12).unwrap_or(if s < 0.5 { qa } else { qb });
    Pose::new(
        q.to_rotation_matrix().into_inner(),
        a.translation + (b.translation - a.translation) * s,
    )
}
