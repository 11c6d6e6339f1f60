//! Synthetic objects, view sampling, and the feature-visibility renderer.
//!
//! Objects are modelled as a finite symmetry group plus a set of small
//! distinguishing features. A view is ambiguous when the visible features do
//! not pin down which element of the symmetry group the object is rotated by.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{axis_angle, in_frustum, invert, look_at, CameraIntrinsics, Pose};

/// Features whose normal makes more than 80° with the direction to the
/// camera are treated as not visible.
pub const BACKFACE_LIMIT_DEG: f64 = 80.0;

/// Tolerance used when validating group closure at load time.
pub const GROUP_TOLERANCE: f64 = 1e-6;

/// Two camera-frame feature positions closer than this are the same point.
pub const FEATURE_MATCH_TOLERANCE: f64 = 1e-6;

/// Discretization used for continuous symmetries unless overridden.
pub const DEFAULT_CONTINUOUS_ORDER: usize = 8;

/// Views rendered by the offline entropy scan when not configured.
pub const DEFAULT_DENSE_VIEWS: usize = 64;

const BUILTIN_LIBRARY: &str = include_str!("../data/objects.toml");

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object library: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("object library: {0}")]
    Io(#[from] std::io::Error),
    #[error("object `{name}`: {reason}")]
    InvalidObject { name: String, reason: String },
    #[error("unsupported object library version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguishingFeature {
    pub id: u32,
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub name: String,
    /// Rotations in the object frame; element 0 is the identity.
    pub symmetry_group: Vec<Matrix3<f64>>,
    pub features: Vec<DistinguishingFeature>,
    pub bounding_radius: f64,
}

impl ObjectModel {
    /// Builds a model and checks every invariant (closure, identity, unit
    /// normals, features inside the bounding sphere, unique feature ids).
    pub fn new(
        name: impl Into<String>,
        symmetry_group: Vec<Matrix3<f64>>,
        features: Vec<DistinguishingFeature>,
        bounding_radius: f64,
    ) -> Result<Self, SceneError> {
        let name = name.into();
        let invalid = |reason: String| SceneError::InvalidObject {
            name: name.clone(),
            reason,
        };
        if !(bounding_radius.is_finite() && bounding_radius > 0.0) {
            return Err(invalid("bounding_radius must be positive".into()));
        }
        if symmetry_group.is_empty() {
            return Err(invalid("symmetry group is empty".into()));
        }
        for (i, g) in symmetry_group.iter().enumerate() {
            let res = (g.transpose() * g - Matrix3::identity()).amax();
            if res > GROUP_TOLERANCE || (g.determinant() - 1.0).abs() > GROUP_TOLERANCE {
                return Err(invalid(format!("group element {i} is not a rotation")));
            }
        }
        let contains = |m: &Matrix3<f64>| symmetry_group.iter().any(|g| (g - m).amax() <= GROUP_TOLERANCE);
        if !contains(&Matrix3::identity()) {
            return Err(invalid("symmetry group lacks the identity".into()));
        }
        for a in &symmetry_group {
            if !contains(&a.transpose()) {
                return Err(invalid("symmetry group not closed under inverse".into()));
            }
            for b in &symmetry_group {
                if !contains(&(a * b)) {
                    return Err(invalid("symmetry group not closed under composition".into()));
                }
            }
        }
        let mut ids: Vec<u32> = features.iter().map(|f| f.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != features.len() {
            return Err(invalid("duplicate feature ids".into()));
        }
        for f in &features {
            if (f.normal.norm() - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("feature {} normal is not unit", f.id)));
            }
            if f.position.norm() > bounding_radius {
                return Err(invalid(format!("feature {} lies outside the bounding radius", f.id)));
            }
        }
        // Put the identity first so hypothesis lists are easy to read.
        let mut group = symmetry_group;
        if let Some(pos) = group
            .iter()
            .position(|g| (g - Matrix3::identity()).amax() <= GROUP_TOLERANCE)
        {
            group.swap(0, pos);
            group[0] = Matrix3::identity();
        }
        Ok(Self {
            name,
            symmetry_group: group,
            features,
            bounding_radius,
        })
    }

    pub fn group_order(&self) -> usize {
        self.symmetry_group.len()
    }

    pub fn feature_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.features.iter().map(|f| f.id).collect();
        ids.sort_unstable();
        ids
    }
}

/// Cyclic group of `order` rotations about `axis`, identity first.
pub fn cyclic_group(axis: &Vector3<f64>, order: usize) -> Vec<Matrix3<f64>> {
    (0..order)
        .map(|i| {
            if i == 0 {
                Matrix3::identity()
            } else {
                axis_angle(axis, std::f64::consts::TAU * i as f64 / order as f64)
            }
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct LibraryFile {
    version: u32,
    #[serde(rename = "object", default)]
    objects: Vec<ObjectEntry>,
}

#[derive(Debug, Deserialize)]
struct ObjectEntry {
    name: String,
    bounding_radius: f64,
    group: GroupSpec,
    #[serde(rename = "feature", default)]
    features: Vec<FeatureEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GroupSpec {
    Cyclic {
        axis: [f64; 3],
        order: usize,
        #[serde(default)]
        continuous: bool,
    },
    Explicit {
        matrices: Vec<[f64; 9]>,
    },
}

#[derive(Debug, Deserialize)]
struct FeatureEntry {
    id: u32,
    position: [f64; 3],
    normal: [f64; 3],
}

/// A validated set of object models.
#[derive(Debug, Clone)]
pub struct ObjectLibrary {
    pub objects: Vec<ObjectModel>,
}

impl ObjectLibrary {
    pub const VERSION: u32 = 1;

    /// The four shipped objects.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_LIBRARY).expect("built-in object library is valid")
    }

    pub fn builtin_source() -> &'static str {
        BUILTIN_LIBRARY
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SceneError> {
        Self::from_toml_str_with(s, None)
    }

    /// Parses a library, optionally overriding the discretization of every
    /// continuous symmetry.
    pub fn from_toml_str_with(s: &str, continuous_order: Option<usize>) -> Result<Self, SceneError> {
        let file: LibraryFile = toml::from_str(s)?;
        if file.version != Self::VERSION {
            return Err(SceneError::UnsupportedVersion(file.version));
        }
        let objects = file
            .objects
            .into_iter()
            .map(|e| {
                let group = match e.group {
                    GroupSpec::Cyclic {
                        axis,
                        order,
                        continuous,
                    } => {
                        let order = if continuous {
                            continuous_order.unwrap_or(order)
                        } else {
                            order
                        };
                        let axis = Vector3::from(axis);
                        if order == 0 || axis.norm() < 1e-12 {
                            return Err(SceneError::InvalidObject {
                                name: e.name.clone(),
                                reason: "cyclic group needs a nonzero axis and order >= 1".into(),
                            });
                        }
                        cyclic_group(&axis, order)
                    }
                    GroupSpec::Explicit { matrices } => matrices.iter().map(|m| Matrix3::from_row_slice(m)).collect(),
                };
                let features = e
                    .features
                    .iter()
                    .map(|f| DistinguishingFeature {
                        id: f.id,
                        position: Vector3::from(f.position),
                        normal: Vector3::from(f.normal),
                    })
                    .collect();
                ObjectModel::new(e.name, group, features, e.bounding_radius)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { objects })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, name: &str) -> Result<&ObjectModel, SceneError> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| SceneError::UnknownObject(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.objects.iter().map(|o| o.name.as_str()).collect()
    }
}

/// What a camera sees of an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDescriptor {
    pub camera: Pose,
    pub visible_feature_ids: Vec<u32>,
    pub object_in_camera: Pose,
    /// An active occluder blocks the sightline to the object center.
    pub occluder_active: bool,
    /// The object center projects into the image between the clip planes.
    pub object_in_frustum: bool,
}

impl ViewDescriptor {
    /// The estimator can observe the object at all.
    pub fn object_observable(&self) -> bool {
        self.object_in_frustum && !self.occluder_active
    }
}

/// A flat occluder that blocks every sightline passing within `radius` of
/// its center while active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderDisk {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub active_interval: (f64, f64),
}

impl OccluderDisk {
    pub fn new(center: Vector3<f64>, radius: f64, t0: f64, t1: f64) -> Self {
        assert!(radius > 0.0, "occluder radius must be positive");
        assert!(t0 <= t1, "occluder interval must be ordered");
        Self {
            center,
            radius,
            active_interval: (t0, t1),
        }
    }

    pub fn is_active(&self, time: f64) -> bool {
        time >= self.active_interval.0 && time <= self.active_interval.1
    }

    /// Whether the segment `a → b` passes through the occluder at `time`.
    pub fn blocks(&self, a: &Vector3<f64>, b: &Vector3<f64>, time: f64) -> bool {
        self.is_active(time) && segment_point_distance(a, b, &self.center) < self.radius
    }
}

fn segment_point_distance(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * s - p).norm()
}

/// `n` cameras on a Fibonacci sphere around `center`, each looking at it.
pub fn sample_view_sphere(n: usize, radius: f64, center: &Vector3<f64>) -> Vec<Pose> {
    assert!(n >= 1, "need at least one view");
    assert!(radius > 0.0, "radius must be positive");
    fibonacci_directions(n)
        .into_iter()
        .map(|d| look_at(&(center + d * radius), center))
        .collect()
}

/// Unit vectors of the Fibonacci spiral: `z_i = 1 − (2i+1)/n`, azimuth
/// advancing by the golden angle.
pub fn fibonacci_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Renders which features of `object` the camera sees.
///
/// A feature is visible when it faces the camera within [`BACKFACE_LIMIT_DEG`],
/// projects inside the frustum, and no active occluder crosses its sightline.
pub fn render_descriptor(
    object: &ObjectModel,
    object_pose: &Pose,
    camera: &Pose,
    intrinsics: &CameraIntrinsics,
    occluders: &[OccluderDisk],
    time: f64,
) -> ViewDescriptor {
    let cos_limit = BACKFACE_LIMIT_DEG.to_radians().cos();
    let eye = camera.translation;
    let mut visible: Vec<u32> = object
        .features
        .iter()
        .filter(|f| {
            let p = object_pose.transform_point(&f.position);
            let n = object_pose.transform_vector(&f.normal);
            let to_cam = eye - p;
            let dist = to_cam.norm();
            if dist <= 0.0 || n.dot(&to_cam) / dist <= cos_limit {
                return false;
            }
            in_frustum(camera, intrinsics, &p) && !occluders.iter().any(|o| o.blocks(&eye, &p, time))
        })
        .map(|f| f.id)
        .collect();
    visible.sort_unstable();

    let center = object_pose.translation;
    ViewDescriptor {
        camera: *camera,
        visible_feature_ids: visible,
        object_in_camera: invert(camera).compose(object_pose),
        occluder_active: occluders.iter().any(|o| o.blocks(&eye, &center, time)),
        object_in_frustum: in_frustum(camera, intrinsics, &center),
    }
}

/// Indices into `object.symmetry_group` of the rotations that leave the
/// camera-frame positions of the visible features unchanged (as a set).
pub fn indistinguishable_indices(object: &ObjectModel, descriptor: &ViewDescriptor) -> Vec<usize> {
    let t = &descriptor.object_in_camera;
    let visible: Vec<&DistinguishingFeature> = object
        .features
        .iter()
        .filter(|f| descriptor.visible_feature_ids.binary_search(&f.id).is_ok())
        .collect();
    let observed: Vec<Vector3<f64>> = visible.iter().map(|f| t.transform_point(&f.position)).collect();
    object
        .symmetry_group
        .iter()
        .enumerate()
        .filter(|(i, g)| {
            *i == 0
                || visible.iter().all(|f| {
                    let moved = t.transform_point(&(*g * f.position));
                    observed.iter().any(|p| (p - moved).norm() <= FEATURE_MATCH_TOLERANCE)
                })
        })
        .map(|(i, _)| i)
        .collect()
}

/// The symmetry rotations no estimator could tell apart from this view.
pub fn indistinguishable_set(object: &ObjectModel, descriptor: &ViewDescriptor) -> Vec<Matrix3<f64>> {
    indistinguishable_indices(object, descriptor)
        .into_iter()
        .map(|i| object.symmetry_group[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_x, rotation_angle_between};

    fn lib() -> ObjectLibrary {
        ObjectLibrary::builtin()
    }

    #[test]
    fn builtin_library_has_four_objects() {
        let lib = lib();
        assert_eq!(lib.names(), vec!["cyl-4fold", "ring-cont", "bracket-2fold", "peg-asym"]);
        assert_eq!(lib.get("cyl-4fold").unwrap().group_order(), 4);
        assert_eq!(lib.get("ring-cont").unwrap().group_order(), 8);
        assert_eq!(lib.get("bracket-2fold").unwrap().group_order(), 2);
        assert_eq!(lib.get("peg-asym").unwrap().group_order(), 1);
        assert!(matches!(lib.get("nope"), Err(SceneError::UnknownObject(_))));
    }

    #[test]
    fn continuous_order_is_configurable() {
        let lib = ObjectLibrary::from_toml_str_with(ObjectLibrary::builtin_source(), Some(12)).unwrap();
        assert_eq!(lib.get("ring-cont").unwrap().group_order(), 12);
        assert_eq!(lib.get("cyl-4fold").unwrap().group_order(), 4);
    }

    #[test]
    fn loader_rejects_broken_groups() {
        let src = r#"
version = 1
[[object]]
name = "bad"
bounding_radius = 0.1
[object.group]
matrices = [[1.0,0.0,0.0, 0.0,1.0,0.0, 0.0,0.0,1.0], [1.0,0.0,0.0, 0.0,0.0,-1.0, 0.0,1.0,0.0]]
"#;
        // A 90° rotation about x without its powers is not closed.
        let err = ObjectLibrary::from_toml_str(src).unwrap_err();
        assert!(err.to_string().contains("not closed"), "{err}");

        let no_identity = r#"
version = 1
[[object]]
name = "bad"
bounding_radius = 0.1
[object.group]
matrices = [[1.0,0.0,0.0, 0.0,-1.0,0.0, 0.0,0.0,-1.0]]
"#;
        assert!(ObjectLibrary::from_toml_str(no_identity).is_err());

        let far_feature = r#"
version = 1
[[object]]
name = "bad"
bounding_radius = 0.01
[object.group]
axis = [0.0, 0.0, 1.0]
order = 2
[[object.feature]]
id = 0
position = [0.5, 0.0, 0.0]
normal = [1.0, 0.0, 0.0]
"#;
        assert!(ObjectLibrary::from_toml_str(far_feature).is_err());
        assert!(matches!(
            ObjectLibrary::from_toml_str("version = 7"),
            Err(SceneError::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn view_sphere_single_and_axis_through_center() {
        let c = Vector3::new(0.1, -0.2, 0.3);
        let one = sample_view_sphere(1, 0.5, &c);
        assert_eq!(one.len(), 1);
        let d = fibonacci_directions(1)[0];
        assert!((one[0].translation - (c + d * 0.5)).norm() < 1e-12);
        for cam in sample_view_sphere(40, 0.5, &c) {
            let local = invert(&cam).transform_point(&c);
            assert!(local.x.abs() < 1e-9 && local.y.abs() < 1e-9);
            assert!((local.z - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn twelve_views_are_well_separated() {
        let dirs = fibonacci_directions(12);
        let mut min_angle = f64::INFINITY;
        for i in 0..dirs.len() {
            for j in (i + 1)..dirs.len() {
                min_angle = min_angle.min(dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0).acos());
            }
        }
        assert!(
            min_angle.to_degrees() >= 30.0,
            "min separation {}",
            min_angle.to_degrees()
        );
    }

    fn single_feature_object() -> ObjectModel {
        ObjectModel::new(
            "probe",
            vec![Matrix3::identity()],
            vec![DistinguishingFeature {
                id: 0,
                position: Vector3::zeros(),
                normal: Vector3::new(0.0, 0.0, 1.0),
            }],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn facing_and_backfacing_features() {
        let obj = single_feature_object();
        let k = CameraIntrinsics::default();
        let above = look_at(&Vector3::new(0.0, 0.0, 0.5), &Vector3::zeros());
        let below = look_at(&Vector3::new(0.0, 0.0, -0.5), &Vector3::zeros());
        let d = render_descriptor(&obj, &Pose::identity(), &above, &k, &[], 0.0);
        assert_eq!(d.visible_feature_ids, vec![0]);
        let d = render_descriptor(&obj, &Pose::identity(), &below, &k, &[], 0.0);
        assert!(d.visible_feature_ids.is_empty());
        assert!(d.object_in_frustum);
    }

    #[test]
    fn occluder_blocks_only_inside_interval() {
        let obj = single_feature_object();
        let k = CameraIntrinsics::default();
        let cam = look_at(&Vector3::new(0.0, 0.0, 0.5), &Vector3::zeros());
        // Sightline is the z axis; center sits 0.01 m off it, so the
        // segment-to-center distance is 0.01 < radius 0.02.
        let occ = OccluderDisk::new(Vector3::new(0.01, 0.0, 0.25), 0.02, 1.0, 2.0);
        let during = render_descriptor(&obj, &Pose::identity(), &cam, &k, &[occ], 1.5);
        assert!(during.visible_feature_ids.is_empty());
        assert!(during.occluder_active);
        let before = render_descriptor(&obj, &Pose::identity(), &cam, &k, &[occ], 0.5);
        assert_eq!(before.visible_feature_ids, vec![0]);
        let small = OccluderDisk::new(Vector3::new(0.01, 0.0, 0.25), 0.009, 1.0, 2.0);
        let missed = render_descriptor(&obj, &Pose::identity(), &cam, &k, &[small], 1.5);
        assert_eq!(missed.visible_feature_ids, vec![0]);
    }

    #[test]
    fn indistinguishable_set_examples() {
        let lib = lib();
        let k = CameraIntrinsics::default();
        let peg = lib.get("peg-asym").unwrap();
        let cam = look_at(&Vector3::new(0.3, 0.1, 0.4), &Vector3::zeros());
        let d = render_descriptor(peg, &Pose::identity(), &cam, &k, &[], 0.0);
        assert_eq!(indistinguishable_indices(peg, &d), vec![0]);

        let cyl = lib.get("cyl-4fold").unwrap();
        let side_low = look_at(&Vector3::new(0.5, 0.0, -0.1), &Vector3::zeros());
        let hidden = render_descriptor(cyl, &Pose::identity(), &side_low, &k, &[], 0.0);
        assert!(hidden.visible_feature_ids.is_empty());
        assert_eq!(indistinguishable_indices(cyl, &hidden), vec![0, 1, 2, 3]);

        let top = look_at(&Vector3::new(0.2, 0.1, 0.45), &Vector3::zeros());
        let seen = render_descriptor(cyl, &Pose::identity(), &top, &k, &[], 0.0);
        assert_eq!(seen.visible_feature_ids, vec![0]);
        assert_eq!(indistinguishable_set(cyl, &seen), vec![Matrix3::identity()]);
    }

    #[test]
    fn indistinguishable_sets_are_subgroups() {
        let lib = lib();
        let k = CameraIntrinsics::default();
        for obj in &lib.objects {
            for cam in sample_view_sphere(64, 0.5, &Vector3::zeros()) {
                let pose = Pose::from_rotation(rot_x(0.3));
                let d = render_descriptor(obj, &pose, &cam, &k, &[], 0.0);
                let set = indistinguishable_set(obj, &d);
                assert!(!set.is_empty() && set.len() <= obj.group_order());
                for a in &set {
                    for b in &set {
                        let ab = a * b;
                        assert!(set.iter().any(|g| rotation_angle_between(g, &ab) < 1e-6));
                    }
                }
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let lib = lib();
        let obj = lib.get("bracket-2fold").unwrap();
        let cam = look_at(&Vector3::new(0.4, 0.2, 0.1), &Vector3::zeros());
        let k = CameraIntrinsics::default();
        let occ = [OccluderDisk::new(Vector3::new(0.2, 0.1, 0.05), 0.01, 0.0, 1.0)];
        let a = render_descriptor(obj, &Pose::identity(), &cam, &k, &occ, 0.5);
        let b = render_descriptor(obj, &Pose::identity(), &cam, &k, &occ, 0.5);
        assert_eq!(a, b);
    }
}
