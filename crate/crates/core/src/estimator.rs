//! Symmetry-aware mock pose estimator and the entropy of its output.
//!
//! The estimator returns one hypothesis per symmetry rotation that cannot be
//! ruled out from the visible features, with uniform probabilities. It has
//! no access to which hypothesis is the true one: hypotheses are listed in a
//! canonical order (closest to the camera-aligned orientation first), the way
//! a template-matching estimator would rank equally good matches.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{axis_angle, project_to_so3, rotation_angle_between, Pose};
use crate::scene::{indistinguishable_indices, ObjectModel, ViewDescriptor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    /// The object is outside the frustum or fully occluded.
    #[error("object not observable from this view")]
    EmptyView,
    #[error("invalid hypothesis set: {0}")]
    InvalidHypotheses(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Object pose in the camera frame.
    pub pose: Pose,
    pub probability: f64,
    /// Index of the symmetry rotation this hypothesis applies to the truth.
    pub symmetry_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseHypothesisSet {
    pub hypotheses: Vec<Hypothesis>,
    pub source_view: ViewDescriptor,
}

impl PoseHypothesisSet {
    pub fn new(hypotheses: Vec<Hypothesis>, source_view: ViewDescriptor) -> Result<Self, EstimatorError> {
        if hypotheses.is_empty() {
            return Err(EstimatorError::InvalidHypotheses("at least one hypothesis required"));
        }
        if hypotheses.iter().any(|h| h.probability.is_nan() || h.probability < 0.0) {
            return Err(EstimatorError::InvalidHypotheses("negative probability"));
        }
        let total: f64 = hypotheses.iter().map(|h| h.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EstimatorError::InvalidHypotheses("probabilities must sum to 1"));
        }
        Ok(Self {
            hypotheses,
            source_view,
        })
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Maximum-probability hypothesis, lowest index on ties.
    pub fn best(&self) -> &Hypothesis {
        let mut best = &self.hypotheses[0];
        for h in &self.hypotheses[1..] {
            if h.probability > best.probability {
                best = h;
            }
        }
        best
    }

    /// Probability-weighted mean pose: arithmetic mean of translations and
    /// the chordal mean of rotations projected back onto SO(3).
    pub fn centroid(&self) -> Pose {
        let mut t = Vector3::zeros();
        let mut m = Matrix3::zeros();
        for h in &self.hypotheses {
            t += h.pose.translation * h.probability;
            m += h.pose.rotation * h.probability;
        }
        Pose::new(project_to_so3(&m), t)
    }
}

/// Gaussian perturbation applied to every hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorNoise {
    /// Isotropic standard deviation per axis, meters.
    pub translation_sigma: f64,
    /// Standard deviation of the perturbation angle, radians.
    pub rotation_sigma: f64,
    pub seed: u64,
}

impl Default for EstimatorNoise {
    /// 2 mm and 1°.
    fn default() -> Self {
        Self {
            translation_sigma: 0.002,
            rotation_sigma: 1f64.to_radians(),
            seed: 0,
        }
    }
}

impl EstimatorNoise {
    pub fn zero(seed: u64) -> Self {
        Self {
            translation_sigma: 0.0,
            rotation_sigma: 0.0,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn is_zero(&self) -> bool {
        self.translation_sigma == 0.0 && self.rotation_sigma == 0.0
    }
}

/// Hypotheses for the object seen in `descriptor`.
pub fn estimate(
    object: &ObjectModel,
    descriptor: &ViewDescriptor,
    noise: &EstimatorNoise,
) -> Result<PoseHypothesisSet, EstimatorError> {
    assert!(
        noise.translation_sigma >= 0.0 && noise.rotation_sigma >= 0.0,
        "noise sigmas must be nonnegative"
    );
    if !descriptor.object_observable() {
        return Err(EstimatorError::EmptyView);
    }
    let truth = descriptor.object_in_camera;
    let mut candidates: Vec<(usize, Pose)> = indistinguishable_indices(object, descriptor)
        .into_iter()
        .map(|i| {
            (
                i,
                Pose::new(truth.rotation * object.symmetry_group[i], truth.translation),
            )
        })
        .collect();
    candidates.sort_by(|(ia, a), (ib, b)| canonical_key(a).cmp_key(&canonical_key(b)).then(ia.cmp(ib)));

    let p = 1.0 / candidates.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let hypotheses = candidates
        .into_iter()
        .map(|(symmetry_index, pose)| Hypothesis {
            pose: if noise.is_zero() {
                pose
            } else {
                perturb(&pose, noise, &mut rng)
            },
            probability: p,
            symmetry_index,
        })
        .collect();
    Ok(PoseHypothesisSet {
        hypotheses,
        source_view: descriptor.clone(),
    })
}

struct CanonicalKey {
    angle: f64,
    quat: [f64; 4],
}

impl CanonicalKey {
    fn cmp_key(&self, other: &Self) -> std::cmp::Ordering {
        self.angle.total_cmp(&other.angle).then_with(|| {
            self.quat
                .iter()
                .zip(other.quat.iter())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

fn canonical_key(p: &Pose) -> CanonicalKey {
    let q = p.quaternion();
    CanonicalKey {
        angle: rotation_angle_between(&Matrix3::identity(), &p.rotation),
        quat: [q.w, q.i, q.j, q.k],
    }
}

fn perturb(pose: &Pose, noise: &EstimatorNoise, rng: &mut ChaCha8Rng) -> Pose {
    let mut gauss3 = || {
        Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    };
    let dt = gauss3() * noise.translation_sigma;
    let axis = gauss3();
    let angle = rng.sample::<f64, _>(StandardNormal) * noise.rotation_sigma;
    Pose::new(axis_angle(&axis, angle) * pose.rotation, pose.translation + dt)
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(h: &PoseHypothesisSet) -> f64 {
    entropy_of(h.hypotheses.iter().map(|h| h.probability))
}

pub fn entropy_of(probabilities: impl IntoIterator<Item = f64>) -> f64 {
    0.0 - probabilities
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Entropy divided by `ln(max(2, |group|))`; zero for a trivial group.
pub fn normalized_entropy(h: &PoseHypothesisSet, object: &ObjectModel) -> f64 {
    let order = object.group_order();
    if order <= 1 {
        return 0.0;
    }
    entropy(h) / (order.max(2) as f64).ln()
}
