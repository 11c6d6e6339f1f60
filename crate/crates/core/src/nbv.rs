//! Entropy-guided next-best-view selection.
//!
//! Offline, a dense set of views is scanned for estimator entropy to build a
//! [`GeometricPrompt`]. Online, the live view is scored for ambiguity; above
//! the threshold, candidate cameras around the current estimate are imagined,
//! each is scored by `λ·H + (1 − λ)·p_amb`, and the camera moves once to the
//! lowest-scoring candidate before the final estimate.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{AmbiguityScorer, GeometricPrompt, ScorerError};
use crate::estimator::{entropy, estimate, normalized_entropy, EstimatorError, EstimatorNoise, PoseHypothesisSet};
use crate::geometry::{geodesic_rotation_distance, CameraIntrinsics, Pose};
use crate::scene::{render_descriptor, sample_view_sphere, ObjectModel, ViewDescriptor};
use crate::seed;

/// Scores closer than this are considered tied.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NbvError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbvConfig {
    /// Ambiguity threshold; the camera moves when `p_amb >= tau`.
    pub tau: f64,
    /// Weight of the entropy term in the fused score.
    pub lambda: f64,
    /// Number of candidate views.
    pub m: usize,
    pub candidate_radius: f64,
    /// Use entropy divided by `ln|group|` instead of raw nats.
    pub use_normalized_entropy: bool,
}

impl Default for NbvConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            lambda: 0.6,
            m: 12,
            candidate_radius: 0.5,
            use_normalized_entropy: true,
        }
    }
}

impl NbvConfig {
    pub fn validate(&self) -> Result<(), NbvError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(NbvError::Config("tau must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(NbvError::Config("lambda must lie in [0, 1]"));
        }
        if self.m == 0 {
            return Err(NbvError::Config("m must be at least 1"));
        }
        if !(self.candidate_radius.is_finite() && self.candidate_radius > 0.0) {
            return Err(NbvError::Config("candidate_radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub camera: Pose,
    pub p_amb: f64,
    /// Raw entropy, nats.
    pub entropy: f64,
    pub normalized_entropy: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbvResult {
    pub final_estimate: PoseHypothesisSet,
    pub final_camera: Pose,
    pub moved: bool,
    pub chosen_index: Option<usize>,
    pub initial_p_amb: f64,
    pub candidate_scores: Vec<CandidateScore>,
}

/// Renders `n_views` sphere views of the object at the identity pose and
/// records the zero-noise estimator entropy of each.
pub fn offline_entropy_scan(
    object: &ObjectModel,
    n_views: usize,
    radius: f64,
    intrinsics: &CameraIntrinsics,
) -> Vec<(ViewDescriptor, f64)> {
    let noise = EstimatorNoise::zero(0);
    sample_view_sphere(n_views, radius, &Vector3::zeros())
        .iter()
        .map(|cam| {
            let d = render_descriptor(object, &Pose::identity(), cam, intrinsics, &[], 0.0);
            let h = estimate(object, &d, &noise)
                .map(|h| entropy(&h))
                .expect("scan cameras look straight at the object");
            (d, h)
        })
        .collect()
}

/// `λ·entropy + (1 − λ)·p_amb`.
pub fn fused_score(entropy: f64, p_amb: f64, lambda: f64) -> f64 {
    lambda * entropy + (1.0 - lambda) * p_amb
}

/// Index of the lowest score. Ties go to the candidate whose orientation is
/// closest to `current_camera`, then to the lowest index.
pub fn select_nbv(candidates: &[CandidateScore], current_camera: &Pose) -> usize {
    assert!(!candidates.is_empty(), "no candidates to select from");
    let dist = |c: &CandidateScore| geodesic_rotation_distance(current_camera, &c.camera);
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best];
        let lower = c.score < b.score - SCORE_TIE_TOLERANCE;
        let tie = (c.score - b.score).abs() <= SCORE_TIE_TOLERANCE;
        if lower || (tie && dist(c) < dist(b) - SCORE_TIE_TOLERANCE) {
            best = i;
        }
    }
    best
}

/// Everything the online loop needs besides the live situation.
pub struct ActiveEstimator<'a> {
    pub object: &'a ObjectModel,
    pub prompt: &'a GeometricPrompt,
    pub scorer: &'a dyn AmbiguityScorer,
    pub config: NbvConfig,
    pub intrinsics: CameraIntrinsics,
}

impl<'a> ActiveEstimator<'a> {
    pub fn new(
        object: &'a ObjectModel,
        prompt: &'a GeometricPrompt,
        scorer: &'a dyn AmbiguityScorer,
        config: NbvConfig,
        intrinsics: CameraIntrinsics,
    ) -> Self {
        Self {
            object,
            prompt,
            scorer,
            config,
            intrinsics,
        }
    }

    fn render(&self, object_pose: &Pose, camera: &Pose) -> ViewDescriptor {
        render_descriptor(self.object, object_pose, camera, &self.intrinsics, &[], 0.0)
    }

    /// Candidate cameras on a sphere around the world-frame centroid of the
    /// current hypotheses. Returns the centroid pose and the cameras.
    pub fn candidate_cameras(&self, current: &PoseHypothesisSet) -> (Pose, Vec<Pose>) {
        let centroid = current.source_view.camera.compose(&current.centroid());
        let cams = sample_view_sphere(self.config.m, self.config.candidate_radius, &centroid.translation);
        (centroid, cams)
    }

    /// Imagines each candidate view of the object at `imagined_pose` and
    /// computes its fused score. Results are ordered by candidate index.
    pub fn score_candidates(&self, imagined_pose: &Pose, cameras: &[Pose]) -> Result<Vec<CandidateScore>, NbvError> {
        let zero = EstimatorNoise::zero(0);
        cameras
            .par_iter()
            .enumerate()
            .map(|(index, cam)| {
                let view = self.render(imagined_pose, cam);
                let p_amb = self.scorer.score(self.object, &view, self.prompt)?.p_amb;
                let h = estimate(self.object, &view, &zero)?;
                let raw = entropy(&h);
                let norm = normalized_entropy(&h, self.object);
                let used = if self.config.use_normalized_entropy { norm } else { raw };
                Ok(CandidateScore {
                    index,
                    camera: *cam,
                    p_amb,
                    entropy: raw,
                    normalized_entropy: norm,
                    score: fused_score(used, p_amb, self.config.lambda),
                })
            })
            .collect()
    }

    /// One round of active estimation from `initial_camera`.
    pub fn run(
        &self,
        true_object_pose: &Pose,
        initial_camera: &Pose,
        noise: &EstimatorNoise,
    ) -> Result<NbvResult, NbvError> {
        self.config.validate()?;
        let live = self.render(true_object_pose, initial_camera);
        let initial_p_amb = self.scorer.score(self.object, &live, self.prompt)?.p_amb;
        let current = estimate(self.object, &live, noise)?;
        if initial_p_amb < self.config.tau {
            return Ok(NbvResult {
                final_estimate: current,
                final_camera: *initial_camera,
                moved: false,
                chosen_index: None,
                initial_p_amb,
                candidate_scores: Vec::new(),
            });
        }

        let (imagined_pose, cameras) = self.candidate_cameras(&current);
        let candidate_scores = self.score_candidates(&imagined_pose, &cameras)?;
        let chosen = select_nbv(&candidate_scores, initial_camera);
        let final_camera = cameras[chosen];
        let view = self.render(true_object_pose, &final_camera);
        let final_estimate = estimate(self.object, &view, &noise.with_seed(seed!(noise.seed, "nbv-final")))?;
        Ok(NbvResult {
            final_estimate,
            final_camera,
            moved: true,
            chosen_index: Some(chosen),
            initial_p_amb,
            candidate_scores,
        })
    }
}

/// Free-function form of [`ActiveEstimator::run`].
#[allow(clippy::too_many_arguments)]
pub fn run_active_estimation(
    object: &ObjectModel,
    true_object_pose: &Pose,
    initial_camera: &Pose,
    prompt: &GeometricPrompt,
    scorer: &dyn AmbiguityScorer,
    config: &NbvConfig,
    noise: &EstimatorNoise,
    intrinsics: &CameraIntrinsics,
) -> Result<NbvResult, NbvError> {
    ActiveEstimator::new(object, prompt, scorer, *config, *intrinsics).run(true_object_pose, initial_camera, noise)
}
