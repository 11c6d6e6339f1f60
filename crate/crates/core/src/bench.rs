//! Experiment harness: placements, baselines, judging and success rates for
//! the estimation and tracking suites, with CSV and JSON persistence.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{build_prompt, AmbiguityError, GeometricPrompt, OracleScorer};
use crate::diffusion::{train, DenoiserParams, DiffusionError, NoiseSchedule, TrainConfig, TrainOutcome, TrainingSet};
use crate::estimator::{estimate, EstimatorError, EstimatorNoise, PoseHypothesisSet};
use crate::geometry::{geodesic_rotation_distance, look_at, rotation_angle_between, CameraIntrinsics, Pose};
use crate::nbv::{offline_entropy_scan, run_active_estimation, ActiveEstimator, NbvConfig, NbvError};
use crate::scene::{render_descriptor, ObjectLibrary, ObjectModel, SceneError, ViewDescriptor};
use crate::seed;
use crate::tracking::{
    build_dataset, run_pose_servo, run_tracking, run_world_camera, training_windows, DiffusionPolicy, Scenario,
    ScenarioKind, ScenarioParams, TrackRun, TrackerConfig, TrackingError,
};

/// Entropies within this distance of the maximum count as maximal.
const ENTROPY_TIE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("object `{object}` has no ambiguous viewpoint")]
    NoAmbiguousView { object: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nbv(#[from] NbvError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    RandomPlacement,
    HighEntropyPlacement,
}

impl PlacementKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlacementKind::RandomPlacement => "random",
            PlacementKind::HighEntropyPlacement => "high_entropy",
        }
    }

    pub fn parse(s: &str) -> Option<PlacementKind> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "random" | "random_placement" => Some(PlacementKind::RandomPlacement),
            "high_entropy" | "high_entropy_placement" | "highentropy" => Some(PlacementKind::HighEntropyPlacement),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementMode {
    pub kind: PlacementKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessCriteria {
    /// Meters.
    pub max_translation_error: f64,
    /// Radians.
    pub max_rotation_error: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            max_translation_error: 0.005,
            max_rotation_error: 5f64.to_radians(),
        }
    }
}

impl SuccessCriteria {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.max_translation_error > 0.0 && self.max_rotation_error > 0.0 {
            Ok(())
        } else {
            Err(BenchError::Config("success thresholds must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    /// Rotation error is measured to the closest symmetric copy of the truth.
    OrbitAware,
    Strict,
}

/// Translation error and rotation error (strict, orbit-aware) of the
/// maximum-probability hypothesis, ties going to the lowest index.
pub fn estimate_errors(estimate: &PoseHypothesisSet, truth: &Pose, object: &ObjectModel) -> (f64, f64, f64) {
    let best = &estimate.best().pose;
    let dt = (best.translation - truth.translation).norm();
    let strict = geodesic_rotation_distance(best, truth);
    let orbit = object
        .symmetry_group
        .iter()
        .map(|g| rotation_angle_between(&best.rotation, &(truth.rotation * g)))
        .fold(f64::INFINITY, f64::min);
    (dt, strict, orbit.min(strict))
}

/// Success iff the best hypothesis is within both thresholds of `truth`
/// (object pose in the estimate's camera frame).
pub fn judge_estimate(
    estimate: &PoseHypothesisSet,
    truth: &Pose,
    object: &ObjectModel,
    crit: &SuccessCriteria,
    mode: JudgeMode,
) -> bool {
    let (dt, strict, orbit) = estimate_errors(estimate, truth, object);
    let dr = match mode {
        JudgeMode::OrbitAware => orbit,
        JudgeMode::Strict => strict,
    };
    dt <= crit.max_translation_error && dr <= crit.max_rotation_error
}

/// Settings of the estimation suite besides the NBV configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationSettings {
    pub criteria: SuccessCriteria,
    /// Estimator noise, meters and radians.
    pub translation_sigma: f64,
    pub rotation_sigma: f64,
    /// Views in the offline scan and their distance to the object.
    pub scan_views: usize,
    pub scan_radius: f64,
    pub prompt_unambiguous: usize,
    pub prompt_ambiguous: usize,
    /// Center of the placement disc on the table.
    pub workspace_center: [f64; 3],
    pub workspace_radius: f64,
    /// Fixed initial camera, looking at the workspace center.
    pub initial_camera_eye: [f64; 3],
    pub intrinsics: CameraIntrinsics,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        let noise = EstimatorNoise::default();
        Self {
            criteria: SuccessCriteria::default(),
            translation_sigma: noise.translation_sigma,
            rotation_sigma: noise.rotation_sigma,
            scan_views: 64,
            scan_radius: 0.5,
            prompt_unambiguous: 3,
            prompt_ambiguous: 1,
            workspace_center: [0.45, 0.0, 0.0],
            workspace_radius: 0.1,
            initial_camera_eye: [0.15, 0.0, 0.4],
            intrinsics: CameraIntrinsics::default(),
        }
    }
}

impl EstimationSettings {
    pub fn initial_camera(&self) -> Pose {
        look_at(
            &Vector3::from(self.initial_camera_eye),
            &Vector3::from(self.workspace_center),
        )
    }

    fn noise(&self, seed: u64) -> EstimatorNoise {
        EstimatorNoise {
            translation_sigma: self.translation_sigma,
            rotation_sigma: self.rotation_sigma,
            seed,
        }
    }
}

/// Settings of the tracking suite besides the tracker and training
/// configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingSettings {
    pub translation_sigma: f64,
    pub rotation_sigma: f64,
    pub scenario: ScenarioParams,
    /// Demonstrations per training scenario when no checkpoint is given.
    pub demos: usize,
    pub dataset_seed: u64,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        let noise = EstimatorNoise::default();
        Self {
            translation_sigma: noise.translation_sigma,
            rotation_sigma: noise.rotation_sigma,
            scenario: ScenarioParams::default(),
            demos: 10,
            dataset_seed: 7,
        }
    }
}

/// Everything that configures a benchmark run; the structure of the
/// `bench` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BenchConfig {
    pub nbv: NbvConfig,
    pub estimation: EstimationSettings,
    pub tracker: TrackerConfig,
    pub train: TrainConfig,
    pub tracking: TrackingSettings,
}

impl BenchConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, BenchError> {
        toml::from_str(s).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("bench config serializes")
    }
}

/// Uniform position in the workspace disc and uniform orientation, or the
/// pose that shows the fixed initial camera a maximal-entropy scan view.
pub fn place_object(
    object: &ObjectModel,
    mode: &PlacementMode,
    scan: &[(ViewDescriptor, f64)],
    settings: &EstimationSettings,
) -> Result<Pose, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mode.seed);
    match mode.kind {
        PlacementKind::RandomPlacement => {
            let r = settings.workspace_radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let center = Vector3::from(settings.workspace_center);
            let q = loop {
                let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let q = Quaternion::new(v[0], v[1], v[2], v[3]);
                if q.norm() > 1e-6 {
                    break UnitQuaternion::from_quaternion(q);
                }
            };
            Ok(Pose::new(
                q.to_rotation_matrix().into_inner(),
                center + Vector3::new(r * phi.cos(), r * phi.sin(), 0.0),
            ))
        }
        PlacementKind::HighEntropyPlacement => {
            let h_max = scan.iter().map(|(_, h)| *h).fold(0.0, f64::max);
            if h_max <= 0.0 {
                return Err(BenchError::NoAmbiguousView {
                    object: object.name.clone(),
                });
            }
            let top: Vec<&ViewDescriptor> = scan
                .iter()
                .filter(|(_, h)| *h >= h_max - ENTROPY_TIE)
                .map(|(d, _)| d)
                .collect();
            let view = top[rng.random_range(0..top.len())];
            // The scan sees the object at the identity from `view.camera`;
            // reproduce that relative pose in front of the initial camera.
            Ok(settings.initial_camera().compose(&view.camera.inverse()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimationMethod {
    FixedView,
    RandomNBV,
    /// Fused score with the entropy form from `NbvConfig`.
    ActiveNBV,
    /// Fused score with entropy in raw nats, whatever the config says.
    ActiveNBVRawEntropy,
}

impl EstimationMethod {
    /// The three compared methods.
    pub const ALL: [EstimationMethod; 3] = [Self::FixedView, Self::RandomNBV, Self::ActiveNBV];
    /// `ALL` plus the raw-entropy variant, so both score forms get reported.
    pub const REPORTED: [EstimationMethod; 4] = [
        Self::FixedView,
        Self::RandomNBV,
        Self::ActiveNBV,
        Self::ActiveNBVRawEntropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::FixedView => "fixed_view",
            Self::RandomNBV => "random_nbv",
            Self::ActiveNBV => "active_nbv",
            Self::ActiveNBVRawEntropy => "active_nbv_raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let n = s.replace('-', "_").to_ascii_lowercase();
        Self::REPORTED
            .into_iter()
            .find(|m| m.name() == n || m.name().replace('_', "") == n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrackingMethod {
    PoseServo,
    WorldCamera,
    DiffusionTracker,
}

impl TrackingMethod {
    pub const ALL: [TrackingMethod; 3] = [Self::PoseServo, Self::WorldCamera, Self::DiffusionTracker];

    pub fn name(&self) -> &'static str {
        match self {
            Self::PoseServo => "pose_servo",
            Self::WorldCamera => "world_camera",
            Self::DiffusionTracker => "diffusion_tracker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let n = s.replace('-', "_").to_ascii_lowercase();
        Self::ALL.into_iter().find(|m| {
            m.name() == n || m.name().replace('_', "") == n || (n == "diffusion" && *m == Self::DiffusionTracker)
        })
    }
}

/// One row of the estimation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationTrial {
    pub method: String,
    pub object: String,
    pub placement: String,
    pub trial: usize,
    pub placement_seed: u64,
    pub noise_seed: u64,
    pub initial_p_amb: f64,
    pub moved: bool,
    pub chosen_index: Option<usize>,
    pub hypotheses: usize,
    pub translation_error: f64,
    pub rotation_error_strict: f64,
    pub rotation_error_orbit: f64,
    pub success_orbit: bool,
    pub success_strict: bool,
}

/// One row of the tracking CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingTrial {
    pub method: String,
    pub scenario: String,
    pub trial: usize,
    pub scenario_seed: u64,
    pub noise_seed: u64,
    pub success: bool,
    pub first_pose_loss_frame: Option<usize>,
    pub pose_loss_events: usize,
    pub rejected_commands: usize,
    pub visible_fraction: f64,
    pub planner_calls: usize,
    /// Active estimation of the tracked object before tracking starts.
    pub estimate_success: bool,
    pub episode_success: bool,
}

/// Aggregate of one (method, object, scenario) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub object: String,
    /// Placement for estimation, motion scenario for tracking.
    pub scenario: String,
    pub applicable: bool,
    pub trials: usize,
    pub successes: usize,
    pub sr: f64,
    /// Strict judging for estimation; estimate-then-track episodes for tracking.
    pub secondary_successes: usize,
    pub secondary_sr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: String,
    pub master_seed: u64,
    pub trials_per_cell: usize,
    pub config: BenchConfig,
    pub cells: Vec<CellSummary>,
    pub invariants: Vec<InvariantCheck>,
    /// Free-form remarks about how to read the numbers.
    pub notes: Vec<String>,
    #[serde(skip)]
    pub estimation_trials: Vec<EstimationTrial>,
    #[serde(skip)]
    pub tracking_trials: Vec<TrackingTrial>,
}

impl BenchReport {
    pub fn cell(&self, method: &str, object: &str, scenario: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.object == object && c.scenario == scenario)
    }

    /// Pooled `(successes, trials)` of a method over the applicable cells
    /// whose object and scenario satisfy `filter`.
    pub fn pooled(&self, method: &str, filter: impl Fn(&CellSummary) -> bool) -> (usize, usize) {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.applicable && filter(c))
            .fold((0, 0), |(s, t), c| (s + c.successes, t + c.trials))
    }

    pub fn all_invariants_hold(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    /// One row per trial.
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.estimation_trials {
            w.serialize(r)?;
        }
        for r in &self.tracking_trials {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<suite>_trials.csv` and `<suite>_report.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(std::path::PathBuf, std::path::PathBuf), BenchError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}_trials.csv", self.suite));
        let json_path = dir.join(format!("{}_report.json", self.suite));
        std::fs::write(&csv_path, self.to_csv()?)?;
        std::fs::write(&json_path, self.to_json()? + "\n")?;
        Ok((csv_path, json_path))
    }
}

fn summarize(method: &str, object: &str, scenario: &str, flags: impl Iterator<Item = (bool, bool)>) -> CellSummary {
    let (mut trials, mut a, mut b) = (0, 0, 0);
    for (x, y) in flags {
        trials += 1;
        a += x as usize;
        b += y as usize;
    }
    let rate = |k: usize| if trials == 0 { 0.0 } else { k as f64 / trials as f64 };
    CellSummary {
        method: method.into(),
        object: object.into(),
        scenario: scenario.into(),
        applicable: true,
        trials,
        successes: a,
        sr: rate(a),
        secondary_successes: b,
        secondary_sr: rate(b),
    }
}

fn arithmetic_checks(cells: &[CellSummary], expected_trials: usize) -> Vec<InvariantCheck> {
    let bad_sr: Vec<String> = cells
        .iter()
        .filter(|c| {
            c.applicable
                && ((c.sr * c.trials as f64).round() as usize != c.successes
                    || (c.secondary_sr * c.trials as f64).round() as usize != c.secondary_successes)
        })
        .map(|c| format!("{}/{}/{}", c.method, c.object, c.scenario))
        .collect();
    let bad_count: Vec<String> = cells
        .iter()
        .filter(|c| c.applicable && c.trials != expected_trials)
        .map(|c| format!("{}/{}/{}", c.method, c.object, c.scenario))
        .collect();
    vec![
        InvariantCheck {
            name: "sr_arithmetic".into(),
            passed: bad_sr.is_empty(),
            detail: if bad_sr.is_empty() {
                "sr * trials = successes in every cell".into()
            } else {
                bad_sr.join(", ")
            },
        },
        InvariantCheck {
            name: "trial_counts".into(),
            passed: bad_count.is_empty(),
            detail: if bad_count.is_empty() {
                format!("{expected_trials} trials in every applicable cell")
            } else {
                bad_count.join(", ")
            },
        },
    ]
}

/// Offline scan, prompt and object model for one object.
pub struct PreparedObject {
    pub object: ObjectModel,
    pub scan: Vec<(ViewDescriptor, f64)>,
    pub prompt: GeometricPrompt,
}

impl PreparedObject {
    pub fn new(object: ObjectModel, settings: &EstimationSettings) -> Result<Self, BenchError> {
        let scan = offline_entropy_scan(&object, settings.scan_views, settings.scan_radius, &settings.intrinsics);
        let prompt = build_prompt(
            &object.name,
            &scan,
            settings.prompt_unambiguous,
            settings.prompt_ambiguous,
        )?;
        Ok(Self { object, scan, prompt })
    }
}

/// Runs one estimation episode. The placement depends on the object,
/// placement kind and trial only, so every method faces the same poses.
pub fn estimation_trial(
    method: EstimationMethod,
    prepared: &PreparedObject,
    placement: PlacementKind,
    trial: usize,
    cfg: &BenchConfig,
    master_seed: u64,
) -> Result<EstimationTrial, BenchError> {
    let settings = &cfg.estimation;
    let object = &prepared.object;
    let placement_seed = seed!(master_seed, "placement", object.name.as_str(), placement.name(), trial);
    let noise_seed = seed!(
        master_seed,
        method.name(),
        object.name.as_str(),
        placement.name(),
        trial
    );
    let truth = place_object(
        object,
        &PlacementMode {
            kind: placement,
            seed: placement_seed,
        },
        &prepared.scan,
        settings,
    )?;
    let cam0 = settings.initial_camera();
    let noise = settings.noise(noise_seed);
    let k = &settings.intrinsics;
    let live = render_descriptor(object, &truth, &cam0, k, &[], 0.0);
    let initial_p_amb = OracleScorer::p_amb(object, &live);

    let (final_estimate, final_camera, moved, chosen_index) = match method {
        EstimationMethod::FixedView => (estimate(object, &live, &noise)?, cam0, false, None),
        EstimationMethod::RandomNBV => {
            let current = estimate(object, &live, &noise)?;
            if initial_p_amb < cfg.nbv.tau {
                (current, cam0, false, None)
            } else {
                let est = ActiveEstimator::new(object, &prepared.prompt, &OracleScorer, cfg.nbv, *k);
                let (_, cams) = est.candidate_cameras(&current);
                let mut rng = ChaCha8Rng::seed_from_u64(seed!(noise_seed, "random-candidate"));
                let j = rng.random_range(0..cams.len());
                let view = render_descriptor(object, &truth, &cams[j], k, &[], 0.0);
                let h = estimate(object, &view, &noise.with_seed(seed!(noise_seed, "nbv-final")))?;
                (h, cams[j], true, Some(j))
            }
        }
        EstimationMethod::ActiveNBV | EstimationMethod::ActiveNBVRawEntropy => {
            let nbv = NbvConfig {
                use_normalized_entropy: cfg.nbv.use_normalized_entropy && method == EstimationMethod::ActiveNBV,
                ..cfg.nbv
            };
            let r = run_active_estimation(object, &truth, &cam0, &prepared.prompt, &OracleScorer, &nbv, &noise, k)?;
            (r.final_estimate, r.final_camera, r.moved, r.chosen_index)
        }
    };
    let truth_in_camera = final_camera.inverse().compose(&truth);
    let (dt, strict, orbit) = estimate_errors(&final_estimate, &truth_in_camera, object);
    let crit = &settings.criteria;
    let ok = |dr: f64| dt <= crit.max_translation_error && dr <= crit.max_rotation_error;
    Ok(EstimationTrial {
        method: method.name().into(),
        object: object.name.clone(),
        placement: placement.name().into(),
        trial,
        placement_seed,
        noise_seed,
        initial_p_amb,
        moved,
        chosen_index,
        hypotheses: final_estimate.len(),
        translation_error: dt,
        rotation_error_strict: strict,
        rotation_error_orbit: orbit,
        success_orbit: ok(orbit),
        success_strict: ok(strict),
    })
}

/// Every (method, object, placement) cell with `trials` episodes each.
/// Cells whose placement is impossible are reported as not applicable.
pub fn run_estimation_benchmark(
    methods: &[EstimationMethod],
    objects: &[ObjectModel],
    placements: &[PlacementKind],
    trials: usize,
    cfg: &BenchConfig,
    master_seed: u64,
) -> Result<BenchReport, BenchError> {
    if trials == 0 {
        return Err(BenchError::Config("trials must be at least 1".into()));
    }
    cfg.nbv.validate()?;
    cfg.estimation.criteria.validate()?;
    let prepared: Vec<PreparedObject> = objects
        .iter()
        .map(|o| PreparedObject::new(o.clone(), &cfg.estimation))
        .collect::<Result<_, _>>()?;

    let mut specs = Vec::new();
    for p in &prepared {
        for &placement in placements {
            for &method in methods {
                specs.push((method, p, placement));
            }
        }
    }
    let results: Vec<Result<Vec<EstimationTrial>, BenchError>> = specs
        .par_iter()
        .map(|&(method, p, placement)| {
            (0..trials)
                .into_par_iter()
                .map(|t| estimation_trial(method, p, placement, t, cfg, master_seed))
                .collect()
        })
        .collect();

    let mut cells = Vec::new();
    let mut rows = Vec::new();
    let mut gate_violations = Vec::new();
    for ((method, p, placement), res) in specs.iter().zip(results) {
        match res {
            Ok(trial_rows) => {
                let mut cell = summarize(
                    method.name(),
                    &p.object.name,
                    placement.name(),
                    trial_rows.iter().map(|r| (r.success_orbit, r.success_strict)),
                );
                cell.applicable = true;
                cells.push(cell);
                for r in &trial_rows {
                    let should_move = *method != EstimationMethod::FixedView && r.initial_p_amb >= cfg.nbv.tau;
                    if r.moved != should_move {
                        gate_violations.push(format!("{}/{}/{}/{}", r.method, r.object, r.placement, r.trial));
                    }
                }
                rows.extend(trial_rows);
            }
            Err(BenchError::NoAmbiguousView { .. }) => {
                let mut cell = summarize(method.name(), &p.object.name, placement.name(), std::iter::empty());
                cell.applicable = false;
                cells.push(cell);
            }
            Err(e) => return Err(e),
        }
    }
    let mut invariants = arithmetic_checks(&cells, trials);
    invariants.push(InvariantCheck {
        name: "gate_correctness".into(),
        passed: gate_violations.is_empty(),
        detail: if gate_violations.is_empty() {
            "moved iff initial p_amb >= tau for the NBV methods".into()
        } else {
            gate_violations.join(", ")
        },
    });
    Ok(BenchReport {
        suite: "estimation".into(),
        master_seed,
        trials_per_cell: trials,
        config: cfg.clone(),
        cells,
        invariants,
        notes: vec![
            "sr uses symmetry-orbit-aware judging; secondary_sr uses strict judging against the hidden true orientation".into(),
            "cells with applicable = false have no ambiguous viewpoint for high-entropy placement".into(),
        ],
        estimation_trials: rows,
        tracking_trials: Vec::new(),
    })
}

/// A trained denoiser and its sampling schedule.
pub struct TrackerModel<'a> {
    pub params: &'a DenoiserParams,
    pub schedule: NoiseSchedule,
}

/// Runs one tracking episode; the scenario depends on the scenario kind and
/// trial only, so every method faces the same object motion.
pub fn tracking_trial(
    method: TrackingMethod,
    kind: ScenarioKind,
    trial: usize,
    cfg: &BenchConfig,
    model: Option<&TrackerModel<'_>>,
    master_seed: u64,
) -> Result<(TrackingTrial, TrackRun), BenchError> {
    let scenario_seed = seed!(master_seed, "scenario", kind.name(), trial);
    let noise_seed = seed!(
        master_seed,
        method.name(),
        cfg.tracker.object.as_str(),
        kind.name(),
        trial
    );
    let s = Scenario {
        params: cfg.tracking.scenario.clone(),
        ..Scenario::new(kind, scenario_seed)
    };
    let noise = EstimatorNoise {
        translation_sigma: cfg.tracking.translation_sigma,
        rotation_sigma: cfg.tracking.rotation_sigma,
        seed: noise_seed,
    };
    let run = match method {
        TrackingMethod::PoseServo => run_pose_servo(&s, &cfg.tracker, &noise)?,
        TrackingMethod::WorldCamera => run_world_camera(&s, &cfg.tracker, &noise)?,
        TrackingMethod::DiffusionTracker => {
            let m = model.ok_or_else(|| BenchError::Config("the diffusion tracker needs a checkpoint".into()))?;
            let policy = DiffusionPolicy {
                params: m.params,
                schedule: m.schedule.clone(),
            };
            run_tracking(&policy, &s, &cfg.tracker, &noise)?
        }
    };

    // The episode analogue: actively estimate the tracked object at a random
    // placement, then track.
    let object = cfg.tracker.object_model()?;
    let prepared = PreparedObject::new(object, &cfg.estimation)?;
    let est = estimation_trial(
        EstimationMethod::ActiveNBV,
        &prepared,
        PlacementKind::RandomPlacement,
        trial,
        cfg,
        seed!(master_seed, "episode", method.name(), kind.name()),
    )?;
    let visible = run.frames.iter().filter(|f| f.visible).count();
    let row = TrackingTrial {
        method: method.name().into(),
        scenario: kind.name().into(),
        trial,
        scenario_seed,
        noise_seed,
        success: run.success,
        first_pose_loss_frame: run.pose_loss_events.first().copied(),
        pose_loss_events: run.pose_loss_events.len(),
        rejected_commands: run.rejected_commands,
        visible_fraction: visible as f64 / run.frames.len().max(1) as f64,
        planner_calls: run.planner_calls,
        estimate_success: est.success_orbit,
        episode_success: est.success_orbit && run.success,
    };
    Ok((row, run))
}

/// Every (method, scenario) cell with `trials` closed-loop runs each.
pub fn run_tracking_benchmark(
    methods: &[TrackingMethod],
    scenarios: &[ScenarioKind],
    trials: usize,
    cfg: &BenchConfig,
    model: Option<&TrackerModel<'_>>,
    master_seed: u64,
) -> Result<BenchReport, BenchError> {
    if trials == 0 {
        return Err(BenchError::Config("trials must be at least 1".into()));
    }
    cfg.tracker.validate()?;
    if let Some(m) = model {
        let arch = m.params.arch;
        if arch.history != cfg.tracker.history || arch.horizon != cfg.tracker.horizon {
            return Err(BenchError::Config(format!(
                "checkpoint expects H={} K={}, tracker uses H={} K={}",
                arch.history, arch.horizon, cfg.tracker.history, cfg.tracker.horizon
            )));
        }
    }
    let mut specs = Vec::new();
    for &kind in scenarios {
        for &method in methods {
            specs.push((method, kind));
        }
    }
    let results: Vec<Vec<(TrackingTrial, TrackRun)>> = specs
        .par_iter()
        .map(|&(method, kind)| {
            (0..trials)
                .into_par_iter()
                .map(|t| tracking_trial(method, kind, t, cfg, model, master_seed))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let object = cfg.tracker.object.clone();
    let expected_calls = cfg.tracker.n_total.div_ceil(cfg.tracker.execute);
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    let mut bad_calls = Vec::new();
    for ((method, kind), runs) in specs.iter().zip(results) {
        cells.push(summarize(
            method.name(),
            &object,
            kind.name(),
            runs.iter().map(|(r, _)| (r.success, r.episode_success)),
        ));
        for (r, run) in runs {
            if *method == TrackingMethod::DiffusionTracker && run.planner_calls != expected_calls {
                bad_calls.push(format!("{}/{}", r.scenario, r.trial));
            }
            rows.push(r);
        }
    }
    let mut invariants = arithmetic_checks(&cells, trials);
    invariants.push(InvariantCheck {
        name: "planner_calls".into(),
        passed: bad_calls.is_empty(),
        detail: if bad_calls.is_empty() {
            format!("{expected_calls} planner calls per diffusion run")
        } else {
            bad_calls.join(", ")
        },
    });
    Ok(BenchReport {
        suite: "tracking".into(),
        master_seed,
        trials_per_cell: trials,
        config: cfg.clone(),
        cells,
        invariants,
        notes: vec![
            "sr is the fraction of runs without a pose-loss event".into(),
            "secondary_sr is the combined estimate-then-track episode rate; it is not comparable to an assembly success rate, which is out of scope".into(),
        ],
        estimation_trials: Vec::new(),
        tracking_trials: rows,
    })
}

/// Demonstrations for each scenario kind under the configured scenario
/// parameters.
pub fn tracking_dataset(
    cfg: &BenchConfig,
    scenarios: &[ScenarioKind],
) -> Result<Vec<crate::diffusion::DatasetRecord>, BenchError> {
    let templates: Vec<Scenario> = scenarios
        .iter()
        .map(|&k| Scenario {
            params: cfg.tracking.scenario.clone(),
            ..Scenario::new(k, 0)
        })
        .collect();
    Ok(build_dataset(
        &templates,
        cfg.tracking.demos,
        &cfg.tracker,
        cfg.tracking.dataset_seed,
    )?)
}

/// Trains a denoiser on demonstration records, checking that the training
/// and tracker configurations agree on history and horizon.
pub fn train_on_records(
    cfg: &BenchConfig,
    records: &[crate::diffusion::DatasetRecord],
) -> Result<TrainOutcome, BenchError> {
    if cfg.train.history != cfg.tracker.history || cfg.train.horizon != cfg.tracker.horizon {
        return Err(BenchError::Config(format!(
            "train uses H={} K={}, tracker uses H={} K={}",
            cfg.train.history, cfg.train.horizon, cfg.tracker.history, cfg.tracker.horizon
        )));
    }
    let windows = training_windows(records, cfg.train.history, cfg.train.horizon)?;
    let set = TrainingSet::from_windows(&windows)?;
    Ok(train(&set, &cfg.train)?)
}

/// The shipped objects by name.
pub fn objects_by_name(lib: &ObjectLibrary, names: &[String]) -> Result<Vec<ObjectModel>, BenchError> {
    names.iter().map(|n| Ok(lib.get(n)?.clone())).collect()
}
