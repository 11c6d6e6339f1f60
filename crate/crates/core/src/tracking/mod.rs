//! Closed-loop active tracking with a wrist camera.
//!
//! The robot is kinematic: each frame the end effector jumps to the
//! commanded pose unless that pose leaves the workspace sphere. Every frame
//! the camera (`ee ∘ hand_eye`) observes the object, the estimator returns a
//! camera-frame pose, and the transform chain lifts it into the base frame.
//!
//! Frame loop, for `i = 0..N`:
//!
//! 1. capture frame `i` from the current end-effector pose;
//! 2. update the H-frame history (stale object pose if the view is empty);
//! 3. ask the controller for the next pose and move there.
//!
//! The receding-horizon controller plans on frames `0, k, 2k, …` and spends
//! the following `k` frames executing the selected slice of the chunk.

mod scenario;

pub use scenario::{generate_object_trajectory, Scenario, ScenarioKind, ScenarioParams};

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{
    group_demos, sample, windows_from_demo, ActionChunk, DatasetRecord, DenoiserParams, DiffusionError, NoiseSchedule,
    Observation, TrainingWindow,
};
use crate::estimator::{estimate, EstimatorNoise};
use crate::geometry::{
    axis_angle, geodesic_rotation_distance, in_frustum, interpolate, look_at, object_in_base, CameraIntrinsics, Pose,
};
use crate::scene::{render_descriptor, ObjectLibrary, ObjectModel, OccluderDisk, SceneError};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("expert cannot keep the object in view at frame {frame}")]
    InfeasibleStandoff { frame: usize },
    #[error("invalid tracker configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// A point on a horizontal ring around the robot base from which the expert
/// camera looks at the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VantageRing {
    pub radius: f64,
    pub height: f64,
    pub azimuth: f64,
}

impl VantageRing {
    pub fn point(&self) -> Vector3<f64> {
        Vector3::new(
            self.radius * self.azimuth.cos(),
            self.radius * self.azimuth.sin(),
            self.height,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Prediction horizon K.
    pub horizon: usize,
    /// Poses executed per plan, k.
    pub execute: usize,
    /// Observation history H.
    pub history: usize,
    /// Total frames N per run.
    pub n_total: usize,
    pub pose_loss_frames: usize,
    /// Camera pose in the end-effector frame.
    pub hand_eye: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Execute the first k predictions instead of the last k.
    pub execute_first_k: bool,
    /// Tracked object, from the built-in library.
    pub object: String,
    /// Camera-to-object distance kept by the expert, meters.
    pub standoff: f64,
    pub vantage: VantageRing,
    pub max_step_translation: f64,
    pub max_step_rotation_deg: f64,
    pub workspace_radius: f64,
    /// Pose-servo baseline: fraction of the pose error corrected per frame.
    pub servo_gain: f64,
    /// World-camera baseline: height above the table center.
    pub world_camera_height: f64,
    /// Random offset of the expert's first pose in demonstrations, meters.
    pub demo_start_translation: f64,
    pub demo_start_rotation_deg: f64,
    /// Demonstrations pursue the ideal pose with this per-frame gain...
    pub demo_pursuit_gain: f64,
    /// ...and receive random per-frame kicks of these sizes, so the data
    /// contains recovery from off-center states.
    pub demo_jitter_translation: f64,
    pub demo_jitter_rotation_deg: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            execute: 5,
            history: 2,
            n_total: 200,
            pose_loss_frames: 5,
            hand_eye: Pose::from_translation(Vector3::new(0.0, -0.06, 0.04)),
            intrinsics: CameraIntrinsics::default(),
            execute_first_k: false,
            object: "peg-asym".into(),
            standoff: 0.35,
            vantage: VantageRing {
                radius: 0.2,
                height: 0.45,
                azimuth: 0.0,
            },
            max_step_translation: 0.05,
            max_step_rotation_deg: 10.0,
            workspace_radius: 0.9,
            servo_gain: 0.5,
            world_camera_height: 0.35,
            demo_start_translation: 0.03,
            demo_start_rotation_deg: 5.0,
            demo_pursuit_gain: 0.3,
            demo_jitter_translation: 0.01,
            demo_jitter_rotation_deg: 2.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let bad = |m: &str| Err(TrackingError::Config(m.into()));
        if self.execute == 0 || self.execute > self.horizon {
            return bad("need 1 <= k <= K");
        }
        if self.history == 0 || self.n_total == 0 || self.pose_loss_frames == 0 {
            return bad("history, n_total and pose_loss_frames must be positive");
        }
        if !(self.standoff > 0.0 && self.workspace_radius > 0.0) {
            return bad("standoff and workspace radius must be positive");
        }
        if !(self.max_step_translation > 0.0 && self.max_step_rotation_deg > 0.0) {
            return bad("expert step limits must be positive");
        }
        if !(0.0..=1.0).contains(&self.servo_gain) || !(self.demo_pursuit_gain > 0.0 && self.demo_pursuit_gain <= 1.0) {
            return bad("servo and pursuit gains must lie in (0, 1]");
        }
        self.intrinsics
            .validate()
            .map_err(|e| TrackingError::Config(e.to_string()))
    }

    pub fn object_model(&self) -> Result<ObjectModel, TrackingError> {
        Ok(ObjectLibrary::builtin().get(&self.object)?.clone())
    }

    /// Chunk indices executed after each plan.
    pub fn executed_slice(&self) -> std::ops::Range<usize> {
        if self.execute_first_k {
            0..self.execute
        } else {
            self.horizon - self.execute..self.horizon
        }
    }

    pub fn camera_of(&self, ee: &Pose) -> Pose {
        ee.compose(&self.hand_eye)
    }

    pub fn ee_of(&self, camera: &Pose) -> Pose {
        camera.compose(&self.hand_eye.inverse())
    }

    pub fn in_workspace(&self, ee: &Pose) -> bool {
        ee.translation.norm() <= self.workspace_radius
    }
}

/// Camera at the standoff distance on the line from the object toward the
/// vantage point, looking at the object.
pub fn ideal_camera(object_position: &Vector3<f64>, cfg: &TrackerConfig) -> Pose {
    let dir = (cfg.vantage.point() - object_position).normalize();
    look_at(&(object_position + dir * cfg.standoff), object_position)
}

pub fn ideal_ee(object_position: &Vector3<f64>, cfg: &TrackerConfig) -> Pose {
    cfg.ee_of(&ideal_camera(object_position, cfg))
}

/// Moves from `from` toward `to` without exceeding the per-frame limits.
pub fn rate_limited_step(from: &Pose, to: &Pose, cfg: &TrackerConfig) -> Pose {
    let d = (to.translation - from.translation).norm();
    let a = geodesic_rotation_distance(from, to);
    let mut s: f64 = 1.0;
    if d > cfg.max_step_translation {
        s = s.min(cfg.max_step_translation / d);
    }
    let max_rot = cfg.max_step_rotation_deg.to_radians();
    if a > max_rot {
        s = s.min(max_rot / a);
    }
    if s >= 1.0 {
        *to
    } else {
        interpolate(from, to, s)
    }
}

/// Scripted expert end-effector trajectory starting at the ideal pose.
pub fn expert_camera_policy(object_traj: &[(f64, Pose)], cfg: &TrackerConfig) -> Result<Vec<Pose>, TrackingError> {
    expert_camera_policy_from(object_traj, cfg, None)
}

/// Scripted expert starting from `start` (or the ideal pose when `None`).
pub fn expert_camera_policy_from(
    object_traj: &[(f64, Pose)],
    cfg: &TrackerConfig,
    start: Option<Pose>,
) -> Result<Vec<Pose>, TrackingError> {
    let mut out: Vec<Pose> = Vec::with_capacity(object_traj.len());
    for (i, (_, obj)) in object_traj.iter().enumerate() {
        let target = ideal_ee(&obj.translation, cfg);
        let ee = match out.last() {
            None => start.unwrap_or(target),
            Some(prev) => rate_limited_step(prev, &target, cfg),
        };
        if !in_frustum(&cfg.camera_of(&ee), &cfg.intrinsics, &obj.translation) {
            return Err(TrackingError::InfeasibleStandoff { frame: i });
        }
        out.push(ee);
    }
    Ok(out)
}

/// Occluders for the scenario: a disk on the midpoint of the expert
/// sightline at the middle of the occlusion window.
pub fn scenario_occluders(s: &Scenario, cfg: &TrackerConfig) -> Vec<OccluderDisk> {
    if s.kind != ScenarioKind::TemporaryOcclusion {
        return Vec::new();
    }
    let p = &s.params;
    let mid_time = p.occlusion_start + 0.5 * p.occlusion_duration;
    let traj = generate_object_trajectory(s);
    let frame = ((mid_time * s.rate).round() as usize).min(traj.len().saturating_sub(1));
    let obj = traj[frame].1.translation;
    let eye = ideal_camera(&obj, cfg).translation;
    vec![OccluderDisk::new(
        (obj + eye) * 0.5,
        p.occluder_radius,
        p.occlusion_start,
        p.occlusion_start + p.occlusion_duration,
    )]
}

/// Expert demonstrations for each template scenario. Demo `d` of a template
/// uses the scenario seed `seed!(seed, kind, d)` and a perturbed first pose.
pub fn build_dataset(
    templates: &[Scenario],
    demos_per_scenario: usize,
    cfg: &TrackerConfig,
    seed: u64,
) -> Result<Vec<DatasetRecord>, TrackingError> {
    cfg.validate()?;
    if demos_per_scenario == 0 {
        return Err(TrackingError::Config(
            "need at least one demonstration per scenario".into(),
        ));
    }
    let mut records = Vec::new();
    let mut demo_id = 0u64;
    for template in templates {
        for d in 0..demos_per_scenario {
            let s = Scenario {
                seed: seed!(seed, template.kind.name(), d),
                ..template.clone()
            };
            let traj = generate_object_trajectory(&s);
            let ee = demonstration(&traj, cfg, s.seed)?;
            records.extend(
                traj.iter()
                    .zip(&ee)
                    .map(|((t, obj), e)| DatasetRecord::new(*t, obj, e, s.kind.name(), demo_id)),
            );
            demo_id += 1;
        }
    }
    Ok(records)
}

/// A noisy teleoperation-like demonstration: the operator starts off the
/// ideal pose, pursues it with a finite gain under the expert's rate limits,
/// and is kicked by small random motions every frame.
pub fn demonstration(object_traj: &[(f64, Pose)], cfg: &TrackerConfig, seed: u64) -> Result<Vec<Pose>, TrackingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed!(seed, "demonstration"));
    let mut out: Vec<Pose> = Vec::with_capacity(object_traj.len());
    for (i, (_, obj)) in object_traj.iter().enumerate() {
        let target = ideal_ee(&obj.translation, cfg);
        let ee = match out.last() {
            None => kick(
                &target,
                cfg.demo_start_translation,
                cfg.demo_start_rotation_deg,
                &mut rng,
            ),
            Some(prev) => {
                let aim = interpolate(prev, &target, cfg.demo_pursuit_gain);
                let kicked = kick(
                    &aim,
                    cfg.demo_jitter_translation,
                    cfg.demo_jitter_rotation_deg,
                    &mut rng,
                );
                rate_limited_step(prev, &kicked, cfg)
            }
        };
        if !in_frustum(&cfg.camera_of(&ee), &cfg.intrinsics, &obj.translation) {
            return Err(TrackingError::InfeasibleStandoff { frame: i });
        }
        out.push(ee);
    }
    Ok(out)
}

/// Random rotation about a uniform axis and translation along a uniform
/// direction, with magnitudes uniform up to the given bounds.
fn kick(p: &Pose, translation: f64, rotation_deg: f64, rng: &mut ChaCha8Rng) -> Pose {
    let mut unit = || {
        let v: Vector3<f64> = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        v / v.norm().max(1e-12)
    };
    let dt = unit() * translation;
    let axis = unit();
    let angle = rotation_deg.to_radians();
    let mut scale = || rng.random::<f64>();
    let (st, sr) = (scale(), scale());
    Pose::new(axis_angle(&axis, angle * sr) * p.rotation, p.translation + dt * st)
}

/// Training windows from every demonstration in a dataset.
pub fn training_windows(
    records: &[DatasetRecord],
    history: usize,
    horizon: usize,
) -> Result<Vec<TrainingWindow>, TrackingError> {
    Ok(group_demos(records)?
        .iter()
        .flat_map(|d| windows_from_demo(&d.object_poses, &d.ee_poses, history, horizon))
        .collect())
}

/// Produces K-pose chunks from an observation.
pub trait ChunkPolicy: Sync {
    fn plan(&self, obs: &Observation, frame: usize, rng: &mut ChaCha8Rng) -> Result<ActionChunk, TrackingError>;
}

/// Samples chunks from a trained denoiser.
pub struct DiffusionPolicy<'a> {
    pub params: &'a DenoiserParams,
    pub schedule: NoiseSchedule,
}

impl ChunkPolicy for DiffusionPolicy<'_> {
    fn plan(&self, obs: &Observation, _frame: usize, rng: &mut ChaCha8Rng) -> Result<ActionChunk, TrackingError> {
        Ok(sample(self.params, obs, &self.schedule, rng)?)
    }
}

/// Replays a precomputed expert trajectory, placing the poses for the next
/// k frames in the executed slice of the chunk.
pub struct ExpertReplay {
    pub ee: Vec<Pose>,
    pub horizon: usize,
    pub executed: std::ops::Range<usize>,
}

impl ExpertReplay {
    pub fn new(ee: Vec<Pose>, cfg: &TrackerConfig) -> Self {
        Self {
            ee,
            horizon: cfg.horizon,
            executed: cfg.executed_slice(),
        }
    }
}

impl ChunkPolicy for ExpertReplay {
    fn plan(&self, _obs: &Observation, frame: usize, _rng: &mut ChaCha8Rng) -> Result<ActionChunk, TrackingError> {
        let last = self.ee.len() - 1;
        let at = |j: usize| self.ee[(frame + 1 + j).min(last)];
        let offset = self.executed.start;
        let poses = (0..self.horizon)
            .map(|j| at(j.saturating_sub(offset).min(self.executed.len() - 1)))
            .collect();
        Ok(ActionChunk { poses })
    }
}

/// One captured frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub time: f64,
    /// End-effector pose at capture.
    pub ee_pose: Pose,
    pub object_pose: Pose,
    /// The estimator returned a pose. When false the history keeps the last
    /// valid object pose.
    pub visible: bool,
    pub pose_loss: bool,
    /// The command issued after this frame was rejected by the workspace.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackRun {
    pub method: String,
    pub scenario: ScenarioKind,
    pub frames: Vec<FrameRecord>,
    /// End-effector pose after each frame's command, length N.
    pub executed: Vec<Pose>,
    /// `(planner call, chunk index)` behind each executed pose, for
    /// chunk-based controllers.
    pub executed_from: Vec<(usize, usize)>,
    pub planner_calls: usize,
    pub pose_loss_events: Vec<usize>,
    pub rejected_commands: usize,
    pub success: bool,
}

impl TrackRun {
    pub fn visibility(&self) -> Vec<bool> {
        self.frames.iter().map(|f| f.visible).collect()
    }

    /// `time, ee[7], object[7], visible, event` per frame.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "time,ee_tx,ee_ty,ee_tz,ee_qw,ee_qx,ee_qy,ee_qz,obj_tx,obj_ty,obj_tz,obj_qw,obj_qx,obj_qy,obj_qz,visible,event\n",
        );
        for f in &self.frames {
            let cols: Vec<String> = std::iter::once(f.time)
                .chain(f.ee_pose.to_array7())
                .chain(f.object_pose.to_array7())
                .map(|v| v.to_string())
                .collect();
            let event = if f.pose_loss {
                "pose_loss"
            } else if f.rejected {
                "rejected"
            } else {
                ""
            };
            s.push_str(&format!("{},{},{}\n", cols.join(","), f.visible as u8, event));
        }
        s
    }
}

/// What a controller sees on each frame.
pub struct FrameContext<'a> {
    pub frame: usize,
    /// H most recent frames, oldest first; `None` before the first valid
    /// estimate.
    pub history: Option<&'a Observation>,
    /// Object pose estimated on this frame, if any.
    pub fresh_estimate: Option<Pose>,
    pub current_ee: Pose,
}

trait Controller {
    fn command(&mut self, ctx: &FrameContext<'_>) -> Result<Pose, TrackingError>;

    fn chunk_bookkeeping(&self) -> Option<(usize, (usize, usize))> {
        None
    }
}

struct RecedingHorizon<'a> {
    policy: &'a dyn ChunkPolicy,
    cfg: &'a TrackerConfig,
    seed: u64,
    queue: VecDeque<(usize, usize, Pose)>,
    calls: usize,
    last: Option<(usize, usize)>,
}

impl Controller for RecedingHorizon<'_> {
    fn command(&mut self, ctx: &FrameContext<'_>) -> Result<Pose, TrackingError> {
        if ctx.frame.is_multiple_of(self.cfg.execute) {
            let call = self.calls;
            self.calls += 1;
            let chunk = match ctx.history {
                Some(obs) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed!(self.seed, "plan", call));
                    let c = self.policy.plan(obs, ctx.frame, &mut rng)?;
                    if c.horizon() != self.cfg.horizon {
                        return Err(TrackingError::Config(format!(
                            "policy returned {} poses, expected {}",
                            c.horizon(),
                            self.cfg.horizon
                        )));
                    }
                    c
                }
                None => ActionChunk {
                    poses: vec![ctx.current_ee; self.cfg.horizon],
                },
            };
            self.queue = self.cfg.executed_slice().map(|j| (call, j, chunk.poses[j])).collect();
        }
        let (call, j, pose) = self.queue.pop_front().expect("a plan precedes every executed frame");
        self.last = Some((call, j));
        Ok(pose)
    }

    fn chunk_bookkeeping(&self) -> Option<(usize, (usize, usize))> {
        self.last.map(|l| (self.calls, l))
    }
}

struct PoseServo<'a> {
    cfg: &'a TrackerConfig,
}

impl Controller for PoseServo<'_> {
    fn command(&mut self, ctx: &FrameContext<'_>) -> Result<Pose, TrackingError> {
        Ok(match ctx.fresh_estimate {
            Some(obj) => interpolate(
                &ctx.current_ee,
                &ideal_ee(&obj.translation, self.cfg),
                self.cfg.servo_gain,
            ),
            None => ctx.current_ee,
        })
    }
}

struct Fixed(Pose);

impl Controller for Fixed {
    fn command(&mut self, _ctx: &FrameContext<'_>) -> Result<Pose, TrackingError> {
        Ok(self.0)
    }
}

/// Receding-horizon tracking with a chunk policy.
pub fn run_tracking(
    policy: &dyn ChunkPolicy,
    s: &Scenario,
    cfg: &TrackerConfig,
    noise: &EstimatorNoise,
) -> Result<TrackRun, TrackingError> {
    let mut ctl = RecedingHorizon {
        policy,
        cfg,
        seed: noise.seed,
        queue: VecDeque::new(),
        calls: 0,
        last: None,
    };
    let start = start_pose(s, cfg);
    simulate("diffusion", &mut ctl, start, s, cfg, noise)
}

/// Proportional servoing toward the expert standoff of the latest estimate.
pub fn run_pose_servo(s: &Scenario, cfg: &TrackerConfig, noise: &EstimatorNoise) -> Result<TrackRun, TrackingError> {
    let start = start_pose(s, cfg);
    simulate("pose_servo", &mut PoseServo { cfg }, start, s, cfg, noise)
}

/// Fixed camera above the table center, looking down.
pub fn world_camera_pose(s: &Scenario, cfg: &TrackerConfig) -> Pose {
    let c = s.table_center();
    look_at(&(c + Vector3::new(0.0, 0.0, cfg.world_camera_height)), &c)
}

pub fn run_world_camera(s: &Scenario, cfg: &TrackerConfig, noise: &EstimatorNoise) -> Result<TrackRun, TrackingError> {
    let ee = cfg.ee_of(&world_camera_pose(s, cfg));
    simulate("world_camera", &mut Fixed(ee), ee, s, cfg, noise)
}

/// Ideal expert pose for the first frame, or a camera at the vantage point
/// looking at the table center when that pose is out of reach.
pub fn start_pose(s: &Scenario, cfg: &TrackerConfig) -> Pose {
    let traj = generate_object_trajectory(s);
    let ideal = traj.first().map(|(_, obj)| ideal_ee(&obj.translation, cfg));
    match ideal {
        Some(p) if cfg.in_workspace(&p) => p,
        _ => cfg.ee_of(&look_at(&cfg.vantage.point(), &s.table_center())),
    }
}

fn simulate(
    method: &str,
    controller: &mut dyn Controller,
    start: Pose,
    s: &Scenario,
    cfg: &TrackerConfig,
    noise: &EstimatorNoise,
) -> Result<TrackRun, TrackingError> {
    cfg.validate()?;
    s.validate().map_err(TrackingError::Config)?;
    let object = cfg.object_model()?;
    let traj = generate_object_trajectory(s);
    if traj.is_empty() {
        return Err(TrackingError::Config("scenario has no frames".into()));
    }
    let occluders = scenario_occluders(s, cfg);
    let n = cfg.n_total;

    let mut ee = start;
    let mut history: VecDeque<(Pose, Pose)> = VecDeque::with_capacity(cfg.history);
    let mut last_valid: Option<Pose> = None;
    let mut empty_streak = 0;
    let mut frames = Vec::with_capacity(n);
    let mut executed = Vec::with_capacity(n);
    let mut executed_from = Vec::new();
    let mut pose_loss_events = Vec::new();
    let mut rejected_commands = 0;
    let mut calls = 0;

    for i in 0..n {
        let time = s.time(i);
        let object_pose = traj[i.min(traj.len() - 1)].1;
        let capture_ee = ee;
        let camera = cfg.camera_of(&ee);
        let view = render_descriptor(&object, &object_pose, &camera, &cfg.intrinsics, &occluders, time);
        let frame_noise = noise.with_seed(seed!(noise.seed, "frame", i));
        let fresh = estimate(&object, &view, &frame_noise).ok().map(|h| {
            let in_base = |c_t_o: &Pose| object_in_base(&c_t_o.inverse(), &ee.inverse(), &cfg.hand_eye);
            match last_valid {
                None => in_base(&h.best().pose),
                Some(prev) => h
                    .hypotheses
                    .iter()
                    .map(|x| in_base(&x.pose))
                    .min_by(|a, b| {
                        geodesic_rotation_distance(a, &prev).total_cmp(&geodesic_rotation_distance(b, &prev))
                    })
                    .expect("non-empty hypothesis set"),
            }
        });

        let mut pose_loss = false;
        match fresh {
            Some(obj) => {
                empty_streak = 0;
                if last_valid.is_none() {
                    history = std::iter::repeat_n((obj, ee), cfg.history).collect();
                } else {
                    push_history(&mut history, (obj, ee), cfg.history);
                }
                last_valid = Some(obj);
            }
            None => {
                empty_streak += 1;
                if empty_streak == cfg.pose_loss_frames {
                    pose_loss = true;
                    pose_loss_events.push(i);
                }
                if let Some(obj) = last_valid {
                    push_history(&mut history, (obj, ee), cfg.history);
                }
            }
        }

        let obs = last_valid.map(|_| Observation {
            object_poses: history.iter().map(|h| h.0).collect(),
            ee_poses: history.iter().map(|h| h.1).collect(),
        });
        let ctx = FrameContext {
            frame: i,
            history: obs.as_ref(),
            fresh_estimate: fresh,
            current_ee: ee,
        };
        let cmd = controller.command(&ctx)?;
        if let Some((c, from)) = controller.chunk_bookkeeping() {
            calls = c;
            executed_from.push(from);
        }
        let rejected = !cmd.is_finite() || !cfg.in_workspace(&cmd);
        if rejected {
            rejected_commands += 1;
        } else {
            ee = cmd;
        }
        frames.push(FrameRecord {
            time,
            ee_pose: capture_ee,
            object_pose,
            visible: fresh.is_some(),
            pose_loss,
            rejected,
        });
        executed.push(ee);
    }

    Ok(TrackRun {
        method: method.to_string(),
        scenario: s.kind,
        success: pose_loss_events.is_empty(),
        frames,
        executed,
        executed_from,
        planner_calls: calls,
        pose_loss_events,
        rejected_commands,
    })
}

fn push_history(history: &mut VecDeque<(Pose, Pose)>, item: (Pose, Pose), h: usize) {
    history.push_back(item);
    while history.len() > h {
        history.pop_front();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replay(s: &Scenario, cfg: &TrackerConfig) -> TrackRun {
        let traj = generate_object_trajectory(s);
        let ee = expert_camera_policy(&traj, cfg).unwrap();
        let policy = ExpertReplay::new(ee, cfg);
        run_tracking(&policy, s, cfg, &EstimatorNoise::default().with_seed(3)).unwrap()
    }

    #[test]
    fn expert_keeps_linear_object_in_view() {
        let cfg = TrackerConfig::default();
        for seed in 0..10 {
            let s = Scenario::new(ScenarioKind::LinearMotion, seed);
            let traj = generate_object_trajectory(&s);
            let ee = expert_camera_policy(&traj, &cfg).unwrap();
            for (e, (_, o)) in ee.iter().zip(&traj) {
                assert!(in_frustum(&cfg.camera_of(e), &cfg.intrinsics, &o.translation));
                let cam = cfg.camera_of(e);
                assert!(((cam.translation - o.translation).norm() - cfg.standoff).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn expert_is_static_for_static_object_and_periodic_on_circle() {
        let cfg = TrackerConfig::default();
        let mut s = Scenario::new(ScenarioKind::LinearMotion, 0);
        s.params.endpoints = Some(([0.5, 0.05, 0.04], [0.5, 0.05, 0.04]));
        let traj = generate_object_trajectory(&s);
        let start = Pose::new(
            axis_angle(&Vector3::x(), 0.05) * ideal_ee(&traj[0].1.translation, &cfg).rotation,
            ideal_ee(&traj[0].1.translation, &cfg).translation + Vector3::new(0.02, 0.0, 0.0),
        );
        let ee = expert_camera_policy_from(&traj, &cfg, Some(start)).unwrap();
        assert_ne!(ee[0], ee[10]);
        assert!(ee[20..].iter().all(|e| *e == ee[20]));
        let cam = cfg.camera_of(&ee[20]);
        let local = cam.inverse().transform_point(&traj[0].1.translation);
        assert!(local.x.abs() < 1e-9 && local.y.abs() < 1e-9);

        let mut c = Scenario::new(ScenarioKind::CircularRotation, 0);
        c.params.angular_speed = Some(std::f64::consts::TAU / c.time(c.n_frames() - 1));
        let ee = expert_camera_policy(&generate_object_trajectory(&c), &cfg).unwrap();
        let (a, b) = (ee[0], ee[ee.len() - 1]);
        assert!((a.to_homogeneous() - b.to_homogeneous()).amax() < 1e-6);
    }

    #[test]
    fn expert_rate_limits_hold() {
        let cfg = TrackerConfig::default();
        let s = Scenario::new(ScenarioKind::RandomSpatial, 2);
        let traj = generate_object_trajectory(&s);
        let ee = demonstration(&traj, &cfg, 9).unwrap();
        for w in ee.windows(2) {
            assert!((w[1].translation - w[0].translation).norm() <= 0.05 + 1e-9);
            assert!(geodesic_rotation_distance(&w[0], &w[1]) <= 10f64.to_radians() + 1e-9);
        }
    }

    #[test]
    fn expert_reports_infeasible_jumps() {
        let cfg = TrackerConfig {
            max_step_translation: 0.001,
            ..TrackerConfig::default()
        };
        let s = Scenario::new(ScenarioKind::CircularRotation, 0);
        let mut fast = s.clone();
        fast.params.angular_speed = Some(3.0);
        fast.params.circle_radius = 0.2;
        assert!(matches!(
            expert_camera_policy(&generate_object_trajectory(&fast), &cfg),
            Err(TrackingError::InfeasibleStandoff { .. })
        ));
    }

    #[test]
    fn dataset_size_and_round_trip() {
        let cfg = TrackerConfig::default();
        let templates: Vec<Scenario> = ScenarioKind::ALL.iter().map(|k| Scenario::new(*k, 0)).collect();
        let records = build_dataset(&templates, 10, &cfg, 7).unwrap();
        assert_eq!(records.len(), 8000);
        assert!(records
            .iter()
            .all(|r| r.poses().unwrap().1.orthonormality_residual() < 1e-9));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        crate::diffusion::write_dataset(&path, &records).unwrap();
        assert_eq!(crate::diffusion::read_dataset(&path).unwrap(), records);
        let windows = training_windows(&records, 2, 20).unwrap();
        assert_eq!(windows.len(), 40 * (200 - 2 - 20 + 1));
    }

    #[test]
    fn expert_replay_succeeds_everywhere() {
        for execute_first_k in [false, true] {
            let cfg = TrackerConfig {
                execute_first_k,
                ..TrackerConfig::default()
            };
            for kind in ScenarioKind::ALL {
                let run = replay(&Scenario::new(kind, 1), &cfg);
                assert!(
                    run.success,
                    "{kind} first_k={execute_first_k}: {:?}",
                    run.pose_loss_events
                );
                assert_eq!(run.executed.len(), 200);
            }
        }
    }

    #[test]
    fn receding_horizon_bookkeeping() {
        for (n, k) in [(200, 5), (23, 5), (7, 3)] {
            let cfg = TrackerConfig {
                n_total: n,
                execute: k,
                ..TrackerConfig::default()
            };
            let run = replay(&Scenario::new(ScenarioKind::LinearMotion, 0), &cfg);
            assert_eq!(run.planner_calls, n.div_ceil(k));
            assert_eq!(run.executed.len(), n);
            for (i, (call, j)) in run.executed_from.iter().enumerate() {
                assert_eq!(*call, i / k);
                assert_eq!(*j, cfg.horizon - k + i % k);
            }
        }
    }

    #[test]
    fn long_occlusion_triggers_pose_loss() {
        let cfg = TrackerConfig {
            pose_loss_frames: 1,
            ..TrackerConfig::default()
        };
        let mut s = Scenario::new(ScenarioKind::TemporaryOcclusion, 4);
        s.params.occlusion_duration = 1.0;
        let run = replay(&s, &cfg);
        assert!(!run.pose_loss_events.is_empty());
        assert!(!run.success);
        let blind: Vec<bool> = run.visibility();
        assert!(blind.iter().filter(|v| !**v).count() >= 5);

        // The default window is shorter than the pose-loss threshold.
        let run = replay(
            &Scenario::new(ScenarioKind::TemporaryOcclusion, 4),
            &TrackerConfig::default(),
        );
        assert!(run.success);
        assert!(run.visibility().iter().any(|v| !v));
    }

    #[test]
    fn world_camera_loses_escaping_object() {
        let cfg = TrackerConfig::default();
        for seed in 0..5 {
            let s = Scenario::new(ScenarioKind::LinearMotion, seed);
            let run = run_world_camera(&s, &cfg, &EstimatorNoise::default()).unwrap();
            assert!(!run.success);
            assert!(run.frames[0].visible);
        }
    }

    #[test]
    fn pose_servo_follows_reachable_motion_but_not_unreachable_circle() {
        let cfg = TrackerConfig::default();
        let run = run_pose_servo(
            &Scenario::new(ScenarioKind::LinearMotion, 2),
            &cfg,
            &EstimatorNoise::default(),
        )
        .unwrap();
        assert!(run.success);

        let mut far = Scenario::new(ScenarioKind::CircularRotation, 0);
        far.params.circle_radius = 0.9;
        far.params.phase = std::f64::consts::FRAC_PI_2;
        let traj = generate_object_trajectory(&far);
        assert!(traj
            .iter()
            .any(|(_, o)| !cfg.in_workspace(&ideal_ee(&o.translation, &cfg))));
        let run = run_pose_servo(&far, &cfg, &EstimatorNoise::default()).unwrap();
        assert!(!run.success);
        assert!(run.rejected_commands > 0);
    }

    #[test]
    fn history_uses_transform_chain() {
        let cfg = TrackerConfig::default();
        let s = Scenario::new(ScenarioKind::LinearMotion, 0);
        let obj = generate_object_trajectory(&s)[0].1;
        let ee = ideal_ee(&obj.translation, &cfg);
        let c_t_o = cfg.camera_of(&ee).inverse().compose(&obj);
        let b_t_o = object_in_base(&c_t_o.inverse(), &ee.inverse(), &cfg.hand_eye);
        assert!((b_t_o.to_homogeneous() - obj.to_homogeneous()).amax() < 1e-12);
    }
}
