//! Trajectory diffusion over SE(3) action chunks.
//!
//! Poses are canonicalized into the most recent end-effector frame, encoded
//! as `translation / scale ⊕ Rot6D`, denoised by a sample-predicting MLP and
//! mapped back to the world frame. Because the network only ever sees local
//! coordinates, the policy commutes with rigid transforms of the scene.

mod checkpoint;
mod dataset;
mod network;
mod schedule;

pub use checkpoint::{Checkpoint, NamedTensor, ScheduleSpec, CHECKPOINT_FORMAT};
pub use dataset::{group_demos, read_dataset, write_dataset, DatasetRecord, Demo};
pub use network::{step_embedding, AdamW, Architecture, DenoiserParams};
pub use schedule::{
    forward_noising, make_schedule, make_schedule_with_eta, reverse_step, NoiseSchedule, ScheduleKind, COSINE_OFFSET,
    MAX_BETA, MIN_NOISE_SCALE,
};

use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pose, Rot6D};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("noise scale vanishes at step {k}")]
    DegenerateStep { k: usize },
    #[error(transparent)]
    DegenerateRotation(#[from] GeometryError),
    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("architecture hash mismatch: expected {expected}, found {found}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The last H object and end-effector poses in the base frame, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub object_poses: Vec<Pose>,
    pub ee_poses: Vec<Pose>,
}

impl Observation {
    pub fn new(object_poses: Vec<Pose>, ee_poses: Vec<Pose>) -> Result<Self, DiffusionError> {
        if object_poses.is_empty() || object_poses.len() != ee_poses.len() {
            return Err(DiffusionError::Shape(format!(
                "observation needs matching non-empty histories, got {} and {}",
                object_poses.len(),
                ee_poses.len()
            )));
        }
        Ok(Self { object_poses, ee_poses })
    }

    pub fn history(&self) -> usize {
        self.object_poses.len()
    }

    /// `g ∘ pose` for every pose.
    pub fn transformed(&self, g: &Pose) -> Observation {
        Observation {
            object_poses: self.object_poses.iter().map(|p| g.compose(p)).collect(),
            ee_poses: self.ee_poses.iter().map(|p| g.compose(p)).collect(),
        }
    }
}

/// K future end-effector poses.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub poses: Vec<Pose>,
}

impl ActionChunk {
    pub fn horizon(&self) -> usize {
        self.poses.len()
    }

    pub fn transformed(&self, g: &Pose) -> ActionChunk {
        ActionChunk {
            poses: self.poses.iter().map(|p| g.compose(p)).collect(),
        }
    }
}

/// Expresses every pose in the frame of the latest end-effector pose.
pub fn canonicalize(obs: &Observation) -> (Observation, Pose) {
    let anchor = *obs.ee_poses.last().expect("observation is non-empty");
    let inv = anchor.inverse();
    (obs.transformed(&inv), anchor)
}

pub fn encode_pose(p: &Pose) -> [f64; 9] {
    let t = p.translation;
    let r = Rot6D::from_rotation(&p.rotation).0;
    [t.x, t.y, t.z, r[0], r[1], r[2], r[3], r[4], r[5]]
}

pub fn decode_pose(v: &[f64]) -> Result<Pose, GeometryError> {
    let rotation = Rot6D::from_slice(&v[3..9]).to_rotation()?;
    Ok(Pose::new(rotation, Vector3::new(v[0], v[1], v[2])))
}

/// Flattens a canonical observation: per frame, object then end effector.
pub fn encode_observation(local: &Observation) -> Vec<f64> {
    local
        .object_poses
        .iter()
        .zip(&local.ee_poses)
        .flat_map(|(o, e)| {
            let mut frame = encode_pose(o).to_vec();
            frame.extend(encode_pose(e));
            frame
        })
        .collect()
}

pub fn encode_chunk(local: &ActionChunk) -> Vec<f64> {
    local.poses.iter().flat_map(encode_pose).collect()
}

pub fn decode_chunk(v: &[f64]) -> Result<ActionChunk, GeometryError> {
    let poses = v.chunks(9).map(decode_pose).collect::<Result<_, _>>()?;
    Ok(ActionChunk { poses })
}

/// Smallest per-feature scale, in meters for translations.
pub const MIN_TRANSLATION_SCALE: f64 = 1e-3;
pub const MIN_ROTATION_SCALE: f64 = 1e-2;

/// Per-feature affine map `z = (x - shift) / scale` applied to the encoded
/// observation and chunk, fitted on canonical training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_shift: Vec<f64>,
    pub obs_scale: Vec<f64>,
    pub chunk_shift: Vec<f64>,
    pub chunk_scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(arch: &Architecture) -> Self {
        Self {
            obs_shift: vec![0.0; arch.obs_dim()],
            obs_scale: vec![1.0; arch.obs_dim()],
            chunk_shift: vec![0.0; arch.chunk_dim()],
            chunk_scale: vec![1.0; arch.chunk_dim()],
        }
    }

    /// Mean and standard deviation per feature, with the scale floored.
    pub fn fit(obs: &[Vec<f64>], chunks: &[Vec<f64>]) -> Self {
        fn stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
            let dim = rows.first().map_or(0, Vec::len);
            let n = rows.len().max(1) as f64;
            let mut mean = vec![0.0; dim];
            for r in rows {
                mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
            }
            let mut var = vec![0.0; dim];
            for r in rows {
                var.iter_mut()
                    .zip(r)
                    .zip(&mean)
                    .for_each(|((v, x), m)| *v += (x - m).powi(2) / n);
            }
            let scale = var
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let floor = if i % 9 < 3 {
                        MIN_TRANSLATION_SCALE
                    } else {
                        MIN_ROTATION_SCALE
                    };
                    v.sqrt().max(floor)
                })
                .collect();
            (mean, scale)
        }
        let (obs_shift, obs_scale) = stats(obs);
        let (chunk_shift, chunk_scale) = stats(chunks);
        Self {
            obs_shift,
            obs_scale,
            chunk_shift,
            chunk_scale,
        }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.obs_shift.len() == arch.obs_dim()
            && self.obs_scale.len() == arch.obs_dim()
            && self.chunk_shift.len() == arch.chunk_dim()
            && self.chunk_scale.len() == arch.chunk_dim()
    }

    pub fn is_valid(&self) -> bool {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        finite(&self.obs_shift)
            && finite(&self.chunk_shift)
            && self
                .obs_scale
                .iter()
                .chain(&self.chunk_scale)
                .all(|x| x.is_finite() && *x > 0.0)
    }

    pub fn obs(&self, raw: &[f64]) -> Vec<f64> {
        affine(raw, &self.obs_shift, &self.obs_scale)
    }

    pub fn chunk(&self, raw: &[f64]) -> Vec<f64> {
        affine(raw, &self.chunk_shift, &self.chunk_scale)
    }

    pub fn unchunk(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.chunk_shift)
            .zip(&self.chunk_scale)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }
}

fn affine(raw: &[f64], shift: &[f64], scale: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(shift)
        .zip(scale)
        .map(|((x, m), s)| (x - m) / s)
        .collect()
}

/// A sample predictor `x̂₀ = f(obs, x_k, k)` over encoded vectors.
pub trait Denoiser: Sync {
    fn architecture(&self) -> Architecture;
    fn normalizer(&self) -> &Normalizer;
    fn predict(&self, obs: &[f64], noisy: &[f64], k: usize) -> Vec<f64>;
}

impl Denoiser for DenoiserParams {
    fn architecture(&self) -> Architecture {
        self.arch
    }

    fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn predict(&self, obs: &[f64], noisy: &[f64], k: usize) -> Vec<f64> {
        let x = self.build_input(&[(obs, noisy, k)]);
        self.forward(x).as_slice().to_vec()
    }
}

/// One observation/chunk pair in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub obs: Observation,
    pub chunk: ActionChunk,
}

impl TrainingWindow {
    /// Canonical copies of the observation and chunk.
    pub fn canonical(&self) -> (Observation, ActionChunk) {
        let (local, anchor) = canonicalize(&self.obs);
        (local, self.chunk.transformed(&anchor.inverse()))
    }
}

/// Slides an `(H, K)` window over one demonstration.
pub fn windows_from_demo(
    object_poses: &[Pose],
    ee_poses: &[Pose],
    history: usize,
    horizon: usize,
) -> Vec<TrainingWindow> {
    assert_eq!(object_poses.len(), ee_poses.len(), "trajectory lengths differ");
    let n = object_poses.len();
    if history == 0 || horizon == 0 || n < history + horizon {
        return Vec::new();
    }
    (history - 1..n - horizon)
        .map(|t| TrainingWindow {
            obs: Observation {
                object_poses: object_poses[t + 1 - history..=t].to_vec(),
                ee_poses: ee_poses[t + 1 - history..=t].to_vec(),
            },
            chunk: ActionChunk {
                poses: ee_poses[t + 1..=t + horizon].to_vec(),
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub obs: Vec<f64>,
    pub clean: Vec<f64>,
}

/// Canonicalized, normalized training data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub history: usize,
    pub horizon: usize,
    pub normalizer: Normalizer,
    pub samples: Vec<EncodedSample>,
}

impl TrainingSet {
    /// Encodes windows and fits the normalizer on them.
    pub fn from_windows(windows: &[TrainingWindow]) -> Result<Self, DiffusionError> {
        let (history, horizon, raw) = Self::raw(windows)?;
        let (obs, chunks): (Vec<_>, Vec<_>) = raw.into_iter().unzip();
        let normalizer = Normalizer::fit(&obs, &chunks);
        Self::encode(obs, chunks, history, horizon, normalizer)
    }

    /// Encodes windows with a given normalizer, e.g. one from a checkpoint.
    pub fn from_windows_with_normalizer(
        windows: &[TrainingWindow],
        normalizer: Normalizer,
    ) -> Result<Self, DiffusionError> {
        let (history, horizon, raw) = Self::raw(windows)?;
        let (obs, chunks): (Vec<_>, Vec<_>) = raw.into_iter().unzip();
        Self::encode(obs, chunks, history, horizon, normalizer)
    }

    #[allow(clippy::type_complexity)]
    fn raw(windows: &[TrainingWindow]) -> Result<(usize, usize, Vec<(Vec<f64>, Vec<f64>)>), DiffusionError> {
        let first = windows.first().ok_or(DiffusionError::EmptyDataset)?;
        let (history, horizon) = (first.obs.history(), first.chunk.horizon());
        let raw = windows
            .iter()
            .map(|w| {
                if w.obs.history() != history || w.chunk.horizon() != horizon {
                    return Err(DiffusionError::Shape("windows have mixed H or K".into()));
                }
                let (o, c) = w.canonical();
                Ok((encode_observation(&o), encode_chunk(&c)))
            })
            .collect::<Result<_, _>>()?;
        Ok((history, horizon, raw))
    }

    fn encode(
        obs: Vec<Vec<f64>>,
        chunks: Vec<Vec<f64>>,
        history: usize,
        horizon: usize,
        normalizer: Normalizer,
    ) -> Result<Self, DiffusionError> {
        let arch = Architecture {
            history,
            horizon,
            width: 1,
            embed_dim: 0,
        };
        if !normalizer.matches(&arch) || !normalizer.is_valid() {
            return Err(DiffusionError::InvalidConfig("normalizer does not fit the data".into()));
        }
        let samples = obs
            .iter()
            .zip(&chunks)
            .map(|(o, c)| EncodedSample {
                obs: normalizer.obs(o),
                clean: normalizer.chunk(c),
            })
            .collect();
        Ok(Self {
            history,
            horizon,
            normalizer,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Step index and Gaussian noise for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub k: usize,
    pub eps: Vec<f64>,
}

pub fn draw_noise<R: Rng + ?Sized>(count: usize, dim: usize, s: &NoiseSchedule, rng: &mut R) -> Vec<NoiseDraw> {
    (0..count)
        .map(|_| NoiseDraw {
            k: rng.random_range(1..=s.n_steps),
            eps: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        })
        .collect()
}

/// Batch mean of `‖x̂₀ − x₀‖²` under the given noise draws.
pub fn loss_with_draws(
    denoiser: &dyn Denoiser,
    batch: &[EncodedSample],
    draws: &[NoiseDraw],
    s: &NoiseSchedule,
) -> f64 {
    assert!(!batch.is_empty(), "empty batch");
    assert_eq!(batch.len(), draws.len(), "one draw per sample");
    let total: f64 = batch
        .iter()
        .zip(draws)
        .map(|(x, d)| {
            let noisy = forward_noising(&x.clean, d.k, &d.eps, s);
            let pred = denoiser.predict(&x.obs, &noisy, d.k);
            pred.iter().zip(&x.clean).map(|(p, c)| (p - c).powi(2)).sum::<f64>()
        })
        .sum();
    total / batch.len() as f64
}

/// Draws a step and noise per sample, then evaluates [`loss_with_draws`].
pub fn loss<R: Rng + ?Sized>(denoiser: &dyn Denoiser, batch: &[EncodedSample], s: &NoiseSchedule, rng: &mut R) -> f64 {
    let dim = batch.first().map_or(0, |x| x.clean.len());
    let draws = draw_noise(batch.len(), dim, s, rng);
    loss_with_draws(denoiser, batch, &draws, s)
}

/// Loss and its analytic gradient with respect to every weight.
pub fn loss_and_grad(
    params: &DenoiserParams,
    batch: &[&EncodedSample],
    draws: &[NoiseDraw],
    s: &NoiseSchedule,
) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "empty batch");
    let noisy: Vec<Vec<f64>> = batch
        .iter()
        .zip(draws)
        .map(|(x, d)| forward_noising(&x.clean, d.k, &d.eps, s))
        .collect();
    let items: Vec<(&[f64], &[f64], usize)> = batch
        .iter()
        .zip(&noisy)
        .zip(draws)
        .map(|((x, n), d)| (x.obs.as_slice(), n.as_slice(), d.k))
        .collect();
    let (pred, cache) = params.forward_cached(params.build_input(&items));
    let b = batch.len() as f64;
    let mut d_out = DMatrix::zeros(pred.nrows(), pred.ncols());
    let mut total = 0.0;
    for (j, x) in batch.iter().enumerate() {
        for (i, c) in x.clean.iter().enumerate() {
            let r = pred[(i, j)] - c;
            total += r * r;
            d_out[(i, j)] = 2.0 * r / b;
        }
    }
    (total / b, params.backward(&cache, &d_out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub hidden_width: usize,
    /// Observation history H.
    pub history: usize,
    /// Action horizon K.
    pub horizon: usize,
    pub embed_dim: usize,
    pub weight_decay: f64,
    /// DDIM stochasticity used at sampling time.
    pub eta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 40,
            learning_rate: 3e-4,
            epochs: 2000,
            n_steps: 16,
            seed: 0,
            hidden_width: 128,
            history: 2,
            horizon: 20,
            embed_dim: 16,
            weight_decay: 1e-4,
            eta: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.n_steps == 0 || self.hidden_width == 0 {
            return bad("batch_size, n_steps and hidden_width must be positive");
        }
        if self.history == 0 || self.horizon == 0 {
            return bad("history and horizon must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            history: self.history,
            horizon: self.horizon,
            width: self.hidden_width,
            embed_dim: self.embed_dim,
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        make_schedule_with_eta(self.n_steps, ScheduleKind::Cosine, self.eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    /// Mean minibatch loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Minibatch AdamW on the sample-prediction loss. Deterministic in `cfg.seed`.
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome, DiffusionError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    if set.history != cfg.history || set.horizon != cfg.horizon {
        return Err(DiffusionError::Shape(format!(
            "dataset has H={} K={}, config expects H={} K={}",
            set.history, set.horizon, cfg.history, cfg.horizon
        )));
    }
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = DenoiserParams::init(cfg.architecture(), set.normalizer.clone(), &mut rng);
    let mut opt = AdamW::new(params.weights.len(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let dim = 9 * cfg.horizon;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&EncodedSample> = idx.iter().map(|&i| &set.samples[i]).collect();
            let draws = draw_noise(batch.len(), dim, &schedule, &mut rng);
            let (l, grad) = loss_and_grad(&params, &batch, &draws, &schedule);
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(DiffusionError::NonFiniteLoss { epoch });
            }
            opt.step(&mut params.weights, &grad);
            sum += l;
            batches += 1;
        }
        loss_curve.push(sum / batches as f64);
    }
    Ok(TrainOutcome { params, loss_curve })
}

/// Runs the full reverse chain from Gaussian noise and returns world-frame poses.
pub fn sample<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    obs: &Observation,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<ActionChunk, DiffusionError> {
    let arch = denoiser.architecture();
    if obs.history() != arch.history {
        return Err(DiffusionError::Shape(format!(
            "observation has {} frames, denoiser expects {}",
            obs.history(),
            arch.history
        )));
    }
    let norm = denoiser.normalizer();
    if !norm.matches(&arch) {
        return Err(DiffusionError::Shape(
            "normalizer does not match the architecture".into(),
        ));
    }
    let (local, anchor) = canonicalize(obs);
    let enc = norm.obs(&encode_observation(&local));
    let mut x: Vec<f64> = (0..arch.chunk_dim()).map(|_| rng.sample(StandardNormal)).collect();
    for k in (1..=s.n_steps).rev() {
        let pred = denoiser.predict(&enc, &x, k);
        x = reverse_step(&x, k, &pred, s, rng)?;
    }
    Ok(decode_chunk(&norm.unchunk(&x))?.transformed(&anchor))
}
