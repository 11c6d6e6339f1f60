//! JSON checkpoints for trained denoisers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    make_schedule_with_eta, Architecture, DenoiserParams, DiffusionError, NoiseSchedule, Normalizer, ScheduleKind,
    TrainConfig,
};

pub const CHECKPOINT_FORMAT: &str = "active-perception-denoiser/2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub n_steps: usize,
    pub kind: ScheduleKind,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    /// `[rows, cols]`; values are column-major.
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture_hash: String,
    pub architecture: Architecture,
    pub train_config: TrainConfig,
    pub schedule: ScheduleSpec,
    pub normalizer: Normalizer,
    pub tensors: Vec<NamedTensor>,
    pub loss_curve: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &DenoiserParams, train_config: &TrainConfig, loss_curve: &[f64]) -> Self {
        let mut tensors = Vec::new();
        let mut at = 0;
        for (i, (r, c)) in params.arch.layer_shapes().into_iter().enumerate() {
            for (name, rows, cols) in [("weight", r, c), ("bias", r, 1)] {
                tensors.push(NamedTensor {
                    name: format!("layer{}.{name}", i + 1),
                    shape: [rows, cols],
                    values: params.weights[at..at + rows * cols].to_vec(),
                });
                at += rows * cols;
            }
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture_hash: params.arch.hash(),
            architecture: params.arch,
            train_config: train_config.clone(),
            schedule: ScheduleSpec {
                n_steps: train_config.n_steps,
                kind: ScheduleKind::Cosine,
                eta: train_config.eta,
            },
            normalizer: params.normalizer.clone(),
            tensors,
            loss_curve: loss_curve.to_vec(),
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        make_schedule_with_eta(self.schedule.n_steps, self.schedule.kind, self.schedule.eta)
    }

    /// Rebuilds the parameters after checking format, hash and shapes.
    pub fn params(&self) -> Result<DenoiserParams, DiffusionError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(DiffusionError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        let expected = self.architecture.hash();
        if self.architecture_hash != expected {
            return Err(DiffusionError::ArchitectureMismatch {
                expected,
                found: self.architecture_hash.clone(),
            });
        }
        let shapes = self.architecture.layer_shapes();
        if self.tensors.len() != 2 * shapes.len() {
            return Err(DiffusionError::Checkpoint("wrong number of tensors".into()));
        }
        let mut weights = Vec::with_capacity(self.architecture.param_count());
        for (t, (r, c)) in self.tensors.chunks(2).zip(shapes) {
            if t[0].shape != [r, c] || t[1].shape != [r, 1] {
                return Err(DiffusionError::Checkpoint(format!(
                    "tensor {} has the wrong shape",
                    t[0].name
                )));
            }
            for x in t {
                if x.values.len() != x.shape[0] * x.shape[1] {
                    return Err(DiffusionError::Checkpoint(format!(
                        "tensor {} has the wrong length",
                        x.name
                    )));
                }
                weights.extend_from_slice(&x.values);
            }
        }
        let params = DenoiserParams {
            arch: self.architecture,
            normalizer: self.normalizer.clone(),
            weights,
        };
        if !params.is_finite() {
            return Err(DiffusionError::Checkpoint(
                "non-finite weights or a normalizer that does not fit".into(),
            ));
        }
        Ok(params)
    }

    /// Like [`Checkpoint::params`], additionally requiring a specific architecture.
    pub fn params_for(&self, arch: &Architecture) -> Result<DenoiserParams, DiffusionError> {
        if self.architecture_hash != arch.hash() {
            return Err(DiffusionError::ArchitectureMismatch {
                expected: arch.hash(),
                found: self.architecture_hash.clone(),
            });
        }
        self.params()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiffusionError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiffusionError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(f)?;
        ck.params()?;
        Ok(ck)
    }
}
