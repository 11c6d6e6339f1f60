//! DDIM noise schedule and the forward / reverse single-step maps.
//!
//! Index `k = 0` is clean data and `k = n_steps` is (almost) pure noise.
//! The reverse update is written as
//!
//! ```text
//! x_{k-1} = α_k (x_k − γ_k ε̂) + σ_k z
//! ```
//!
//! with `α_k = α̂_{k−1} / α̂_k` and `γ_k = β̂_k − √(β̂²_{k−1} − σ²_k) / α_k`, so that
//! for `σ_k = 0` it coincides with the deterministic DDIM step
//! `x_{k−1} = α̂_{k−1} x̂₀ + β̂_{k−1} ε̂`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Per-step β is clipped here so the last step keeps a nonzero signal.
pub const MAX_BETA: f64 = 0.999;
/// `β̂_k` below this makes the implied noise undefined.
pub const MIN_NOISE_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub n_steps: usize,
    pub kind: ScheduleKind,
    /// DDIM stochasticity; 0 is deterministic.
    pub eta: f64,
    /// Cumulative signal fraction ᾱ_k, `k = 0..=n_steps`.
    pub alpha_bar: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    /// Reverse-step coefficients; index 0 is unused and set to zero.
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Deterministic (η = 0) schedule.
pub fn make_schedule(n_steps: usize, kind: ScheduleKind) -> NoiseSchedule {
    make_schedule_with_eta(n_steps, kind, 0.0)
}

pub fn make_schedule_with_eta(n_steps: usize, kind: ScheduleKind, eta: f64) -> NoiseSchedule {
    assert!(n_steps >= 1, "need at least one diffusion step");
    assert!((0.0..=1.0).contains(&eta), "eta must lie in [0, 1]");
    let alpha_bar = match kind {
        ScheduleKind::Cosine => cosine_alpha_bar(n_steps),
    };
    let alpha_hat: Vec<f64> = alpha_bar.iter().map(|a| a.sqrt()).collect();
    let beta_hat: Vec<f64> = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();

    let mut alpha = vec![0.0; n_steps + 1];
    let mut gamma = vec![0.0; n_steps + 1];
    let mut sigma = vec![0.0; n_steps + 1];
    for k in 1..=n_steps {
        let (ab_prev, ab) = (alpha_bar[k - 1], alpha_bar[k]);
        let s = if eta > 0.0 {
            eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
        } else {
            0.0
        };
        sigma[k] = s;
        alpha[k] = alpha_hat[k - 1] / alpha_hat[k];
        let carried = (beta_hat[k - 1].powi(2) - s * s).max(0.0).sqrt();
        gamma[k] = beta_hat[k] - carried / alpha[k];
    }
    NoiseSchedule {
        n_steps,
        kind,
        eta,
        alpha_bar,
        alpha_hat,
        beta_hat,
        alpha,
        gamma,
        sigma,
    }
}

/// Improved-DDPM cosine schedule with clipped per-step β.
fn cosine_alpha_bar(n: usize) -> Vec<f64> {
    let f = |k: usize| {
        let x = (k as f64 / n as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0);
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    for k in 1..=n {
        let beta = (1.0 - (f(k) / f0) / (f(k - 1) / f0)).min(MAX_BETA);
        let prev = out[k - 1];
        out.push(prev * (1.0 - beta));
    }
    out
}

/// `α̂_k·clean + β̂_k·eps`.
pub fn forward_noising(clean: &[f64], k: usize, eps: &[f64], s: &NoiseSchedule) -> Vec<f64> {
    assert!(k <= s.n_steps, "step {k} beyond schedule");
    assert_eq!(clean.len(), eps.len(), "dimension mismatch");
    let (a, b) = (s.alpha_hat[k], s.beta_hat[k]);
    clean.iter().zip(eps).map(|(c, e)| a * c + b * e).collect()
}

/// One reverse step from a sample prediction.
pub fn reverse_step<R: Rng + ?Sized>(
    noisy: &[f64],
    k: usize,
    predicted_clean: &[f64],
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    assert!(
        (1..=s.n_steps).contains(&k),
        "reverse step {k} outside 1..={}",
        s.n_steps
    );
    assert_eq!(noisy.len(), predicted_clean.len(), "dimension mismatch");
    let (a_hat, b_hat) = (s.alpha_hat[k], s.beta_hat[k]);
    if b_hat < MIN_NOISE_SCALE {
        return Err(DiffusionError::DegenerateStep { k });
    }
    let (alpha, gamma, sigma) = (s.alpha[k], s.gamma[k], s.sigma[k]);
    Ok(noisy
        .iter()
        .zip(predicted_clean)
        .map(|(x, x0)| {
            let eps_hat = (x - a_hat * x0) / b_hat;
            let mut out = alpha * (x - gamma * eps_hat);
            if sigma > 0.0 {
                out += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            out
        })
        .collect())
}
