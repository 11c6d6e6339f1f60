//! The cosine DDIM schedule, forward noising, and sampling from a freshly
//! trained denoiser, saved and reloaded through a checkpoint.
//!
//! ```text
//! cargo run --release --example ddim_sampler -- [epochs]
//! ```

use active_perception::diffusion::{
    forward_noising, make_schedule, reverse_step, sample, train, Checkpoint, ScheduleKind, TrainConfig, TrainingSet,
};
use active_perception::tracking::{build_dataset, training_windows, Scenario, ScenarioKind, TrackerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(200);

    let s = make_schedule(4, ScheduleKind::Cosine);
    println!(" k   ᾱ_k        α̂_k       β̂_k       α_k       γ_k");
    for k in 0..=4 {
        println!(
            "{k:2}  {:.6}  {:.6}  {:.6}  {:.6}  {:.6}",
            s.alpha_bar[k], s.alpha_hat[k], s.beta_hat[k], s.alpha[k], s.gamma[k]
        );
    }

    // With the clean signal as prediction, one reverse step undoes the noise.
    let clean = vec![0.3, -1.2, 0.8];
    let eps = vec![0.5, 0.1, -0.7];
    let noisy = forward_noising(&clean, 3, &eps, &s);
    let back = reverse_step(&noisy, 3, &clean, &s, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("noisy {noisy:.4?} -> step to k=2 {back:.4?}");

    let cfg = TrackerConfig::default();
    let records = build_dataset(&[Scenario::new(ScenarioKind::LinearMotion, 0)], 4, &cfg, 3)?;
    let windows = training_windows(&records, cfg.history, cfg.horizon)?;
    let set = TrainingSet::from_windows(&windows)?;
    let tc = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let out = train(&set, &tc)?;
    println!(
        "{} windows, loss {:.4} -> {:.4}",
        set.len(),
        out.loss_curve[0],
        out.loss_curve.last().copied().unwrap_or(f64::NAN)
    );

    let path = std::env::temp_dir().join("ddim_sampler_checkpoint.json");
    Checkpoint::new(&out.params, &tc, &out.loss_curve).save(&path)?;
    let ck = Checkpoint::load(&path)?;
    let params = ck.params()?;
    let schedule = ck.schedule();
    let w = &windows[windows.len() / 2];
    let a = sample(&params, &w.obs, &schedule, &mut ChaCha8Rng::seed_from_u64(5))?;
    let b = sample(&params, &w.obs, &schedule, &mut ChaCha8Rng::seed_from_u64(5))?;
    println!("same rng, same chunk: {}", a == b);
    for j in [0, cfg.horizon / 2, cfg.horizon - 1] {
        println!(
            "step {j:2}: sampled {:.4?} expert {:.4?}",
            a.poses[j].translation.as_slice(),
            w.chunk.poses[j].translation.as_slice()
        );
    }
    Ok(())
}
