//! Trains a tracking policy on scripted linear-motion demonstrations and
//! compares it against the fixed world camera.
//!
//! ```text
//! cargo run --release --example diffusion_tracking -- [epochs] [trials]
//! ```

use std::time::Instant;

use active_perception::diffusion::{train, TrainConfig, TrainingSet};
use active_perception::estimator::EstimatorNoise;
use active_perception::seed;
use active_perception::tracking::{
    build_dataset, run_tracking, run_world_camera, training_windows, DiffusionPolicy, Scenario, ScenarioKind,
    TrackerConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(500);
    let trials: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(20);

    let cfg = TrackerConfig::default();
    let template = Scenario::new(ScenarioKind::LinearMotion, 0);
    let records = build_dataset(&[template], 10, &cfg, 7)?;
    let windows = training_windows(&records, cfg.history, cfg.horizon)?;
    let set = TrainingSet::from_windows(&windows)?;
    println!("{} records, {} windows", records.len(), set.len());

    let train_cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&set, &train_cfg)?;
    println!(
        "trained {epochs} epochs in {:.1}s, loss {:.4} -> {:.4}",
        start.elapsed().as_secs_f64(),
        out.loss_curve.first().copied().unwrap_or(f64::NAN),
        out.loss_curve.last().copied().unwrap_or(f64::NAN)
    );

    let policy = DiffusionPolicy {
        params: &out.params,
        schedule: train_cfg.schedule(),
    };
    let (mut ours, mut world) = (0, 0);
    for trial in 0..trials {
        let s = Scenario::new(ScenarioKind::LinearMotion, seed!(1u64, "eval", trial));
        let noise = EstimatorNoise::default().with_seed(seed!(1u64, "noise", trial));
        let run = run_tracking(&policy, &s, &cfg, &noise)?;
        let base = run_world_camera(&s, &cfg, &noise)?;
        let hidden = run.frames.iter().filter(|f| !f.visible).count();
        println!(
            "trial {trial:2}: diffusion {} (hidden frames {hidden}, rejected {}), world camera {}",
            if run.success { "ok  " } else { "LOST" },
            run.rejected_commands,
            if base.success { "ok" } else { "LOST" }
        );
        ours += run.success as u64;
        world += base.success as u64;
    }
    println!(
        "SR diffusion {:.2}, world camera {:.2}",
        ours as f64 / trials as f64,
        world as f64 / trials as f64
    );
    Ok(())
}
