//! The tracking suite: pose servoing, a fixed world camera and the diffusion
//! tracker over the four motion scenarios.
//!
//! ```text
//! cargo run --release --example tracking_bench -- [epochs] [trials] [out_dir]
//! ```

use active_perception::bench::{
    run_tracking_benchmark, tracking_dataset, train_on_records, BenchConfig, TrackerModel, TrackingMethod,
};
use active_perception::tracking::ScenarioKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(500);
    let trials: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(10);
    let out_dir = args.next().unwrap_or_else(|| "bench-out".into());

    let mut cfg = BenchConfig::default();
    cfg.train.epochs = epochs;
    let records = tracking_dataset(&cfg, &ScenarioKind::ALL)?;
    let start = std::time::Instant::now();
    let out = train_on_records(&cfg, &records)?;
    println!(
        "trained on {} records for {epochs} epochs in {:.1}s",
        records.len(),
        start.elapsed().as_secs_f64()
    );

    let model = TrackerModel {
        params: &out.params,
        schedule: cfg.train.schedule(),
    };
    let report = run_tracking_benchmark(&TrackingMethod::ALL, &ScenarioKind::ALL, trials, &cfg, Some(&model), 0)?;
    for c in &report.cells {
        println!(
            "{:<18} {:<20} SR {:>5.1}%  estimate-then-track {:>5.1}%",
            c.method,
            c.scenario,
            100.0 * c.sr,
            100.0 * c.secondary_sr
        );
    }
    let (csv, json) = report.write(&out_dir)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}
