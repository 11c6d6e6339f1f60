//! The estimation suite: fixed view, random next view and active next view
//! over every shipped object and both placements.
//!
//! ```text
//! cargo run --release --example estimation_bench -- [trials] [out_dir]
//! ```

use active_perception::bench::{run_estimation_benchmark, BenchConfig, EstimationMethod, PlacementKind};
use active_perception::scene::ObjectLibrary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let trials: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(10);
    let out_dir = args.next().unwrap_or_else(|| "bench-out".into());

    let lib = ObjectLibrary::builtin();
    let objects: Vec<_> = lib
        .names()
        .iter()
        .map(|n| lib.get(n).cloned())
        .collect::<Result<_, _>>()?;
    let placements = [PlacementKind::HighEntropyPlacement, PlacementKind::RandomPlacement];
    let report = run_estimation_benchmark(
        &EstimationMethod::REPORTED,
        &objects,
        &placements,
        trials,
        &BenchConfig::default(),
        0,
    )?;

    println!(
        "{:<14} {:<14} {:<13} {:>8} {:>8}",
        "method", "object", "placement", "orbit", "strict"
    );
    for c in &report.cells {
        if c.applicable {
            println!(
                "{:<14} {:<14} {:<13} {:>7.0}% {:>7.0}%",
                c.method,
                c.object,
                c.scenario,
                100.0 * c.sr,
                100.0 * c.secondary_sr
            );
        } else {
            println!("{:<14} {:<14} {:<13} {:>8}", c.method, c.object, c.scenario, "n/a");
        }
    }
    let ambiguous = |c: &active_perception::bench::CellSummary| c.object != "peg-asym" && c.scenario == "high_entropy";
    for m in EstimationMethod::REPORTED {
        let (s, t) = report
            .cells
            .iter()
            .filter(|c| c.method == m.name() && c.applicable && ambiguous(c))
            .fold((0, 0), |(s, t), c| (s + c.secondary_successes, t + c.trials));
        println!("{:<14} ambiguous objects, high-entropy, strict: {s}/{t}", m.name());
    }
    let (csv, json) = report.write(&out_dir)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}
