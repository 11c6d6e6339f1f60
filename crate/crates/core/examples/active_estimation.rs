//! One round of entropy-guided next-best-view estimation for each shipped
//! object, starting from its most ambiguous view.
//!
//! ```text
//! cargo run --example active_estimation
//! ```

use active_perception::ambiguity::OracleScorer;
use active_perception::bench::{place_object, BenchConfig, PlacementKind, PlacementMode, PreparedObject};
use active_perception::estimator::{entropy, EstimatorNoise};
use active_perception::geometry::geodesic_rotation_distance;
use active_perception::nbv::run_active_estimation;
use active_perception::scene::ObjectLibrary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = BenchConfig::default();
    let lib = ObjectLibrary::builtin();
    let cam0 = cfg.estimation.initial_camera();
    for name in lib.names() {
        let prepared = PreparedObject::new(lib.get(name)?.clone(), &cfg.estimation)?;
        let mode = PlacementMode {
            kind: PlacementKind::HighEntropyPlacement,
            seed: 1,
        };
        let truth = match place_object(&prepared.object, &mode, &prepared.scan, &cfg.estimation) {
            Ok(p) => p,
            Err(e) => {
                println!("{name:<14} skipped: {e}");
                continue;
            }
        };
        let r = run_active_estimation(
            &prepared.object,
            &truth,
            &cam0,
            &prepared.prompt,
            &OracleScorer,
            &cfg.nbv,
            &EstimatorNoise::zero(0),
            &cfg.estimation.intrinsics,
        )?;
        println!(
            "{name:<14} p_amb {:.3} moved {} to candidate {:?}",
            r.initial_p_amb, r.moved, r.chosen_index
        );
        for c in &r.candidate_scores {
            println!(
                "{:<16} candidate {:2}: H {:.3} nats, p_amb {:.3}, S {:.3}",
                "", c.index, c.entropy, c.p_amb, c.score
            );
        }
        let truth_in_camera = r.final_camera.inverse().compose(&truth);
        println!(
            "{:<14} final: {} hypotheses, entropy {:.3}, rotation error {:.2e} rad",
            "",
            r.final_estimate.len(),
            entropy(&r.final_estimate),
            geodesic_rotation_distance(&r.final_estimate.best().pose, &truth_in_camera)
        );
    }
    Ok(())
}
