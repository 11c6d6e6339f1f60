//! Scans every shipped object from a sphere of views, prints its entropy
//! profile and writes the geometric prompt it yields.
//!
//! ```text
//! cargo run --example offline_scan -- [out_dir]
//! ```

use std::collections::BTreeMap;

use active_perception::ambiguity::build_prompt;
use active_perception::geometry::CameraIntrinsics;
use active_perception::nbv::offline_entropy_scan;
use active_perception::scene::ObjectLibrary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "prompts".into());
    std::fs::create_dir_all(&out_dir)?;
    let lib = ObjectLibrary::builtin();
    for name in lib.names() {
        let object = lib.get(name)?;
        let scan = offline_entropy_scan(object, 64, 0.5, &CameraIntrinsics::default());
        let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
        for (_, h) in &scan {
            *histogram.entry(format!("{h:.4}")).or_default() += 1;
        }
        println!(
            "{name:<14} |G| = {:<2} entropy histogram {histogram:?}",
            object.group_order()
        );

        let prompt = build_prompt(name, &scan, 3, 1)?;
        let path = format!("{out_dir}/{name}.json");
        std::fs::write(&path, serde_json::to_string_pretty(&prompt)?)?;
        println!(
            "{:<14} prompt U = {:?}, A = {:?} -> {path}",
            "",
            prompt.unambiguous.iter().map(|v| v.index).collect::<Vec<_>>(),
            prompt
                .ambiguous
                .iter()
                .map(|v| (v.index, (v.entropy * 1e4).round() / 1e4))
                .collect::<Vec<_>>(),
        );
    }
    Ok(())
}
