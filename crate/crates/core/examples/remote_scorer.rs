//! Active estimation with the HTTP ambiguity scorer, served here by a tiny
//! local stand-in that calls a view ambiguous when no distinguishing feature
//! is visible.
//!
//! ```text
//! cargo run --example remote_scorer
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use active_perception::ambiguity::{RemoteScorer, RemoteScorerConfig, ScoreRequest};
use active_perception::bench::{place_object, BenchConfig, PlacementKind, PlacementMode, PreparedObject};
use active_perception::estimator::EstimatorNoise;
use active_perception::nbv::run_active_estimation;
use active_perception::scene::ObjectLibrary;

fn serve(listener: TcpListener) {
    for stream in listener.incoming() {
        let Ok(mut stream) = stream else { continue };
        let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
        let mut length = 0;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
        let mut body = vec![0; length];
        if reader.read_exact(&mut body).is_err() {
            continue;
        }
        let p = match serde_json::from_slice::<ScoreRequest>(&body) {
            Ok(req) if req.live.visible_feature_ids.is_empty() => 0.9,
            Ok(_) => 0.05,
            Err(_) => 0.5,
        };
        let answer = format!("{{\"ambiguous_probability\": {p}}}");
        let _ = write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{answer}",
            answer.len()
        );
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = format!("http://{}/score", listener.local_addr()?);
    std::thread::spawn(move || serve(listener));

    let scorer = RemoteScorer::new(RemoteScorerConfig::new(&endpoint))?;
    let cfg = BenchConfig::default();
    let lib = ObjectLibrary::builtin();
    let prepared = PreparedObject::new(lib.get("cyl-4fold")?.clone(), &cfg.estimation)?;
    let truth = place_object(
        &prepared.object,
        &PlacementMode {
            kind: PlacementKind::HighEntropyPlacement,
            seed: 0,
        },
        &prepared.scan,
        &cfg.estimation,
    )?;
    let r = run_active_estimation(
        &prepared.object,
        &truth,
        &cfg.estimation.initial_camera(),
        &prepared.prompt,
        &scorer,
        &cfg.nbv,
        &EstimatorNoise::zero(0),
        &cfg.estimation.intrinsics,
    )?;
    println!("scorer at {endpoint}");
    println!("initial p_amb {:.2}, moved {}", r.initial_p_amb, r.moved);
    for c in &r.candidate_scores {
        println!(
            "candidate {:2}: p_amb {:.2}, H {:.3}, S {:.3}",
            c.index, c.p_amb, c.entropy, c.score
        );
    }
    println!("final hypotheses: {}", r.final_estimate.len());
    Ok(())
}
