use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use active_perception::ambiguity::{AmbiguityScorer, OracleScorer, RemoteScorer, RemoteScorerConfig};
use active_perception::bench::{
    objects_by_name, place_object, run_estimation_benchmark, run_tracking_benchmark, tracking_dataset,
    train_on_records, BenchConfig, EstimationMethod, PlacementKind, PlacementMode, PreparedObject, TrackerModel,
    TrackingMethod,
};
use active_perception::diffusion::{read_dataset, write_dataset, Checkpoint, DenoiserParams, NoiseSchedule};
use active_perception::estimator::EstimatorNoise;
use active_perception::nbv::run_active_estimation;
use active_perception::scene::ObjectLibrary;
use active_perception::seed;
use active_perception::tracking::{
    run_pose_servo, run_tracking, run_world_camera, DiffusionPolicy, Scenario, ScenarioKind,
};

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "active-perception",
    version,
    about = "Active pose estimation and tracking under symmetry ambiguity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One round of entropy-guided next-best-view estimation.
    Estimate(EstimateArgs),
    /// Closed-loop tracking of a moving object.
    Track(TrackArgs),
    /// Estimation or tracking benchmark suite.
    Bench(BenchArgs),
    /// Geometric prompt utilities.
    Prompt {
        #[command(subcommand)]
        command: PromptCommand,
    },
    /// Generate expert demonstrations as JSON lines.
    Dataset(DatasetArgs),
    /// Train a denoiser on a demonstration dataset.
    Train(TrainArgs),
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Write the prompt of an object to a file.
    Export(PromptArgs),
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, default_value = "cyl-4fold")]
    object: String,
    /// random | high-entropy
    #[arg(long, default_value = "high-entropy")]
    placement: String,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// oracle | remote
    #[arg(long, default_value = "oracle")]
    scorer: String,
    /// Endpoint of the remote scorer.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the remote bearer token.
    #[arg(long)]
    token_env: Option<String>,
    /// Fall back to the oracle when the remote scorer fails.
    #[arg(long)]
    fallback: bool,
    /// Disable estimator noise.
    #[arg(long)]
    zero_noise: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-candidate score table.
    #[arg(long)]
    scores_csv: Option<PathBuf>,
    #[arg(long)]
    objects: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long, default_value = "linear")]
    scenario: String,
    /// diffusion | pose-servo | world-camera
    #[arg(long, default_value = "diffusion")]
    method: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-frame table.
    #[arg(long)]
    frames_csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// estimation | tracking
    #[arg(long, default_value = "estimation")]
    suite: String,
    /// Comma-separated; all methods of the suite by default.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Comma-separated; all shipped objects by default.
    #[arg(long, value_delimiter = ',')]
    objects: Vec<String>,
    /// Comma-separated placements for the estimation suite.
    #[arg(long, value_delimiter = ',', default_value = "high-entropy,random")]
    placements: Vec<String>,
    /// Comma-separated scenarios for the tracking suite.
    #[arg(long, value_delimiter = ',', default_value = "linear,circular,temporary,random")]
    scenarios: Vec<String>,
    /// 10 for estimation and 20 for tracking by default.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained denoiser; trained from scratch on the tracking scenarios when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    object: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    objects: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, value_delimiter = ',', default_value = "linear")]
    scenarios: Vec<String>,
    #[arg(long)]
    demos: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> AnyResult<BenchConfig> {
    Ok(match path {
        Some(p) => BenchConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => BenchConfig::default(),
    })
}

fn load_library(path: Option<&Path>) -> AnyResult<ObjectLibrary> {
    Ok(match path {
        Some(p) => ObjectLibrary::load(p)?,
        None => ObjectLibrary::builtin(),
    })
}

fn emit(text: &str, out: Option<&Path>) -> AnyResult<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => {
            // A closed pipe (e.g. `| head`) is not an error worth a panic.
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn parse_scenarios(names: &[String]) -> AnyResult<Vec<ScenarioKind>> {
    names
        .iter()
        .map(|n| ScenarioKind::parse(n).ok_or_else(|| format!("unknown scenario `{n}`").into()))
        .collect()
}

fn load_model(path: &Path) -> AnyResult<(DenoiserParams, NoiseSchedule)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.params()?, ck.schedule()))
}

fn estimate_cmd(a: EstimateArgs) -> AnyResult<ExitCode> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.nbv.tau = a.tau.unwrap_or(cfg.nbv.tau);
    cfg.nbv.lambda = a.lambda.unwrap_or(cfg.nbv.lambda);
    cfg.nbv.m = a.m.unwrap_or(cfg.nbv.m);
    let lib = load_library(a.objects.as_deref())?;
    let prepared = PreparedObject::new(lib.get(&a.object)?.clone(), &cfg.estimation)?;
    let kind = PlacementKind::parse(&a.placement).ok_or_else(|| format!("unknown placement `{}`", a.placement))?;
    let truth = place_object(
        &prepared.object,
        &PlacementMode {
            kind,
            seed: seed!(a.seed, "placement"),
        },
        &prepared.scan,
        &cfg.estimation,
    )?;
    let scorer: Box<dyn AmbiguityScorer> = match a.scorer.as_str() {
        "oracle" => Box::new(OracleScorer),
        "remote" => {
            let endpoint = a.endpoint.ok_or("--endpoint is required for the remote scorer")?;
            let rc = RemoteScorerConfig {
                token_env: a.token_env,
                fallback_to_oracle: a.fallback,
                ..RemoteScorerConfig::new(endpoint)
            };
            Box::new(RemoteScorer::new(rc)?)
        }
        other => return Err(format!("unknown scorer `{other}`").into()),
    };
    let noise = if a.zero_noise {
        EstimatorNoise::zero(seed!(a.seed, "noise"))
    } else {
        EstimatorNoise {
            translation_sigma: cfg.estimation.translation_sigma,
            rotation_sigma: cfg.estimation.rotation_sigma,
            seed: seed!(a.seed, "noise"),
        }
    };
    let result = run_active_estimation(
        &prepared.object,
        &truth,
        &cfg.estimation.initial_camera(),
        &prepared.prompt,
        scorer.as_ref(),
        &cfg.nbv,
        &noise,
        &cfg.estimation.intrinsics,
    )?;
    if let Some(p) = &a.scores_csv {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["index", "p_amb", "entropy", "normalized_entropy", "score", "chosen"])?;
        for c in &result.candidate_scores {
            w.write_record([
                c.index.to_string(),
                c.p_amb.to_string(),
                c.entropy.to_string(),
                c.normalized_entropy.to_string(),
                c.score.to_string(),
                (Some(c.index) == result.chosen_index).to_string(),
            ])?;
        }
        w.flush()?;
    }
    let doc = serde_json::json!({
        "object": prepared.object.name,
        "placement": kind.name(),
        "true_object_pose": truth,
        "result": result,
    });
    emit(&serde_json::to_string_pretty(&doc)?, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn track_cmd(a: TrackArgs) -> AnyResult<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let kind = ScenarioKind::parse(&a.scenario).ok_or_else(|| format!("unknown scenario `{}`", a.scenario))?;
    let method = TrackingMethod::parse(&a.method).ok_or_else(|| format!("unknown method `{}`", a.method))?;
    let s = Scenario {
        params: cfg.tracking.scenario.clone(),
        ..Scenario::new(kind, seed!(a.seed, "scenario"))
    };
    let noise = EstimatorNoise {
        translation_sigma: cfg.tracking.translation_sigma,
        rotation_sigma: cfg.tracking.rotation_sigma,
        seed: seed!(a.seed, "noise"),
    };
    let run = match method {
        TrackingMethod::PoseServo => run_pose_servo(&s, &cfg.tracker, &noise)?,
        TrackingMethod::WorldCamera => run_world_camera(&s, &cfg.tracker, &noise)?,
        TrackingMethod::DiffusionTracker => {
            let path = a
                .checkpoint
                .as_deref()
                .ok_or("--checkpoint is required for the diffusion tracker")?;
            let (params, schedule) = load_model(path)?;
            run_tracking(
                &DiffusionPolicy {
                    params: &params,
                    schedule,
                },
                &s,
                &cfg.tracker,
                &noise,
            )?
        }
    };
    if let Some(p) = &a.frames_csv {
        std::fs::write(p, run.to_csv())?;
    }
    emit(&serde_json::to_string_pretty(&run)?, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn bench_cmd(a: BenchArgs) -> AnyResult<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let report = match a.suite.as_str() {
        "estimation" => {
            let methods = if a.methods.is_empty() {
                EstimationMethod::REPORTED.to_vec()
            } else {
                a.methods
                    .iter()
                    .map(|m| EstimationMethod::parse(m).ok_or_else(|| format!("unknown method `{m}`")))
                    .collect::<Result<_, _>>()?
            };
            let lib = ObjectLibrary::builtin();
            let names: Vec<String> = if a.objects.is_empty() {
                lib.names().into_iter().map(String::from).collect()
            } else {
                a.objects.clone()
            };
            let objects = objects_by_name(&lib, &names)?;
            let placements: Vec<PlacementKind> = a
                .placements
                .iter()
                .map(|p| PlacementKind::parse(p).ok_or_else(|| format!("unknown placement `{p}`")))
                .collect::<Result<_, _>>()?;
            run_estimation_benchmark(&methods, &objects, &placements, a.trials.unwrap_or(10), &cfg, a.seed)?
        }
        "tracking" => {
            let methods: Vec<TrackingMethod> = if a.methods.is_empty() {
                TrackingMethod::ALL.to_vec()
            } else {
                a.methods
                    .iter()
                    .map(|m| TrackingMethod::parse(m).ok_or_else(|| format!("unknown method `{m}`")))
                    .collect::<Result<_, _>>()?
            };
            let scenarios = parse_scenarios(&a.scenarios)?;
            let model = if methods.contains(&TrackingMethod::DiffusionTracker) {
                Some(match &a.checkpoint {
                    Some(p) => load_model(p)?,
                    None => {
                        eprintln!("training a denoiser for {} epochs", cfg.train.epochs);
                        let records = tracking_dataset(&cfg, &scenarios)?;
                        let out = train_on_records(&cfg, &records)?;
                        (out.params, cfg.train.schedule())
                    }
                })
            } else {
                None
            };
            let tm = model.as_ref().map(|(params, schedule)| TrackerModel {
                params,
                schedule: schedule.clone(),
            });
            run_tracking_benchmark(&methods, &scenarios, a.trials.unwrap_or(20), &cfg, tm.as_ref(), a.seed)?
        }
        other => return Err(format!("unknown suite `{other}`").into()),
    };
    let (csv_path, json_path) = report.write(&a.out)?;
    for c in &report.cells {
        if c.applicable {
            println!(
                "{:<18} {:<14} {:<20} SR {:>5.1}% ({}/{})  secondary {:>5.1}%",
                c.method,
                c.object,
                c.scenario,
                100.0 * c.sr,
                c.successes,
                c.trials,
                100.0 * c.secondary_sr
            );
        } else {
            println!("{:<18} {:<14} {:<20} not applicable", c.method, c.object, c.scenario);
        }
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    for check in &report.invariants {
        if !check.passed {
            eprintln!("invariant `{}` failed: {}", check.name, check.detail);
        }
    }
    Ok(if report.all_invariants_hold() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn prompt_cmd(a: PromptArgs) -> AnyResult<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let lib = load_library(a.objects.as_deref())?;
    let prepared = PreparedObject::new(lib.get(&a.object)?.clone(), &cfg.estimation)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&prepared.prompt)? + "\n")?;
    println!(
        "wrote {} ({} unambiguous, {} ambiguous views)",
        a.out.display(),
        prepared.prompt.unambiguous.len(),
        prepared.prompt.ambiguous.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn dataset_cmd(a: DatasetArgs) -> AnyResult<ExitCode> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.tracking.demos = a.demos.unwrap_or(cfg.tracking.demos);
    cfg.tracking.dataset_seed = a.seed.unwrap_or(cfg.tracking.dataset_seed);
    let records = tracking_dataset(&cfg, &parse_scenarios(&a.scenarios)?)?;
    write_dataset(&a.out, &records)?;
    println!("wrote {} records to {}", records.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> AnyResult<ExitCode> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    let records = read_dataset(&a.dataset)?;
    let start = std::time::Instant::now();
    let out = train_on_records(&cfg, &records)?;
    Checkpoint::new(&out.params, &cfg.train, &out.loss_curve).save(&a.out)?;
    println!(
        "trained {} epochs in {:.1} s, final loss {:.6}; wrote {}",
        cfg.train.epochs,
        start.elapsed().as_secs_f64(),
        out.loss_curve.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => estimate_cmd(a),
        Command::Track(a) => track_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Prompt {
            command: PromptCommand::Export(a),
        } => prompt_cmd(a),
        Command::Dataset(a) => dataset_cmd(a),
        Command::Train(a) => train_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
