mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use refground::actuation::{centroid, sample_cloud, select_grasp, GripperSpec};
use refground::eval::{proposal_seed, run_benchmark};
use refground::models::{
    corpus_vocabulary, semantic_bundle, train_semantic_model, train_spatial_model, SEMANTIC_FILE, SPATIAL_FILE,
};
use refground::scene::{generate_corpus, load_corpus, load_scene_file, make_proposals, save_corpus, ProposalMode, SceneFile};
use refground::{Aggregation, AttributeFeaturizer, GroundingEngine};
use refground_api::{ApiConfig, AppState};
use serde_json::json;

use crate::config::CliConfig;

#[derive(Parser, Debug)]
#[command(name = "refground", version, about = "Referring-expression grounding on synthetic tabletop scenes")]
struct Cli {
    /// JSON settings file.
    #[arg(long, global = true, env = "REFGROUND_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scene corpus with train/val/test_a/test_b splits.
    GenCorpus(GenCorpusArgs),
    /// Train the semantic or the spatial model on a corpus's train split.
    Train(TrainArgs),
    /// Ground one query in one scene and print the ranked boxes.
    Ground(GroundArgs),
    /// Run the Prec@1 benchmark and write report.json.
    Eval(EvalArgs),
    /// Pick a grasp for one object of a scene.
    Act(ActArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "REFGROUND_SCENES")]
    scenes: Option<usize>,
    #[arg(long, env = "REFGROUND_SEED")]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Semantic,
    Spatial,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    role: Role,
    #[arg(long, env = "REFGROUND_CORPUS")]
    corpus: PathBuf,
    /// Model bundle to write (semantic.json or spatial.json in a models dir).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, env = "REFGROUND_SEED")]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Proposals {
    GroundTruth,
    Degraded,
}

impl From<Proposals> for ProposalMode {
    fn from(p: Proposals) -> Self {
        match p {
            Proposals::GroundTruth => ProposalMode::GroundTruth,
            Proposals::Degraded => ProposalMode::Degraded,
        }
    }
}

#[derive(Args, Debug)]
struct GroundArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long, env = "REFGROUND_MODELS")]
    models: PathBuf,
    /// noisy-or or max.
    #[arg(long, env = "REFGROUND_AGGREGATION")]
    aggregation: Option<Aggregation>,
    #[arg(long, env = "REFGROUND_K")]
    k: Option<usize>,
    #[arg(long, value_enum)]
    proposals: Option<Proposals>,
    #[arg(long)]
    proposal_seed: Option<u64>,
    /// Include per-stage diagnostics in the output.
    #[arg(long)]
    emit_diagnostics: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, env = "REFGROUND_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "REFGROUND_MODELS")]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated partitions (default val,test_a,test_b).
    #[arg(long, value_delimiter = ',')]
    partitions: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct ActArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    object: String,
    /// Gripper opening and finger length in meters, as `W,L`.
    #[arg(long, value_parser = parse_gripper)]
    gripper: GripperSpec,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, env = "REFGROUND_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = "REFGROUND_MODELS")]
    models: PathBuf,
    #[arg(long, env = "REFGROUND_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "REFGROUND_PORT")]
    port: Option<u16>,
    #[arg(long, env = "REFGROUND_HOST")]
    host: Option<String>,
    /// UI assets served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn parse_gripper(s: &str) -> Result<GripperSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [w, l] = parts.as_slice() else {
        return Err("expected W,L".into());
    };
    let w: f64 = w.parse().map_err(|_| format!("bad opening {w:?}"))?;
    let l: f64 = l.parse().map_err(|_| format!("bad finger length {l:?}"))?;
    GripperSpec::new(w, l).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<refground::Error> for Failure {
    fn from(e: refground::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json output"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = config::load(cli.config.as_deref())
        .map_err(Failure::Usage)
        .and_then(|cfg| run(cli.command, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command, cfg: CliConfig) -> Result<(), Failure> {
    match command {
        Command::GenCorpus(a) => gen_corpus(a, cfg),
        Command::Train(a) => train(a, cfg),
        Command::Ground(a) => ground(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::Act(a) => act(a, cfg),
        Command::Serve(a) => serve(a, cfg),
    }
}

fn gen_corpus(a: GenCorpusArgs, cfg: CliConfig) -> Result<(), Failure> {
    let n = a.scenes.unwrap_or(cfg.corpus.scenes);
    let seed = a.seed.unwrap_or(cfg.corpus.seed);
    if n == 0 {
        return Err(Failure::Usage("--scenes must be positive".into()));
    }
    let (files, splits) = generate_corpus(&cfg.corpus.scene, n, seed)?;
    save_corpus(&a.out, &files, Some(&splits))?;
    let sizes: serde_json::Map<String, serde_json::Value> =
        splits.0.iter().map(|(k, v)| (k.clone(), json!(v.len()))).collect();
    let expressions: usize = files.iter().map(|f| f.expressions.len()).sum();
    eprintln!("wrote {} scenes to {}", files.len(), a.out.display());
    print_json(&json!({ "scenes": files.len(), "expressions": expressions, "seed": seed, "partitions": sizes }));
    Ok(())
}

/// Scenes of the train split, or every scene when the corpus has no
/// split manifest.
fn training_scenes(dir: &Path) -> Result<Vec<SceneFile>, Failure> {
    let (files, splits) = load_corpus(dir)?;
    let train: Vec<SceneFile> = match &splits {
        Some(s) => s.select(&files, "train").into_iter().cloned().collect(),
        None => files,
    };
    if train.is_empty() {
        return Err(Failure::Runtime(format!("{}: no training scenes", dir.display())));
    }
    Ok(train)
}

fn train(a: TrainArgs, cfg: CliConfig) -> Result<(), Failure> {
    let scenes = training_scenes(&a.corpus)?;
    let refs: Vec<&SceneFile> = scenes.iter().collect();
    let featurizer = AttributeFeaturizer::default();
    let vocab = corpus_vocabulary(&refs)?;
    let started = std::time::Instant::now();
    let (losses, skipped) = match a.role {
        Role::Semantic => {
            let mut tc = cfg.training.semantic;
            tc.epochs = a.epochs.unwrap_or(tc.epochs);
            tc.learning_rate = a.learning_rate.unwrap_or(tc.learning_rate);
            tc.seed = a.seed.unwrap_or(tc.seed);
            let (model, losses) = train_semantic_model(&refs, &featurizer, &vocab, &tc)?;
            semantic_bundle(&model).save(&a.out)?;
            (losses, 0)
        }
        Role::Spatial => {
            let mut sc = cfg.training.spatial;
            sc.train.epochs = a.epochs.unwrap_or(sc.train.epochs);
            sc.train.learning_rate = a.learning_rate.unwrap_or(sc.train.learning_rate);
            sc.train.seed = a.seed.unwrap_or(sc.train.seed);
            let out = train_spatial_model(&refs, &featurizer, &vocab, &sc)?;
            out.model.to_bundle().save(&a.out)?;
            (out.epoch_losses, out.skipped)
        }
    };
    eprintln!("trained in {:.1}s, wrote {}", started.elapsed().as_secs_f64(), a.out.display());
    let role = match a.role {
        Role::Semantic => "semantic",
        Role::Spatial => "spatial",
    };
    print_json(&json!({
        "role": role,
        "out": a.out,
        "scenes": scenes.len(),
        "vocabulary": vocab.len(),
        "epoch_losses": losses,
        "skipped": skipped,
    }));
    Ok(())
}

fn engine(models: &Path, cfg: &CliConfig, aggregation: Option<Aggregation>, k: Option<usize>) -> Result<GroundingEngine, Failure> {
    let mut ec = cfg.engine;
    ec.aggregation = aggregation.unwrap_or(ec.aggregation);
    ec.k = k.unwrap_or(ec.k);
    if ec.k == 0 || ec.k > refground::cluster::MAX_POINTS {
        return Err(Failure::Usage(format!("k must be in 1..={}", refground::cluster::MAX_POINTS)));
    }
    for file in [SEMANTIC_FILE, SPATIAL_FILE] {
        if !models.join(file).is_file() {
            return Err(Failure::Runtime(format!("{}: missing {file}", models.display())));
        }
    }
    Ok(GroundingEngine::load(models, ec)?)
}

fn ground(a: GroundArgs, cfg: CliConfig) -> Result<(), Failure> {
    let engine = engine(&a.models, &cfg, a.aggregation, a.k)?;
    let file = load_scene_file(&a.scene)?;
    let scene = file.scene();
    let mode = a.proposals.map(ProposalMode::from).unwrap_or(cfg.ground.proposals);
    let seed = proposal_seed(a.proposal_seed.unwrap_or(cfg.ground.proposal_seed), &file.id);
    let proposals = make_proposals(&scene, mode, seed).boxes;
    let result = engine.ground(&scene, &proposals, &a.query)?;
    let ranked: Vec<_> = result
        .ranked
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "rank": i + 1,
                "region_index": c.region_index,
                "box": c.bbox,
                "score": c.score,
                "loss": c.loss,
            })
        })
        .collect();
    let mut out = json!({
        "scene_id": file.id,
        "query": a.query,
        "aggregation": result.aggregation,
        "proposals": mode,
        "ranked": ranked,
    });
    if a.emit_diagnostics {
        out["diagnostics"] = serde_json::to_value(&result.diagnostics).expect("diagnostics serialize");
    }
    print_json(&out);
    Ok(())
}

fn eval(a: EvalArgs, cfg: CliConfig) -> Result<(), Failure> {
    let engine = engine(&a.models, &cfg, None, None)?;
    let (files, splits) = load_corpus(&a.corpus)?;
    let wanted = a.partitions.unwrap_or(cfg.eval.partitions);
    let partitions: Vec<(String, Vec<&SceneFile>)> = match &splits {
        Some(s) => wanted
            .iter()
            .map(|p| (p.clone(), s.select(&files, p)))
            .filter(|(_, scenes)| !scenes.is_empty())
            .collect(),
        None => vec![("all".to_string(), files.iter().collect())],
    };
    if partitions.is_empty() {
        return Err(Failure::Runtime(format!("{}: none of {wanted:?} has scenes", a.corpus.display())));
    }
    let (report, timing) = run_benchmark(&engine, &partitions, &cfg.benchmark)?;
    let json = report.to_json();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(&a.out, &json).map_err(|e| io_err(&a.out, e))?;
    let timing_path = a.out.with_extension("timing.json");
    let timing_json = serde_json::to_string_pretty(&timing).expect("timing serialize");
    std::fs::write(&timing_path, timing_json).map_err(|e| io_err(&timing_path, e))?;
    eprint!("{}", report.render_table());
    eprintln!(
        "{} queries in {:.1}s (mean {:.2} ms, max {:.2} ms)",
        timing.queries, timing.total_seconds, timing.mean_query_ms, timing.max_query_ms
    );
    println!("{json}");
    Ok(())
}

/// Tabletop frame: x to the right, y up, z away from the camera. The
/// image maps onto a 1.0 m x 0.75 m table.
const TABLE_WIDTH: f64 = 1.0;
const TABLE_DEPTH: f64 = 0.75;

fn act(a: ActArgs, cfg: CliConfig) -> Result<(), Failure> {
    let file = load_scene_file(&a.scene)?;
    let scene = file.scene();
    let obj = scene
        .object(&a.object)
        .ok_or_else(|| Failure::Runtime(format!("scene {} has no object {}", file.id, a.object)))?;
    let (cx, cy) = obj.bbox.center();
    let center = [
        (cx / scene.width as f64 - 0.5) * TABLE_WIDTH,
        obj.extent.height / 2.0,
        (1.0 - cy / scene.height as f64) * TABLE_DEPTH,
    ];
    let points = a.points.unwrap_or(cfg.act.points);
    if points == 0 {
        return Err(Failure::Usage("--points must be positive".into()));
    }
    let cloud = sample_cloud(center, &obj.extent, points, a.seed.unwrap_or(cfg.act.seed));
    let c = centroid(&cloud)?;
    let grasp = select_grasp(&obj.extent, &a.gripper);
    print_json(&json!({
        "scene_id": file.id,
        "object": obj.id,
        "extent": obj.extent,
        "gripper": a.gripper,
        "points": points,
        "centroid": c,
        "grasp": grasp,
    }));
    Ok(())
}

fn serve(a: ServeArgs, cfg: CliConfig) -> Result<(), Failure> {
    let engine = engine(&a.models, &cfg, None, None)?;
    let (files, _) = load_corpus(&a.corpus)?;
    let host = a.host.unwrap_or(cfg.serve.host);
    let port = a.port.unwrap_or(cfg.serve.port);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|_| Failure::Usage(format!("bad address {host}:{port}")))?;
    let state = Arc::new(AppState::new(
        engine,
        files,
        ApiConfig {
            session_timeout: Duration::from_secs(cfg.serve.session_timeout_secs),
            proposals: cfg.serve.proposals,
            proposal_seed: cfg.serve.proposal_seed,
            static_dir: a.static_dir.or(cfg.serve.static_dir),
        },
    ));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime
        .block_on(refground_api::serve(state, addr))
        .map_err(|e| Failure::Runtime(format!("{addr}: {e}")))
}
