use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use cseg::metrics;
use cseg::potts_heur::FeatureKind;
use cseg::raster::{self, PanopticTruth};
use cseg::scribble::{ScribbleError, ScribbleSet};
use cseg::session::{Algorithm, Session, SessionConfig, SessionError, SessionInputs};
use cseg::synth;

const EXIT_INPUT: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "cseg", version, about = "Scribble-driven superpixel segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label images from scribbles and write rendered maps plus report.json.
    Segment(RunArgs),
    /// Alternate simulated corrections and solves; writes metrics.csv.
    InteractiveSim(RunArgs),
    /// Score a prediction against ground truth.
    Eval(EvalArgs),
    /// Serve the HTTP session API.
    Serve(ServeArgs),
    /// Write a deterministic synthetic scene.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum AlgoArg {
    L0h,
    IlpU,
    IlpP,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::L0h => Algorithm::L0h,
            AlgoArg::IlpU => Algorithm::IlpU,
            AlgoArg::IlpP => Algorithm::IlpP,
        }
    }
}

#[derive(Args, Default)]
struct RunArgs {
    /// Input image (PNG or PPM); repeat for several images.
    #[arg(long)]
    image: Vec<PathBuf>,
    /// Superpixel label PNG per image; a grid is used when absent.
    #[arg(long)]
    superpixels: Vec<PathBuf>,
    /// Per-pixel feature tensor per image.
    #[arg(long)]
    features: Vec<PathBuf>,
    /// Per-pixel class probability tensor per image.
    #[arg(long)]
    probmap: Vec<PathBuf>,
    /// Ground-truth PNG per image.
    #[arg(long)]
    truth: Vec<PathBuf>,
    /// Scribble JSON per image.
    #[arg(long)]
    scribbles: Vec<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Source of node features, overriding the inferred one.
    #[arg(long, value_enum)]
    feature_kind: Option<KindArg>,
    /// Solver time limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Solver branch-and-bound node limit.
    #[arg(long)]
    node_limit: Option<u64>,
    #[arg(long)]
    cut_k: Option<usize>,
    /// Superpixel count for the grid fallback.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Images processed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON file with defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Unused here; every algorithm is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Rgb,
    Layer1,
    Layer3,
    Prob,
}

impl From<KindArg> for FeatureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Rgb => FeatureKind::Rgb,
            KindArg::Layer1 => FeatureKind::Layer1,
            KindArg::Layer3 => FeatureKind::Layer3,
            KindArg::Prob => FeatureKind::Prob,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted class or panoptic PNG.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Skip panoptic quality.
    #[arg(long)]
    class_only: bool,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Listen address; loopback unless set otherwise.
    #[arg(long)]
    bind: Option<String>,
    /// Seconds before an idle session is dropped.
    #[arg(long)]
    idle_timeout: Option<u64>,
    /// Request size cap in bytes.
    #[arg(long)]
    max_body: Option<usize>,
    /// Return 202 from scribble posts and solve in the background.
    #[arg(long = "async")]
    asynchronous: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SceneKind {
    Interactive,
    Island,
    Fuzz,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Option<SceneKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config-file keys mirror the long flag names with `_` for `-`.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    #[serde(deserialize_with = "paths")]
    image: Vec<PathBuf>,
    #[serde(deserialize_with = "paths")]
    superpixels: Vec<PathBuf>,
    #[serde(deserialize_with = "paths")]
    features: Vec<PathBuf>,
    #[serde(deserialize_with = "paths")]
    probmap: Vec<PathBuf>,
    #[serde(deserialize_with = "paths")]
    truth: Vec<PathBuf>,
    #[serde(deserialize_with = "paths")]
    scribbles: Vec<PathBuf>,
    algo: Option<AlgoArg>,
    lambda: Option<f64>,
    eta: Option<f64>,
    feature_kind: Option<KindArg>,
    time_limit: Option<f64>,
    node_limit: Option<u64>,
    cut_k: Option<usize>,
    grid: Option<usize>,
    rounds: Option<usize>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    seed: Option<u64>,
    pred: Option<PathBuf>,
    class_only: Option<bool>,
    bind: Option<String>,
    idle_timeout: Option<u64>,
    max_body: Option<usize>,
    #[serde(rename = "async")]
    asynchronous: Option<bool>,
    kind: Option<SceneKind>,
    size: Option<usize>,
}

fn paths<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<PathBuf>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PathBuf),
        Many(Vec<PathBuf>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

/// Exit code with a message on stderr.
struct Failure(u8, String);

impl Failure {
    fn input(msg: impl std::fmt::Display) -> Self {
        Failure(EXIT_INPUT, msg.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let code = match e {
            SessionError::NoSolution(_) => EXIT_INFEASIBLE,
            SessionError::Io { .. } => 1,
            _ => EXIT_INPUT,
        };
        Failure(code, e.to_string())
    }
}

fn usage(msg: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, msg).exit()
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut cfg: FileConfig = serde_json::from_str(&text)
        .map_err(|e| Failure(2, format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |v: &mut Vec<PathBuf>| {
        for p in v.iter_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    };
    for list in [
        &mut cfg.image,
        &mut cfg.superpixels,
        &mut cfg.features,
        &mut cfg.probmap,
        &mut cfg.truth,
        &mut cfg.scribbles,
    ] {
        rebase(list);
    }
    for p in [&mut cfg.out, &mut cfg.pred].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn pick(flag: Vec<PathBuf>, file: Vec<PathBuf>) -> Vec<PathBuf> {
    if flag.is_empty() {
        file
    } else {
        flag
    }
}

/// One image's inputs after merging flags and config.
struct Job {
    image: PathBuf,
    superpixels: Option<PathBuf>,
    features: Option<PathBuf>,
    probmap: Option<PathBuf>,
    truth: Option<PathBuf>,
    scribbles: PathBuf,
    out: PathBuf,
}

struct Plan {
    jobs: Vec<Job>,
    config: SessionConfig,
    rounds: usize,
    threads: usize,
}

fn plan(args: RunArgs, needs_truth: bool) -> Result<Plan, Failure> {
    let file = load_config(args.config.as_deref())?;
    let images = pick(args.image, file.image);
    let scribbles = pick(args.scribbles, file.scribbles);
    let superpixels = pick(args.superpixels, file.superpixels);
    let features = pick(args.features, file.features);
    let probmap = pick(args.probmap, file.probmap);
    let truth = pick(args.truth, file.truth);
    if images.is_empty() {
        usage("the following required arguments were not provided:\n  --image <IMAGE>");
    }
    if scribbles.is_empty() {
        usage("the following required arguments were not provided:\n  --scribbles <SCRIBBLES>");
    }
    if needs_truth && truth.is_empty() {
        usage("the following required arguments were not provided:\n  --truth <TRUTH>");
    }
    let n = images.len();
    for (name, list, optional) in [
        ("--scribbles", &scribbles, false),
        ("--superpixels", &superpixels, true),
        ("--features", &features, true),
        ("--probmap", &probmap, true),
        ("--truth", &truth, true),
    ] {
        if list.len() != n && !(optional && list.is_empty()) {
            Cli::command()
                .error(
                    ErrorKind::WrongNumberOfValues,
                    format!("{name} given {} times for {n} image(s)", list.len()),
                )
                .exit();
        }
    }
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("cseg-out"));
    let nth = |v: &Vec<PathBuf>, i: usize| v.get(i).cloned();
    let jobs = images
        .iter()
        .enumerate()
        .map(|(i, img)| Job {
            image: img.clone(),
            superpixels: nth(&superpixels, i),
            features: nth(&features, i),
            probmap: nth(&probmap, i),
            truth: nth(&truth, i),
            scribbles: scribbles[i].clone(),
            out: if n == 1 {
                out.clone()
            } else {
                let stem = img.file_stem().map(|s| s.to_string_lossy().into_owned());
                out.join(format!("{i:03}_{}", stem.unwrap_or_default()))
            },
        })
        .collect();
    let d = SessionConfig::default();
    let config = SessionConfig {
        algo: args.algo.or(file.algo).map(Algorithm::from).unwrap_or(d.algo),
        lambda: args.lambda.or(file.lambda).unwrap_or(d.lambda),
        eta: args.eta.or(file.eta),
        feature_kind: args.feature_kind.or(file.feature_kind).map(FeatureKind::from),
        time_limit: args.time_limit.or(file.time_limit),
        node_limit: args.node_limit.or(file.node_limit),
        cut_k: args.cut_k.or(file.cut_k).unwrap_or(d.cut_k),
        superpixels: args.grid.or(file.grid).unwrap_or(d.superpixels),
        max_outer_loops: d.max_outer_loops,
    };
    Ok(Plan {
        jobs,
        config,
        rounds: args.rounds.or(file.rounds).unwrap_or(3),
        threads: args.jobs.or(file.jobs).unwrap_or(1).max(1),
    })
}

fn ctx(p: &Path) -> impl Fn(raster::RasterError) -> Failure + '_ {
    move |e| Failure::input(format!("{}: {e}", p.display()))
}

fn load_session(job: &Job, config: &SessionConfig) -> Result<(Session, ScribbleSet, Option<PanopticTruth>), Failure> {
    let image = raster::load_image(&job.image).map_err(ctx(&job.image))?;
    let sp = job
        .superpixels
        .as_ref()
        .map(|p| raster::load_superpixels(p).map_err(ctx(p)))
        .transpose()?;
    let features = job
        .features
        .as_ref()
        .map(|p| raster::load_field(p, false).map_err(ctx(p)))
        .transpose()?;
    let probmap = job
        .probmap
        .as_ref()
        .map(|p| raster::load_field(p, true).map_err(ctx(p)))
        .transpose()?;
    let truth = job
        .truth
        .as_ref()
        .map(|p| raster::load_truth(p).map_err(ctx(p)))
        .transpose()?;
    let scribbles = ScribbleSet::load(&job.scribbles).map_err(Failure::input)?;
    let inputs = SessionInputs::new(image, sp, features, probmap, config.superpixels)?;
    if let Some(t) = &truth {
        if (t.width, t.height) != (inputs.width(), inputs.height()) {
            return Err(Failure::input(format!(
                "truth is {}x{}, image is {}x{}",
                t.width,
                t.height,
                inputs.width(),
                inputs.height()
            )));
        }
    }
    Ok((Session::new(inputs, config.clone()), scribbles, truth))
}

fn segment_one(job: &Job, config: &SessionConfig) -> Result<(), Failure> {
    let (mut session, scribbles, truth) = load_session(job, config)?;
    let image = session.inputs.image.clone();
    let round = session.run_round(Some(scribbles), truth.as_ref())?;
    round.write_to(&job.out, &image)?;
    log::info!(
        "{}: {} ({} nodes)",
        job.image.display(),
        round.report.status,
        round.report.params.graph_nodes
    );
    Ok(())
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn simulate_one(job: &Job, config: &SessionConfig, rounds: usize) -> Result<(), Failure> {
    let (mut session, scribbles, truth) = load_session(job, config)?;
    let truth = truth.expect("truth checked by plan");
    session.run_round(Some(scribbles), Some(&truth))?;
    for _ in 0..rounds {
        let next = match session.simulate_correction(&truth) {
            Ok(s) => Some(ScribbleSet::new(vec![s])),
            Err(SessionError::Scribble(ScribbleError::NoError)) => {
                log::info!("{}: prediction matches truth", job.image.display());
                None
            }
            Err(e) => return Err(e.into()),
        };
        session.run_round(next, Some(&truth))?;
    }
    session.write_snapshot(&job.out)?;
    let mut csv = String::from("round,miou,pq,sq,rq,scribbles,status,objective\n");
    for r in session.history() {
        let m = r.report.metrics.as_ref();
        let p = m.and_then(|m| m.panoptic.as_ref());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            csv_cell(m.map(|m| m.miou)),
            csv_cell(p.map(|p| p.pq)),
            csv_cell(p.map(|p| p.sq)),
            csv_cell(p.map(|p| p.rq)),
            r.report.scribbles,
            r.report.status,
            csv_cell(r.report.objective),
        ));
    }
    let path = job.out.join("metrics.csv");
    fs::write(&path, csv).map_err(|e| Failure(1, format!("{}: {e}", path.display())))?;
    Ok(())
}

fn run_jobs(plan: Plan, f: impl Fn(&Job, &SessionConfig) -> Result<(), Failure> + Sync) -> u8 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(plan.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let results: Vec<Result<(), Failure>> =
        pool.install(|| plan.jobs.par_iter().map(|j| f(j, &plan.config)).collect());
    let mut code = 0;
    for (job, r) in plan.jobs.iter().zip(results) {
        if let Err(Failure(c, msg)) = r {
            eprintln!("error: {}: {msg}", job.image.display());
            code = code.max(c);
        }
    }
    code
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let file = load_config(args.config.as_deref())?;
    let Some(pred) = args.pred.or(file.pred) else {
        usage("the following required arguments were not provided:\n  --pred <PRED>");
    };
    let Some(truth) = args.truth.or(file.truth.into_iter().next()) else {
        usage("the following required arguments were not provided:\n  --truth <TRUTH>");
    };
    let class_only = args.class_only || file.class_only.unwrap_or(false);
    let p = raster::load_truth(&pred).map_err(|e| Failure::input(format!("{}: {e}", pred.display())))?;
    let t = raster::load_truth(&truth).map_err(|e| Failure::input(format!("{}: {e}", truth.display())))?;
    if (p.width, p.height) != (t.width, t.height) {
        return Err(Failure::input(format!(
            "prediction is {}x{}, truth is {}x{}",
            p.width, p.height, t.width, t.height
        )));
    }
    let report = metrics::evaluate(&p.class_ids, &p.instance_ids, &t, !class_only).map_err(Failure::input)?;
    let json = report.to_json();
    let _ = writeln!(std::io::stdout().lock(), "{json}");
    if let Some(out) = args.out.or(file.out) {
        let io = |e: std::io::Error| Failure(1, format!("{}: {e}", out.display()));
        fs::create_dir_all(&out).map_err(io)?;
        fs::write(out.join("report.json"), format!("{json}\n")).map_err(io)?;
        fs::write(out.join("report.csv"), report.to_csv()).map_err(io)?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let file = load_config(args.config.as_deref())?;
    let mut cfg = cseg::service::ServiceConfig::default();
    if let Some(b) = args.bind.or(file.bind) {
        cfg.bind = b.parse().map_err(|e| Failure(2, format!("--bind {b}: {e}")))?;
    }
    if let Some(s) = args.idle_timeout.or(file.idle_timeout) {
        cfg.idle_timeout = Duration::from_secs(s);
    }
    if let Some(m) = args.max_body.or(file.max_body) {
        cfg.max_body = m;
    }
    cfg.asynchronous = args.asynchronous || file.asynchronous.unwrap_or(false);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure(1, e.to_string()))?;
    rt.block_on(cseg::service::serve(cfg))
        .map_err(|e| Failure(1, e.to_string()))
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let file = load_config(args.config.as_deref())?;
    let kind = args.kind.or(file.kind).unwrap_or(SceneKind::Interactive);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let size = args.size.or(file.size).unwrap_or(48);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("cseg-synth"));
    let scene = match kind {
        SceneKind::Interactive => synth::interactive_scene(seed, size, 8, 4),
        SceneKind::Island => synth::spurious_island_scene(),
        SceneKind::Fuzz => synth::fuzz_scene(seed, size, size, 5, 4),
    };
    let io = |e: std::io::Error| Failure(1, format!("{}: {e}", out.display()));
    fs::create_dir_all(&out).map_err(io)?;
    raster::save_image(&scene.image, out.join("image.png")).map_err(|e| Failure(1, e.to_string()))?;
    fs::write(out.join("superpixels.png"), scene.superpixels.to_png()).map_err(io)?;
    let codes = raster::panoptic_codes(&scene.truth.class_ids, &scene.truth.instance_ids);
    let truth = raster::encode_png_u16(scene.truth.width, scene.truth.height, &codes);
    fs::write(out.join("truth.png"), truth).map_err(io)?;
    fs::write(out.join("scribbles.json"), scene.scribbles.to_json()).map_err(io)?;
    if let Some(p) = &scene.probmap {
        fs::write(out.join("probmap.cseg"), p.to_tensor().encode()).map_err(io)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CSEG_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => plan(a, false).map(|p| run_jobs(p, segment_one)),
        Command::InteractiveSim(a) => plan(a, true).map(|p| {
            let rounds = p.rounds;
            run_jobs(p, move |j, c| simulate_one(j, c, rounds))
        }),
        Command::Eval(a) => eval(a).map(|_| 0),
        Command::Serve(a) => serve(a).map(|_| 0),
        Command::Synth(a) => synth(a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
