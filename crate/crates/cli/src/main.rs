//! `predmpc`: data generation, training, simulation and evaluation.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod manifest;
mod simlog;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use predmpc_core::eval::{self, PredictionMethod, ScenarioKind};
use predmpc_core::neural::{self, ModelWeights};
use predmpc_core::{extract_dataset, run_demonstration, Dataset, PipelineConfig, PlannerKind, PredictorKind, Scenario};
use serde_json::json;

use manifest::{manifest_path, ManifestBuilder};

#[derive(Parser, Debug)]
#[command(name = "predmpc", version, about = "Decentralized multi-robot MPC with learned interaction-aware prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run centralized demonstrations and extract a training dataset.
    GenData(GenDataArgs),
    /// Train the prediction model on a dataset.
    Train(TrainArgs),
    /// Simulate one scenario instance and write a per-tick log.
    Simulate(SimulateArgs),
    /// Compare prediction methods on a dataset.
    EvalPred(EvalPredArgs),
    /// Run the planning benchmark over many instances.
    BenchPlan(BenchPlanArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Pipeline TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Override ticks per demonstration run.
    #[arg(long)]
    ticks: Option<usize>,
    /// Override the number of demonstration runs.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset produced by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Output weights file (best validation epoch).
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Keep every `stride`-th record.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Keep at most this many records (after striding).
    #[arg(long)]
    max_records: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// centralized, cvm, oracle or rnn.
    #[arg(long)]
    planner: String,
    #[arg(long, default_value = "symmetric-swap")]
    scenario: String,
    /// Model weights, required for the rnn planner.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long)]
    obstacles: Option<usize>,
    /// Stop after this many ticks (default: until arrival or timeout).
    #[arg(long)]
    ticks: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalPredArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Comma list of cvm, rnn, rnn_zero_env, ground_truth.
    #[arg(long, default_value = "cvm,rnn,rnn_zero_env")]
    methods: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchPlanArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "symmetric-swap")]
    scenario: String,
    /// Comma list of centralized, cvm, oracle, rnn.
    #[arg(long, default_value = "centralized,cvm,oracle")]
    planners: String,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long, default_value_t = 0)]
    obstacles: usize,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(predmpc_core::Error),
}

impl From<predmpc_core::Error> for CliError {
    fn from(e: predmpc_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use predmpc_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidConfig { .. } | E::Toml(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(s) => f.write_str(s),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_config(a: &ConfigArgs) -> CliResult<PipelineConfig> {
    let text =
        fs::read_to_string(&a.config).map_err(|e| usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut cfg = PipelineConfig::from_toml_str(&text)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn load_model(path: &Path, cfg: &PipelineConfig) -> CliResult<ModelWeights> {
    let w = neural::load_weights(path)?;
    if w.config.horizon < cfg.mpc.horizon_steps {
        return Err(predmpc_core::Error::ModelContract(format!(
            "model horizon {} is shorter than the planning horizon {}",
            w.config.horizon, cfg.mpc.horizon_steps
        ))
        .into());
    }
    Ok(w)
}

fn parse_planner(name: &str, weights: Option<&Arc<ModelWeights>>) -> CliResult<PlannerKind> {
    Ok(match name {
        "centralized" => PlannerKind::Centralized,
        "cvm" => PlannerKind::Decentralized(PredictorKind::ConstantVelocity),
        "oracle" => PlannerKind::Decentralized(PredictorKind::CommunicationOracle),
        "rnn" => PlannerKind::Decentralized(PredictorKind::LearnedRnn(
            weights.cloned().ok_or_else(|| usage("planner `rnn` requires --weights"))?,
        )),
        other => return Err(usage(format!("unknown planner `{other}` (expected centralized, cvm, oracle or rnn)"))),
    })
}

fn parse_scenario(s: &str) -> CliResult<ScenarioKind> {
    s.parse::<ScenarioKind>().map_err(|e| usage(e.to_string()))
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(t) = a.ticks {
        cfg.sim.n_sim_steps = t;
    }
    if let Some(r) = a.runs {
        cfg.sim.runs = r;
    }
    cfg.validate()?;
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut collisions = 0;
    for run in 0..cfg.sim.runs {
        let log = run_demonstration(&cfg.sim_run(run))?;
        collisions += log.collision_ticks;
        let recs = extract_dataset(&log, run as u32, cfg.model.history_len, cfg.model.horizon);
        runs.push(json!({
            "run": run,
            "ticks": log.len(),
            "attempt": log.attempt,
            "rejections": log.rejections.len(),
            "goals_reached": log.goals_reached,
            "failed_solves": log.failed_solves.len(),
            "obstacle_respawns": log.obstacle_respawns,
            "collision_ticks": log.collision_ticks,
            "records": recs.len(),
        }));
        records.extend(recs);
    }
    let ds = Dataset { history_len: cfg.model.history_len, horizon: cfg.model.horizon, dt: cfg.world.dt, records };
    create_parent(&a.out)?;
    ds.save(&a.out)?;
    let summary = json!({ "records": ds.records.len(), "collision_ticks": collisions, "runs": runs });
    ManifestBuilder {
        command: "gen-data",
        config_path: Some(&a.cfg.config),
        config: &cfg,
        inputs: vec![],
        outputs: vec![&a.out],
        summary,
    }
    .write(&manifest_path(&a.out))?;
    println!("records: {}", ds.records.len());
    if collisions > 0 {
        println!("collision-free: no ({collisions} ticks with collisions)");
        return Err(predmpc_core::Error::InvalidGeometry(format!(
            "every attempt collided; dataset written but contains {collisions} colliding ticks"
        ))
        .into());
    }
    println!("collision-free: yes");
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(p) = a.patience {
        cfg.train.patience = p;
    }
    if a.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    cfg.validate()?;
    let ds = Dataset::load(&a.data)?;
    if ds.history_len != cfg.model.history_len || ds.horizon != cfg.model.horizon {
        return Err(predmpc_core::Error::ModelContract(format!(
            "dataset has history {} / horizon {}, model expects {} / {}",
            ds.history_len, ds.horizon, cfg.model.history_len, cfg.model.horizon
        ))
        .into());
    }
    let mut records: Vec<_> = ds.records.into_iter().step_by(a.stride).collect();
    if let Some(m) = a.max_records {
        records.truncate(m);
    }
    let init = match &a.init {
        Some(p) => {
            let w = neural::load_weights(p)?;
            if w.config != cfg.model {
                return Err(predmpc_core::Error::ModelContract(format!(
                    "initial weights have config {:?}, expected {:?}",
                    w.config, cfg.model
                ))
                .into());
            }
            w
        }
        None => ModelWeights::init(cfg.model, cfg.seed),
    };
    let tc = cfg.train_config();
    let outcome = neural::train_with_progress(&records, init, &tc, |p| {
        eprintln!("epoch {:>4}  train {:.6e}  val {:.6e}", p.epoch, p.train_loss, p.val_loss);
    })?;
    let curve_path = a.curve.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    create_parent(&a.out)?;
    create_parent(&curve_path)?;
    neural::save_weights(&outcome.weights, &a.out)?;
    neural::write_loss_curve(&outcome.curve, &curve_path)?;
    let mut inputs = vec![a.data.as_path()];
    if let Some(p) = &a.init {
        inputs.push(p);
    }
    let summary = json!({
        "records_used": records.len(),
        "train_size": outcome.train_size,
        "val_size": outcome.val_size,
        "validation_fallback": outcome.validation_fallback,
        "epochs_run": outcome.curve.len(),
        "best_epoch": outcome.best_epoch,
        "initial_val_loss": outcome.initial_val_loss,
        "best_val_loss": outcome.best_val_loss,
        "parameters": outcome.weights.num_parameters(),
    });
    ManifestBuilder {
        command: "train",
        config_path: Some(&a.cfg.config),
        config: &cfg,
        inputs,
        outputs: vec![&a.out, &curve_path],
        summary,
    }
    .write(&manifest_path(&a.out))?;
    println!(
        "epochs: {}  best epoch: {}  val loss: {:.6e} -> {:.6e}",
        outcome.curve.len(),
        outcome.best_epoch,
        outcome.initial_val_loss,
        outcome.best_val_loss
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = load_config(&a.cfg)?;
    let kind = parse_scenario(&a.scenario)?;
    let weights = match &a.weights {
        Some(p) => Some(Arc::new(load_model(p, &cfg)?)),
        None => None,
    };
    let planner = parse_planner(&a.planner, weights.as_ref())?;
    let scenario = Scenario {
        kind,
        n_robots: a.robots.unwrap_or(cfg.world.n_robots),
        n_obstacles: a.obstacles.unwrap_or(cfg.world.n_obstacles),
        instance_seed: cfg.seed,
    };
    let result = eval::run_instance(&cfg.bench(), &scenario, &planner, a.ticks)?;
    create_parent(&a.out)?;
    fs::write(&a.out, simlog::render(&result, cfg.mpc.horizon_steps))?;
    let mut inputs = Vec::new();
    if let Some(p) = &a.weights {
        inputs.push(p.as_path());
    }
    let summary = json!({
        "scenario": kind.name(),
        "planner": planner.name(),
        "robots": scenario.n_robots,
        "obstacles": scenario.n_obstacles,
        "ticks": result.ticks.len(),
        "collided": result.collided,
        "collision_ticks": result.collision_ticks,
        "timed_out": result.timed_out,
        "failed_solves": result.failed_solves,
        "durations": result.durations,
        "lengths": result.lengths,
    });
    ManifestBuilder {
        command: "simulate",
        config_path: Some(&a.cfg.config),
        config: &cfg,
        inputs,
        outputs: vec![&a.out],
        summary,
    }
    .write(&manifest_path(&a.out))?;
    println!(
        "ticks: {}  collided: {}  timed out: {}  failed solves: {}",
        result.ticks.len(),
        result.collided,
        result.timed_out,
        result.failed_solves
    );
    Ok(())
}

fn eval_pred(a: EvalPredArgs) -> CliResult<()> {
    let cfg = load_config(&a.cfg)?;
    let mut methods = Vec::new();
    for m in split_list(&a.methods) {
        methods.push(match m {
            "cvm" => PredictionMethod::ConstantVelocity,
            "rnn" => PredictionMethod::Rnn,
            "rnn_zero_env" => PredictionMethod::RnnZeroedEnvironment,
            "ground_truth" => PredictionMethod::GroundTruth,
            other => return Err(usage(format!("unknown method `{other}`"))),
        });
    }
    let needs_model =
        methods.iter().any(|m| matches!(m, PredictionMethod::Rnn | PredictionMethod::RnnZeroedEnvironment));
    let weights = match (&a.weights, needs_model) {
        (Some(p), _) => Some(neural::load_weights(p)?),
        (None, true) => return Err(usage("methods rnn and rnn_zero_env require --weights")),
        (None, false) => None,
    };
    let ds = Dataset::load(&a.data)?;
    if let Some(w) = &weights {
        if w.config.history_len != ds.history_len || w.config.horizon != ds.horizon {
            return Err(predmpc_core::Error::ModelContract(format!(
                "dataset has history {} / horizon {}, model expects {} / {}",
                ds.history_len, ds.horizon, w.config.history_len, w.config.horizon
            ))
            .into());
        }
    }
    let curves = eval::eval_prediction(&ds.records, weights.as_ref(), &methods, ds.dt)?;
    fs::create_dir_all(&a.out)?;
    eval::export_prediction(&curves, &a.out)?;
    let csv = a.out.join("prediction.csv");
    let jsn = a.out.join("prediction.json");
    let mut inputs = vec![a.data.as_path()];
    if let Some(p) = &a.weights {
        inputs.push(p);
    }
    let finals: serde_json::Map<String, serde_json::Value> =
        curves.iter().map(|c| (c.method.clone(), json!(c.final_error()))).collect();
    ManifestBuilder {
        command: "eval-pred",
        config_path: Some(&a.cfg.config),
        config: &cfg,
        inputs,
        outputs: vec![&csv, &jsn],
        summary: json!({ "records": ds.records.len(), "final_error": finals }),
    }
    .write(&a.out.join("prediction.manifest.json"))?;
    for c in &curves {
        println!("{:<14} final-step error {:.4} m", c.method, c.final_error());
    }
    Ok(())
}

fn bench_plan(a: BenchPlanArgs) -> CliResult<()> {
    let cfg = load_config(&a.cfg)?;
    let kind = parse_scenario(&a.scenario)?;
    let weights = match &a.weights {
        Some(p) => Some(Arc::new(load_model(p, &cfg)?)),
        None => None,
    };
    let planners = split_list(&a.planners)
        .into_iter()
        .map(|p| parse_planner(p, weights.as_ref()))
        .collect::<CliResult<Vec<_>>>()?;
    if planners.is_empty() {
        return Err(usage("--planners is empty"));
    }
    let n_robots = a.robots.unwrap_or(cfg.world.n_robots);
    let scenarios = eval::instance_scenarios(kind, n_robots, a.obstacles, a.instances, cfg.seed);
    let outcome = eval::run_planning_benchmark(&cfg.bench(), &scenarios, &planners, a.jobs)?;
    fs::create_dir_all(&a.out)?;
    eval::export_planning(&outcome.metrics, &a.out)?;
    let timing_path = a.out.join("timing.json");
    let timing: Vec<_> = planners
        .iter()
        .zip(&outcome.timing)
        .map(|(p, t)| json!({ "planner": p.name(), "solves": t.solves, "mean_ms": t.mean_ms, "max_ms": t.max_ms }))
        .collect();
    fs::write(&timing_path, serde_json::to_string_pretty(&timing).map_err(predmpc_core::Error::from)? + "\n")?;
    let csv = a.out.join("planning.csv");
    let jsn = a.out.join("planning.json");
    let mut inputs = Vec::new();
    if let Some(p) = &a.weights {
        inputs.push(p.as_path());
    }
    ManifestBuilder {
        command: "bench-plan",
        config_path: Some(&a.cfg.config),
        config: &cfg,
        inputs,
        outputs: vec![&csv, &jsn],
        summary: json!({ "scenario": kind.name(), "robots": n_robots, "obstacles": a.obstacles, "instances": a.instances }),
    }
    .write(&a.out.join("planning.manifest.json"))?;
    for m in &outcome.metrics {
        let dur = m.trajectory_duration.map_or(f64::NAN, |s| s.mean);
        println!(
            "{:<12} collisions {}/{}  timeouts {}  mean duration {:.2} s",
            m.planner, m.collision_instances, m.instances, m.timeout_instances, dur
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Simulate(a) => simulate(a),
        Command::EvalPred(a) => eval_pred(a),
        Command::BenchPlan(a) => bench_plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
