//! Evaluation harness: prediction error along the horizon and closed-loop
//! planner comparison on scripted scenario families.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::DatasetRecord;
use crate::dynamics::{ControlInput, Limits};
use crate::error::{Error, Result};
use crate::mpc::MpcConfig;
use crate::neural::{self, ForwardOptions, ModelWeights};
use crate::predictors::{integrate_velocities, ObservationHistory};
use crate::sim::{self, ObstacleSettings, PlannerKind, Team};
use crate::world::{ObstacleState, RobotState, Vec3, WorldConfig};

// ---------------------------------------------------------------------------
// Prediction evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionMethod {
    /// Extrapolate the last observed velocity.
    ConstantVelocity,
    /// The interaction-aware model.
    Rnn,
    /// Same model with the environment encoding forced to the empty-set value.
    RnnZeroedEnvironment,
    /// Replays the recorded future; zero error by construction.
    GroundTruth,
}

impl PredictionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PredictionMethod::ConstantVelocity => "cvm",
            PredictionMethod::Rnn => "rnn",
            PredictionMethod::RnnZeroedEnvironment => "rnn_zero_env",
            PredictionMethod::GroundTruth => "ground_truth",
        }
    }
}

/// Mean and standard deviation of the position error at each horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub method: String,
    pub records: usize,
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl PredictionCurve {
    pub fn final_error(&self) -> f64 {
        self.mean_error.last().copied().unwrap_or(0.0)
    }
}

fn ground_truth(r: &DatasetRecord, dt: f64) -> Vec<Vec3> {
    integrate_velocities(&r.history.ego_position, &r.future_velocities, dt)
}

/// Per-step position error of each method over `records`. Learned methods
/// require `weights`.
pub fn eval_prediction(
    records: &[DatasetRecord],
    weights: Option<&ModelWeights>,
    methods: &[PredictionMethod],
    dt: f64,
) -> Result<Vec<PredictionCurve>> {
    let horizon = records.first().map_or(0, |r| r.future_velocities.len());
    if records.iter().any(|r| r.future_velocities.len() != horizon) {
        return Err(Error::ModelContract("records have differing horizons".into()));
    }
    let truths: Vec<Vec<Vec3>> = records.iter().map(|r| ground_truth(r, dt)).collect();
    let mut curves = Vec::with_capacity(methods.len());
    for &m in methods {
        let predictions: Vec<Vec<Vec3>> = match m {
            PredictionMethod::GroundTruth => truths.clone(),
            PredictionMethod::ConstantVelocity => records
                .iter()
                .map(|r| {
                    let v = *r.history.ego_velocities.last().expect("non-empty history");
                    integrate_velocities(&r.history.ego_position, &vec![v; horizon], dt)
                })
                .collect(),
            PredictionMethod::Rnn | PredictionMethod::RnnZeroedEnvironment => {
                let w = weights
                    .ok_or_else(|| Error::ModelContract(format!("method `{}` needs model weights", m.name())))?;
                if w.config.horizon < horizon {
                    return Err(Error::ModelContract(format!(
                        "model horizon {} shorter than records ({horizon})",
                        w.config.horizon
                    )));
                }
                let opts = ForwardOptions { zero_environment: m == PredictionMethod::RnnZeroedEnvironment };
                let mut out = Vec::with_capacity(records.len());
                for chunk in records.chunks(256) {
                    let hs: Vec<&ObservationHistory> = chunk.iter().map(|r| &r.history).collect();
                    for (r, v) in chunk.iter().zip(neural::forward_batch(&hs, w, opts)?) {
                        out.push(integrate_velocities(&r.history.ego_position, &v[..horizon], dt));
                    }
                }
                out
            }
        };
        curves.push(error_curve(m.name(), &predictions, &truths, horizon));
    }
    Ok(curves)
}

fn error_curve(name: &str, predictions: &[Vec<Vec3>], truths: &[Vec<Vec3>], horizon: usize) -> PredictionCurve {
    let n = predictions.len();
    let mut mean_error = vec![0.0; horizon];
    let mut std_error = vec![0.0; horizon];
    if n > 0 {
        for k in 0..horizon {
            let errs: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| (p[k] - t[k]).norm()).collect();
            let s = Stats::of(&errs).expect("non-empty");
            mean_error[k] = s.mean;
            std_error[k] = s.std;
        }
    }
    PredictionCurve { method: name.to_string(), records: n, mean_error, std_error }
}

// ---------------------------------------------------------------------------
// Scenarios

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    SymmetricSwap,
    AsymmetricSwap,
    PairwiseSwap,
    RandomMoving,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::SymmetricSwap,
        ScenarioKind::AsymmetricSwap,
        ScenarioKind::PairwiseSwap,
        ScenarioKind::RandomMoving,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::SymmetricSwap => "symmetric-swap",
            ScenarioKind::AsymmetricSwap => "asymmetric-swap",
            ScenarioKind::PairwiseSwap => "pairwise-swap",
            ScenarioKind::RandomMoving => "random-moving",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n_robots: usize,
    pub n_obstacles: usize,
    pub instance_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    pub robots: Vec<RobotState>,
    pub goals: Vec<Vec3>,
    pub obstacles: Vec<ObstacleState>,
}

/// Radius of the swap polygon, meters.
pub const SWAP_RADIUS: f64 = 2.0;
/// Minimum start-start and goal-goal separation for sampled instances, meters.
const MIN_SEPARATION: f64 = 1.2;
const MARGIN: f64 = 0.5;
const MAX_SAMPLING_ATTEMPTS: usize = 100_000;

fn well_separated(points: &[Vec3], sep: f64) -> bool {
    points.iter().enumerate().all(|(i, p)| points[i + 1..].iter().all(|q| (p - q).norm() >= sep))
}

fn sample_points<R: Rng>(world: &WorldConfig, n: usize, avoid: &[Vec3], rng: &mut R) -> Result<Vec<Vec3>> {
    let mut out: Vec<Vec3> = Vec::with_capacity(n);
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        if out.len() == n {
            return Ok(out);
        }
        let p = sim::sample_in_workspace(world, Vec3::repeat(MARGIN), rng);
        let i = out.len();
        let clear_avoid = avoid.get(i).is_none_or(|a| (a - p).norm() >= 2.0 * MIN_SEPARATION);
        if clear_avoid && out.iter().all(|q| (q - p).norm() >= MIN_SEPARATION) {
            out.push(p);
        }
    }
    if out.len() == n {
        return Ok(out);
    }
    Err(Error::InvalidGeometry("could not place robots in the workspace".into()))
}

impl Scenario {
    pub fn instantiate(&self, world: &WorldConfig, obstacles: &ObstacleSettings) -> Result<ScenarioInstance> {
        let n = self.n_robots;
        if n == 0 {
            return Err(Error::config("n_robots", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.instance_seed);
        rng.set_stream(self.kind as u64 + 1);
        let c = world.center();
        let (starts, goals) = match self.kind {
            ScenarioKind::SymmetricSwap | ScenarioKind::AsymmetricSwap => {
                let z = c.z + rng.random_range(-0.3..0.3);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let step = std::f64::consts::TAU / n as f64;
                let mut vertices = Vec::with_capacity(n);
                for _ in 0..MAX_SAMPLING_ATTEMPTS {
                    vertices = (0..n)
                        .map(|i| {
                            let (mut rad, mut ang) = (SWAP_RADIUS, phase + step * i as f64);
                            if self.kind == ScenarioKind::AsymmetricSwap {
                                rad *= rng.random_range(0.7..1.2);
                                ang += rng.random_range(-0.4..0.4) * step;
                            }
                            Vec3::new(c.x + rad * ang.cos(), c.y + rad * ang.sin(), z)
                        })
                        .collect();
                    if well_separated(&vertices, MIN_SEPARATION) {
                        break;
                    }
                }
                if !well_separated(&vertices, MIN_SEPARATION) {
                    return Err(Error::InvalidGeometry("swap polygon too crowded".into()));
                }
                let goals = match self.kind {
                    ScenarioKind::SymmetricSwap => {
                        vertices.iter().map(|v| Vec3::new(2.0 * c.x - v.x, 2.0 * c.y - v.y, z)).collect()
                    }
                    _ => (0..n).map(|i| vertices[(i + n / 2) % n]).collect(),
                };
                (vertices, goals)
            }
            ScenarioKind::PairwiseSwap => {
                let starts = sample_points(world, n, &[], &mut rng)?;
                let mut goals = starts.clone();
                for k in 0..n / 2 {
                    goals.swap(2 * k, 2 * k + 1);
                }
                if n % 2 == 1 {
                    let extra = loop {
                        let g = sim::sample_in_workspace(world, Vec3::repeat(MARGIN), &mut rng);
                        if goals[..n - 1].iter().all(|q| (q - g).norm() >= MIN_SEPARATION) {
                            break g;
                        }
                    };
                    goals[n - 1] = extra;
                }
                (starts, goals)
            }
            ScenarioKind::RandomMoving => {
                let starts = sample_points(world, n, &[], &mut rng)?;
                let goals = sample_points(world, n, &starts, &mut rng)?;
                (starts, goals)
            }
        };
        let obstacles = (0..self.n_obstacles)
            .map(|_| sim::spawn_obstacle(world, obstacles, &starts, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScenarioInstance { robots: starts.into_iter().map(RobotState::at_rest).collect(), goals, obstacles })
    }
}

// ---------------------------------------------------------------------------
// Closed-loop planning benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub world: WorldConfig,
    pub mpc: MpcConfig,
    pub limits: Limits,
    pub obstacles: ObstacleSettings,
    pub goal_tolerance: f64,
    /// Simulated seconds before an instance is declared timed out.
    pub timeout: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            world: WorldConfig::default(),
            mpc: MpcConfig::default(),
            limits: Limits::default(),
            obstacles: ObstacleSettings::default(),
            goal_tolerance: 0.1,
            timeout: 60.0,
        }
    }
}

/// Everything that happened in one closed-loop instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub scenario: Scenario,
    pub planner: String,
    /// Robot states per tick, starting with the initial state.
    pub trajectory: Vec<Vec<RobotState>>,
    pub obstacles: Vec<Vec<ObstacleState>>,
    pub collided: bool,
    pub collision_ticks: usize,
    pub timed_out: bool,
    /// Per robot: simulated seconds until it entered its goal region for good.
    pub durations: Vec<f64>,
    /// Per robot: executed path length until arrival, meters.
    pub lengths: Vec<f64>,
    pub failed_solves: usize,
    /// Wall-clock seconds of every individual solve, for timing reports only.
    pub solve_seconds: Vec<f64>,
    /// Planner output per tick; `ticks[t]` pairs with `trajectory[t]`.
    pub ticks: Vec<TickLog>,
}

/// What every robot planned and applied at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickLog {
    pub inputs: Vec<ControlInput>,
    /// `None` where the solver failed.
    pub max_slacks: Vec<Option<f64>>,
    /// Planned positions at steps `1..=N`; `None` where the solver failed.
    pub plans: Vec<Option<Vec<Vec3>>>,
}

impl InstanceResult {
    pub fn succeeded(&self) -> bool {
        !self.collided && !self.timed_out
    }
}

/// Run `planner` on one scenario instance until every robot is within the
/// goal tolerance at the same tick, or the timeout elapses. `max_ticks`
/// optionally caps the run below the timeout.
pub fn run_instance(
    cfg: &BenchConfig,
    scenario: &Scenario,
    planner: &PlannerKind,
    max_ticks: Option<usize>,
) -> Result<InstanceResult> {
    let mut world = cfg.world.clone();
    world.n_robots = scenario.n_robots;
    world.n_obstacles = scenario.n_obstacles;
    let metric = world.metric()?;
    let history_len = match planner {
        PlannerKind::Decentralized(crate::predictors::PredictorKind::LearnedRnn(w)) => w.config.history_len,
        _ => 1,
    };
    let problem = sim::build_problem(&world, &cfg.mpc, &cfg.limits)?;
    let mut team = Team::new(problem, scenario.n_robots, history_len);
    let inst = scenario.instantiate(&world, &cfg.obstacles)?;
    let mut robots = inst.robots;
    let goals = inst.goals;
    let mut obstacles = inst.obstacles;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.instance_seed);
    rng.set_stream(100);

    let timeout_ticks = (cfg.timeout / world.dt).round() as usize;
    let limit = max_ticks.map_or(timeout_ticks, |m| m.min(timeout_ticks));
    let mut result = InstanceResult {
        scenario: *scenario,
        planner: planner.name().to_string(),
        trajectory: vec![robots.clone()],
        obstacles: vec![obstacles.clone()],
        collided: false,
        collision_ticks: 0,
        timed_out: false,
        durations: Vec::new(),
        lengths: Vec::new(),
        failed_solves: 0,
        solve_seconds: Vec::new(),
        ticks: Vec::new(),
    };
    let arrived = |rs: &[RobotState]| rs.iter().zip(&goals).all(|(r, g)| (r.position - g).norm() <= cfg.goal_tolerance);
    if sim::collisions(&robots, &obstacles, world.robot_radius, &metric).any() {
        result.collided = true;
        result.collision_ticks += 1;
    }
    let mut done = arrived(&robots);
    let mut ticks = 0;
    while !done && ticks < limit {
        team.observe(&robots);
        let records = team.plan(planner, &robots, &goals, &obstacles)?;
        for r in &records {
            match &r.diagnostics {
                Some(d) => result.solve_seconds.push(d.solve_seconds),
                None => result.failed_solves += 1,
            }
        }
        let inputs: Vec<ControlInput> = records.iter().map(|r| r.input).collect();
        result.ticks.push(TickLog {
            inputs: inputs.clone(),
            max_slacks: records.iter().map(|r| r.diagnostics.map(|d| d.max_slack)).collect(),
            plans: records
                .iter()
                .zip(team.plans())
                .map(|(r, p)| if r.failure.is_none() { p.as_ref().map(|s| s.planned_positions()) } else { None })
                .collect(),
        });
        sim::step_robots(&mut robots, &inputs, world.dt);
        let positions: Vec<Vec3> = robots.iter().map(|r| r.position).collect();
        sim::step_obstacles(&mut obstacles, &world, &cfg.obstacles, &positions, &mut rng)?;
        ticks += 1;
        if sim::collisions(&robots, &obstacles, world.robot_radius, &metric).any() {
            result.collided = true;
            result.collision_ticks += 1;
        }
        result.trajectory.push(robots.clone());
        result.obstacles.push(obstacles.clone());
        done = arrived(&robots);
    }
    result.timed_out = !done && ticks >= timeout_ticks;

    // Arrival tick: first tick from which the robot stays inside its goal region.
    for (i, g) in goals.iter().enumerate() {
        let inside = |t: usize| (result.trajectory[t][i].position - g).norm() <= cfg.goal_tolerance;
        let last = result.trajectory.len() - 1;
        let mut arrival = last;
        while arrival > 0 && inside(arrival - 1) {
            arrival -= 1;
        }
        if !inside(last) {
            arrival = last;
        }
        let length: f64 = (1..=arrival)
            .map(|t| (result.trajectory[t][i].position - result.trajectory[t - 1][i].position).norm())
            .sum();
        result.durations.push(arrival as f64 * world.dt);
        result.lengths.push(length);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl Stats {
    /// Population statistics; `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Stats> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Stats {
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            std: var.sqrt(),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Table-style summary of one planner on one scenario family. Length,
/// duration and speed cover successful (collision-free, not timed out)
/// instances only, pooled over robots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningMetrics {
    pub scenario: String,
    pub planner: String,
    pub instances: usize,
    pub collision_instances: usize,
    pub timeout_instances: usize,
    pub failed_solves: usize,
    pub trajectory_length: Option<Stats>,
    pub trajectory_duration: Option<Stats>,
    pub average_speed: Option<Stats>,
}

pub fn summarize(scenario: ScenarioKind, planner: &str, results: &[InstanceResult]) -> PlanningMetrics {
    let ok: Vec<&InstanceResult> = results.iter().filter(|r| r.succeeded()).collect();
    let lengths: Vec<f64> = ok.iter().flat_map(|r| r.lengths.iter().copied()).collect();
    let durations: Vec<f64> = ok.iter().flat_map(|r| r.durations.iter().copied()).collect();
    let speeds: Vec<f64> = ok
        .iter()
        .flat_map(|r| r.lengths.iter().zip(&r.durations).filter(|(_, d)| **d > 0.0).map(|(l, d)| l / d))
        .collect();
    PlanningMetrics {
        scenario: scenario.name().to_string(),
        planner: planner.to_string(),
        instances: results.len(),
        collision_instances: results.iter().filter(|r| r.collided).count(),
        timeout_instances: results.iter().filter(|r| r.timed_out && !r.collided).count(),
        failed_solves: results.iter().map(|r| r.failed_solves).sum(),
        trajectory_length: Stats::of(&lengths),
        trajectory_duration: Stats::of(&durations),
        average_speed: Stats::of(&speeds),
    }
}

/// Wall-clock solve-time summary; kept apart from [`PlanningMetrics`], which
/// is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub solves: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
}

pub fn timing(results: &[InstanceResult]) -> TimingSummary {
    let all: Vec<f64> = results.iter().flat_map(|r| r.solve_seconds.iter().copied()).collect();
    let s = Stats::of(&all);
    TimingSummary {
        solves: all.len(),
        mean_ms: s.map_or(0.0, |s| 1e3 * s.mean),
        max_ms: s.map_or(0.0, |s| 1e3 * s.max),
    }
}

/// Instance seeds for a benchmark; identical across planners.
pub fn instance_scenarios(
    kind: ScenarioKind,
    n_robots: usize,
    n_obstacles: usize,
    n_instances: usize,
    seed: u64,
) -> Vec<Scenario> {
    (0..n_instances as u64)
        .map(|i| Scenario { kind, n_robots, n_obstacles, instance_seed: seed.wrapping_mul(1_000_003).wrapping_add(i) })
        .collect()
}

pub struct BenchmarkOutcome {
    pub metrics: Vec<PlanningMetrics>,
    pub timing: Vec<TimingSummary>,
    pub results: Vec<Vec<InstanceResult>>,
}

/// Run `planner` on every scenario using up to `jobs` threads. Results are
/// returned in scenario order regardless of scheduling.
pub fn run_instances(
    cfg: &BenchConfig,
    scenarios: &[Scenario],
    planner: &PlannerKind,
    jobs: usize,
) -> Result<Vec<InstanceResult>> {
    let jobs = jobs.clamp(1, scenarios.len().max(1));
    if jobs == 1 {
        return scenarios.iter().map(|s| run_instance(cfg, s, planner, None)).collect();
    }
    let chunk = scenarios.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<InstanceResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .chunks(chunk)
            .map(|part| {
                scope
                    .spawn(move || part.iter().map(|s| run_instance(cfg, s, planner, None)).collect::<Result<Vec<_>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(scenarios.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Run every planner on the same instances of one scenario family.
pub fn run_planning_benchmark(
    cfg: &BenchConfig,
    scenarios: &[Scenario],
    planners: &[PlannerKind],
    jobs: usize,
) -> Result<BenchmarkOutcome> {
    let mut out = BenchmarkOutcome { metrics: Vec::new(), timing: Vec::new(), results: Vec::new() };
    let kind = scenarios.first().map_or(ScenarioKind::SymmetricSwap, |s| s.kind);
    for planner in planners {
        let results = run_instances(cfg, scenarios, planner, jobs)?;
        out.metrics.push(summarize(kind, planner.name(), &results));
        out.timing.push(timing(&results));
        out.results.push(results);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Export

fn fmt_stats(s: &Option<Stats>) -> String {
    match s {
        Some(s) => format!("{:?},{:?},{:?},{:?}", s.min, s.mean, s.std, s.max),
        None => ",,,".to_string(),
    }
}

pub const PLANNING_CSV_HEADER: &str = "scenario,planner,instances,collision_instances,timeout_instances,failed_solves,\
length_min,length_mean,length_std,length_max,duration_min,duration_mean,duration_std,duration_max,\
speed_min,speed_mean,speed_std,speed_max";

pub const PREDICTION_CSV_HEADER: &str = "method,step,mean_error,std_error";

/// Write `planning.csv` and `planning.json` into `dir`.
pub fn export_planning(metrics: &[PlanningMetrics], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from(PLANNING_CSV_HEADER);
    csv.push('\n');
    for m in metrics {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.scenario,
            m.planner,
            m.instances,
            m.collision_instances,
            m.timeout_instances,
            m.failed_solves,
            fmt_stats(&m.trajectory_length),
            fmt_stats(&m.trajectory_duration),
            fmt_stats(&m.average_speed)
        ));
    }
    fs::write(dir.join("planning.csv"), csv)?;
    let mut f = fs::File::create(dir.join("planning.json"))?;
    serde_json::to_writer_pretty(&mut f, metrics)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Write `prediction.csv` (one row per method and step) and `prediction.json`.
pub fn export_prediction(curves: &[PredictionCurve], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from(PREDICTION_CSV_HEADER);
    csv.push('\n');
    for c in curves {
        for (k, (m, s)) in c.mean_error.iter().zip(&c.std_error).enumerate() {
            csv.push_str(&format!("{},{},{:?},{:?}\n", c.method, k + 1, m, s));
        }
    }
    fs::write(dir.join("prediction.csv"), csv)?;
    let mut f = fs::File::create(dir.join("prediction.json"))?;
    serde_json::to_writer_pretty(&mut f, curves)?;
    f.write_all(b"\n")?;
    Ok(())
}
