//! Demonstration runs with the centralized sequential planner and extraction
//! of the supervised dataset.
//!
//! Dataset file layout (little-endian):
//!
//! ```text
//! "PMDS" | version u32 | history_len u32 | horizon u32 | dt f64 | record_count u64
//! per record: run u32 | tick u32 | query u32 | n_neighbors u32 | n_obstacles u32
//!             | ego_position 3xf64 | ego_velocities (history_len x 3 f64)
//!             | per neighbor: rel positions (history_len x 3) then rel velocities (history_len x 3)
//!             | obstacle rel positions (n_obstacles x 3) | obstacle rel velocities (n_obstacles x 3)
//!             | future velocities (horizon x 3)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, Limits};
use crate::error::{Error, Result};
use crate::mpc::MpcConfig;
use crate::neural::Example;
use crate::predictors::ObservationHistory;
use crate::sim::{self, ObstacleSettings, PlannerKind, Team};
use crate::world::{CollisionCount, EllipsoidMetric, ObstacleState, RobotState, Vec3, WorldConfig};

/// One training window; see [`Example`].
pub type DatasetRecord = Example;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimRunConfig {
    pub world: WorldConfig,
    pub mpc: MpcConfig,
    pub limits: Limits,
    pub obstacles: ObstacleSettings,
    /// Number of logged ticks `N_sim` (including the initial state).
    pub n_sim_steps: usize,
    /// Distance at which a robot counts as having reached its goal, meters.
    pub goal_tolerance: f64,
    /// New goals keep at least this distance from the workspace boundary, meters.
    pub goal_margin: f64,
    /// Runs with a collision are discarded and retried with a new seed up to
    /// this many attempts in total.
    pub max_attempts: usize,
    pub rng_seed: u64,
}

impl Default for SimRunConfig {
    fn default() -> Self {
        SimRunConfig {
            world: WorldConfig::default(),
            mpc: MpcConfig::default(),
            limits: Limits::default(),
            obstacles: ObstacleSettings::default(),
            n_sim_steps: 20_000,
            goal_tolerance: 0.3,
            goal_margin: 0.5,
            max_attempts: 10,
            rng_seed: 0,
        }
    }
}

impl SimRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.mpc.validate()?;
        self.limits.validate()?;
        self.obstacles.validate()?;
        if !(self.goal_tolerance > 0.0) {
            return Err(Error::config("goal_tolerance", "must be positive"));
        }
        if !(self.goal_margin >= 0.0) {
            return Err(Error::config("goal_margin", "must be non-negative"));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("max_attempts", "must be at least 1"));
        }
        Ok(())
    }
}

/// A discarded attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub attempt: usize,
    pub tick: usize,
    pub collisions: CollisionCount,
}

/// Everything recorded during one accepted demonstration run. Per-tick
/// vectors all have `n_sim_steps` entries; entry `t` is the world before the
/// control computed at tick `t` is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoLog {
    pub dt: f64,
    pub robots: Vec<Vec<RobotState>>,
    pub obstacles: Vec<Vec<ObstacleState>>,
    pub goals: Vec<Vec<Vec3>>,
    /// `(tick, robot)` pairs where the solver failed and zero input was applied.
    pub failed_solves: Vec<(usize, usize)>,
    pub rejections: Vec<Rejection>,
    pub attempt: usize,
    pub goals_reached: usize,
    pub obstacle_respawns: usize,
    /// Collisions in the returned log; zero unless every attempt collided.
    pub collisions: CollisionCount,
    /// Ticks whose snapshot contains a collision.
    pub collision_ticks: usize,
}

impl DemoLog {
    pub fn len(&self) -> usize {
        self.robots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robots.is_empty()
    }
}

const MAX_SAMPLING_ATTEMPTS: usize = 100_000;

fn sample_goal<R: Rng>(
    cfg: &SimRunConfig,
    me: usize,
    robots: &[RobotState],
    goals: &[Vec3],
    obstacles: &[ObstacleState],
    metric: &EllipsoidMetric,
    rng: &mut R,
) -> Result<Vec3> {
    let w = &cfg.world;
    let sep = 2.0 * w.robot_radius;
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let g = sim::sample_in_workspace(w, Vec3::repeat(cfg.goal_margin), rng);
        let clear_robots = robots.iter().all(|r| (r.position - g).norm() >= sep);
        let clear_goals = goals.iter().enumerate().all(|(j, o)| j == me || (o - g).norm() >= sep);
        let clear_obstacles = obstacles.iter().all(|o| metric.weighted_norm(&(g - o.position)) >= 1.0);
        if clear_robots && clear_goals && clear_obstacles {
            return Ok(g);
        }
    }
    Err(Error::InvalidGeometry("no collision-free goal could be sampled".into()))
}

fn initial_robots<R: Rng>(cfg: &SimRunConfig, rng: &mut R) -> Result<Vec<RobotState>> {
    let w = &cfg.world;
    let mut out: Vec<RobotState> = Vec::with_capacity(w.n_robots);
    let sep = 2.0 * w.robot_radius + 0.2;
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        if out.len() == w.n_robots {
            break;
        }
        let p = sim::sample_in_workspace(w, Vec3::repeat(cfg.goal_margin), rng);
        if out.iter().all(|r| (r.position - p).norm() >= sep) {
            out.push(RobotState::at_rest(p));
        }
    }
    if out.len() < w.n_robots {
        return Err(Error::InvalidGeometry("workspace too small for the robot count".into()));
    }
    Ok(out)
}

/// Attempt seeds are spread apart so retries do not overlap other runs.
fn attempt_rng(cfg: &SimRunConfig, attempt: usize) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    rng.set_stream(cfg.world.rng_seed);
    rng
}

fn run_attempt(cfg: &SimRunConfig, attempt: usize, stop_on_collision: bool) -> Result<(DemoLog, Option<Rejection>)> {
    let w = &cfg.world;
    let metric = w.metric()?;
    let problem = sim::build_problem(w, &cfg.mpc, &cfg.limits)?;
    let mut team = Team::new(problem, w.n_robots, 1);
    let mut rng = attempt_rng(cfg, attempt);

    let mut log = DemoLog {
        dt: w.dt,
        robots: Vec::with_capacity(cfg.n_sim_steps),
        obstacles: Vec::with_capacity(cfg.n_sim_steps),
        goals: Vec::with_capacity(cfg.n_sim_steps),
        failed_solves: Vec::new(),
        rejections: Vec::new(),
        attempt,
        goals_reached: 0,
        obstacle_respawns: 0,
        collisions: CollisionCount::default(),
        collision_ticks: 0,
    };
    if cfg.n_sim_steps == 0 {
        return Ok((log, None));
    }

    let mut robots = initial_robots(cfg, &mut rng)?;
    let positions: Vec<Vec3> = robots.iter().map(|r| r.position).collect();
    let mut obstacles = (0..w.n_obstacles)
        .map(|_| sim::spawn_obstacle(w, &cfg.obstacles, &positions, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut goals: Vec<Vec3> = Vec::with_capacity(w.n_robots);
    for i in 0..w.n_robots {
        let g = sample_goal(cfg, i, &robots, &goals, &obstacles, &metric, &mut rng)?;
        goals.push(g);
    }

    for tick in 0..cfg.n_sim_steps {
        let c = sim::collisions(&robots, &obstacles, w.robot_radius, &metric);
        if c.any() {
            log.collisions.robot_robot += c.robot_robot;
            log.collisions.robot_obstacle += c.robot_obstacle;
            log.collision_ticks += 1;
            if stop_on_collision {
                return Ok((log, Some(Rejection { attempt, tick, collisions: c })));
            }
        }
        log.robots.push(robots.clone());
        log.obstacles.push(obstacles.clone());
        log.goals.push(goals.clone());
        if tick + 1 == cfg.n_sim_steps {
            break;
        }

        // Goals are refreshed before planning so the robot heads to the new one.
        for i in 0..w.n_robots {
            if (robots[i].position - goals[i]).norm() <= cfg.goal_tolerance {
                goals[i] = sample_goal(cfg, i, &robots, &goals, &obstacles, &metric, &mut rng)?;
                log.goals_reached += 1;
            }
        }
        team.observe(&robots);
        let records = team.plan(&PlannerKind::Centralized, &robots, &goals, &obstacles)?;
        let inputs: Vec<ControlInput> = records.iter().map(|r| r.input).collect();
        for (i, r) in records.iter().enumerate() {
            if r.failure.is_some() {
                log.failed_solves.push((tick, i));
            }
        }
        sim::step_robots(&mut robots, &inputs, w.dt);
        let positions: Vec<Vec3> = robots.iter().map(|r| r.position).collect();
        log.obstacle_respawns += sim::step_obstacles(&mut obstacles, w, &cfg.obstacles, &positions, &mut rng)?;
    }
    Ok((log, None))
}

/// Run the centralized planner with changing goals and moving obstacles.
/// Attempts that produce a collision are rejected and reseeded; the
/// rejections are recorded in the returned log. If every attempt collides,
/// the final attempt is run to completion and returned with its collisions.
pub fn run_demonstration(cfg: &SimRunConfig) -> Result<DemoLog> {
    cfg.validate()?;
    let mut rejections = Vec::new();
    for attempt in 0..cfg.max_attempts {
        let last = attempt + 1 == cfg.max_attempts;
        let (mut log, rejected) = run_attempt(cfg, attempt, !last)?;
        match rejected {
            Some(r) => rejections.push(r),
            None => {
                log.rejections = rejections;
                return Ok(log);
            }
        }
    }
    unreachable!("the final attempt never stops early")
}

/// One record per robot and tick `t` with `history_len - 1 <= t` and
/// `t + horizon < log.len()`. Future velocities are the mean velocities over
/// each logged interval, so integrating them reproduces logged positions.
pub fn extract_dataset(log: &DemoLog, run: u32, history_len: usize, horizon: usize) -> Vec<DatasetRecord> {
    let len = log.len();
    if history_len == 0 || len < history_len + horizon {
        return Vec::new();
    }
    let n = log.robots[0].len();
    let mut out = Vec::with_capacity((len + 1 - history_len - horizon) * n);
    for t in history_len - 1..len - horizon {
        let snaps: Vec<&[RobotState]> = log.robots[t + 1 - history_len..=t].iter().map(|s| s.as_slice()).collect();
        for q in 0..n {
            let future_velocities = (1..=horizon)
                .map(|k| (log.robots[t + k][q].position - log.robots[t + k - 1][q].position) / log.dt)
                .collect();
            out.push(Example {
                run,
                tick: t as u32,
                query: q as u32,
                history: ObservationHistory::from_snapshots(&snaps, q, &log.obstacles[t]),
                future_velocities,
            });
        }
    }
    out
}

/// Largest deviation between positions integrated from a record's future
/// velocities and the logged positions.
pub fn integration_error(record: &DatasetRecord, log: &DemoLog) -> f64 {
    let (t, q) = (record.tick as usize, record.query as usize);
    let mut p = record.history.ego_position;
    let mut worst: f64 = (p - log.robots[t][q].position).norm();
    for (k, v) in record.future_velocities.iter().enumerate() {
        p += v * log.dt;
        worst = worst.max((p - log.robots[t + k + 1][q].position).norm());
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub history_len: usize,
    pub horizon: usize,
    pub dt: f64,
    pub records: Vec<DatasetRecord>,
}

pub const DATASET_MAGIC: &[u8; 4] = b"PMDS";
pub const DATASET_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_vec(out: &mut Vec<u8>, v: &Vec3) {
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        put_u32(&mut out, DATASET_VERSION as usize);
        put_u32(&mut out, self.history_len);
        put_u32(&mut out, self.horizon);
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            let h = &r.history;
            for v in [r.run as usize, r.tick as usize, r.query as usize, h.num_neighbors(), h.num_obstacles()] {
                put_u32(&mut out, v);
            }
            put_vec(&mut out, &h.ego_position);
            h.ego_velocities.iter().for_each(|v| put_vec(&mut out, v));
            for (p, v) in h.neighbor_rel_positions.iter().zip(&h.neighbor_rel_velocities) {
                p.iter().for_each(|x| put_vec(&mut out, x));
                v.iter().for_each(|x| put_vec(&mut out, x));
            }
            h.obstacle_rel_positions.iter().for_each(|v| put_vec(&mut out, v));
            h.obstacle_rel_velocities.iter().for_each(|v| put_vec(&mut out, v));
            r.future_velocities.iter().for_each(|v| put_vec(&mut out, v));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Dataset> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::format(path, format!("truncated while reading {what}")));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4, "magic")? != DATASET_MAGIC {
            return Err(Error::format(path, "not a dataset file (bad magic)"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
        let version = u32_at(take(4, "version")?);
        if version != DATASET_VERSION as usize {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let history_len = u32_at(take(4, "history_len")?);
        let horizon = u32_at(take(4, "horizon")?);
        let dt = f64::from_le_bytes(take(8, "dt")?.try_into().unwrap());
        let count = u64::from_le_bytes(take(8, "record count")?.try_into().unwrap()) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut hdr = [0usize; 5];
            for h in hdr.iter_mut() {
                *h = u32_at(take(4, "record header")?);
            }
            let mut vec3 = |what: &str| -> Result<Vec3> {
                let s = take(24, what)?;
                Ok(Vec3::from_fn(|a, _| f64::from_le_bytes(s[8 * a..8 * a + 8].try_into().unwrap())))
            };
            let ego_position = vec3("ego position")?;
            let ego_velocities = (0..history_len).map(|_| vec3("ego velocity")).collect::<Result<Vec<_>>>()?;
            let mut neighbor_rel_positions = Vec::with_capacity(hdr[3]);
            let mut neighbor_rel_velocities = Vec::with_capacity(hdr[3]);
            for _ in 0..hdr[3] {
                neighbor_rel_positions
                    .push((0..history_len).map(|_| vec3("neighbor position")).collect::<Result<Vec<_>>>()?);
                neighbor_rel_velocities
                    .push((0..history_len).map(|_| vec3("neighbor velocity")).collect::<Result<Vec<_>>>()?);
            }
            let obstacle_rel_positions = (0..hdr[4]).map(|_| vec3("obstacle position")).collect::<Result<Vec<_>>>()?;
            let obstacle_rel_velocities = (0..hdr[4]).map(|_| vec3("obstacle velocity")).collect::<Result<Vec<_>>>()?;
            let future_velocities = (0..horizon).map(|_| vec3("future velocity")).collect::<Result<Vec<_>>>()?;
            records.push(Example {
                run: hdr[0] as u32,
                tick: hdr[1] as u32,
                query: hdr[2] as u32,
                history: ObservationHistory {
                    ego_velocities,
                    neighbor_rel_positions,
                    neighbor_rel_velocities,
                    obstacle_rel_positions,
                    obstacle_rel_velocities,
                    ego_position,
                },
                future_velocities,
            });
        }
        if pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last record"));
        }
        Ok(Dataset { history_len, horizon, dt, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_bytes(&fs::read(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_robots: usize, n_obstacles: usize, steps: usize) -> SimRunConfig {
        SimRunConfig {
            world: WorldConfig { n_robots, n_obstacles, ..Default::default() },
            n_sim_steps: steps,
            rng_seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_gives_empty_log() {
        let log = run_demonstration(&tiny(2, 1, 0)).unwrap();
        assert!(log.is_empty());
        assert!(extract_dataset(&log, 0, 21, 20).is_empty());
    }

    #[test]
    fn single_robot_flies_goal_to_goal() {
        let log = run_demonstration(&tiny(1, 0, 400)).unwrap();
        assert_eq!(log.len(), 400);
        assert!(log.goals_reached >= 2, "reached {}", log.goals_reached);
        assert_eq!(log.collisions.total(), 0);
        assert!(log.rejections.is_empty());
        assert!(log.failed_solves.is_empty());
    }

    #[test]
    fn window_counts() {
        let log = run_demonstration(&tiny(1, 0, 9)).unwrap();
        assert_eq!(extract_dataset(&log, 0, 5, 4).len(), 1);
        let log = run_demonstration(&tiny(3, 1, 30)).unwrap();
        let recs = extract_dataset(&log, 0, 5, 4);
        assert_eq!(recs.len(), 3 * (30 - 4 - 4));
        assert_eq!(recs[0].tick, 4);
        assert_eq!(recs.last().unwrap().tick, 25);
        for r in &recs {
            assert!(integration_error(r, &log) <= 1e-9);
            assert_eq!(r.history.num_neighbors(), 2);
            assert_eq!(r.history.num_obstacles(), 1);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = run_demonstration(&tiny(2, 1, 60)).unwrap();
        let b = run_demonstration(&tiny(2, 1, 60)).unwrap();
        assert_eq!(a, b);
        let c = run_demonstration(&SimRunConfig { rng_seed: 4, ..tiny(2, 1, 60) }).unwrap();
        assert_ne!(a.robots, c.robots);
    }

    #[test]
    fn dataset_file_round_trip_and_truncation() {
        let log = run_demonstration(&tiny(3, 2, 20)).unwrap();
        let ds = Dataset { history_len: 5, horizon: 4, dt: 0.05, records: extract_dataset(&log, 7, 5, 4) };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        ds.save(&p).unwrap();
        assert_eq!(Dataset::load(&p).unwrap(), ds);
        let bytes = ds.to_bytes();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3], &p).is_err());
        assert!(Dataset::from_bytes(b"XXXX", &p).is_err());
    }
}
