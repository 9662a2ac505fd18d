//! Multi-robot planning per control tick (decentralized with a predictor, or
//! centralized sequential with communication) and the shared world stepping
//! used by demonstrations, benchmarks and the CLI.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{predict_obstacle, step, ControlInput, Limits};
use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, MpcProblem, MpcSolution, NeighborPrediction, PlannerDiagnostics};
use crate::predictors::{self, ObservationBuffer, ObservationHistory, PredictorKind, PublishedPlan};
use crate::world::{count_collisions, CollisionCount, EllipsoidMetric, ObstacleState, RobotState, Vec3, WorldConfig};

#[derive(Debug, Clone)]
pub enum PlannerKind {
    /// Robots solve in index order, each against the latest plans of all others.
    Centralized,
    /// Every robot solves independently using the given predictor.
    Decentralized(PredictorKind),
}

impl PlannerKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerKind::Centralized => "centralized",
            PlannerKind::Decentralized(p) => p.name(),
        }
    }
}

/// Outcome of one robot's planning at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotTickRecord {
    /// Control applied this tick; zero when the solver failed.
    pub input: ControlInput,
    pub diagnostics: Option<PlannerDiagnostics>,
    pub failure: Option<String>,
    /// Some neighbor prediction fell back to constant velocity because no
    /// communicated plan was available.
    pub oracle_fallback: bool,
}

/// A robot slower than this is standing still, m/s.
pub const DEADLOCK_SPEED: f64 = 0.05;
/// A robot closer than this to its goal is never considered deadlocked, m.
pub const DEADLOCK_MIN_GOAL_DISTANCE: f64 = 0.5;
/// Detour sub-goal: this far from the robot, rotated clockwise (seen from
/// above) from the goal direction by [`DETOUR_ANGLE`].
pub const DETOUR_DISTANCE: f64 = 1.0;
pub const DETOUR_ANGLE: f64 = std::f64::consts::FRAC_PI_3;

/// Planner state carried across ticks: warm starts, the plan blackboard,
/// the observation buffer and deadlock detours.
#[derive(Debug, Clone)]
pub struct Team {
    problem: MpcProblem,
    plans: Vec<Option<MpcSolution>>,
    published: Vec<Option<PublishedPlan>>,
    buffer: ObservationBuffer,
    tick: u64,
    still_ticks: Vec<usize>,
    /// Active detour per robot: sub-goal and remaining ticks.
    detours: Vec<Option<(Vec3, usize)>>,
}

/// Right-hand detour sub-goal, or `None` when the goal is straight above or
/// below.
pub fn detour_goal(position: &Vec3, goal: &Vec3) -> Option<Vec3> {
    let d = goal - position;
    let h = d.x.hypot(d.y);
    if h < 1e-9 {
        return None;
    }
    let (fx, fy) = (d.x / h, d.y / h);
    let (c, s) = (DETOUR_ANGLE.cos(), DETOUR_ANGLE.sin());
    // Clockwise rotation by the detour angle.
    let dir = Vec3::new(c * fx + s * fy, -s * fx + c * fy, 0.0);
    Some(position + DETOUR_DISTANCE * dir)
}

impl Team {
    pub fn new(problem: MpcProblem, n_robots: usize, history_len: usize) -> Self {
        Team {
            problem,
            plans: vec![None; n_robots],
            published: vec![None; n_robots],
            buffer: ObservationBuffer::new(history_len),
            tick: 0,
            still_ticks: vec![0; n_robots],
            detours: vec![None; n_robots],
        }
    }

    pub fn problem(&self) -> &MpcProblem {
        &self.problem
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Latest plan of every robot (positions at steps `1..=N`).
    pub fn plans(&self) -> &[Option<MpcSolution>] {
        &self.plans
    }

    /// Record the current robot states. Call once per tick before planning.
    pub fn observe(&mut self, robots: &[RobotState]) {
        self.buffer.push(robots);
    }

    pub fn history_for(&self, query: usize, obstacles: &[ObstacleState]) -> ObservationHistory {
        self.buffer.history_for(query, obstacles)
    }

    fn obstacle_predictions(&self, obstacles: &[ObstacleState]) -> Vec<Vec<Vec3>> {
        let cfg = self.problem.config();
        obstacles.iter().map(|o| predict_obstacle(o, cfg.horizon_steps, cfg.dt)).collect()
    }

    fn solve_one(
        &mut self,
        i: usize,
        robot: &RobotState,
        goal: &Vec3,
        preds: &NeighborPrediction,
        fallback: bool,
    ) -> RobotTickRecord {
        let start = Instant::now();
        match self.problem.solve(robot, goal, preds, self.plans[i].as_ref()) {
            Ok(sol) => {
                let diagnostics = PlannerDiagnostics {
                    objective: sol.objective,
                    max_slack: sol.max_slack(),
                    sqp_iterations: sol.sqp_iterations,
                    qp_iterations: sol.qp_iterations,
                    converged: sol.converged,
                    solve_seconds: start.elapsed().as_secs_f64(),
                };
                let input = sol.first_input();
                self.published[i] = Some(PublishedPlan { tick: self.tick, positions: sol.planned_positions() });
                self.plans[i] = Some(sol);
                RobotTickRecord { input, diagnostics: Some(diagnostics), failure: None, oracle_fallback: fallback }
            }
            Err(e) => {
                self.published[i] = None;
                self.plans[i] = None;
                RobotTickRecord {
                    input: ControlInput::zero(),
                    diagnostics: None,
                    failure: Some(e.to_string()),
                    oracle_fallback: fallback,
                }
            }
        }
    }

    /// Decentralized planning: each robot predicts its neighbors with
    /// `predictor` from observations only (or, for the oracle, from plans
    /// published last tick) and solves its own problem.
    pub fn plan_step_all(
        &mut self,
        robots: &[RobotState],
        goals: &[Vec3],
        obstacles: &[ObstacleState],
        predictor: &PredictorKind,
    ) -> Result<Vec<RobotTickRecord>> {
        self.check_sizes(robots, goals)?;
        let n = robots.len();
        let (steps, dt) = (self.problem.horizon(), self.problem.config().dt);
        let obstacle_trajectories = self.obstacle_predictions(obstacles);

        // Every robot observes the same world, so a query robot's history (and
        // hence its learned prediction) is identical for every ego; compute
        // each once.
        let mut fell_back = vec![false; n];
        let trajectories: Vec<Vec<Vec3>> = match predictor {
            PredictorKind::ConstantVelocity => {
                robots.iter().map(|r| predictors::predict_cvm(&r.position, &r.velocity, steps, dt).positions).collect()
            }
            PredictorKind::CommunicationOracle => (0..n)
                .map(|j| {
                    let p = predictors::predict_oracle(self.published[j].as_ref(), self.tick, &robots[j], steps, dt);
                    fell_back[j] = p.fell_back;
                    p.trajectory.positions
                })
                .collect(),
            PredictorKind::LearnedRnn(weights) => {
                let histories: Vec<ObservationHistory> = (0..n).map(|j| self.history_for(j, obstacles)).collect();
                let refs: Vec<&ObservationHistory> = histories.iter().collect();
                predictors::predict_rnn_batch(&refs, weights, steps, dt, Default::default())?
                    .into_iter()
                    .map(|t| t.positions)
                    .collect()
            }
        };

        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let preds = NeighborPrediction {
                robot_trajectories: (0..n).filter(|&j| j != i).map(|j| trajectories[j].clone()).collect(),
                obstacle_trajectories: obstacle_trajectories.clone(),
            };
            let fallback = (0..n).any(|j| j != i && fell_back[j]);
            records.push(self.solve_one(i, &robots[i], &goals[i], &preds, fallback));
        }
        self.tick += 1;
        Ok(records)
    }

    /// Centralized sequential planning: robot `i` plans against the plans
    /// robots `j < i` made this tick and the plans robots `j > i` made last
    /// tick (shifted one step).
    pub fn centralized_sequential_step(
        &mut self,
        robots: &[RobotState],
        goals: &[Vec3],
        obstacles: &[ObstacleState],
    ) -> Result<Vec<RobotTickRecord>> {
        self.check_sizes(robots, goals)?;
        let n = robots.len();
        let (steps, dt) = (self.problem.horizon(), self.problem.config().dt);
        let obstacle_trajectories = self.obstacle_predictions(obstacles);
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let mut fallback = false;
            let robot_trajectories = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let p = predictors::predict_oracle(self.published[j].as_ref(), self.tick, &robots[j], steps, dt);
                    fallback |= p.fell_back;
                    p.trajectory.positions
                })
                .collect();
            let preds = NeighborPrediction { robot_trajectories, obstacle_trajectories: obstacle_trajectories.clone() };
            records.push(self.solve_one(i, &robots[i], &goals[i], &preds, fallback));
        }
        self.tick += 1;
        Ok(records)
    }

    /// Plan one tick with deadlock resolution: a robot that has stood still
    /// away from its goal for `deadlock_ticks` steers towards a right-hand
    /// sub-goal for `detour_ticks`. All robots applying the same rule turn a
    /// symmetric standoff into a roundabout.
    pub fn plan(
        &mut self,
        kind: &PlannerKind,
        robots: &[RobotState],
        goals: &[Vec3],
        obstacles: &[ObstacleState],
    ) -> Result<Vec<RobotTickRecord>> {
        self.check_sizes(robots, goals)?;
        let targets = self.effective_goals(robots, goals);
        match kind {
            PlannerKind::Centralized => self.centralized_sequential_step(robots, &targets, obstacles),
            PlannerKind::Decentralized(p) => self.plan_step_all(robots, &targets, obstacles, p),
        }
    }

    /// Goals after applying active detours; updates the deadlock counters.
    pub fn effective_goals(&mut self, robots: &[RobotState], goals: &[Vec3]) -> Vec<Vec3> {
        let cfg = self.problem.config();
        let (trigger, length) = (cfg.deadlock_ticks, cfg.detour_ticks);
        let mut out = goals.to_vec();
        if trigger == 0 {
            return out;
        }
        for (i, (r, g)) in robots.iter().zip(goals).enumerate() {
            if let Some((sub, left)) = self.detours[i] {
                out[i] = sub;
                self.detours[i] = (left > 1).then_some((sub, left - 1));
                continue;
            }
            let stuck = r.velocity.norm() < DEADLOCK_SPEED && (g - r.position).norm() > DEADLOCK_MIN_GOAL_DISTANCE;
            self.still_ticks[i] = if stuck { self.still_ticks[i] + 1 } else { 0 };
            if self.still_ticks[i] >= trigger {
                self.still_ticks[i] = 0;
                if let Some(sub) = detour_goal(&r.position, g) {
                    out[i] = sub;
                    self.detours[i] = (length > 1).then_some((sub, length - 1));
                }
            }
        }
        out
    }

    /// Robots currently on a detour.
    pub fn detouring(&self) -> Vec<bool> {
        self.detours.iter().map(Option::is_some).collect()
    }

    fn check_sizes(&self, robots: &[RobotState], goals: &[Vec3]) -> Result<()> {
        if robots.len() != self.plans.len() || goals.len() != robots.len() {
            return Err(Error::config(
                "robots",
                format!("team has {} robots, got {} states and {} goals", self.plans.len(), robots.len(), goals.len()),
            ));
        }
        if self.buffer.is_empty() {
            return Err(Error::config("observations", "observe() must be called before planning"));
        }
        Ok(())
    }
}

/// Obstacle motion: constant velocity with Gaussian velocity noise, and
/// respawn when leaving the workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleSettings {
    pub speed_min: f64,
    pub speed_max: f64,
    /// Per-axis standard deviation of the velocity noise added each tick, m/s.
    pub noise_std: f64,
    /// Minimum distance from every robot for a (re)spawned obstacle, meters.
    pub spawn_clearance: f64,
}

impl Default for ObstacleSettings {
    fn default() -> Self {
        ObstacleSettings { speed_min: 0.5, speed_max: 1.2, noise_std: 0.02, spawn_clearance: 2.5 }
    }
}

impl ObstacleSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_min >= 0.0 && self.speed_max >= self.speed_min && self.speed_max.is_finite()) {
            return Err(Error::config("speed_min", "need 0 <= speed_min <= speed_max"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be finite and non-negative"));
        }
        if !(self.spawn_clearance >= 0.0) {
            return Err(Error::config("spawn_clearance", "must be non-negative"));
        }
        Ok(())
    }
}

const MAX_SAMPLING_ATTEMPTS: usize = 100_000;

/// Uniform point in the workspace shrunk by `margin` on every side.
pub fn sample_in_workspace<R: Rng>(world: &WorldConfig, margin: Vec3, rng: &mut R) -> Vec3 {
    Vec3::from_fn(|a, _| {
        let (lo, hi) = (world.extent_min[a] + margin[a], world.extent_max[a] - margin[a]);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            0.5 * (lo + hi)
        }
    })
}

/// Spawn an obstacle anywhere in the workspace, at least `spawn_clearance`
/// from every robot, moving horizontally at a uniform random speed.
pub fn spawn_obstacle<R: Rng>(
    world: &WorldConfig,
    settings: &ObstacleSettings,
    robots: &[Vec3],
    rng: &mut R,
) -> Result<ObstacleState> {
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let p = sample_in_workspace(world, Vec3::zeros(), rng);
        if robots.iter().all(|r| (r - p).norm() >= settings.spawn_clearance) {
            let speed = if settings.speed_max > settings.speed_min {
                rng.random_range(settings.speed_min..settings.speed_max)
            } else {
                settings.speed_min
            };
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            return Ok(ObstacleState::new(p, Vec3::new(speed * heading.cos(), speed * heading.sin(), 0.0)));
        }
    }
    Err(Error::InvalidGeometry("no obstacle spawn point satisfies the clearance".into()))
}

/// Advance obstacles one tick: move, perturb velocity, respawn if outside.
/// Returns how many obstacles respawned.
pub fn step_obstacles<R: Rng>(
    obstacles: &mut [ObstacleState],
    world: &WorldConfig,
    settings: &ObstacleSettings,
    robots: &[Vec3],
    rng: &mut R,
) -> Result<usize> {
    let noise = Normal::new(0.0, settings.noise_std).map_err(|e| Error::config("noise_std", e.to_string()))?;
    let mut respawned = 0;
    for o in obstacles.iter_mut() {
        o.position += o.velocity * world.dt;
        if settings.noise_std > 0.0 {
            o.velocity += Vec3::from_fn(|_, _| noise.sample(rng));
        }
        if !world.contains(&o.position) {
            *o = spawn_obstacle(world, settings, robots, rng)?;
            respawned += 1;
        }
    }
    Ok(respawned)
}

/// Apply inputs to all robots for one tick.
pub fn step_robots(robots: &mut [RobotState], inputs: &[ControlInput], dt: f64) {
    for (r, u) in robots.iter_mut().zip(inputs) {
        *r = step(r, u, dt);
    }
}

pub fn collisions(
    robots: &[RobotState],
    obstacles: &[ObstacleState],
    robot_radius: f64,
    metric: &EllipsoidMetric,
) -> CollisionCount {
    let rp: Vec<Vec3> = robots.iter().map(|r| r.position).collect();
    let op: Vec<Vec3> = obstacles.iter().map(|o| o.position).collect();
    count_collisions(&rp, &op, robot_radius, metric)
}

/// Build the per-robot MPC problem for a world.
pub fn build_problem(world: &WorldConfig, mpc: &MpcConfig, limits: &Limits) -> Result<MpcProblem> {
    world.validate()?;
    if (mpc.dt - world.dt).abs() > 1e-12 {
        return Err(Error::config("mpc.dt", format!("must equal world dt {}", world.dt)));
    }
    MpcProblem::new(mpc, limits, world.robot_radius, &world.metric()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn team(n: usize) -> (Team, WorldConfig) {
        let world = WorldConfig { n_robots: n, ..Default::default() };
        let p = build_problem(&world, &MpcConfig::default(), &Limits::default()).unwrap();
        (Team::new(p, n, 21), world)
    }

    fn head_on() -> (Vec<RobotState>, Vec<Vec3>) {
        let a = Vec3::new(-2.0, 0.0, 1.5);
        let b = Vec3::new(2.0, 0.05, 1.5);
        (vec![RobotState::at_rest(a), RobotState::at_rest(b)], vec![b, a])
    }

    #[test]
    fn centralized_uses_fresh_plans_of_earlier_robots() {
        let (mut t, _) = team(2);
        let (robots, goals) = head_on();
        t.observe(&robots);
        let rec = t.centralized_sequential_step(&robots, &goals, &[]).unwrap();
        // Robot 0 has no plan for robot 1 at tick 0; robot 1 sees robot 0's fresh plan.
        assert!(rec[0].oracle_fallback);
        assert!(!rec[1].oracle_fallback);
        assert!(rec.iter().all(|r| r.failure.is_none()));
        t.observe(&robots);
        let rec = t.centralized_sequential_step(&robots, &goals, &[]).unwrap();
        assert!(rec.iter().all(|r| !r.oracle_fallback));
    }

    #[test]
    fn head_on_swap_is_collision_free_for_every_planner() {
        for kind in [
            PlannerKind::Centralized,
            PlannerKind::Decentralized(PredictorKind::ConstantVelocity),
            PlannerKind::Decentralized(PredictorKind::CommunicationOracle),
        ] {
            let (mut t, world) = team(2);
            let metric = world.metric().unwrap();
            let (mut robots, goals) = head_on();
            let mut min_gap = f64::INFINITY;
            for _ in 0..200 {
                t.observe(&robots);
                let rec = t.plan(&kind, &robots, &goals, &[]).unwrap();
                let inputs: Vec<ControlInput> = rec.iter().map(|r| r.input).collect();
                step_robots(&mut robots, &inputs, world.dt);
                assert!(!collisions(&robots, &[], world.robot_radius, &metric).any(), "{}", kind.name());
                min_gap = min_gap.min((robots[0].position - robots[1].position).norm());
            }
            assert!(min_gap >= 0.8, "{} gap {min_gap}", kind.name());
            for (r, g) in robots.iter().zip(&goals) {
                assert!((r.position - g).norm() < 0.1, "{} did not arrive", kind.name());
            }
        }
    }

    #[test]
    fn detour_turns_clockwise_in_the_horizontal_plane() {
        let p = Vec3::new(1.0, 1.0, 1.0);
        let d = detour_goal(&p, &Vec3::new(3.0, 1.0, 2.0)).unwrap() - p;
        assert!((d - Vec3::new(0.5, -(3f64.sqrt()) / 2.0, 0.0)).norm() < 1e-12);
        assert!(detour_goal(&p, &Vec3::new(1.0, 1.0, 2.0)).is_none());
    }

    fn square_swap(mpc: MpcConfig, ticks: usize) -> (Vec<RobotState>, Vec<Vec3>) {
        let world = WorldConfig { n_robots: 4, ..Default::default() };
        let p = build_problem(&world, &mpc, &Limits::default()).unwrap();
        let mut t = Team::new(p, 4, 1);
        let starts =
            [Vec3::new(2.0, 0.0, 1.5), Vec3::new(0.0, 2.0, 1.5), Vec3::new(-2.0, 0.0, 1.5), Vec3::new(0.0, -2.0, 1.5)];
        let goals: Vec<Vec3> = (0..4).map(|i| starts[(i + 2) % 4]).collect();
        let mut robots: Vec<RobotState> = starts.iter().map(|p| RobotState::at_rest(*p)).collect();
        let metric = world.metric().unwrap();
        for _ in 0..ticks {
            t.observe(&robots);
            let rec = t.plan(&PlannerKind::Centralized, &robots, &goals, &[]).unwrap();
            let inputs: Vec<ControlInput> = rec.iter().map(|r| r.input).collect();
            step_robots(&mut robots, &inputs, world.dt);
            assert!(!collisions(&robots, &[], world.robot_radius, &metric).any());
        }
        (robots, goals)
    }

    #[test]
    fn symmetric_square_swap_deadlocks_without_detours_and_resolves_with_them() {
        let off = MpcConfig { deadlock_ticks: 0, ..Default::default() };
        let (robots, goals) = square_swap(off, 400);
        assert!(robots.iter().zip(&goals).all(|(r, g)| (r.position - g).norm() > 1.0));
        let (robots, goals) = square_swap(MpcConfig::default(), 400);
        for (r, g) in robots.iter().zip(&goals) {
            assert!((r.position - g).norm() < 0.1, "{:?} vs {g:?}", r.position);
        }
    }

    #[test]
    fn planning_requires_observation_and_sizes() {
        let (mut t, _) = team(2);
        let (robots, goals) = head_on();
        assert!(t.centralized_sequential_step(&robots, &goals, &[]).is_err());
        t.observe(&robots);
        assert!(t.centralized_sequential_step(&robots[..1], &goals[..1], &[]).is_err());
    }

    #[test]
    fn obstacles_respawn_with_clearance() {
        let world = WorldConfig::default();
        let settings = ObstacleSettings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let robots = [Vec3::new(0.0, 0.0, 1.5)];
        let mut obs = vec![ObstacleState::new(Vec3::new(2.99, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0))];
        let n = step_obstacles(&mut obs, &world, &settings, &robots, &mut rng).unwrap();
        assert_eq!(n, 1);
        assert!(world.contains(&obs[0].position));
        assert!((obs[0].position - robots[0]).norm() >= settings.spawn_clearance);
        let speed = obs[0].velocity.norm();
        assert!((0.5..=1.2).contains(&speed));
        assert_eq!(obs[0].velocity.z, 0.0);
    }
}
