//! Receding-horizon trajectory optimization for a single robot.
//!
//! The problem over `N` steps is
//!
//! ```text
//! min   sum_k  w_u |u_k|^2 + w_l s_k + w_q s_k^2   +   w_g |p_N - g|^2 + w_v |v_N|^2
//! s.t.  x_{k+1} = f(x_k, u_k),   x_0 = initial
//!       |p_k - p_j^k|     >= d_min - s_k      for every neighbor j
//!       |p_k - p_o^k|_Ω   >= 1 - s_k          for every obstacle o
//!       |u_k|_inf <= u_max,  |v_k|_inf <= v_max,  s_k >= 0
//! ```
//!
//! States are eliminated through the exact double-integrator map, leaving
//! inputs and per-step slacks as decision variables. The non-convex clearance
//! constraints are replaced by their tangent half-spaces at the current
//! iterate. Both norms are convex, so each half-space lies inside the true
//! feasible set; a QP step therefore never increases the true penalized
//! objective. A box trust region on planned positions keeps steps local.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step, ControlInput, Limits};
use crate::error::{Error, Result};
use crate::qp::{self, Constraints, QpFactor};
use crate::world::{EllipsoidMetric, RobotState, Vec3};

/// Step size (max input change, m/s^2) below which the SQP loop stops early.
const STEP_TOL: f64 = 1e-4;
/// Slack at or below this counts as constraint satisfaction.
pub const SLACK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon_steps: usize,
    pub dt: f64,
    pub weight_goal: f64,
    /// Penalty on terminal speed, `w_v |v_N|^2`; damps overshoot at the goal.
    pub weight_terminal_velocity: f64,
    pub weight_input: f64,
    pub weight_slack_lin: f64,
    pub weight_slack_quad: f64,
    pub sqp_iterations: usize,
    /// Half-width of the per-iteration position box, meters.
    pub trust_region: f64,
    /// Extra clearance added to both collision constraints when planning, meters.
    pub safety_margin: f64,
    /// Ticks a robot may stand still away from its goal before it takes a
    /// right-hand detour; 0 disables deadlock resolution.
    pub deadlock_ticks: usize,
    /// Length of a detour, ticks.
    pub detour_ticks: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon_steps: 20,
            dt: 0.05,
            weight_goal: 4.0,
            weight_terminal_velocity: 1.5,
            weight_input: 0.02,
            weight_slack_lin: 1e3,
            weight_slack_quad: 1e2,
            sqp_iterations: 5,
            trust_region: 1.0,
            safety_margin: 0.05,
            deadlock_ticks: 20,
            detour_ticks: 40,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps < 1 {
            return Err(Error::config("horizon_steps", "must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        for (name, w) in [
            ("weight_goal", self.weight_goal),
            ("weight_terminal_velocity", self.weight_terminal_velocity),
            ("weight_input", self.weight_input),
            ("weight_slack_quad", self.weight_slack_quad),
        ] {
            if !(w >= 0.0) {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        if !(self.weight_slack_lin > 0.0) {
            return Err(Error::config("weight_slack_lin", "must be positive"));
        }
        if self.sqp_iterations < 1 {
            return Err(Error::config("sqp_iterations", "must be at least 1"));
        }
        if !(self.trust_region > 0.0) {
            return Err(Error::config("trust_region", "must be positive"));
        }
        if !(self.safety_margin >= 0.0) {
            return Err(Error::config("safety_margin", "must be non-negative"));
        }
        if self.deadlock_ticks > 0 && self.detour_ticks == 0 {
            return Err(Error::config("detour_ticks", "must be positive when deadlock_ticks is"));
        }
        Ok(())
    }
}

/// Predicted positions of the other agents at steps `1..=N`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborPrediction {
    pub robot_trajectories: Vec<Vec<Vec3>>,
    pub obstacle_trajectories: Vec<Vec<Vec3>>,
}

impl NeighborPrediction {
    pub fn empty() -> Self {
        Self::default()
    }

    fn check(&self, n: usize) -> Result<()> {
        let all = self.robot_trajectories.iter().chain(&self.obstacle_trajectories);
        for (i, t) in all.enumerate() {
            if t.len() != n {
                return Err(Error::config(
                    "predictions",
                    format!("trajectory {i} has {} entries, horizon is {n}", t.len()),
                ));
            }
            if !t.iter().all(|p| p.iter().all(|x| x.is_finite())) {
                return Err(Error::config("predictions", format!("trajectory {i} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `x_0..=x_N`; `states[0]` is the initial state.
    pub states: Vec<RobotState>,
    /// `u_0..u_{N-1}`.
    pub inputs: Vec<ControlInput>,
    /// `s_0..=s_N`. The initial state is fixed, so `s_0` is always zero.
    pub slacks: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    /// Penalized objective before the first and after every SQP iteration.
    pub objective_trace: Vec<f64>,
}

impl MpcSolution {
    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().copied().fold(0.0, f64::max)
    }

    pub fn first_input(&self) -> ControlInput {
        self.inputs[0]
    }

    /// Planned positions at steps `1..=N`.
    pub fn planned_positions(&self) -> Vec<Vec3> {
        self.states[1..].iter().map(|s| s.position).collect()
    }
}

/// Per-tick planner record for the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerDiagnostics {
    pub objective: f64,
    pub max_slack: f64,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub converged: bool,
    pub solve_seconds: f64,
}

/// Condensed problem data that depends only on configuration, cached across
/// solves.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    cfg: MpcConfig,
    limits: Limits,
    min_separation: f64,
    planning_metric: EllipsoidMetric,
    factor: QpFactor,
    /// `pos_coef[k * n + j]`: sensitivity of `p_k` to `u_j` (same axis), `k` in `0..=N`.
    pos_coef: Vec<f64>,
}

impl MpcProblem {
    pub fn new(cfg: &MpcConfig, limits: &Limits, robot_radius: f64, metric: &EllipsoidMetric) -> Result<Self> {
        cfg.validate()?;
        limits.validate()?;
        if !(robot_radius > 0.0) {
            return Err(Error::InvalidGeometry(format!("robot radius {robot_radius}")));
        }
        let n = cfg.horizon_steps;
        let dt = cfg.dt;
        let mut pos_coef = vec![0.0; (n + 1) * n];
        for k in 1..=n {
            for j in 0..k {
                pos_coef[k * n + j] = dt * dt * ((k - j) as f64 - 0.5);
            }
        }

        let nv = 4 * n;
        let mut h = DMatrix::zeros(nv, nv);
        for a in 0..3 {
            for j in 0..n {
                for l in 0..n {
                    let mut v = 2.0 * cfg.weight_goal * pos_coef[n * n + j] * pos_coef[n * n + l]
                        + 2.0 * cfg.weight_terminal_velocity * dt * dt;
                    if j == l {
                        v += 2.0 * cfg.weight_input;
                    }
                    h[(3 * j + a, 3 * l + a)] = v;
                }
            }
        }
        for k in 0..n {
            h[(3 * n + k, 3 * n + k)] = 2.0 * cfg.weight_slack_quad;
        }
        let factor = QpFactor::new(&h)?;

        // Inflate the obstacle ellipsoid by the margin along every axis.
        let enlarged_axes = metric.omega_diag().map(|w| 1.0 / w.sqrt());
        let planning_metric = EllipsoidMetric::new(enlarged_axes, cfg.safety_margin)?;

        Ok(MpcProblem {
            cfg: cfg.clone(),
            limits: *limits,
            min_separation: 2.0 * robot_radius + cfg.safety_margin,
            planning_metric,
            factor,
            pos_coef,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon_steps
    }

    /// Solve from `initial` towards `goal`. `warm_start` is the previous
    /// tick's solution; it is shifted by one step internally.
    pub fn solve(
        &self,
        initial: &RobotState,
        goal: &Vec3,
        predictions: &NeighborPrediction,
        warm_start: Option<&MpcSolution>,
    ) -> Result<MpcSolution> {
        let n = self.cfg.horizon_steps;
        predictions.check(n)?;
        if !initial.is_finite() || !goal.iter().all(|g| g.is_finite()) {
            return Err(Error::config("initial", "state and goal must be finite"));
        }

        let mut qp_iterations = 0;
        let mut u = match warm_start {
            Some(prev) if prev.inputs.len() == n => {
                let mut u = vec![0.0; 3 * n];
                for (j, inp) in prev.inputs.iter().skip(1).enumerate() {
                    for a in 0..3 {
                        u[3 * j + a] = inp.acceleration[a];
                    }
                }
                u
            }
            _ => {
                // Straight-line initialization: the bound-constrained plan
                // that ignores every other agent.
                let (cons, _) = self.base_constraints(initial);
                let sol = qp::solve(&self.factor, &self.linear_term(initial, goal), &cons)?;
                qp_iterations += sol.iterations;
                sol.x[..3 * n].to_vec()
            }
        };
        self.project_to_bounds(initial, &mut u);

        let mut merit = self.merit(initial, goal, predictions, &u).0;
        let mut trace = vec![merit];
        let mut converged = false;
        let mut sqp_iterations = 0;
        let linear = self.linear_term(initial, goal);

        for _ in 0..self.cfg.sqp_iterations {
            sqp_iterations += 1;
            let rollout = self.rollout(initial, &u);
            let (mut cons, _) = self.base_constraints(initial);
            self.add_trust_region(&mut cons, initial, &rollout);
            self.add_collision_rows(&mut cons, initial, &rollout, predictions);

            let sol = qp::solve(&self.factor, &linear, &cons).map_err(|e| match e {
                Error::SolverFailure { iterations, detail } => {
                    Error::SolverFailure { iterations, detail: format!("SQP iteration {sqp_iterations}: {detail}") }
                }
                other => other,
            })?;
            qp_iterations += sol.iterations;

            let step_size = sol.x[..3 * n].iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            u.copy_from_slice(&sol.x[..3 * n]);
            merit = self.merit(initial, goal, predictions, &u).0;
            trace.push(merit);
            if step_size <= STEP_TOL {
                converged = true;
                break;
            }
        }

        let (objective, slacks_tail) = self.merit(initial, goal, predictions, &u);
        let inputs: Vec<ControlInput> =
            (0..n).map(|j| ControlInput::new(Vec3::new(u[3 * j], u[3 * j + 1], u[3 * j + 2]))).collect();
        let mut states = Vec::with_capacity(n + 1);
        states.push(*initial);
        for inp in &inputs {
            let next = step(states.last().unwrap(), inp, self.cfg.dt);
            states.push(next);
        }
        let mut slacks = Vec::with_capacity(n + 1);
        slacks.push(0.0);
        slacks.extend(slacks_tail);
        let max_slack = slacks.iter().copied().fold(0.0, f64::max);

        Ok(MpcSolution {
            states,
            inputs,
            slacks,
            objective,
            converged: converged || max_slack <= SLACK_TOL,
            sqp_iterations,
            qp_iterations,
            objective_trace: trace,
        })
    }

    fn linear_term(&self, initial: &RobotState, goal: &Vec3) -> Vec<f64> {
        let n = self.cfg.horizon_steps;
        let coast_end = initial.position + initial.velocity * (n as f64 * self.cfg.dt);
        let mut lin = vec![0.0; 4 * n];
        for j in 0..n {
            for a in 0..3 {
                lin[3 * j + a] = 2.0 * self.cfg.weight_goal * self.pos_coef[n * n + j] * (coast_end[a] - goal[a])
                    + 2.0 * self.cfg.weight_terminal_velocity * self.cfg.dt * initial.velocity[a];
            }
        }
        for k in 0..n {
            lin[3 * n + k] = self.cfg.weight_slack_lin;
        }
        lin
    }

    /// Input box, velocity box and slack non-negativity.
    fn base_constraints(&self, initial: &RobotState) -> (Constraints, usize) {
        let n = self.cfg.horizon_steps;
        let nv = 4 * n;
        let mut cons = Constraints::with_capacity(nv, 6 * n + 6 * n + n + 6 * n + 8 * n);
        let (u_max, v_max, dt) = (self.limits.u_max, self.limits.v_max, self.cfg.dt);
        for i in 0..3 * n {
            cons.push_lower_bound(i, -u_max);
            cons.push_upper_bound(i, u_max);
        }
        for k in 1..=n {
            for a in 0..3 {
                let v0 = initial.velocity[a];
                let row = cons.push_row(-v_max - v0);
                for j in 0..k {
                    row[3 * j + a] = dt;
                }
                let row = cons.push_row(v0 - v_max);
                for j in 0..k {
                    row[3 * j + a] = -dt;
                }
            }
        }
        for k in 0..n {
            cons.push_lower_bound(3 * n + k, 0.0);
        }
        let count = cons.len();
        (cons, count)
    }

    fn add_trust_region(&self, cons: &mut Constraints, initial: &RobotState, rollout: &[Vec3]) {
        let n = self.cfg.horizon_steps;
        let delta = self.cfg.trust_region;
        for k in 1..=n {
            let coast = self.coast(initial, k);
            for a in 0..3 {
                let center = rollout[k][a];
                let row = cons.push_row(center - delta - coast[a]);
                for j in 0..k {
                    row[3 * j + a] = self.pos_coef[k * n + j];
                }
                let row = cons.push_row(coast[a] - center - delta);
                for j in 0..k {
                    row[3 * j + a] = -self.pos_coef[k * n + j];
                }
            }
        }
    }

    fn add_collision_rows(
        &self,
        cons: &mut Constraints,
        initial: &RobotState,
        rollout: &[Vec3],
        predictions: &NeighborPrediction,
    ) {
        let n = self.cfg.horizon_steps;
        // Largest Euclidean move of a planned point inside the trust region.
        let reach = self.cfg.trust_region * 3f64.sqrt();
        for k in 1..=n {
            let p_bar = rollout[k];
            let coast = self.coast(initial, k);
            for traj in &predictions.robot_trajectories {
                let q = traj[k - 1];
                let diff = p_bar - q;
                let dist = diff.norm();
                if dist - reach >= self.min_separation {
                    continue;
                }
                let normal = if dist > 1e-9 { diff / dist } else { fallback_direction(&(initial.position - q)) };
                let rhs = self.min_separation + normal.dot(&q) - normal.dot(&coast);
                self.push_halfspace(cons, k, &normal, rhs);
            }
            for traj in &predictions.obstacle_trajectories {
                let o = traj[k - 1];
                let diff = p_bar - o;
                let gradient = match self.planning_metric.weighted_norm_gradient(&diff) {
                    Some(g) => g,
                    None => {
                        let dir = fallback_direction(&(initial.position - o));
                        let scale = self.planning_metric.weighted_norm(&dir);
                        self.planning_metric.omega_diag().component_mul(&dir) / scale
                    }
                };
                let value = self.planning_metric.weighted_norm(&diff);
                if value - gradient.norm() * reach >= 1.0 {
                    continue;
                }
                let rhs = 1.0 + gradient.dot(&o) - gradient.dot(&coast);
                self.push_halfspace(cons, k, &gradient, rhs);
            }
        }
    }

    /// `normal . p_k + s_k >= rhs`, with `p_k` expressed through the inputs.
    fn push_halfspace(&self, cons: &mut Constraints, k: usize, normal: &Vec3, rhs: f64) {
        let n = self.cfg.horizon_steps;
        let row = cons.push_row(rhs);
        for j in 0..k {
            let c = self.pos_coef[k * n + j];
            for a in 0..3 {
                row[3 * j + a] = c * normal[a];
            }
        }
        row[3 * n + k - 1] = 1.0;
    }

    fn coast(&self, initial: &RobotState, k: usize) -> Vec3 {
        initial.position + initial.velocity * (k as f64 * self.cfg.dt)
    }

    /// Planned positions `p_0..=p_N` for inputs `u`.
    fn rollout(&self, initial: &RobotState, u: &[f64]) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.cfg.horizon_steps + 1);
        let mut s = *initial;
        out.push(s.position);
        for j in 0..self.cfg.horizon_steps {
            s = step(&s, &ControlInput::new(Vec3::new(u[3 * j], u[3 * j + 1], u[3 * j + 2])), self.cfg.dt);
            out.push(s.position);
        }
        out
    }

    /// Clip inputs so the rollout respects the acceleration and velocity boxes.
    fn project_to_bounds(&self, initial: &RobotState, u: &mut [f64]) {
        let (u_max, v_max, dt) = (self.limits.u_max, self.limits.v_max, self.cfg.dt);
        let mut v = initial.velocity;
        for j in 0..self.cfg.horizon_steps {
            for a in 0..3 {
                let lo = ((-v_max - v[a]) / dt).max(-u_max);
                let hi = ((v_max - v[a]) / dt).min(u_max);
                let x = &mut u[3 * j + a];
                *x = if lo <= hi { x.clamp(lo, hi) } else { lo.min(u_max) };
                v[a] += *x * dt;
            }
        }
    }

    /// True penalized objective of inputs `u`, with each slack set to the
    /// smallest value satisfying the nonlinear clearance constraints.
    fn merit(&self, initial: &RobotState, goal: &Vec3, predictions: &NeighborPrediction, u: &[f64]) -> (f64, Vec<f64>) {
        let n = self.cfg.horizon_steps;
        let rollout = self.rollout(initial, u);
        let mut cost = self.cfg.weight_input * u.iter().map(|x| x * x).sum::<f64>();
        cost += self.cfg.weight_goal * (rollout[n] - goal).norm_squared();
        if self.cfg.weight_terminal_velocity > 0.0 {
            let mut v_end = initial.velocity;
            for j in 0..n {
                for ax in 0..3 {
                    v_end[ax] += self.cfg.dt * u[3 * j + ax];
                }
            }
            cost += self.cfg.weight_terminal_velocity * v_end.norm_squared();
        }
        let mut slacks = Vec::with_capacity(n);
        for k in 1..=n {
            let p = rollout[k];
            let mut s: f64 = 0.0;
            for traj in &predictions.robot_trajectories {
                s = s.max(self.min_separation - (p - traj[k - 1]).norm());
            }
            for traj in &predictions.obstacle_trajectories {
                s = s.max(1.0 - self.planning_metric.weighted_norm(&(p - traj[k - 1])));
            }
            cost += self.cfg.weight_slack_lin * s + self.cfg.weight_slack_quad * s * s;
            slacks.push(s);
        }
        (cost, slacks)
    }
}

fn fallback_direction(d: &Vec3) -> Vec3 {
    let n = d.norm();
    if n > 1e-9 {
        d / n
    } else {
        Vec3::x()
    }
}

/// One-shot convenience wrapper around [`MpcProblem`].
#[allow(clippy::too_many_arguments)]
pub fn solve(
    initial: &RobotState,
    goal: &Vec3,
    predictions: &NeighborPrediction,
    cfg: &MpcConfig,
    limits: &Limits,
    robot_radius: f64,
    metric: &EllipsoidMetric,
    warm_start: Option<&MpcSolution>,
) -> Result<MpcSolution> {
    MpcProblem::new(cfg, limits, robot_radius, metric)?.solve(initial, goal, predictions, warm_start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::build_ellipsoid_metric;
    use proptest::prelude::*;

    fn problem() -> MpcProblem {
        let metric = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), 0.4).unwrap();
        MpcProblem::new(&MpcConfig::default(), &Limits::default(), 0.4, &metric).unwrap()
    }

    fn assert_dynamics_exact(sol: &MpcSolution, dt: f64) {
        for k in 1..sol.states.len() {
            let s = step(&sol.states[k - 1], &sol.inputs[k - 1], dt);
            assert!((s.position - sol.states[k].position).amax() <= 1e-9);
            assert!((s.velocity - sol.states[k].velocity).amax() <= 1e-9);
        }
    }

    #[test]
    fn at_goal_and_at_rest_stays_put() {
        let p = problem();
        let start = RobotState::at_rest(Vec3::new(1.0, 2.0, 1.5));
        let sol = p.solve(&start, &start.position, &NeighborPrediction::empty(), None).unwrap();
        assert!(sol.inputs.iter().all(|u| u.acceleration.amax() < 1e-9));
        assert!(sol.objective.abs() < 1e-12);
        assert!(sol.slacks.iter().all(|&s| s == 0.0));
        assert!(sol.converged);
        assert_eq!(sol.states[0], start);
    }

    #[test]
    fn heads_towards_goal_monotonically() {
        let p = problem();
        let start = RobotState::at_rest(Vec3::zeros());
        let goal = Vec3::new(2.0, 0.0, 0.0);
        let sol = p.solve(&start, &goal, &NeighborPrediction::empty(), None).unwrap();
        assert_dynamics_exact(&sol, 0.05);
        let dists: Vec<f64> = sol.states.iter().map(|s| (s.position - goal).norm()).collect();
        assert!(dists[20] < dists[0]);
        for w in dists.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{dists:?}");
        }
        assert!(sol.max_slack() <= 1e-12);
    }

    #[test]
    fn avoids_static_neighbor_on_the_line() {
        let p = problem();
        let start = RobotState::at_rest(Vec3::zeros());
        let goal = Vec3::new(3.0, 0.0, 0.0);
        let neighbor = Vec3::new(1.0, 0.0, 0.0);
        let preds = NeighborPrediction { robot_trajectories: vec![vec![neighbor; 20]], obstacle_trajectories: vec![] };
        let mut warm: Option<MpcSolution> = None;
        let mut state = start;
        // Run a few receding-horizon ticks so the plan actually interacts.
        for _ in 0..30 {
            let sol = p.solve(&state, &goal, &preds, warm.as_ref()).unwrap();
            assert_dynamics_exact(&sol, 0.05);
            for k in 1..=20 {
                let d = (sol.states[k].position - neighbor).norm();
                assert!(d >= 0.8 - sol.slacks[k] - 1e-9);
            }
            if sol.converged {
                assert!(sol.max_slack() <= 1e-3, "slack {}", sol.max_slack());
            }
            state = sol.states[1];
            warm = Some(sol);
        }
        assert!((state.position - neighbor).norm() >= 0.8);
    }

    #[test]
    fn obstacle_constraint_holds_with_slack() {
        let p = problem();
        let metric = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), 0.4).unwrap();
        let start = RobotState::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        let goal = Vec3::new(4.0, 0.0, 0.0);
        let obs = crate::dynamics::predict_obstacle(
            &crate::world::ObstacleState::new(Vec3::new(2.0, 0.0, 0.0), Vec3::new(-0.5, 0.0, 0.0)),
            20,
            0.05,
        );
        let preds = NeighborPrediction { robot_trajectories: vec![], obstacle_trajectories: vec![obs.clone()] };
        let sol = p.solve(&start, &goal, &preds, None).unwrap();
        for k in 1..=20 {
            let d = metric.weighted_norm(&(sol.states[k].position - obs[k - 1]));
            assert!(d >= 1.0 - sol.slacks[k] - 1e-12);
        }
    }

    #[test]
    fn objective_never_increases_across_sqp_iterations() {
        let cfg = MpcConfig { sqp_iterations: 8, ..Default::default() };
        let metric = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), 0.4).unwrap();
        let p = MpcProblem::new(&cfg, &Limits::default(), 0.4, &metric).unwrap();
        let start = RobotState::new(Vec3::zeros(), Vec3::new(1.5, 0.0, 0.0));
        let preds = NeighborPrediction {
            robot_trajectories: vec![
                (1..=20).map(|k| Vec3::new(2.0 - 0.075 * k as f64, 0.05, 0.0)).collect(),
                vec![Vec3::new(1.0, 0.9, 0.0); 20],
            ],
            obstacle_trajectories: vec![],
        };
        let sol = p.solve(&start, &Vec3::new(4.0, 0.0, 0.0), &preds, None).unwrap();
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", sol.objective_trace);
        }
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let p = problem();
        let start = RobotState::new(Vec3::new(0.1, -0.2, 1.0), Vec3::new(0.5, 0.2, 0.0));
        let preds = NeighborPrediction {
            robot_trajectories: vec![vec![Vec3::new(1.0, 0.0, 1.0); 20]],
            obstacle_trajectories: vec![vec![Vec3::new(0.0, 1.5, 1.0); 20]],
        };
        let a = p.solve(&start, &Vec3::new(2.0, 0.0, 1.0), &preds, None).unwrap();
        let b = p.solve(&start, &Vec3::new(2.0, 0.0, 1.0), &preds, Some(&a)).unwrap();
        let c = p.solve(&start, &Vec3::new(2.0, 0.0, 1.0), &preds, Some(&a)).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn mismatched_prediction_length_is_rejected() {
        let p = problem();
        let preds =
            NeighborPrediction { robot_trajectories: vec![vec![Vec3::zeros(); 5]], obstacle_trajectories: vec![] };
        assert!(p.solve(&RobotState::at_rest(Vec3::zeros()), &Vec3::x(), &preds, None).is_err());
    }

    #[test]
    fn singular_cost_is_a_solver_failure() {
        let cfg = MpcConfig { weight_input: 0.0, ..MpcConfig::default() };
        let metric = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), 0.4).unwrap();
        assert!(matches!(MpcProblem::new(&cfg, &Limits::default(), 0.4, &metric), Err(Error::SolverFailure { .. })));
    }

    fn v3(r: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-r..r).prop_map(Vec3::from)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn solutions_are_dynamically_feasible_and_bounded(
            p0 in v3(2.0), v0 in v3(1.9), goal in v3(4.0), q in v3(2.0), qv in v3(1.0),
        ) {
            let p = problem();
            let preds = NeighborPrediction {
                robot_trajectories: vec![(1..=20).map(|k| q + qv * (0.05 * k as f64)).collect()],
                obstacle_trajectories: vec![],
            };
            let start = RobotState::new(p0, v0);
            let sol = p.solve(&start, &goal, &preds, None).unwrap();
            assert_dynamics_exact(&sol, 0.05);
            for (k, s) in sol.states.iter().enumerate().skip(1) {
                prop_assert!(s.velocity.amax() <= 2.0 + 1e-8);
                prop_assert!(sol.slacks[k] >= 0.0);
                let d = (s.position - preds.robot_trajectories[0][k - 1]).norm();
                prop_assert!(d >= 0.85 - sol.slacks[k] - 1e-9);
            }
            for u in &sol.inputs {
                prop_assert!(u.acceleration.amax() <= 4.0 + 1e-8);
            }
        }
    }
}
