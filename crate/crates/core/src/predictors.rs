//! Neighbor trajectory predictors: constant velocity, communicated plans and
//! the learned model.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::dynamics::predict_obstacle;
use crate::error::{Error, Result};
use crate::neural::{self, ModelWeights};
use crate::world::{ObstacleState, RobotState, Vec3};

/// What a robot knows about a query robot and its surroundings, expressed
/// relative to the query robot. Sequences run oldest to newest and all have
/// the same length `T_O + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationHistory {
    pub ego_velocities: Vec<Vec3>,
    pub neighbor_rel_positions: Vec<Vec<Vec3>>,
    pub neighbor_rel_velocities: Vec<Vec<Vec3>>,
    pub obstacle_rel_positions: Vec<Vec3>,
    pub obstacle_rel_velocities: Vec<Vec3>,
    /// Query robot position at the newest step, the integration origin.
    pub ego_position: Vec3,
}

impl ObservationHistory {
    /// Build the history of robot `query` from world snapshots (oldest first).
    /// Every other robot in the snapshot is a neighbor, in index order.
    pub fn from_snapshots(snapshots: &[&[RobotState]], query: usize, obstacles: &[ObstacleState]) -> Self {
        let latest = snapshots.last().expect("at least one snapshot");
        let n = latest.len();
        let others: Vec<usize> = (0..n).filter(|&j| j != query).collect();
        let ego_velocities = snapshots.iter().map(|s| s[query].velocity).collect();
        let neighbor_rel_positions =
            others.iter().map(|&j| snapshots.iter().map(|s| s[j].position - s[query].position).collect()).collect();
        let neighbor_rel_velocities =
            others.iter().map(|&j| snapshots.iter().map(|s| s[j].velocity - s[query].velocity).collect()).collect();
        let me = latest[query];
        ObservationHistory {
            ego_velocities,
            neighbor_rel_positions,
            neighbor_rel_velocities,
            obstacle_rel_positions: obstacles.iter().map(|o| o.position - me.position).collect(),
            obstacle_rel_velocities: obstacles.iter().map(|o| o.velocity - me.velocity).collect(),
            ego_position: me.position,
        }
    }

    pub fn len(&self) -> usize {
        self.ego_velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego_velocities.is_empty()
    }

    pub fn num_neighbors(&self) -> usize {
        self.neighbor_rel_positions.len()
    }

    pub fn num_obstacles(&self) -> usize {
        self.obstacle_rel_positions.len()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let len = self.len();
        if len == 0 {
            return Err("empty history".into());
        }
        if self.neighbor_rel_velocities.len() != self.num_neighbors() {
            return Err("neighbor position/velocity counts differ".into());
        }
        if self.obstacle_rel_velocities.len() != self.num_obstacles() {
            return Err("obstacle position/velocity counts differ".into());
        }
        for (j, (p, v)) in self.neighbor_rel_positions.iter().zip(&self.neighbor_rel_velocities).enumerate() {
            if p.len() != len || v.len() != len {
                return Err(format!("neighbor {j} sequence length differs from {len}"));
            }
        }
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        let all_finite = self.ego_velocities.iter().all(finite)
            && self.neighbor_rel_positions.iter().flatten().all(finite)
            && self.neighbor_rel_velocities.iter().flatten().all(finite)
            && self.obstacle_rel_positions.iter().all(finite)
            && self.obstacle_rel_velocities.iter().all(finite)
            && finite(&self.ego_position);
        if !all_finite {
            return Err("non-finite entry".into());
        }
        Ok(())
    }
}

/// Rolling window of observed robot states, front-padded with the earliest
/// snapshot until it fills.
#[derive(Debug, Clone)]
pub struct ObservationBuffer {
    capacity: usize,
    snapshots: VecDeque<Vec<RobotState>>,
}

impl ObservationBuffer {
    pub fn new(history_len: usize) -> Self {
        assert!(history_len >= 1);
        ObservationBuffer { capacity: history_len, snapshots: VecDeque::with_capacity(history_len) }
    }

    pub fn push(&mut self, robots: &[RobotState]) {
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(robots.to_vec());
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Exactly `history_len` snapshots, oldest first.
    pub fn padded(&self) -> Vec<&[RobotState]> {
        let first = self.snapshots.front().expect("buffer has at least one snapshot");
        let pad = self.capacity - self.snapshots.len();
        std::iter::repeat_n(first.as_slice(), pad).chain(self.snapshots.iter().map(|s| s.as_slice())).collect()
    }

    pub fn history_for(&self, query: usize, obstacles: &[ObstacleState]) -> ObservationHistory {
        ObservationHistory::from_snapshots(&self.padded(), query, obstacles)
    }
}

/// Predicted positions at steps `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    pub positions: Vec<Vec3>,
}

impl PlannedTrajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn predict_cvm(position: &Vec3, velocity: &Vec3, steps: usize, dt: f64) -> PlannedTrajectory {
    PlannedTrajectory { positions: predict_obstacle(&ObstacleState::new(*position, *velocity), steps, dt) }
}

/// A plan published by a robot at some tick: positions at steps `1..=N`
/// relative to that tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedPlan {
    pub tick: u64,
    pub positions: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePrediction {
    pub trajectory: PlannedTrajectory,
    /// No usable plan was available; constant velocity was used instead.
    pub fell_back: bool,
}

/// Use a neighbor's communicated plan. A plan from the previous tick is
/// shifted by one step with its final entry repeated.
pub fn predict_oracle(
    plan: Option<&PublishedPlan>,
    current_tick: u64,
    neighbor: &RobotState,
    steps: usize,
    dt: f64,
) -> OraclePrediction {
    let usable = plan.filter(|p| p.positions.len() >= steps && (p.tick == current_tick || p.tick + 1 == current_tick));
    match usable {
        Some(p) if p.tick == current_tick => OraclePrediction {
            trajectory: PlannedTrajectory { positions: p.positions[..steps].to_vec() },
            fell_back: false,
        },
        Some(p) => {
            let last = *p.positions.last().unwrap();
            let positions = p.positions[1..].iter().copied().chain(std::iter::once(last)).take(steps).collect();
            OraclePrediction { trajectory: PlannedTrajectory { positions }, fell_back: false }
        }
        None => OraclePrediction {
            trajectory: predict_cvm(&neighbor.position, &neighbor.velocity, steps, dt),
            fell_back: true,
        },
    }
}

/// Integrate predicted velocities from the query robot's current position.
pub fn integrate_velocities(origin: &Vec3, velocities: &[Vec3], dt: f64) -> Vec<Vec3> {
    let mut p = *origin;
    velocities
        .iter()
        .map(|v| {
            p += v * dt;
            p
        })
        .collect()
}

pub fn predict_rnn(
    history: &ObservationHistory,
    weights: &ModelWeights,
    steps: usize,
    dt: f64,
) -> Result<PlannedTrajectory> {
    Ok(predict_rnn_batch(&[history], weights, steps, dt, neural::ForwardOptions::default())?.remove(0))
}

/// Batched [`predict_rnn`]; one forward pass for all histories.
pub fn predict_rnn_batch(
    histories: &[&ObservationHistory],
    weights: &ModelWeights,
    steps: usize,
    dt: f64,
    opts: neural::ForwardOptions,
) -> Result<Vec<PlannedTrajectory>> {
    if steps > weights.config.horizon {
        return Err(Error::ModelContract(format!(
            "requested {steps} steps but the model predicts {}",
            weights.config.horizon
        )));
    }
    let velocities = neural::forward_batch(histories, weights, opts)?;
    Ok(histories
        .iter()
        .zip(velocities)
        .map(|(h, v)| PlannedTrajectory { positions: integrate_velocities(&h.ego_position, &v[..steps], dt) })
        .collect())
}

#[derive(Debug, Clone)]
pub enum PredictorKind {
    ConstantVelocity,
    CommunicationOracle,
    LearnedRnn(Arc<ModelWeights>),
}

impl PredictorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::ConstantVelocity => "cvm",
            PredictorKind::CommunicationOracle => "oracle",
            PredictorKind::LearnedRnn(_) => "rnn",
        }
    }
}
