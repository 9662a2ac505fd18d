//! Shared fixtures for the benchmarks.

use predmpc_core::eval::{BenchConfig, ScenarioInstance, ScenarioKind};
use predmpc_core::neural::{ModelConfig, ModelWeights};
use predmpc_core::{sim, ObservationHistory, RobotState, Scenario, Team};

/// A four-robot symmetric swap with a ready planning team.
pub fn swap_fixture(n_robots: usize) -> (Team, ScenarioInstance) {
    let cfg = BenchConfig::default();
    let mut world = cfg.world.clone();
    world.n_robots = n_robots;
    world.n_obstacles = 0;
    let scenario = Scenario { kind: ScenarioKind::SymmetricSwap, n_robots, n_obstacles: 0, instance_seed: 1 };
    let inst = scenario.instantiate(&world, &cfg.obstacles).expect("scenario instantiates");
    let problem = sim::build_problem(&world, &cfg.mpc, &cfg.limits).expect("problem builds");
    let mut team = Team::new(problem, n_robots, 1);
    team.observe(&inst.robots);
    (team, inst)
}

/// Random weights of the default model and a history with the given
/// neighbor and obstacle counts.
pub fn model_fixture(
    n_neighbors: usize,
    n_obstacles: usize,
) -> (ModelWeights, ObservationHistory, Vec<predmpc_core::Vec3>) {
    let config = ModelConfig::default();
    let w = ModelWeights::init(config, 3);
    let snap: Vec<RobotState> = (0..=n_neighbors)
        .map(|i| RobotState {
            position: predmpc_core::Vec3::new(i as f64, 0.5 * i as f64, 1.0),
            velocity: predmpc_core::Vec3::new(0.1, -0.2 * i as f64, 0.0),
        })
        .collect();
    let obstacles: Vec<predmpc_core::ObstacleState> = (0..n_obstacles)
        .map(|i| predmpc_core::ObstacleState {
            position: predmpc_core::Vec3::new(-(i as f64), 1.0, 1.0),
            velocity: predmpc_core::Vec3::new(0.8, 0.0, 0.0),
        })
        .collect();
    let snaps: Vec<&[RobotState]> = (0..config.history_len).map(|_| snap.as_slice()).collect();
    let history = ObservationHistory::from_snapshots(&snaps, 0, &obstacles);
    let truth = vec![predmpc_core::Vec3::new(0.1, 0.0, 0.0); config.horizon];
    (w, history, truth)
}
