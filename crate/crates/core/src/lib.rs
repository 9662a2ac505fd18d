//! Decentralized multi-robot MPC with learned interaction-aware prediction.
//!
//! Modules, bottom-up: [`world`] geometry and collision predicates,
//! [`dynamics`] the double-integrator model, [`qp`] and [`mpc`] the
//! per-robot trajectory optimizer, [`predictors`] and [`neural`] neighbor
//! prediction, [`sim`] per-tick coordination, [`datagen`] demonstrations,
//! [`eval`] metrics, and [`config`] the pipeline configuration file.

// `!(x > 0.0)` is used on purpose throughout validation so NaN is rejected;
// index loops mirror the math in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod mpc;
pub mod neural;
pub mod predictors;
pub mod qp;
pub mod sim;
pub mod world;

pub use config::PipelineConfig;
pub use datagen::{extract_dataset, run_demonstration, Dataset, DatasetRecord, DemoLog, SimRunConfig};
pub use dynamics::{ControlInput, Limits};
pub use error::{Error, Result};
pub use eval::{PlanningMetrics, PredictionCurve, PredictionMethod, Scenario, ScenarioKind};
pub use mpc::{MpcConfig, MpcProblem, MpcSolution, NeighborPrediction, PlannerDiagnostics};
pub use neural::{ModelConfig, ModelWeights, TrainConfig};
pub use predictors::{ObservationHistory, PlannedTrajectory, PredictorKind};
pub use sim::{PlannerKind, Team};
pub use world::{EllipsoidMetric, ObstacleState, RobotState, Vec3, WorldConfig};
