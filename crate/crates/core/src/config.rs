//! Pipeline configuration file: one TOML document covering the world, the
//! planner, demonstration runs, the model, training and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::SimRunConfig;
use crate::dynamics::Limits;
use crate::error::{Error, Result};
use crate::eval::BenchConfig;
use crate::mpc::MpcConfig;
use crate::neural::{ModelConfig, TrainConfig};
use crate::sim::ObstacleSettings;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_sim_steps: usize,
    pub goal_tolerance: f64,
    pub goal_margin: f64,
    pub max_attempts: usize,
    /// Independent demonstration runs, seeded `seed, seed + 1, ...`.
    pub runs: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimRunConfig::default();
        SimSection {
            n_sim_steps: d.n_sim_steps,
            goal_tolerance: d.goal_tolerance,
            goal_margin: d.goal_margin,
            max_attempts: d.max_attempts,
            runs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub goal_tolerance: f64,
    pub timeout: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = BenchConfig::default();
        EvalSection { goal_tolerance: d.goal_tolerance, timeout: d.timeout }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; required so every artifact is reproducible.
    pub seed: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub obstacles: ObstacleSettings,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            seed,
            world: WorldConfig::default(),
            mpc: MpcConfig::default(),
            limits: Limits::default(),
            obstacles: ObstacleSettings::default(),
            sim: SimSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.mpc.validate()?;
        self.limits.validate()?;
        self.obstacles.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if (self.mpc.dt - self.world.dt).abs() > 1e-12 {
            return Err(Error::config("mpc.dt", "must equal world.dt"));
        }
        if self.model.horizon < self.mpc.horizon_steps {
            return Err(Error::config("model.horizon", "must be at least mpc.horizon_steps"));
        }
        if self.sim.runs == 0 {
            return Err(Error::config("sim.runs", "must be at least 1"));
        }
        if !(self.eval.goal_tolerance > 0.0) {
            return Err(Error::config("eval.goal_tolerance", "must be positive"));
        }
        if !(self.eval.timeout > 0.0) {
            return Err(Error::config("eval.timeout", "must be positive"));
        }
        Ok(())
    }

    /// Demonstration settings for run `run` (seeded `seed + run`).
    pub fn sim_run(&self, run: usize) -> SimRunConfig {
        SimRunConfig {
            world: WorldConfig { rng_seed: self.seed, ..self.world.clone() },
            mpc: self.mpc.clone(),
            limits: self.limits,
            obstacles: self.obstacles,
            n_sim_steps: self.sim.n_sim_steps,
            goal_tolerance: self.sim.goal_tolerance,
            goal_margin: self.sim.goal_margin,
            max_attempts: self.sim.max_attempts,
            rng_seed: self.seed.wrapping_add(run as u64),
        }
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            world: self.world.clone(),
            mpc: self.mpc.clone(),
            limits: self.limits,
            obstacles: self.obstacles,
            goal_tolerance: self.eval.goal_tolerance,
            timeout: self.eval.timeout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { rng_seed: self.seed, ..self.train.clone() }
    }
}
