//! Workspace geometry, robot/obstacle state types and the collision predicates
//! shared by the planner, the data generator and the evaluation harness.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Serialize a [`Vec3`] as a plain `[x, y, z]` array.
pub mod serde_vec3 {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    #[serde(with = "serde_vec3")]
    pub extent_min: Vec3,
    #[serde(with = "serde_vec3")]
    pub extent_max: Vec3,
    pub robot_radius: f64,
    #[serde(with = "serde_vec3")]
    pub obstacle_semi_axes: Vec3,
    pub n_robots: usize,
    pub n_obstacles: usize,
    pub dt: f64,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    /// Desk-scale world: 6 x 6 x 3 m, four robots, two walking obstacles.
    fn default() -> Self {
        WorldConfig {
            extent_min: Vec3::new(-3.0, -3.0, 0.0),
            extent_max: Vec3::new(3.0, 3.0, 3.0),
            robot_radius: 0.4,
            obstacle_semi_axes: Vec3::new(0.4, 0.4, 0.9),
            n_robots: 4,
            n_obstacles: 2,
            dt: 0.05,
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.extent_min[k] < self.extent_max[k]) {
                return Err(Error::config("extent_min", format!("axis {k}: extent_min must be below extent_max")));
            }
        }
        if !(self.robot_radius > 0.0) {
            return Err(Error::config("robot_radius", "must be positive"));
        }
        if !self.obstacle_semi_axes.iter().all(|&a| a > 0.0) {
            return Err(Error::config("obstacle_semi_axes", "all semi-axes must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        Ok(())
    }

    /// Parse a TOML document holding exactly the `WorldConfig` keys.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: WorldConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn metric(&self) -> Result<EllipsoidMetric> {
        EllipsoidMetric::new(self.obstacle_semi_axes, self.robot_radius)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.extent_min[k] && p[k] <= self.extent_max[k])
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.extent_min + self.extent_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    #[serde(with = "serde_vec3")]
    pub position: Vec3,
    #[serde(with = "serde_vec3")]
    pub velocity: Vec3,
}

impl RobotState {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        RobotState { position, velocity }
    }

    pub fn at_rest(position: Vec3) -> Self {
        RobotState::new(position, Vec3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    #[serde(with = "serde_vec3")]
    pub position: Vec3,
    #[serde(with = "serde_vec3")]
    pub velocity: Vec3,
}

impl ObstacleState {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        ObstacleState { position, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite())
    }
}

/// Diagonal weighting that turns the robot/obstacle clearance test into a
/// unit-ball test: entry k is `1 / (semi_axis_k + robot_radius)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidMetric {
    omega_diag: Vec3,
}

impl EllipsoidMetric {
    pub fn new(semi_axes: Vec3, robot_radius: f64) -> Result<Self> {
        if !semi_axes.iter().all(|&a| a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidGeometry(format!("semi-axes must be positive, got {:?}", semi_axes.as_slice())));
        }
        // A zero radius degenerates to the bare ellipsoid, which is still a valid metric.
        if !(robot_radius >= 0.0 && robot_radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!("robot radius must be non-negative, got {robot_radius}")));
        }
        let omega_diag = semi_axes.map(|a| 1.0 / ((a + robot_radius) * (a + robot_radius)));
        Ok(EllipsoidMetric { omega_diag })
    }

    pub fn omega_diag(&self) -> Vec3 {
        self.omega_diag
    }

    /// `d^T Ω d`.
    pub fn weighted_sq_norm(&self, d: &Vec3) -> f64 {
        self.omega_diag.component_mul(d).dot(d)
    }

    pub fn weighted_norm(&self, d: &Vec3) -> f64 {
        self.weighted_sq_norm(d).sqrt()
    }

    /// Gradient of `‖d‖_Ω` at `d`; `None` at the origin.
    pub fn weighted_norm_gradient(&self, d: &Vec3) -> Option<Vec3> {
        let n = self.weighted_norm(d);
        (n > 0.0).then(|| self.omega_diag.component_mul(d) / n)
    }
}

pub fn build_ellipsoid_metric(semi_axes: Vec3, robot_radius: f64) -> Result<EllipsoidMetric> {
    EllipsoidMetric::new(semi_axes, robot_radius)
}

/// Two robots of radius `r` are collision-free when their centers are at
/// least `2r` apart. Touching counts as free.
pub fn robots_collision_free(p_i: &Vec3, p_j: &Vec3, r: f64) -> bool {
    (p_i - p_j).norm() >= 2.0 * r
}

/// Robot/obstacle clearance against the enlarged ellipsoid; touching counts as free.
pub fn robot_obstacle_collision_free(p_i: &Vec3, p_o: &Vec3, metric: &EllipsoidMetric) -> bool {
    metric.weighted_norm(&(p_i - p_o)) >= 1.0
}

/// Collision tally for one snapshot of the world.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionCount {
    pub robot_robot: usize,
    pub robot_obstacle: usize,
}

impl CollisionCount {
    pub fn total(&self) -> usize {
        self.robot_robot + self.robot_obstacle
    }

    pub fn any(&self) -> bool {
        self.total() > 0
    }
}

pub fn count_collisions(
    robots: &[Vec3],
    obstacles: &[Vec3],
    robot_radius: f64,
    metric: &EllipsoidMetric,
) -> CollisionCount {
    let mut count = CollisionCount::default();
    for (i, p_i) in robots.iter().enumerate() {
        for p_j in &robots[i + 1..] {
            if !robots_collision_free(p_i, p_j, robot_radius) {
                count.robot_robot += 1;
            }
        }
        for p_o in obstacles {
            if !robot_obstacle_collision_free(p_i, p_o, metric) {
                count.robot_obstacle += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn metric_from_default_world_values() {
        let m = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), 0.4).unwrap();
        let w = m.omega_diag();
        assert_relative_eq!(w.x, 1.5625, epsilon = 1e-15);
        assert_relative_eq!(w.y, 1.5625, epsilon = 1e-15);
        assert_relative_eq!(w.z, 1.0 / 1.69, epsilon = 1e-15);
        assert_relative_eq!(w.z, 0.591_715_976_331_360_9, epsilon = 1e-12);
    }

    #[test]
    fn metric_identity_cases() {
        let m = build_ellipsoid_metric(Vec3::new(1.0, 1.0, 1.0), 0.0).unwrap();
        assert_eq!(m.omega_diag(), Vec3::new(1.0, 1.0, 1.0));
        let m = build_ellipsoid_metric(Vec3::new(0.6, 0.6, 0.6), 0.4).unwrap();
        assert_relative_eq!(m.omega_diag(), Vec3::new(1.0, 1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn metric_rejects_non_positive() {
        assert!(matches!(build_ellipsoid_metric(Vec3::new(0.0, 1.0, 1.0), 0.4), Err(Error::InvalidGeometry(_))));
        assert!(matches!(build_ellipsoid_metric(Vec3::new(1.0, 1.0, 1.0), -0.1), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn robot_pairs() {
        let o = Vec3::zeros();
        assert!(robots_collision_free(&o, &Vec3::new(0.8, 0.0, 0.0), 0.4));
        assert!(!robots_collision_free(&o, &Vec3::new(0.79, 0.0, 0.0), 0.4));
        assert!(!robots_collision_free(&o, &o, 0.4));
    }

    #[test]
    fn robot_obstacle() {
        let unit = build_ellipsoid_metric(Vec3::new(1.0, 1.0, 1.0), 0.0).unwrap();
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!(!robot_obstacle_collision_free(&p, &p, &unit));
        assert!(robot_obstacle_collision_free(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), &unit));

        let m = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), 0.4).unwrap();
        let d = Vec3::new(0.8, 0.0, 0.0);
        assert_relative_eq!(m.weighted_norm(&d), 1.0, epsilon = 1e-15);
        assert!(robot_obstacle_collision_free(&d, &Vec3::zeros(), &m));
    }

    #[test]
    fn collision_count_tallies_pairs() {
        let m = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), 0.4).unwrap();
        let robots = [Vec3::zeros(), Vec3::new(0.5, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)];
        let obstacles = [Vec3::new(5.0, 0.5, 0.0)];
        let c = count_collisions(&robots, &obstacles, 0.4, &m);
        assert_eq!(c, CollisionCount { robot_robot: 1, robot_obstacle: 1 });
    }

    #[test]
    fn world_config_toml_roundtrip() {
        let cfg = WorldConfig::default();
        let s = toml::to_string(&cfg).unwrap();
        assert_eq!(WorldConfig::from_toml_str(&s).unwrap(), cfg);
        let bad = s.replace("robot_radius = 0.4", "robot_radius = -1.0");
        assert!(matches!(
            WorldConfig::from_toml_str(&bad),
            Err(Error::InvalidConfig { field, .. }) if field == "robot_radius"
        ));
    }

    fn axis_val() -> impl Strategy<Value = f64> {
        0.05f64..3.0
    }

    proptest! {
        #[test]
        fn surface_point_along_each_axis_is_on_boundary(
            a in axis_val(), b in axis_val(), c in axis_val(), r in 0.0f64..1.0, sign in prop::bool::ANY,
        ) {
            let axes = Vec3::new(a, b, c);
            let m = build_ellipsoid_metric(axes, r).unwrap();
            for k in 0..3 {
                let mut d = Vec3::zeros();
                d[k] = if sign { axes[k] + r } else { -(axes[k] + r) };
                prop_assert!((m.weighted_norm(&d) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn predicates_symmetric(
            x in prop::array::uniform3(-5.0f64..5.0),
            y in prop::array::uniform3(-5.0f64..5.0),
            r in 0.01f64..2.0,
        ) {
            let p = Vec3::from(x);
            let q = Vec3::from(y);
            prop_assert_eq!(robots_collision_free(&p, &q, r), robots_collision_free(&q, &p, r));
            let m = build_ellipsoid_metric(Vec3::new(0.4, 0.4, 0.9), r).unwrap();
            prop_assert_eq!(m.weighted_norm(&(p - q)), m.weighted_norm(&(q - p)));
        }
    }
}
