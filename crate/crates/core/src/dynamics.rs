//! Double-integrator robot model and constant-velocity obstacle propagation.
//!
//! State is (position, velocity), input is acceleration held constant over
//! one sampling interval, so the discretization is exact:
//!
//! ```text
//! p' = p + v dt + 0.5 a dt^2
//! v' = v + a dt
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{ObstacleState, RobotState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub acceleration: Vec3,
}

impl ControlInput {
    pub fn new(acceleration: Vec3) -> Self {
        ControlInput { acceleration }
    }

    pub fn zero() -> Self {
        ControlInput::new(Vec3::zeros())
    }

    pub fn within(&self, limits: &Limits) -> bool {
        self.acceleration.iter().all(|a| a.is_finite() && a.abs() <= limits.u_max)
    }
}

/// Componentwise box bounds on velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub v_max: f64,
    pub u_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { v_max: 2.0, u_max: 4.0 }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0) {
            return Err(Error::config("v_max", "must be positive"));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::config("u_max", "must be positive"));
        }
        Ok(())
    }
}

pub fn step(state: &RobotState, input: &ControlInput, dt: f64) -> RobotState {
    let a = input.acceleration;
    RobotState {
        position: state.position + state.velocity * dt + a * (0.5 * dt * dt),
        velocity: state.velocity + a * dt,
    }
}

/// Positions at steps `1..=horizon_steps` under constant velocity.
pub fn predict_obstacle(obs: &ObstacleState, horizon_steps: usize, dt: f64) -> Vec<Vec3> {
    (1..=horizon_steps).map(|k| obs.position + obs.velocity * (k as f64 * dt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_input_coasts() {
        let s = RobotState::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        let n = step(&s, &ControlInput::zero(), 0.05);
        assert_relative_eq!(n.position, Vec3::new(0.05, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(n.velocity, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn constant_acceleration_from_rest() {
        let s = RobotState::at_rest(Vec3::zeros());
        let n = step(&s, &ControlInput::new(Vec3::new(2.0, 0.0, 0.0)), 0.05);
        assert_relative_eq!(n.position, Vec3::new(0.0025, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(n.velocity, Vec3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let s = RobotState::at_rest(Vec3::new(1.0, 1.0, 1.0));
        for dt in [0.01, 0.05, 1.0] {
            assert_eq!(step(&s, &ControlInput::zero(), dt), s);
        }
    }

    #[test]
    fn obstacle_extrapolation() {
        let o = ObstacleState::new(Vec3::new(1.0, 1.0, 1.0), Vec3::new(0.5, 0.0, 0.0));
        let p = predict_obstacle(&o, 2, 0.05);
        assert_eq!(p.len(), 2);
        assert_relative_eq!(p[0], Vec3::new(1.025, 1.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(p[1], Vec3::new(1.05, 1.0, 1.0), epsilon = 1e-15);

        let still = ObstacleState::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros());
        assert!(predict_obstacle(&still, 5, 0.1).iter().all(|p| *p == still.position));

        let one = predict_obstacle(&o, 1, 0.05);
        assert_eq!(one, vec![o.position + 0.05 * o.velocity]);
    }

    #[test]
    fn limits_check() {
        let l = Limits::default();
        assert!(ControlInput::new(Vec3::new(4.0, -4.0, 0.0)).within(&l));
        assert!(!ControlInput::new(Vec3::new(4.1, 0.0, 0.0)).within(&l));
        assert!(Limits { v_max: 0.0, u_max: 1.0 }.validate().is_err());
    }

    fn v3() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-3.0f64..3.0).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn two_half_steps_match_one_full_step(p in v3(), v in v3(), a in v3(), dt in 0.001f64..0.5) {
            let s = RobotState::new(p, v);
            let u = ControlInput::new(a);
            let full = step(&s, &u, dt);
            let half = step(&step(&s, &u, dt / 2.0), &u, dt / 2.0);
            for k in 0..3 {
                prop_assert!((full.velocity[k] - half.velocity[k]).abs() <= 1e-12);
                // Exact for the double integrator: the half-step composition
                // accumulates the same displacement. The 0.25 a dt^2 cross term
                // appears only if the second half used the initial velocity.
                let naive = half.position[k] - 0.25 * a[k] * dt * dt;
                let from_initial_velocity = p[k] + v[k] * dt + 0.25 * a[k] * dt * dt;
                prop_assert!((naive - from_initial_velocity).abs() <= 1e-12);
                prop_assert!((full.position[k] - half.position[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn obstacle_prediction_prefix(p in v3(), v in v3(), k in 1usize..30, m in 0usize..30) {
            let o = ObstacleState::new(p, v);
            let long = predict_obstacle(&o, k + m, 0.05);
            let short = predict_obstacle(&o, k, 0.05);
            prop_assert_eq!(&long[..k], &short[..]);
        }
    }
}
