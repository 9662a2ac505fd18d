//! Columnar text log of a simulated instance.
//!
//! Whitespace-separated numeric columns, one row per agent per tick, with
//! `#` comment lines at the top:
//!
//! ```text
//! tick kind id px py pz vx vy vz ux uy uz slack plan1_x plan1_y plan1_z ... planN_z
//! ```
//!
//! `kind` is 0 for robots and 1 for obstacles. Obstacle rows and failed
//! solves carry `nan` in the input, slack and plan columns. Rows for tick `t`
//! hold the state before the tick's control is applied; after the last
//! planning tick one more tick of states is written with `nan` controls.
//! A run with zero planning ticks writes only the header.

use std::fmt::Write as _;

use predmpc_core::eval::InstanceResult;
use predmpc_core::{ObstacleState, RobotState, Vec3};

pub const LOG_VERSION: u32 = 1;

/// Applied input, max slack and planned positions of one robot at one tick.
type Control<'a> = (&'a Vec3, Option<f64>, Option<&'a Vec<Vec3>>);

fn push_vec(line: &mut String, v: &Vec3) {
    for x in v.iter() {
        let _ = write!(line, " {x:?}");
    }
}

fn push_nans(line: &mut String, n: usize) {
    for _ in 0..n {
        line.push_str(" nan");
    }
}

pub fn render(result: &InstanceResult, horizon: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# predmpc simulate log v{LOG_VERSION}");
    let _ = writeln!(
        out,
        "# scenario={} planner={} robots={} obstacles={} seed={} collided={} timed_out={}",
        result.scenario.kind,
        result.planner,
        result.scenario.n_robots,
        result.scenario.n_obstacles,
        result.scenario.instance_seed,
        result.collided,
        result.timed_out
    );
    let mut header = String::from("# tick kind id px py pz vx vy vz ux uy uz slack");
    for k in 1..=horizon {
        let _ = write!(header, " plan{k}_x plan{k}_y plan{k}_z");
    }
    out.push_str(&header);
    out.push('\n');
    if result.ticks.is_empty() {
        return out;
    }
    let row_robot = |out: &mut String, t: usize, id: usize, r: &RobotState, control: Option<Control>| {
        let mut line = format!("{t} 0 {id}");
        push_vec(&mut line, &r.position);
        push_vec(&mut line, &r.velocity);
        match control {
            Some((u, slack, plan)) => {
                push_vec(&mut line, u);
                match slack {
                    Some(s) => {
                        let _ = write!(line, " {s:?}");
                    }
                    None => line.push_str(" nan"),
                }
                match plan {
                    Some(p) => p.iter().for_each(|v| push_vec(&mut line, v)),
                    None => push_nans(&mut line, 3 * horizon),
                }
            }
            None => push_nans(&mut line, 4 + 3 * horizon),
        }
        out.push_str(&line);
        out.push('\n');
    };
    let row_obstacle = |out: &mut String, t: usize, id: usize, o: &ObstacleState| {
        let mut line = format!("{t} 1 {id}");
        push_vec(&mut line, &o.position);
        push_vec(&mut line, &o.velocity);
        push_nans(&mut line, 4 + 3 * horizon);
        out.push_str(&line);
        out.push('\n');
    };
    for t in 0..result.trajectory.len() {
        let tick = result.ticks.get(t);
        for (i, r) in result.trajectory[t].iter().enumerate() {
            let control = tick.map(|tl| (&tl.inputs[i].acceleration, tl.max_slacks[i], tl.plans[i].as_ref()));
            row_robot(&mut out, t, i, r, control);
        }
        for (o, obs) in result.obstacles[t].iter().enumerate() {
            row_obstacle(&mut out, t, o, obs);
        }
    }
    out
}
