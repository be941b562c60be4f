//! Pure-pursuit waypoint following at a fixed forward speed.

use serde::{Deserialize, Serialize};
use std::io::Write;

use super::{
    dubins_step, raycast, wrap_angle, ControlInput, LidarSpec, RobotState, Scan, SimError,
};
use crate::grid::{OccGrid, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PursuitParams {
    pub speed: f64,
    pub lookahead: f64,
    pub max_turn_rate: f64,
    pub goal_tolerance: f64,
    pub max_steps: usize,
    /// Steps without forward progress along the path before giving up.
    pub stuck_steps: usize,
}

impl Default for PursuitParams {
    fn default() -> Self {
        Self {
            speed: super::FORWARD_SPEED,
            lookahead: 1.0,
            max_turn_rate: 1.0,
            goal_tolerance: 0.25,
            max_steps: 20_000,
            stuck_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub step: usize,
    pub time: f64,
    pub state: RobotState,
    /// Command applied after this observation (zero on the final step).
    pub control: ControlInput,
    pub scan: Scan,
}

/// Arc-length parametrized polyline.
struct Polyline<'a> {
    pts: &'a [Point2],
    cum: Vec<f64>,
}

impl<'a> Polyline<'a> {
    fn new(pts: &'a [Point2]) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + w[0].dist(w[1]));
        }
        Self { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn point_at(&self, s: f64) -> Point2 {
        if self.pts.len() == 1 || s <= 0.0 {
            return self.pts[0];
        }
        if s >= self.length() {
            return *self.pts.last().unwrap();
        }
        let k = self
            .cum
            .partition_point(|&c| c <= s)
            .clamp(1, self.pts.len() - 1)
            - 1;
        let seg = self.cum[k + 1] - self.cum[k];
        let f = if seg > 0.0 {
            (s - self.cum[k]) / seg
        } else {
            0.0
        };
        let (a, b) = (self.pts[k], self.pts[k + 1]);
        Point2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
    }

    /// Arc length of the closest point to `p` among segments at or after
    /// arc length `s_min - 1 m`, so progress never jumps backwards.
    fn project(&self, p: Point2, s_min: f64) -> f64 {
        let mut best = (f64::INFINITY, s_min);
        for k in 0..self.pts.len().saturating_sub(1) {
            if self.cum[k + 1] < s_min - 1.0 {
                continue;
            }
            let (a, b) = (self.pts[k], self.pts[k + 1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let f = if len2 > 0.0 {
                (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = Point2::new(a.x + f * dx, a.y + f * dy);
            let d = q.dist(p);
            if d < best.0 {
                best = (d, self.cum[k] + f * len2.sqrt());
            }
        }
        best.1.max(s_min)
    }
}

/// Drives from the first waypoint along the polyline, scanning `gt` at every
/// control step. The first record is the initial pose; the run ends once the
/// robot is within `goal_tolerance` of the last waypoint or after
/// `max_steps` steps.
pub fn follow_path(
    gt: &OccGrid,
    waypoints: &[Point2],
    spec: &LidarSpec,
    ctrl: &PursuitParams,
    dt: f64,
) -> Result<Vec<TrajectoryStep>, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::NonPositiveDt(dt));
    }
    let start = *waypoints.first().ok_or(SimError::NoWaypoints)?;
    let goal = *waypoints.last().unwrap();
    let path = Polyline::new(waypoints);
    let heading = waypoints
        .iter()
        .find(|p| p.dist(start) > 1e-9)
        .map_or(0.0, |p| (p.y - start.y).atan2(p.x - start.x));

    let mut state = RobotState::new(start.x, start.y, heading);
    let mut progress = 0.0;
    let mut best_progress = 0.0;
    let mut last_improvement = 0;
    let mut out: Vec<TrajectoryStep> = Vec::new();

    for step in 0..=ctrl.max_steps {
        let scan = raycast(gt, &state, spec)?;
        let done = state.position().dist(goal) <= ctrl.goal_tolerance || step == ctrl.max_steps;
        let control = if done {
            ControlInput::default()
        } else {
            progress = path.project(state.position(), progress);
            let target = path.point_at(progress + ctrl.lookahead);
            let (dx, dy) = (target.x - state.x, target.y - state.y);
            let ld = dx.hypot(dy).max(1e-6);
            let alpha = wrap_angle(dy.atan2(dx) - state.theta);
            let curvature = 2.0 * alpha.sin() / ld;
            ControlInput {
                v: ctrl.speed,
                theta_dot: (ctrl.speed * curvature).clamp(-ctrl.max_turn_rate, ctrl.max_turn_rate),
            }
        };
        out.push(TrajectoryStep {
            step,
            time: step as f64 * dt,
            state,
            control,
            scan,
        });
        if done {
            break;
        }
        if progress > best_progress + 1e-3 {
            best_progress = progress;
            last_improvement = step;
        } else if step - last_improvement >= ctrl.stuck_steps {
            return Err(SimError::Stuck {
                steps: ctrl.stuck_steps,
                at: step,
            });
        }
        state = dubins_step(state, control, dt)?;
    }
    Ok(out)
}

/// Trajectory log: `step,x,y,theta,timestamp,v,theta_dot`, one line per step.
pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &[TrajectoryStep]) -> std::io::Result<()> {
    writeln!(w, "step,x,y,theta,timestamp,v,theta_dot")?;
    for t in traj {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            t.step, t.state.x, t.state.y, t.state.theta, t.time, t.control.v, t.control.theta_dot
        )?;
    }
    Ok(())
}
