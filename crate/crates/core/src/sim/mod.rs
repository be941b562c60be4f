//! Robot simulation: Dubins-car kinematics, planar LIDAR, scan integration
//! and a pure-pursuit waypoint follower.

mod dubins;
mod follow;
mod lidar;

pub use dubins::{dubins_step, wrap_angle, ControlInput, RobotState};
pub use follow::{follow_path, write_trajectory_csv, PursuitParams, TrajectoryStep};
pub use lidar::{
    integrate_scan, integrate_scan_into, raycast, raycast_with, Beam, CellRay, LidarSpec, Scan,
};

use thiserror::Error;

/// Control period of the simulator, seconds (10 Hz).
pub const CONTROL_DT: f64 = 0.1;
/// Forward speed used for all dataset runs, m/s.
pub const FORWARD_SPEED: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("pose ({x:.3}, {y:.3}) is outside the map or inside an obstacle")]
    PoseInvalid { x: f64, y: f64 },
    #[error("scan has {actual} beams, lidar spec expects {expected}")]
    ScanMismatch { expected: usize, actual: usize },
    #[error("estimated and ground-truth grids differ in size, resolution or origin")]
    GridMismatch,
    #[error("no progress along the path for {steps} steps (at step {at})")]
    Stuck { steps: usize, at: usize },
    #[error("waypoint list is empty")]
    NoWaypoints,
}
