//! Planar LIDAR: exact grid traversal, simulated returns, and integration of
//! returns into an estimated map.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{RobotState, SimError};
use crate::exec::Exec;
use crate::grid::{Cell, OccGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    /// Total angular field of view, radians, centered on the heading.
    pub fov: f64,
    pub max_range: f64,
    pub beam_count: usize,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            fov: 1.5 * PI,
            max_range: 20.0,
            beam_count: 1081,
        }
    }
}

impl LidarSpec {
    /// Beam angle relative to the heading; beams evenly cover `[-fov/2, fov/2]`.
    pub fn relative_angle(&self, k: usize) -> f64 {
        debug_assert!(self.beam_count >= 2);
        -self.fov / 2.0 + self.fov * k as f64 / (self.beam_count - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beam {
    /// Distance to the entry point of the first occupied cell.
    Hit { range: f64 },
    /// No return. `clear` is how far the beam verifiably crossed free space
    /// (max range, the map edge, or the first unknown cell).
    NoReturn { clear: f64 },
}

impl Beam {
    pub fn range(&self) -> Option<f64> {
        match *self {
            Beam::Hit { range } => Some(range),
            Beam::NoReturn { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub beams: Vec<Beam>,
}

impl Scan {
    pub fn hits(&self) -> usize {
        self.beams.iter().filter(|b| b.range().is_some()).count()
    }
}

/// Amanatides-Woo traversal of every cell a ray crosses.
///
/// Yields `(i, j, t)` where `t` is the distance in meters from the ray
/// origin to the point where the ray enters cell `(i, j)`; the first cell
/// has `t = 0`. Indices may leave the grid; callers stop on their own.
#[derive(Debug, Clone)]
pub struct CellRay {
    cell: [i64; 2],
    step: [i64; 2],
    t_max: [f64; 2],
    t_delta: [f64; 2],
    t: f64,
    scale: f64,
}

impl CellRay {
    /// Ray from `pose` at absolute angle `angle` through `grid`'s lattice.
    pub fn new(grid: &OccGrid, pose: &RobotState, angle: f64) -> Self {
        let (u, v) = grid.to_cell_coords(pose.position());
        let dir = [angle.cos(), angle.sin()];
        let origin = [u, v];
        let cell = [u.floor() as i64, v.floor() as i64];
        let mut step = [0i64; 2];
        let mut t_max = [f64::INFINITY; 2];
        let mut t_delta = [f64::INFINITY; 2];
        for a in 0..2 {
            if dir[a] > 0.0 {
                step[a] = 1;
                t_delta[a] = 1.0 / dir[a];
                t_max[a] = (cell[a] as f64 + 1.0 - origin[a]) * t_delta[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                t_delta[a] = -1.0 / dir[a];
                t_max[a] = (origin[a] - cell[a] as f64) * t_delta[a];
            }
        }
        Self {
            cell,
            step,
            t_max,
            t_delta,
            t: 0.0,
            scale: grid.resolution(),
        }
    }
}

impl Iterator for CellRay {
    type Item = (i64, i64, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let out = (self.cell[0], self.cell[1], self.t * self.scale);
        let a = if self.t_max[0] < self.t_max[1] { 0 } else { 1 };
        self.t = self.t_max[a];
        self.t_max[a] += self.t_delta[a];
        self.cell[a] += self.step[a];
        Some(out)
    }
}

fn check_pose(map: &OccGrid, pose: &RobotState) -> Result<(), SimError> {
    match map.cell_at(pose.position()) {
        Some(Cell::Occupied) | None => Err(SimError::PoseInvalid {
            x: pose.x,
            y: pose.y,
        }),
        Some(_) => Ok(()),
    }
}

fn cast_beam(map: &OccGrid, pose: &RobotState, angle: f64, max_range: f64) -> Beam {
    for (i, j, t) in CellRay::new(map, pose, angle) {
        if t >= max_range {
            return Beam::NoReturn { clear: max_range };
        }
        match map.get_checked(i, j) {
            None | Some(Cell::Unknown) => return Beam::NoReturn { clear: t },
            Some(Cell::Occupied) => return Beam::Hit { range: t },
            Some(Cell::Free) => {}
        }
    }
    unreachable!("cell rays are unbounded")
}

/// Simulated scan of `map` from `pose`.
pub fn raycast(map: &OccGrid, pose: &RobotState, spec: &LidarSpec) -> Result<Scan, SimError> {
    raycast_with(Exec::default(), map, pose, spec)
}

pub fn raycast_with(
    exec: Exec,
    map: &OccGrid,
    pose: &RobotState,
    spec: &LidarSpec,
) -> Result<Scan, SimError> {
    check_pose(map, pose)?;
    let beams = exec.map(spec.beam_count, |k| {
        cast_beam(
            map,
            pose,
            pose.theta + spec.relative_angle(k),
            spec.max_range,
        )
    });
    Ok(Scan { beams })
}

/// Returns `est` with `scan` fused in; see [`integrate_scan_into`].
pub fn integrate_scan(
    est: &OccGrid,
    pose: &RobotState,
    scan: &Scan,
    spec: &LidarSpec,
) -> Result<OccGrid, SimError> {
    let mut out = est.clone();
    integrate_scan_into(&mut out, pose, scan, spec)?;
    Ok(out)
}

/// Fuses a scan into an estimated map.
///
/// Cells the beam crossed before its return become Free and the hit cell
/// becomes Occupied. Only Unknown cells are ever written.
pub fn integrate_scan_into(
    est: &mut OccGrid,
    pose: &RobotState,
    scan: &Scan,
    spec: &LidarSpec,
) -> Result<(), SimError> {
    if scan.beams.len() != spec.beam_count {
        return Err(SimError::ScanMismatch {
            expected: spec.beam_count,
            actual: scan.beams.len(),
        });
    }
    if est.cell_at(pose.position()).is_none() {
        return Err(SimError::PoseInvalid {
            x: pose.x,
            y: pose.y,
        });
    }
    let width = est.width();
    let updates: Vec<Vec<(usize, Cell)>> = {
        let grid: &OccGrid = est;
        Exec::default().map(scan.beams.len(), |k| {
            let angle = pose.theta + spec.relative_angle(k);
            let mut cells = Vec::new();
            let (stop, hit) = match scan.beams[k] {
                Beam::Hit { range } => (range, true),
                Beam::NoReturn { clear } => (clear, false),
            };
            for (i, j, t) in CellRay::new(grid, pose, angle) {
                let Some(c) = grid.get_checked(i, j) else {
                    break;
                };
                let idx = j as usize * width + i as usize;
                if t < stop {
                    if c == Cell::Unknown {
                        cells.push((idx, Cell::Free));
                    }
                } else {
                    if hit && c == Cell::Unknown {
                        cells.push((idx, Cell::Occupied));
                    }
                    break;
                }
            }
            cells
        })
    };
    let (w, h, res, origin) = (est.width(), est.height(), est.resolution(), est.origin());
    let mut cells = est.cells().to_vec();
    for (idx, c) in updates.into_iter().flatten() {
        if cells[idx] == Cell::Unknown {
            cells[idx] = c;
        }
    }
    *est = OccGrid::from_cells(w, h, res, origin, cells).expect("geometry unchanged");
    Ok(())
}
