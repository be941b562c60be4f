//! Procedural corridor maps used as ground truth.
//!
//! A blueprint is a main corridor (a chain of straight segments joined
//! end-to-end, each with its own width) plus dead-end side branches that
//! form T-intersections. Corridor interiors are Free, a band of walls
//! surrounds them, and everything beyond the walls is Unknown.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, OccGrid, Point2, DEFAULT_RESOLUTION};

pub const MIN_WIDTH: f64 = 3.5;
pub const MAX_WIDTH: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum MapGenError {
    #[error("degenerate blueprint: {0}")]
    DegenerateBlueprint(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corridor {
    pub a: Point2,
    pub b: Point2,
    pub width: f64,
}

impl Corridor {
    fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    /// Unit direction and unit normal.
    fn frame(&self) -> ((f64, f64), (f64, f64)) {
        let l = self.length();
        let d = ((self.b.x - self.a.x) / l, (self.b.y - self.a.y) / l);
        (d, (-d.1, d.0))
    }

    /// Inside the rectangle around the segment, extended by `width/2 + pad`
    /// past both ends and `pad` beyond both sides.
    fn contains(&self, p: Point2, pad: f64) -> bool {
        let (d, n) = self.frame();
        let (rx, ry) = (p.x - self.a.x, p.y - self.a.y);
        let along = rx * d.0 + ry * d.1;
        let across = (rx * n.0 + ry * n.1).abs();
        let half = self.width / 2.0 + pad;
        across < half && along > -half && along < self.length() + half
    }

    /// Axis-aligned bounds of the padded rectangle.
    fn bounds(&self, pad: f64) -> (Point2, Point2) {
        let r = self.width / 2.0 + pad;
        (
            Point2::new(self.a.x.min(self.b.x) - r, self.a.y.min(self.b.y) - r),
            Point2::new(self.a.x.max(self.b.x) + r, self.a.y.max(self.b.y) + r),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapBlueprint {
    /// Main corridor; consecutive segments share endpoints.
    pub main: Vec<Corridor>,
    /// Side branches; each starts on the centerline of a main segment.
    pub branches: Vec<Corridor>,
    /// Map extent in meters; the map spans `[0, extent.x] x [0, extent.y]`.
    pub extent: Point2,
    pub resolution: f64,
    pub wall_cells: usize,
    pub seed: u64,
}

impl MapBlueprint {
    /// One straight corridor from `a` to `b`, sized with a 2 m margin.
    pub fn straight(a: Point2, b: Point2, width: f64) -> Self {
        let c = Corridor { a, b, width };
        let (_, hi) = c.bounds(2.0);
        MapBlueprint {
            main: vec![c],
            branches: vec![],
            extent: hi,
            resolution: DEFAULT_RESOLUTION,
            wall_cells: 3,
            seed: 0,
        }
    }

    pub fn waypoints(&self) -> Vec<Point2> {
        let mut w: Vec<Point2> = self.main.iter().map(|c| c.a).collect();
        if let Some(last) = self.main.last() {
            w.push(last.b);
        }
        w
    }

    fn all(&self) -> impl Iterator<Item = &Corridor> {
        self.main.iter().chain(&self.branches)
    }

    pub fn validate(&self) -> Result<(), MapGenError> {
        let bad = |m: String| Err(MapGenError::DegenerateBlueprint(m));
        if self.main.is_empty() {
            return bad("no corridors".into());
        }
        if !(self.resolution > 0.0) {
            return bad(format!("resolution {}", self.resolution));
        }
        if self.wall_cells == 0 {
            return bad("walls must be at least one cell thick".into());
        }
        for (k, c) in self.all().enumerate() {
            if !(c.length() > self.resolution) {
                return bad(format!("corridor {k} has zero length"));
            }
            if !(MIN_WIDTH..=MAX_WIDTH).contains(&c.width) {
                return bad(format!(
                    "corridor {k} width {} outside [{MIN_WIDTH}, {MAX_WIDTH}]",
                    c.width
                ));
            }
            let wall = (self.wall_cells + 1) as f64 * self.resolution;
            let (lo, hi) = c.bounds(wall);
            if lo.x < 0.0 || lo.y < 0.0 || hi.x > self.extent.x || hi.y > self.extent.y {
                return bad(format!(
                    "corridor {k} and its walls do not fit the map extent"
                ));
            }
        }
        for w in self.main.windows(2) {
            if w[0].b.dist(w[1].a) > 1e-9 {
                return bad("main corridor segments are not connected end-to-end".into());
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            let parent = self.main.iter().position(|m| on_segment(m, br.a));
            let Some(p) = parent else {
                return bad(format!("branch {k} does not start on the main corridor"));
            };
            if br.b.dist(self.main[p].a).min(br.b.dist(self.main[p].b)) < 1e-9 {
                return bad(format!("branch {k} ends on the main corridor"));
            }
        }
        // corridors that are not attached must keep a wall between them
        let all: Vec<(usize, &Corridor)> = self.all().enumerate().collect();
        let nm = self.main.len();
        let attached = |i: usize, j: usize| -> bool {
            let (i, j) = (i.min(j), i.max(j));
            if j < nm {
                return j == i + 1;
            }
            i < nm && on_segment(&self.main[i], self.branches[j - nm].a)
        };
        let gap = 2.0 * (self.wall_cells + 1) as f64 * self.resolution;
        for &(i, ci) in &all {
            for &(j, cj) in &all {
                if j <= i || attached(i, j) {
                    continue;
                }
                if !separated(ci, cj, gap) {
                    return bad(format!("corridors {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}

fn on_segment(s: &Corridor, p: Point2) -> bool {
    let l = s.length();
    let d = (s.b.x - s.a.x, s.b.y - s.a.y);
    let along = ((p.x - s.a.x) * d.0 + (p.y - s.a.y) * d.1) / l;
    let across = ((p.x - s.a.x) * d.1 - (p.y - s.a.y) * d.0).abs() / l;
    across < 1e-6 && along > 1e-6 && along < l - 1e-6
}

fn axis_aligned(c: &Corridor) -> bool {
    c.a.x == c.b.x || c.a.y == c.b.y
}

/// Whether the two capped corridor rectangles are at least `gap` apart.
fn separated(s: &Corridor, t: &Corridor, gap: f64) -> bool {
    if axis_aligned(s) && axis_aligned(t) {
        let (sl, sh) = s.bounds(0.0);
        let (tl, th) = t.bounds(0.0);
        return tl.x - sh.x >= gap
            || sl.x - th.x >= gap
            || tl.y - sh.y >= gap
            || sl.y - th.y >= gap;
    }
    // square caps reach width/2 past the ends, i.e. up to width/sqrt(2) off-axis
    segment_distance(s, t) >= (s.width + t.width) / std::f64::consts::SQRT_2 + gap
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l2 = dx * dx + dy * dy;
    let f = if l2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(Point2::new(a.x + f * dx, a.y + f * dy))
}

fn segment_distance(s: &Corridor, t: &Corridor) -> f64 {
    let cross =
        |o: Point2, a: Point2, b: Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let d1 = cross(s.a, s.b, t.a);
    let d2 = cross(s.a, s.b, t.b);
    let d3 = cross(t.a, t.b, s.a);
    let d4 = cross(t.a, t.b, s.b);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    point_segment_distance(s.a, t.a, t.b)
        .min(point_segment_distance(s.b, t.a, t.b))
        .min(point_segment_distance(t.a, s.a, s.b))
        .min(point_segment_distance(t.b, s.a, s.b))
}

/// Rasterizes a blueprint. Returns the ground-truth grid and the main
/// corridor's centerline vertices as waypoints.
pub fn generate_map(bp: &MapBlueprint) -> Result<(OccGrid, Vec<Point2>), MapGenError> {
    bp.validate()?;
    let res = bp.resolution;
    let w = (bp.extent.x / res).ceil() as usize;
    let h = (bp.extent.y / res).ceil() as usize;
    let mut free = vec![false; w * h];
    for c in bp.all() {
        let (lo, hi) = c.bounds(0.0);
        let i0 = ((lo.x / res).floor().max(0.0)) as usize;
        let j0 = ((lo.y / res).floor().max(0.0)) as usize;
        let i1 = ((hi.x / res).ceil() as usize).min(w);
        let j1 = ((hi.y / res).ceil() as usize).min(h);
        for j in j0..j1 {
            for i in i0..i1 {
                let p = Point2::new((i as f64 + 0.5) * res, (j as f64 + 0.5) * res);
                if c.contains(p, 0.0) {
                    free[j * w + i] = true;
                }
            }
        }
    }
    let near = dilate(&free, w, h, bp.wall_cells);
    let cells = free
        .iter()
        .zip(&near)
        .map(|(&f, &n)| match (f, n) {
            (true, _) => Cell::Free,
            (false, true) => Cell::Occupied,
            _ => Cell::Unknown,
        })
        .collect();
    let grid = OccGrid::from_cells(w, h, res, Point2::default(), cells)
        .map_err(|e| MapGenError::DegenerateBlueprint(e.to_string()))?;
    Ok((grid, bp.waypoints()))
}

/// Chebyshev dilation by `r` cells (separable square max-filter).
fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; w * h];
    for j in 0..h {
        for i in 0..w {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(w - 1);
            rows[j * w + i] = mask[j * w + lo..=j * w + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; w * h];
    for j in 0..h {
        let lo = j.saturating_sub(r);
        let hi = (j + r).min(h - 1);
        for i in 0..w {
            out[j * w + i] = (lo..=hi).any(|jj| rows[jj * w + i]);
        }
    }
    out
}

/// Shape of randomly generated corridor networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlueprintConfig {
    pub main_segments: usize,
    pub segment_length: (f64, f64),
    /// Probability that a main segment gets a side branch.
    pub branch_probability: f64,
    pub branch_length: (f64, f64),
    /// Probability of turning at each joint (vs. continuing straight).
    pub turn_probability: f64,
    pub resolution: f64,
    pub wall_cells: usize,
    pub margin: f64,
}

impl Default for BlueprintConfig {
    fn default() -> Self {
        Self {
            main_segments: 3,
            segment_length: (8.0, 16.0),
            branch_probability: 0.6,
            branch_length: (5.0, 10.0),
            turn_probability: 0.7,
            resolution: DEFAULT_RESOLUTION,
            wall_cells: 3,
            margin: 1.0,
        }
    }
}

const DIRS: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];

/// Seeded axis-aligned corridor network with L-turns, straight runs and
/// T-intersections. Draws are retried until the layout validates.
pub fn random_blueprint(seed: u64, cfg: &BlueprintConfig) -> MapBlueprint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snap = |v: f64| (v / cfg.resolution).round() * cfg.resolution;
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    for _attempt in 0..1000 {
        let mut dir = rng.random_range(0..4usize);
        let mut at = Point2::default();
        let mut main = Vec::new();
        let mut branches = Vec::new();
        for k in 0..cfg.main_segments.max(1) {
            if k > 0 && rng.random_bool(cfg.turn_probability) {
                dir = if rng.random_bool(0.5) {
                    (dir + 1) % 4
                } else {
                    (dir + 3) % 4
                };
            }
            let width = rng.random_range(MIN_WIDTH..=MAX_WIDTH);
            let prev_half = main.last().map_or(0.0, |c: &Corridor| c.width / 2.0);
            // long enough to clear the previous corridor's cap
            let len =
                snap(uniform(&mut rng, cfg.segment_length).max(prev_half + width / 2.0 + 1.0));
            let (dx, dy) = DIRS[dir];
            let b = Point2::new(snap(at.x + dx * len), snap(at.y + dy * len));
            let seg = Corridor { a: at, b, width };
            if rng.random_bool(cfg.branch_probability) {
                let f = rng.random_range(0.4..=0.6);
                let start = Point2::new(snap(at.x + dx * len * f), snap(at.y + dy * len * f));
                let side = if rng.random_bool(0.5) { 1 } else { 3 };
                let (bx, by) = DIRS[(dir + side) % 4];
                let bw = rng.random_range(MIN_WIDTH..=MAX_WIDTH);
                let bl =
                    snap(uniform(&mut rng, cfg.branch_length).max(width / 2.0 + bw / 2.0 + 1.0));
                branches.push(Corridor {
                    a: start,
                    b: Point2::new(snap(start.x + bx * bl), snap(start.y + by * bl)),
                    width: bw,
                });
            }
            main.push(seg);
            at = b;
        }
        // shift into the positive quadrant with margin for walls
        let pad = cfg.margin + (cfg.wall_cells + 1) as f64 * cfg.resolution;
        let (mut lo, mut hi) = (
            Point2::new(f64::MAX, f64::MAX),
            Point2::new(f64::MIN, f64::MIN),
        );
        for c in main.iter().chain(&branches) {
            let (l, h) = c.bounds(pad);
            lo = Point2::new(lo.x.min(l.x), lo.y.min(l.y));
            hi = Point2::new(hi.x.max(h.x), hi.y.max(h.y));
        }
        let shift = |p: Point2| Point2::new(snap(p.x - lo.x), snap(p.y - lo.y));
        let moved = |c: &Corridor| Corridor {
            a: shift(c.a),
            b: shift(c.b),
            width: c.width,
        };
        let bp = MapBlueprint {
            main: main.iter().map(moved).collect(),
            branches: branches.iter().map(moved).collect(),
            extent: Point2::new(
                snap(hi.x - lo.x) + cfg.resolution,
                snap(hi.y - lo.y) + cfg.resolution,
            ),
            resolution: cfg.resolution,
            wall_cells: cfg.wall_cells,
            seed,
        };
        if bp.validate().is_ok() {
            return bp;
        }
    }
    // fall back to a single straight corridor, always valid
    let mut bp = MapBlueprint::straight(
        Point2::new(7.0, 7.0),
        Point2::new(7.0 + cfg.segment_length.1, 7.0),
        MIN_WIDTH,
    );
    bp.seed = seed;
    bp
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn straight_20m() -> MapBlueprint {
        MapBlueprint::straight(Point2::new(5.0, 5.0), Point2::new(25.0, 5.0), 4.0)
    }

    #[test]
    fn straight_corridor_cross_section() {
        let bp = straight_20m();
        let (g, wps) = generate_map(&bp).unwrap();
        assert_eq!(wps, vec![Point2::new(5.0, 5.0), Point2::new(25.0, 5.0)]);
        // column through the middle of the corridor, x = 15 m
        let i = 300;
        let col: Vec<Cell> = (0..g.height()).map(|j| g.get(i, j)).collect();
        let free: Vec<usize> = (0..col.len()).filter(|&j| col[j] == Cell::Free).collect();
        assert_eq!(free.len(), 80);
        assert_eq!((free[0], free[79]), (60, 139));
        for j in 0..col.len() {
            let y = (j as f64 + 0.5) * 0.05;
            let expect = if (y - 5.0).abs() < 2.0 {
                Cell::Free
            } else if (y - 5.0).abs() < 2.0 + 0.15 {
                Cell::Occupied
            } else {
                Cell::Unknown
            };
            assert_eq!(col[j], expect, "row {j}");
        }
    }

    #[test]
    fn deterministic() {
        let bp = straight_20m();
        assert_eq!(generate_map(&bp).unwrap(), generate_map(&bp).unwrap());
        let cfg = BlueprintConfig::default();
        assert_eq!(random_blueprint(42, &cfg), random_blueprint(42, &cfg));
    }

    #[test]
    fn narrow_corridor_rejected() {
        let bp = MapBlueprint::straight(Point2::new(5.0, 5.0), Point2::new(25.0, 5.0), 2.0);
        assert!(matches!(
            generate_map(&bp),
            Err(MapGenError::DegenerateBlueprint(_))
        ));
        let bp = MapBlueprint::straight(Point2::new(5.0, 5.0), Point2::new(5.0, 5.0), 4.0);
        assert!(generate_map(&bp).is_err());
    }

    #[test]
    fn overlapping_corridors_rejected() {
        let mut bp = straight_20m();
        bp.extent = Point2::new(40.0, 40.0);
        bp.main[0].a = Point2::new(8.0, 8.0);
        bp.main[0].b = Point2::new(30.0, 8.0);
        bp.main.push(Corridor {
            a: Point2::new(30.0, 8.0),
            b: Point2::new(30.0, 15.0),
            width: 4.0,
        });
        bp.main.push(Corridor {
            a: Point2::new(30.0, 15.0),
            b: Point2::new(10.0, 15.0),
            width: 4.0,
        });
        assert!(bp.validate().is_ok());
        bp.main.push(Corridor {
            a: Point2::new(10.0, 15.0),
            b: Point2::new(10.0, 6.0),
            width: 4.0,
        });
        assert!(matches!(
            bp.validate(),
            Err(MapGenError::DegenerateBlueprint(_))
        ));
    }

    #[test]
    fn random_widths_in_range() {
        let cfg = BlueprintConfig::default();
        for seed in 0..100 {
            let bp = random_blueprint(seed, &cfg);
            for c in bp.main.iter().chain(&bp.branches) {
                assert!((MIN_WIDTH..=MAX_WIDTH).contains(&c.width));
            }
        }
    }

    fn check_map_invariants(g: &OccGrid, start: Point2) {
        let (w, h) = (g.width(), g.height());
        // walls separate free from unknown
        for j in 0..h {
            for i in 0..w {
                if g.get(i, j) != Cell::Free {
                    continue;
                }
                for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let n = g.get_checked(i as i64 + di, j as i64 + dj);
                    assert!(
                        matches!(n, Some(Cell::Free) | Some(Cell::Occupied)),
                        "free cell ({i},{j}) touches {n:?}"
                    );
                }
            }
        }
        // flood fill from the start covers every free cell
        let (si, sj) = g.world_to_cell(start).unwrap();
        assert_eq!(g.get(si, sj), Cell::Free);
        let mut seen = vec![false; w * h];
        let mut q = VecDeque::from([(si, sj)]);
        seen[sj * w + si] = true;
        let mut reached = 0;
        while let Some((i, j)) = q.pop_front() {
            reached += 1;
            for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if g.get_checked(ni, nj) == Some(Cell::Free) && !seen[nj as usize * w + ni as usize]
                {
                    seen[nj as usize * w + ni as usize] = true;
                    q.push_back((ni as usize, nj as usize));
                }
            }
        }
        assert_eq!(reached, g.count(Cell::Free));
    }

    #[test]
    fn random_maps_are_valid_and_connected() {
        let cfg = BlueprintConfig::default();
        let mut with_branch = 0;
        for seed in 0..12 {
            let bp = random_blueprint(seed, &cfg);
            with_branch += usize::from(!bp.branches.is_empty());
            let (g, wps) = generate_map(&bp).unwrap();
            check_map_invariants(&g, wps[0]);
            for p in &wps {
                assert_eq!(g.cell_at(*p), Some(Cell::Free));
            }
        }
        assert!(with_branch > 0, "no T-intersections generated");
    }
}
