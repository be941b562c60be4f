//! Ternary occupancy grids, crop windows and the grayscale image codec.
//!
//! Cells are indexed `(i, j)` with `i` along world +x (column) and `j` along
//! world +y (row). Storage is row-major: `cells[j * width + i]`.

mod pgm;

pub use pgm::{read_grid, read_pgm, write_grid, write_pgm, GridMeta};

use std::fmt;

use thiserror::Error;

/// Side of the un-expanded crop window, in meters.
pub const BASE_SIDE_M: f64 = 5.0;
/// Resolution of the simulated maps, in meters per cell.
pub const DEFAULT_RESOLUTION: f64 = 0.05;

pub const FREE_PIXEL: u8 = 255;
pub const UNKNOWN_PIXEL: u8 = 127;
pub const OCCUPIED_PIXEL: u8 = 0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid grid dimensions {width}x{height} at resolution {resolution}")]
    InvalidDimensions {
        width: usize,
        height: usize,
        resolution: f64,
    },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("malformed grid metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    pub fn to_pixel(self) -> u8 {
        match self {
            Cell::Free => FREE_PIXEL,
            Cell::Occupied => OCCUPIED_PIXEL,
            Cell::Unknown => UNKNOWN_PIXEL,
        }
    }

    /// Banded ternarization: `< 64` occupied, `[64, 192)` unknown, `>= 192` free.
    pub fn from_pixel(v: u8) -> Cell {
        match v {
            0..=63 => Cell::Occupied,
            64..=191 => Cell::Unknown,
            _ => Cell::Free,
        }
    }

    pub fn is_known(self) -> bool {
        self != Cell::Unknown
    }
}

/// A point in world coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    cells: Vec<Cell>,
}

impl OccGrid {
    /// A grid with every cell set to `fill`.
    pub fn filled(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        fill: Cell,
    ) -> Result<Self, GridError> {
        Self::from_cells(
            width,
            height,
            resolution,
            origin,
            vec![fill; width * height],
        )
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        cells: Vec<Cell>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 || !(resolution > 0.0) || !resolution.is_finite() {
            return Err(GridError::InvalidDimensions {
                width,
                height,
                resolution,
            });
        }
        if cells.len() != width * height {
            return Err(GridError::LengthMismatch {
                expected: width * height,
                actual: cells.len(),
            });
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            origin: self.origin,
        }
    }

    /// World extent of the grid: the corner opposite `origin`.
    pub fn far_corner(&self) -> Point2 {
        Point2::new(
            self.origin.x + self.width as f64 * self.resolution,
            self.origin.y + self.height as f64 * self.resolution,
        )
    }

    #[inline]
    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[j * self.width + i]
    }

    /// Bounds-checked lookup with signed indices.
    #[inline]
    pub fn get_checked(&self, i: i64, j: i64) -> Option<Cell> {
        if self.in_bounds(i, j) {
            Some(self.cells[j as usize * self.width + i as usize])
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: Cell) {
        self.cells[j * self.width + i] = c;
    }

    /// Continuous cell coordinates of a world point (cell `(i, j)` spans `[i, i+1) x [j, j+1)`).
    #[inline]
    pub fn to_cell_coords(&self, p: Point2) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.resolution,
            (p.y - self.origin.y) / self.resolution,
        )
    }

    pub fn world_to_cell(&self, p: Point2) -> Result<(usize, usize), GridError> {
        let (u, v) = self.to_cell_coords(p);
        let (i, j) = (u.floor(), v.floor());
        if i.is_finite() && j.is_finite() && self.in_bounds(i as i64, j as i64) {
            Ok((i as usize, j as usize))
        } else {
            Err(GridError::OutOfBounds { x: p.x, y: p.y })
        }
    }

    /// Center of cell `(i, j)` in world coordinates.
    pub fn cell_to_world(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.resolution,
            self.origin.y + (j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_at(&self, p: Point2) -> Option<Cell> {
        self.world_to_cell(p).ok().map(|(i, j)| self.get(i, j))
    }

    pub fn count(&self, c: Cell) -> usize {
        self.cells.iter().filter(|&&x| x == c).count()
    }

    /// Number of non-Unknown cells.
    pub fn known_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_known()).count()
    }

    /// Same geometry, every cell set to `fill`.
    pub fn blank_like(&self, fill: Cell) -> OccGrid {
        OccGrid {
            cells: vec![fill; self.cells.len()],
            ..self.clone()
        }
    }

    pub fn same_geometry(&self, other: &OccGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution == other.resolution
            && self.origin == other.origin
    }

    /// Axis-aligned square crop centered on `window.center`.
    ///
    /// Cells outside the source are `Unknown`. Crop cell `k` samples the
    /// source at continuous coordinate `center + (k - n/2 + 0.5)` cells, so
    /// concentric crops of equal parity sample bit-identical positions.
    pub fn crop_centered(&self, window: &CropWindow) -> OccGrid {
        let n = window.cells(self.resolution);
        let (uc, vc) = self.to_cell_coords(window.center);
        let half = n as f64 / 2.0;
        let src_index = |center: f64, k: usize| -> i64 {
            let offset = k as f64 - half + 0.5;
            (center + offset).floor() as i64
        };
        let cols: Vec<i64> = (0..n).map(|k| src_index(uc, k)).collect();
        let mut cells = Vec::with_capacity(n * n);
        for r in 0..n {
            let sj = src_index(vc, r);
            cells.extend(
                cols.iter()
                    .map(|&si| self.get_checked(si, sj).unwrap_or(Cell::Unknown)),
            );
        }
        OccGrid {
            width: n,
            height: n,
            resolution: self.resolution,
            origin: window.origin_for(n, self.resolution),
            cells,
        }
    }

    /// Nearest-neighbor resample to `target x target` cells.
    ///
    /// Output index `t` reads source index `floor((t + 0.5) * n / target)`,
    /// evaluated in integer arithmetic. The resolution is rescaled from the
    /// width axis.
    pub fn resize_nearest(&self, target: usize) -> OccGrid {
        assert!(target >= 1, "resize target must be at least one cell");
        let map = |t: usize, n: usize| ((2 * t + 1) * n) / (2 * target);
        let cols: Vec<usize> = (0..target).map(|t| map(t, self.width)).collect();
        let mut cells = Vec::with_capacity(target * target);
        for r in 0..target {
            let sj = map(r, self.height);
            let row = &self.cells[sj * self.width..(sj + 1) * self.width];
            cells.extend(cols.iter().map(|&si| row[si]));
        }
        OccGrid {
            width: target,
            height: target,
            resolution: self.resolution * self.width as f64 / target as f64,
            origin: self.origin,
            cells,
        }
    }

    pub fn encode_image(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.to_pixel()).collect()
    }

    /// Inverse of [`encode_image`](Self::encode_image) using banded decoding.
    /// Resolution and origin default to 1.0 and (0, 0); see [`decode_image_with`](Self::decode_image_with).
    pub fn decode_image(bytes: &[u8], width: usize, height: usize) -> Result<OccGrid, GridError> {
        Self::decode_image_with(bytes, width, height, 1.0, Point2::default())
    }

    pub fn decode_image_with(
        bytes: &[u8],
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
    ) -> Result<OccGrid, GridError> {
        if bytes.len() != width * height {
            return Err(GridError::LengthMismatch {
                expected: width * height,
                actual: bytes.len(),
            });
        }
        let cells = bytes.iter().map(|&b| Cell::from_pixel(b)).collect();
        OccGrid::from_cells(width, height, resolution, origin, cells)
    }
}

/// Square window centered on a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub center: Point2,
    pub side: f64,
    pub expansion: f64,
}

impl CropWindow {
    /// Window of side `BASE_SIDE_M * expansion`.
    pub fn expanded(center: Point2, expansion: f64) -> Self {
        Self {
            center,
            side: BASE_SIDE_M * expansion,
            expansion,
        }
    }

    pub fn base(center: Point2) -> Self {
        Self::expanded(center, 1.0)
    }

    /// Cells per side at `resolution`; `round` is half away from zero.
    pub fn cells(&self, resolution: f64) -> usize {
        assert!(self.side > 0.0, "crop side must be positive");
        ((self.side / resolution).round() as usize).max(1)
    }

    /// World coordinates of the `(0, 0)` corner of an `n`-cell crop.
    pub fn origin_for(&self, n: usize, resolution: f64) -> Point2 {
        let half = n as f64 * resolution / 2.0;
        Point2::new(self.center.x - half, self.center.y - half)
    }
}

/// Cells per side of the crop at `expansion` on the 0.05 m grid.
pub fn expansion_cells(expansion: f64) -> usize {
    CropWindow::expanded(Point2::default(), expansion).cells(DEFAULT_RESOLUTION)
}
