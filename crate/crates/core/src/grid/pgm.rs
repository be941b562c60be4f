//! Binary PGM (P5, maxval 255) codec and the `key=value` sidecar carrying
//! resolution and origin.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{GridError, OccGrid, Point2};

const META_FORMAT: &str = "fovpred-grid/1";

/// Geometry stored next to a grid image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMeta {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Point2,
}

impl GridMeta {
    pub fn to_text(&self) -> String {
        // `{:?}` prints the shortest string that round-trips the f64
        format!(
            "format={META_FORMAT}\nwidth={}\nheight={}\nresolution={:?}\norigin_x={:?}\norigin_y={:?}\n",
            self.width, self.height, self.resolution, self.origin.x, self.origin.y
        )
    }

    pub fn parse(text: &str) -> Result<GridMeta, GridError> {
        let mut format = None;
        let (mut width, mut height, mut resolution, mut ox, mut oy) =
            (None, None, None, None, None);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GridError::Meta(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| GridError::Meta(format!("bad number for {key}: {v:?}")))
            };
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| GridError::Meta(format!("bad integer for {key}: {v:?}")))
            };
            match key {
                "format" => format = Some(value.to_owned()),
                "width" => width = Some(int(value)?),
                "height" => height = Some(int(value)?),
                "resolution" => resolution = Some(num(value)?),
                "origin_x" => ox = Some(num(value)?),
                "origin_y" => oy = Some(num(value)?),
                _ => {}
            }
        }
        if format.as_deref() != Some(META_FORMAT) {
            return Err(GridError::Meta(format!(
                "unsupported format {format:?}, expected {META_FORMAT}"
            )));
        }
        let missing = |k: &str| GridError::Meta(format!("missing key {k}"));
        Ok(GridMeta {
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            resolution: resolution.ok_or_else(|| missing("resolution"))?,
            origin: Point2::new(
                ox.ok_or_else(|| missing("origin_x"))?,
                oy.ok_or_else(|| missing("origin_y"))?,
            ),
        })
    }
}

pub fn encode_pgm(pixels: &[u8], width: usize, height: usize) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary P5 image with maxval 255. Returns `(pixels, width, height)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize), GridError> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(GridError::Pgm(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    for f in fields.iter_mut() {
        let tok = next_token(bytes, &mut pos)?;
        *f = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| GridError::Pgm("bad header integer".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(GridError::Pgm(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let expected = width * height;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != expected {
        return Err(GridError::LengthMismatch {
            expected,
            actual: raster.len(),
        });
    }
    Ok((raster.to_vec(), width, height))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], GridError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(GridError::Pgm("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

pub fn write_pgm(path: &Path, pixels: &[u8], width: usize, height: usize) -> Result<(), GridError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(pixels, width, height))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(Vec<u8>, usize, usize), GridError> {
    decode_pgm(&fs::read(path)?)
}

/// Sidecar path for a grid image: `map.pgm` -> `map.meta`.
pub fn meta_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("meta")
}

/// Writes `path` (PGM) and its `.meta` sidecar.
pub fn write_grid(path: &Path, grid: &OccGrid) -> Result<(), GridError> {
    write_pgm(path, &grid.encode_image(), grid.width(), grid.height())?;
    fs::write(meta_path(path), grid.meta().to_text())?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<OccGrid, GridError> {
    let (pixels, width, height) = read_pgm(path)?;
    let meta = GridMeta::parse(&fs::read_to_string(meta_path(path))?)?;
    if (meta.width, meta.height) != (width, height) {
        return Err(GridError::Meta(format!(
            "sidecar says {}x{}, image is {width}x{height}",
            meta.width, meta.height
        )));
    }
    OccGrid::decode_image_with(&pixels, width, height, meta.resolution, meta.origin)
}
