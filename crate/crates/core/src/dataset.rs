//! Training corpus: per-step crops of the estimated map paired with
//! concentric, wider crops of the ground truth.
//!
//! On disk a dataset is
//!
//! ```text
//! root/manifest
//! root/input/EEEE_SSSSS.pgm
//! root/gt_110/EEEE_SSSSS.pgm
//! ...
//! root/gt_200/EEEE_SSSSS.pgm
//! ```
//!
//! Crops carry no sidecar: their resolution is the map's (0.05 m) and their
//! origin follows from the pose recorded in the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::exec::Exec;
use crate::grid::{read_pgm, write_pgm, CropWindow, GridError, OccGrid, DEFAULT_RESOLUTION};
use crate::grid::{Cell, Point2};
use crate::sim::{
    follow_path, integrate_scan_into, LidarSpec, PursuitParams, RobotState, SimError, CONTROL_DT,
};

pub const MANIFEST_FILE: &str = "manifest";
pub const MANIFEST_FORMAT: &str = "fovpred-dataset/1";
pub const INPUT_DIR: &str = "input";
/// Cells per side of an input crop (5 m at 0.05 m).
pub const INPUT_CELLS: usize = 100;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Grid { path: PathBuf, source: GridError },
    #[error("corrupt dataset at {file}: {reason}")]
    ManifestCorrupt { file: PathBuf, reason: String },
    #[error("unknown episode {0}")]
    UnknownEpisode(u32),
    #[error("invalid expansion {0:?} (allowed: 1.10 to 2.00 in steps of 0.10)")]
    InvalidExpansion(String),
    #[error("dataset has no targets at expansion {0}")]
    MissingExpansion(Expansion),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn grid_err(path: &Path) -> impl FnOnce(GridError) -> DatasetError + '_ {
    move |source| DatasetError::Grid {
        path: path.to_path_buf(),
        source,
    }
}

/// Expansion factor of a predicted window, one of 1.10x, 1.20x, ..., 2.00x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expansion(u32);

impl Expansion {
    pub const ALL: [Expansion; 10] = [
        Expansion(110),
        Expansion(120),
        Expansion(130),
        Expansion(140),
        Expansion(150),
        Expansion(160),
        Expansion(170),
        Expansion(180),
        Expansion(190),
        Expansion(200),
    ];
    /// The five factors reported in the evaluation table.
    pub const REPORTED: [Expansion; 5] = [
        Expansion(110),
        Expansion(130),
        Expansion(150),
        Expansion(170),
        Expansion(200),
    ];

    pub fn from_percent(p: u32) -> Result<Self, DatasetError> {
        if (110..=200).contains(&p) && p.is_multiple_of(10) {
            Ok(Expansion(p))
        } else {
            Err(DatasetError::InvalidExpansion(p.to_string()))
        }
    }

    pub fn from_factor(f: f64) -> Result<Self, DatasetError> {
        let p = (f * 100.0).round();
        if (f * 100.0 - p).abs() > 1e-6 || !(0.0..=1000.0).contains(&p) {
            return Err(DatasetError::InvalidExpansion(f.to_string()));
        }
        Self::from_percent(p as u32)
    }

    pub fn percent(self) -> u32 {
        self.0
    }

    pub fn factor(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Cells per side of a target crop, `round(100 * factor)`.
    pub fn cells(self) -> usize {
        self.0 as usize
    }

    pub fn dir_name(self) -> String {
        format!("gt_{}", self.0)
    }
}

impl fmt::Display for Expansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}x", self.factor())
    }
}

impl FromStr for Expansion {
    type Err = DatasetError;

    /// Accepts `1.3`, `1.30x` or `130`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_end_matches(['x', 'X']);
        let bad = || DatasetError::InvalidExpansion(s.to_string());
        if !t.contains('.') {
            if let Ok(p) = t.parse::<u32>() {
                return Self::from_percent(p).map_err(|_| bad());
            }
        }
        let f: f64 = t.parse().map_err(|_| bad())?;
        Self::from_factor(f).map_err(|_| bad())
    }
}

impl serde::Serialize for Expansion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.factor())
    }
}

impl<'de> serde::Deserialize<'de> for Expansion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = f64::deserialize(d)?;
        Expansion::from_factor(f).map_err(serde::de::Error::custom)
    }
}

/// One time step of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub episode: u32,
    pub step: usize,
    pub pose: RobotState,
    /// 100 x 100 crop of the estimated map around the robot.
    pub input: OccGrid,
    /// Ground-truth crops around the same center, `round(100 e)` cells per side.
    pub targets: BTreeMap<Expansion, OccGrid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub episode: u32,
    pub step: usize,
    pub pose: RobotState,
    pub split: Split,
}

impl SampleRecord {
    /// File stem shared by the input and every target: `EEEE_SSSSS`.
    pub fn stem(&self) -> String {
        format!("{:04}_{:05}", self.episode, self.step)
    }

    pub fn input_path(&self, root: &Path) -> PathBuf {
        root.join(INPUT_DIR).join(format!("{}.pgm", self.stem()))
    }

    pub fn target_path(&self, root: &Path, e: Expansion) -> PathBuf {
        root.join(e.dir_name()).join(format!("{}.pgm", self.stem()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub expansions: Vec<Expansion>,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn episodes(&self) -> BTreeSet<u32> {
        self.records.iter().map(|r| r.episode).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn has_expansion(&self, e: Expansion) -> bool {
        self.expansions.contains(&e)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("format={MANIFEST_FORMAT}\n");
        let ex: Vec<String> = self
            .expansions
            .iter()
            .map(|e| format!("{:.2}", e.factor()))
            .collect();
        out += &format!("expansions={}\n", ex.join(","));
        out += &format!("samples={}\n", self.records.len());
        out += "episode,step,x,y,theta,split\n";
        for r in &self.records {
            out += &format!(
                "{},{},{:?},{:?},{:?},{}\n",
                r.episode,
                r.step,
                r.pose.x,
                r.pose.y,
                r.pose.theta,
                r.split.as_str()
            );
        }
        out
    }

    /// Parses manifest text; `file` only labels errors.
    pub fn parse(text: &str, file: &Path) -> Result<Self, DatasetError> {
        let corrupt = |reason: String| DatasetError::ManifestCorrupt {
            file: file.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String, DatasetError> {
            let line = lines
                .next()
                .ok_or_else(|| corrupt(format!("missing {key} line")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| corrupt(format!("expected {key}=..., found {line:?}")))
        };
        let format = header("format")?;
        if format != MANIFEST_FORMAT {
            return Err(corrupt(format!("unsupported format {format:?}")));
        }
        let expansions = header("expansions")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Expansion>().map_err(|e| corrupt(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let samples: usize = header("samples")?
            .parse()
            .map_err(|_| corrupt("bad sample count".into()))?;
        if lines.next() != Some("episode,step,x,y,theta,split") {
            return Err(corrupt("missing column header".into()));
        }
        let mut records = Vec::with_capacity(samples);
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || corrupt(format!("record {n}: {line:?}"));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let split = match f[5] {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad()),
            };
            records.push(SampleRecord {
                episode: f[0].parse().map_err(|_| bad())?,
                step: f[1].parse().map_err(|_| bad())?,
                pose: RobotState {
                    x: num(f[2])?,
                    y: num(f[3])?,
                    theta: num(f[4])?,
                },
                split,
            });
        }
        if records.len() != samples {
            return Err(corrupt(format!(
                "header says {samples} samples, found {}",
                records.len()
            )));
        }
        Ok(Self {
            expansions,
            records,
        })
    }

    pub fn save(&self, root: &Path) -> Result<(), DatasetError> {
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(io_err(&path))
    }
}

/// Estimated-map crop sizes and target expansions for one episode run.
fn crops_at(
    est: &OccGrid,
    gt: &OccGrid,
    pose: &RobotState,
    expansions: &[Expansion],
) -> (OccGrid, BTreeMap<Expansion, OccGrid>) {
    let center = pose.position();
    let input = est.crop_centered(&CropWindow::base(center));
    let targets = expansions
        .iter()
        .map(|&e| {
            (
                e,
                gt.crop_centered(&CropWindow::expanded(center, e.factor())),
            )
        })
        .collect();
    (input, targets)
}

/// Runs one episode and hands every sample, together with the full
/// estimated map after that step, to `visit`. Returns the sample count.
pub fn for_each_sample<F>(
    episode: u32,
    gt: &OccGrid,
    waypoints: &[Point2],
    spec: &LidarSpec,
    ctrl: &PursuitParams,
    expansions: &[Expansion],
    mut visit: F,
) -> Result<usize, DatasetError>
where
    F: FnMut(SamplePair, &OccGrid) -> Result<(), DatasetError>,
{
    if (gt.resolution() - DEFAULT_RESOLUTION).abs() > 1e-12 {
        return Err(SimError::GridMismatch.into());
    }
    let traj = follow_path(gt, waypoints, spec, ctrl, CONTROL_DT)?;
    let mut est = gt.blank_like(Cell::Unknown);
    if !est.same_geometry(gt) {
        return Err(SimError::GridMismatch.into());
    }
    for t in &traj {
        integrate_scan_into(&mut est, &t.state, &t.scan, spec)?;
        let (input, targets) = crops_at(&est, gt, &t.state, expansions);
        visit(
            SamplePair {
                episode,
                step: t.step,
                pose: t.state,
                input,
                targets,
            },
            &est,
        )?;
    }
    Ok(traj.len())
}

/// All samples of one episode, in trajectory order. Each step's scan is
/// integrated before the crop is taken.
pub fn generate_episode(
    episode: u32,
    gt: &OccGrid,
    waypoints: &[Point2],
    spec: &LidarSpec,
    ctrl: &PursuitParams,
    expansions: &[Expansion],
) -> Result<Vec<SamplePair>, DatasetError> {
    let mut out = Vec::new();
    for_each_sample(episode, gt, waypoints, spec, ctrl, expansions, |s, _| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}

fn create_dirs(root: &Path, expansions: &[Expansion]) -> Result<(), DatasetError> {
    let dirs =
        std::iter::once(INPUT_DIR.to_string()).chain(expansions.iter().map(|e| e.dir_name()));
    for d in dirs {
        let p = root.join(d);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    Ok(())
}

fn write_crop(path: &Path, grid: &OccGrid) -> Result<(), DatasetError> {
    write_pgm(path, &grid.encode_image(), grid.width(), grid.height()).map_err(grid_err(path))
}

fn write_sample_files(root: &Path, s: &SamplePair) -> Result<SampleRecord, DatasetError> {
    let rec = SampleRecord {
        episode: s.episode,
        step: s.step,
        pose: s.pose,
        split: Split::Train,
    };
    write_crop(&rec.input_path(root), &s.input)?;
    for (&e, g) in &s.targets {
        write_crop(&rec.target_path(root, e), g)?;
    }
    Ok(rec)
}

/// Writes samples (all in the train split) and the manifest. Every sample
/// must carry targets at exactly `expansions`.
pub fn write_dataset(
    samples: &[SamplePair],
    expansions: &[Expansion],
    root: &Path,
) -> Result<DatasetManifest, DatasetError> {
    create_dirs(root, expansions)?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        if !s.targets.keys().copied().eq(expansions.iter().copied()) {
            return Err(DatasetError::ManifestCorrupt {
                file: root.join(MANIFEST_FILE),
                reason: format!(
                    "sample {:04}_{:05} has mismatched expansions",
                    s.episode, s.step
                ),
            });
        }
        records.push(write_sample_files(root, s)?);
    }
    let manifest = DatasetManifest {
        expansions: expansions.to_vec(),
        records,
    };
    manifest.save(root)?;
    Ok(manifest)
}

/// One episode to simulate: its id, ground-truth map and waypoints.
#[derive(Debug, Clone)]
pub struct EpisodeJob {
    pub id: u32,
    pub gt: OccGrid,
    pub waypoints: Vec<Point2>,
}

/// Simulates every episode (in parallel under `exec`), streaming each
/// sample to disk as it is produced, then writes the manifest with
/// `test_episodes` in the test split.
pub fn build_dataset(
    exec: Exec,
    jobs: &[EpisodeJob],
    spec: &LidarSpec,
    ctrl: &PursuitParams,
    expansions: &[Expansion],
    test_episodes: &[u32],
    root: &Path,
) -> Result<DatasetManifest, DatasetError> {
    create_dirs(root, expansions)?;
    let per_episode = exec.map_slice(jobs, |job| {
        let mut records = Vec::new();
        for_each_sample(
            job.id,
            &job.gt,
            &job.waypoints,
            spec,
            ctrl,
            expansions,
            |s, _| {
                records.push(write_sample_files(root, &s)?);
                Ok(())
            },
        )?;
        Ok::<_, DatasetError>(records)
    });
    let mut records = Vec::new();
    for r in per_episode {
        records.extend(r?);
    }
    let manifest = split_by_episode(
        &DatasetManifest {
            expansions: expansions.to_vec(),
            records,
        },
        test_episodes,
    )?;
    manifest.save(root)?;
    Ok(manifest)
}

fn list_stems(dir: &Path) -> Result<BTreeSet<String>, DatasetError> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".pgm") {
            out.insert(stem.to_string());
        }
    }
    Ok(out)
}

/// Reads and cross-checks the manifest against the directory tree: every
/// listed file must exist and no directory may hold unlisted images.
pub fn read_dataset(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest = DatasetManifest::parse(&text, &path)?;
    let expected: BTreeSet<String> = manifest.records.iter().map(SampleRecord::stem).collect();
    if expected.len() != manifest.records.len() {
        return Err(DatasetError::ManifestCorrupt {
            file: path,
            reason: "duplicate (episode, step) records".into(),
        });
    }
    let dirs = std::iter::once(INPUT_DIR.to_string())
        .chain(manifest.expansions.iter().map(|e| e.dir_name()));
    for d in dirs {
        let dir = root.join(&d);
        let found = list_stems(&dir)?;
        if let Some(missing) = expected.difference(&found).next() {
            return Err(DatasetError::ManifestCorrupt {
                file: dir.join(format!("{missing}.pgm")),
                reason: "listed in the manifest but missing".into(),
            });
        }
        if let Some(extra) = found.difference(&expected).next() {
            return Err(DatasetError::ManifestCorrupt {
                file: dir.join(format!("{extra}.pgm")),
                reason: "not listed in the manifest".into(),
            });
        }
    }
    Ok(manifest)
}

fn load_crop(path: &Path, cells: usize, window: CropWindow) -> Result<OccGrid, DatasetError> {
    let (pixels, w, h) = read_pgm(path).map_err(grid_err(path))?;
    if (w, h) != (cells, cells) {
        return Err(DatasetError::ManifestCorrupt {
            file: path.to_path_buf(),
            reason: format!("expected {cells}x{cells} pixels, found {w}x{h}"),
        });
    }
    let origin = window.origin_for(cells, DEFAULT_RESOLUTION);
    OccGrid::decode_image_with(&pixels, w, h, DEFAULT_RESOLUTION, origin).map_err(grid_err(path))
}

pub fn load_input(root: &Path, rec: &SampleRecord) -> Result<OccGrid, DatasetError> {
    load_crop(
        &rec.input_path(root),
        INPUT_CELLS,
        CropWindow::base(rec.pose.position()),
    )
}

pub fn load_target(root: &Path, rec: &SampleRecord, e: Expansion) -> Result<OccGrid, DatasetError> {
    load_crop(
        &rec.target_path(root, e),
        e.cells(),
        CropWindow::expanded(rec.pose.position(), e.factor()),
    )
}

pub fn load_sample(
    root: &Path,
    manifest: &DatasetManifest,
    rec: &SampleRecord,
) -> Result<SamplePair, DatasetError> {
    let targets = manifest
        .expansions
        .iter()
        .map(|&e| Ok((e, load_target(root, rec, e)?)))
        .collect::<Result<_, DatasetError>>()?;
    Ok(SamplePair {
        episode: rec.episode,
        step: rec.step,
        pose: rec.pose,
        input: load_input(root, rec)?,
        targets,
    })
}

/// Assigns whole episodes to the test split and the rest to train.
pub fn split_by_episode(
    manifest: &DatasetManifest,
    test_episodes: &[u32],
) -> Result<DatasetManifest, DatasetError> {
    let known = manifest.episodes();
    let mut seen = BTreeSet::new();
    for &id in test_episodes {
        if !known.contains(&id) || !seen.insert(id) {
            return Err(DatasetError::UnknownEpisode(id));
        }
    }
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split = if seen.contains(&r.episode) {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(out)
}

/// A dataset root together with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        Ok(Self {
            root: root.to_path_buf(),
            manifest: read_dataset(root)?,
        })
    }

    /// `(input, target)` crop pairs of one split at one expansion, in
    /// manifest order.
    pub fn pairs(
        &self,
        split: Split,
        e: Expansion,
    ) -> Result<Vec<(OccGrid, OccGrid)>, DatasetError> {
        if !self.manifest.has_expansion(e) {
            return Err(DatasetError::MissingExpansion(e));
        }
        self.manifest
            .split(split)
            .map(|r| Ok((load_input(&self.root, r)?, load_target(&self.root, r, e)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapgen::{generate_map, MapBlueprint};

    fn corridor() -> (OccGrid, Vec<Point2>) {
        let bp = MapBlueprint::straight(Point2::new(3.0, 4.0), Point2::new(9.0, 4.0), 4.0);
        generate_map(&bp).unwrap()
    }

    fn small_spec() -> LidarSpec {
        LidarSpec {
            beam_count: 271,
            ..LidarSpec::default()
        }
    }

    fn two() -> Vec<Expansion> {
        vec![
            Expansion::from_percent(110).unwrap(),
            Expansion::from_percent(150).unwrap(),
        ]
    }

    #[test]
    fn expansion_parsing() {
        for s in ["1.3", "1.30x", "130", "1.30X"] {
            assert_eq!(s.parse::<Expansion>().unwrap().percent(), 130, "{s}");
        }
        for s in ["1.0", "1.35", "2.1", "abc", "100", "1.25x"] {
            assert!(s.parse::<Expansion>().is_err(), "{s}");
        }
        let e = Expansion::from_percent(130).unwrap();
        assert_eq!(e.cells(), 130);
        assert_eq!(e.cells(), crate::grid::expansion_cells(e.factor()));
        assert_eq!(e.to_string(), "1.30x");
        assert_eq!(e.dir_name(), "gt_130");
        assert_eq!(
            Expansion::ALL.iter().map(|e| e.cells()).sum::<usize>(),
            1550
        );
    }

    #[test]
    fn episode_samples_follow_trajectory() {
        let (gt, wp) = corridor();
        let spec = small_spec();
        let samples =
            generate_episode(3, &gt, &wp, &spec, &PursuitParams::default(), &two()).unwrap();
        assert!(samples.len() > 50);
        for (k, s) in samples.iter().enumerate() {
            assert_eq!((s.episode, s.step), (3, k));
            assert_eq!((s.input.width(), s.input.height()), (100, 100));
            for (e, t) in &s.targets {
                assert_eq!(t.width(), e.cells());
                // concentric windows
                let c = |g: &OccGrid| {
                    let o = g.origin();
                    (
                        o.x + g.width() as f64 * 0.025,
                        o.y + g.height() as f64 * 0.025,
                    )
                };
                let (a, b) = (c(t), c(&s.input));
                assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn first_input_is_the_first_scan() {
        let (gt, wp) = corridor();
        let spec = small_spec();
        let samples =
            generate_episode(0, &gt, &wp, &spec, &PursuitParams::default(), &two()).unwrap();
        let s0 = &samples[0];
        let scan = crate::sim::raycast(&gt, &s0.pose, &spec).unwrap();
        let est = crate::sim::integrate_scan(&gt.blank_like(Cell::Unknown), &s0.pose, &scan, &spec)
            .unwrap();
        assert_eq!(
            s0.input,
            est.crop_centered(&CropWindow::base(s0.pose.position()))
        );
    }

    #[test]
    fn targets_share_the_input_window_region() {
        let (gt, wp) = corridor();
        let samples = generate_episode(
            0,
            &gt,
            &wp,
            &small_spec(),
            &PursuitParams::default(),
            &two(),
        )
        .unwrap();
        for s in samples.iter().step_by(17) {
            let base = gt.crop_centered(&CropWindow::base(s.pose.position()));
            for (e, t) in &s.targets {
                let off = (e.cells() - 100) / 2;
                for j in 0..100 {
                    for i in 0..100 {
                        assert_eq!(t.get(i + off, j + off), base.get(i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn write_read_roundtrip_and_corruption() {
        let (gt, wp) = corridor();
        let samples = generate_episode(
            7,
            &gt,
            &wp,
            &small_spec(),
            &PursuitParams::default(),
            &two(),
        )
        .unwrap();
        let samples = &samples[..10];
        let dir = tempfile::tempdir().unwrap();
        let written = write_dataset(samples, &two(), dir.path()).unwrap();
        let manifest = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest, written);
        for (rec, s) in manifest.records.iter().zip(samples) {
            assert_eq!(&load_sample(dir.path(), &manifest, rec).unwrap(), s);
        }
        for d in ["input", "gt_110", "gt_150"] {
            assert_eq!(
                fs::read_dir(dir.path().join(d)).unwrap().count(),
                manifest.records.len()
            );
        }
        let victim = manifest.records[4].target_path(dir.path(), two()[1]);
        fs::remove_file(&victim).unwrap();
        match read_dataset(dir.path()) {
            Err(DatasetError::ManifestCorrupt { file, .. }) => assert_eq!(file, victim),
            other => panic!("expected ManifestCorrupt, got {other:?}"),
        }
    }

    #[test]
    fn manifest_text_roundtrip() {
        let m = DatasetManifest {
            expansions: two(),
            records: vec![SampleRecord {
                episode: 2,
                step: 9,
                pose: RobotState {
                    x: 0.1 + 0.2,
                    y: -3.0,
                    theta: std::f64::consts::PI,
                },
                split: Split::Test,
            }],
        };
        assert_eq!(
            DatasetManifest::parse(&m.to_text(), Path::new("m")).unwrap(),
            m
        );
        let broken = m.to_text().replace("samples=1", "samples=2");
        assert!(matches!(
            DatasetManifest::parse(&broken, Path::new("m")),
            Err(DatasetError::ManifestCorrupt { .. })
        ));
    }

    fn fake_manifest(episodes: &[(u32, usize)]) -> DatasetManifest {
        let records = episodes
            .iter()
            .flat_map(|&(e, n)| {
                (0..n).map(move |step| SampleRecord {
                    episode: e,
                    step,
                    pose: RobotState::default(),
                    split: Split::Train,
                })
            })
            .collect();
        DatasetManifest {
            expansions: two(),
            records,
        }
    }

    #[test]
    fn episode_split() {
        let m = fake_manifest(&[(0, 5), (1, 3), (2, 4), (3, 2), (4, 6), (5, 1)]);
        let s = split_by_episode(&m, &[4, 5]).unwrap();
        assert_eq!(
            s.count(Split::Train) + s.count(Split::Test),
            m.records.len()
        );
        assert_eq!(s.count(Split::Test), 7);
        let test_eps: BTreeSet<u32> = s.split(Split::Test).map(|r| r.episode).collect();
        let train_eps: BTreeSet<u32> = s.split(Split::Train).map(|r| r.episode).collect();
        assert!(test_eps.is_disjoint(&train_eps));
        assert_eq!(split_by_episode(&m, &[]).unwrap().count(Split::Test), 0);
        assert!(matches!(
            split_by_episode(&m, &[9]),
            Err(DatasetError::UnknownEpisode(9))
        ));
        assert!(matches!(
            split_by_episode(&m, &[1, 1]),
            Err(DatasetError::UnknownEpisode(1))
        ));
    }

    #[test]
    fn parallel_build_is_deterministic() {
        let (gt, wp) = corridor();
        let jobs: Vec<EpisodeJob> = (0..2)
            .map(|id| EpisodeJob {
                id,
                gt: gt.clone(),
                waypoints: wp.clone(),
            })
            .collect();
        let spec = small_spec();
        let ctrl = PursuitParams::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma =
            build_dataset(Exec::Parallel, &jobs, &spec, &ctrl, &two(), &[1], a.path()).unwrap();
        let mb = build_dataset(
            Exec::Sequential,
            &jobs,
            &spec,
            &ctrl,
            &two(),
            &[1],
            b.path(),
        )
        .unwrap();
        assert_eq!(ma, mb);
        assert_eq!(
            fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
        let rec = &ma.records[ma.records.len() - 1];
        assert_eq!(rec.split, Split::Test);
        assert_eq!(
            fs::read(rec.input_path(a.path())).unwrap(),
            fs::read(rec.input_path(b.path())).unwrap()
        );
    }
}
