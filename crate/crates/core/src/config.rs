//! Pipeline configuration file.
//!
//! TOML with a `schema` version key. Every table and key is optional and
//! falls back to its default; unknown keys are rejected.
//!
//! ```toml
//! schema = 1
//! seed = 7                    # base seed for maps and training
//!
//! [maps]
//! count = 6
//! [maps.blueprint]            # corridor generator, see BlueprintConfig
//! main_segments = 2
//!
//! [lidar]                     # LidarSpec
//! [pursuit]                   # PursuitParams
//!
//! [dataset]
//! root = "data"               # overridden by $FOVPRED_DATASET_ROOT
//! expansions = [1.1, 1.3, 1.5, 1.7, 2.0]
//! test_episodes = [4, 5]
//!
//! [train]
//! checkpoint_dir = "checkpoints"
//! [train.unet_ff]             # TrainConfig, one table per architecture
//! epochs = 20
//!
//! [eval]
//! out_dir = "reports"
//! raw = false
//! triptychs = 3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{EpisodeJob, Expansion};
use crate::exec::Exec;
use crate::mapgen::{generate_map, random_blueprint, BlueprintConfig, MapGenError};
use crate::models::ModelKind;
use crate::sim::{LidarSpec, PursuitParams};
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const DATASET_ROOT_ENV: &str = "FOVPRED_DATASET_ROOT";

/// Small end-to-end configuration used by the smoke tests.
pub const TINY_CONFIG: &str = include_str!("../../../configs/tiny.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unsupported config schema {found}, expected {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("map {index}: {source}")]
    Map {
        index: u32,
        #[source]
        source: MapGenError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapsConfig {
    pub count: u32,
    pub blueprint: BlueprintConfig,
}

impl Default for MapsConfig {
    fn default() -> Self {
        Self {
            count: 6,
            blueprint: BlueprintConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub expansions: Vec<Expansion>,
    /// Episode ids (equal to map indices) held out for testing.
    pub test_episodes: Vec<u32>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            expansions: Expansion::REPORTED.to_vec(),
            test_episodes: vec![4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub checkpoint_dir: PathBuf,
    pub unet_ff: TrainConfig,
    pub resnet_ff: TrainConfig,
    pub gan: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            checkpoint_dir: PathBuf::from("checkpoints"),
            unet_ff: TrainConfig::default(),
            resnet_ff: TrainConfig::default(),
            gan: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub out_dir: PathBuf,
    /// Score raw network output instead of the ternarized prediction.
    pub raw: bool,
    /// Triptych images written per evaluated model.
    pub triptychs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("reports"),
            raw: false,
            triptychs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: u32,
    pub seed: u64,
    pub maps: MapsConfig,
    pub lidar: LidarSpec,
    pub pursuit: PursuitParams,
    pub dataset: DatasetConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: 0,
            maps: MapsConfig::default(),
            lidar: LidarSpec::default(),
            pursuit: PursuitParams::default(),
            dataset: DatasetConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema { found: self.schema });
        }
        if self.maps.count == 0 {
            return bad("maps.count must be positive".into());
        }
        if self.dataset.expansions.is_empty() {
            return bad("dataset.expansions is empty".into());
        }
        if let Some(&e) = self
            .dataset
            .test_episodes
            .iter()
            .find(|&&e| e >= self.maps.count)
        {
            return bad(format!(
                "test episode {e} is not among the {} maps",
                self.maps.count
            ));
        }
        if self.lidar.beam_count < 2 || !(self.lidar.max_range > 0.0) {
            return bad("lidar needs at least 2 beams and a positive range".into());
        }
        for kind in ModelKind::ALL {
            self.train_config(kind)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("train.{kind}: {e}")))?;
        }
        Ok(())
    }

    pub fn train_config(&self, kind: ModelKind) -> &TrainConfig {
        match kind {
            ModelKind::UnetFf => &self.train.unet_ff,
            ModelKind::ResnetFf => &self.train.resnet_ff,
            ModelKind::Gan => &self.train.gan,
        }
    }

    /// Training settings for `kind` at expansion `e`, with seed and width
    /// taken from the architecture table.
    pub fn train_config_for(&self, kind: ModelKind, e: Expansion) -> TrainConfig {
        TrainConfig {
            expansion: e,
            ..self.train_config(kind).clone()
        }
    }

    /// Dataset root: `env` (the value of [`DATASET_ROOT_ENV`]) if set and
    /// non-empty, otherwise the configured root under `base`.
    pub fn dataset_root(&self, base: &Path, env: Option<&str>) -> PathBuf {
        match env.filter(|s| !s.is_empty()) {
            Some(p) => PathBuf::from(p),
            None => base.join(&self.dataset.root),
        }
    }

    /// Seed of map `index`.
    pub fn map_seed(&self, index: u32) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
    }

    /// Generates every map, one episode each, ids `0..count`.
    pub fn episode_jobs(&self, exec: Exec) -> Result<Vec<EpisodeJob>, ConfigError> {
        exec.map(self.maps.count as usize, |i| {
            let id = i as u32;
            let bp = random_blueprint(self.map_seed(id), &self.maps.blueprint);
            let (gt, waypoints) =
                generate_map(&bp).map_err(|source| ConfigError::Map { index: id, source })?;
            Ok(EpisodeJob { id, gt, waypoints })
        })
        .into_iter()
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn tiny_config_is_valid() {
        let c = PipelineConfig::from_toml(TINY_CONFIG).unwrap();
        assert_eq!(c.dataset.expansions, Expansion::REPORTED.to_vec());
        assert!(c.maps.count <= 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            PipelineConfig::from_toml("schema = 2"),
            Err(ConfigError::Schema { found: 2 })
        ));
        assert!(matches!(
            PipelineConfig::from_toml("bogus = 1"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[dataset]\nexpansions = [2.5]"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[maps]\ncount = 2\n[dataset]\ntest_episodes = [3]"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[train.gan]\nbatch_size = 8"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn partial_tables_and_env_override() {
        let c = PipelineConfig::from_toml(
            "seed = 3\n[lidar]\nbeam_count = 181\n[train.gan]\nepochs = 2",
        )
        .unwrap();
        assert_eq!(
            (c.seed, c.lidar.beam_count, c.lidar.max_range),
            (3, 181, LidarSpec::default().max_range)
        );
        assert_eq!(c.train.gan.epochs, 2);
        assert_eq!(c.train.unet_ff.epochs, 20);
        let base = Path::new("/w");
        assert_eq!(c.dataset_root(base, None), PathBuf::from("/w/data"));
        assert_eq!(c.dataset_root(base, Some("")), PathBuf::from("/w/data"));
        assert_eq!(c.dataset_root(base, Some("/x")), PathBuf::from("/x"));
        let e = Expansion::from_percent(170).unwrap();
        assert_eq!(c.train_config_for(ModelKind::Gan, e).expansion, e);
    }

    #[test]
    fn map_generation_is_seeded() {
        let c = PipelineConfig::from_toml(TINY_CONFIG).unwrap();
        let a = c.episode_jobs(Exec::Parallel).unwrap();
        let b = c.episode_jobs(Exec::Sequential).unwrap();
        assert_eq!(a.len(), c.maps.count as usize);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.id, &x.gt, &x.waypoints), (y.id, &y.gt, &y.waypoints));
        }
        assert_ne!(a[0].gt, a[1].gt);
    }
}
