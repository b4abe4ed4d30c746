use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compositor::BackgroundMode;
use crate::envmap::EnvMode;
use crate::placement::{PlacementRegion, VolumeBounds};
use crate::postfx::PostFxParams;
use crate::renderer::RenderSettings;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{}line {line}, column {column}: {message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("`{field}` out of range: {message}")]
    RangeViolation { field: String, message: String },
}

/// How many cars each composite receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarsMode {
    /// Exactly `max_cars` before collision filtering.
    Exact,
    /// Uniform in `[1, max_cars]`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementStrategy {
    Manual,
    RoadMask,
    #[default]
    GroundPlane,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub augmentations_per_image: u32,
    pub max_cars: u32,
    pub cars_mode: CarsMode,
    pub placement_strategy: PlacementStrategy,
    pub placement_region: PlacementRegion,
    pub unconstrained_volume: VolumeBounds,
    pub env_mode: EnvMode,
    pub env_pool: Vec<PathBuf>,
    /// Treat 8-bit panoramas as display-encoded and linearize them.
    pub env_gamma_decode: bool,
    pub postfx: PostFxParams,
    pub background_mode: BackgroundMode,
    pub background_pool: Vec<PathBuf>,
    pub render: RenderSettings,
    pub seed: u64,
    /// Catalog manifest; the built-in procedural fleet when absent.
    pub catalog: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

pub const MAX_CARS_LIMIT: u32 = 1000;

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            augmentations_per_image: 20,
            max_cars: 5,
            cars_mode: CarsMode::default(),
            placement_strategy: PlacementStrategy::default(),
            placement_region: PlacementRegion::default(),
            unconstrained_volume: VolumeBounds::default(),
            env_mode: EnvMode::default(),
            env_pool: Vec::new(),
            env_gamma_decode: true,
            postfx: PostFxParams::default(),
            background_mode: BackgroundMode::default(),
            background_pool: Vec::new(),
            render: RenderSettings::default(),
            seed: 0,
            catalog: None,
            output_dir: None,
        }
    }
}

fn range(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::RangeViolation {
        field: field.into(),
        message: message.into(),
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.augmentations_per_image == 0 {
            return Err(range("augmentations_per_image", "must be at least 1"));
        }
        if self.max_cars > MAX_CARS_LIMIT {
            return Err(range("max_cars", format!("must be at most {MAX_CARS_LIMIT}")));
        }
        self.placement_region
            .validate()
            .map_err(|e| range("placement_region", e.to_string()))?;
        let v = &self.unconstrained_volume;
        if (0..3).any(|i| !(v.min[i] < v.max[i])) {
            return Err(range("unconstrained_volume", "min must be below max on every axis"));
        }
        self.postfx.validate().map_err(|e| range("postfx", e.to_string()))?;
        self.render.validate().map_err(|e| range("render", e.to_string()))?;
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.env_pool.iter_mut().for_each(fix);
        self.background_pool.iter_mut().for_each(fix);
        self.catalog.iter_mut().for_each(fix);
        self.output_dir.iter_mut().for_each(fix);
    }

    /// Hex SHA-256 of every field except `output_dir`.
    pub fn fingerprint(&self) -> String {
        let canonical = AugmentationConfig {
            output_dir: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Strict parse with defaults for omitted fields.
pub fn load_config(text: &str) -> Result<AugmentationConfig, ConfigError> {
    parse_config(text, None)
}

pub fn load_config_file(path: &Path) -> Result<AugmentationConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
        path: Some(path.to_path_buf()),
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    let mut cfg = parse_config(&text, Some(path))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

fn parse_config(text: &str, path: Option<&Path>) -> Result<AugmentationConfig, ConfigError> {
    let cfg: AugmentationConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match unknown_field(&msg) {
            Some(key) => ConfigError::UnknownKey(key),
            None => ConfigError::Parse {
                path: path.map(Path::to_path_buf),
                line: e.line(),
                column: e.column(),
                message: msg,
            },
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}
