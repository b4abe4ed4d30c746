use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{Calibration, CalibrationParseError};

#[derive(Debug, Error)]
pub enum RigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("rig list is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rig {rig}: {source}")]
    Calibration {
        rig: String,
        #[source]
        source: CalibrationParseError,
    },
    #[error("rig {rig}: referenced file {path} does not exist")]
    MissingFile { rig: String, path: PathBuf },
    #[error("rig id `{0}` is used more than once")]
    DuplicateId(String),
}

/// One calibrated capture and its optional side inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub id: String,
    pub image: PathBuf,
    pub calibration: Calibration,
    pub env_map: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub road_mask: Option<PathBuf>,
    pub real_annotations: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigEntry {
    #[serde(default)]
    id: Option<String>,
    image: PathBuf,
    /// Inline object or path to a calibration JSON file.
    calibration: Value,
    #[serde(default)]
    env_map: Option<PathBuf>,
    #[serde(default)]
    trajectories: Option<PathBuf>,
    #[serde(default)]
    road_mask: Option<PathBuf>,
    #[serde(default)]
    real_annotations: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, RigError> {
    std::fs::read_to_string(path).map_err(|source| RigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a rig list; relative paths resolve against `base`.
pub fn parse_rigs(text: &str, base: &Path) -> Result<Vec<CameraRig>, RigError> {
    let entries: Vec<RigEntry> = serde_json::from_str(text)?;
    let abs = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
    let mut seen = HashSet::new();
    let mut rigs = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        let image = abs(e.image);
        let id = e.id.unwrap_or_else(|| {
            image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("rig{i}"))
        });
        if !seen.insert(id.clone()) {
            return Err(RigError::DuplicateId(id));
        }
        let calibration = match e.calibration {
            Value::String(p) => {
                let p = abs(PathBuf::from(p));
                Calibration::from_json_str(&read(&p)?)
            }
            v => Calibration::from_json_value(v),
        }
        .map_err(|source| RigError::Calibration {
            rig: id.clone(),
            source,
        })?;
        let rig = CameraRig {
            image,
            calibration,
            env_map: e.env_map.map(abs),
            trajectories: e.trajectories.map(abs),
            road_mask: e.road_mask.map(abs),
            real_annotations: e.real_annotations.map(abs),
            id,
        };
        rig.check_files()?;
        rigs.push(rig);
    }
    Ok(rigs)
}

/// Loads a rig list; relative entries resolve against the file's directory,
/// made absolute so manifests stay valid from any working directory.
pub fn load_rigs(path: &Path) -> Result<Vec<CameraRig>, RigError> {
    let text = read(path)?;
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let base = std::fs::canonicalize(parent).unwrap_or_else(|_| parent.to_path_buf());
    parse_rigs(&text, &base)
}

impl CameraRig {
    pub fn check_files(&self) -> Result<(), RigError> {
        let optional = [
            &self.env_map,
            &self.trajectories,
            &self.road_mask,
            &self.real_annotations,
        ];
        for p in std::iter::once(&self.image).chain(optional.into_iter().flatten()) {
            if !p.is_file() {
                return Err(RigError::MissingFile {
                    rig: self.id.clone(),
                    path: p.clone(),
                });
            }
        }
        Ok(())
    }
}
