//! Dataset orchestration: n augmentations of every rig, each with a freshly
//! drawn set of cars, written as PNG composites with JSON ground truth and a
//! manifest.
//!
//! Every composite draws from its own seed, derived from the global seed,
//! the rig index and the augmentation index. Within a composite, independent
//! random streams feed the car count, the poses, the catalog draws and the
//! environment/background choice. Raising `max_cars` therefore only appends
//! cars; the ones already drawn keep their models, poses and ids.

pub mod birdseye;
pub mod config;
pub mod rig;
pub mod stats;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{catalog_sample, procedural, AssetError, Catalog, Category, Material};
use crate::compositor::{
    composite, derive_annotations, load_rgb, resolve_background, update_real_masks, AnnotationFile, BackgroundMode,
    CompositeError, InstanceAnnotation, Origin,
};
use crate::envmap::{load_envmap_file, EnvMapError, EnvMode, EnvironmentMap, MapKind, NO_MAP_RADIANCE};
use crate::geometry::GeometryError;
use crate::placement::{
    kept_after_collisions, sample_ground_plane, sample_manual, sample_road_mask, sample_unconstrained, PlacementError,
    PoseSample, TrajectorySet,
};
use crate::postfx::{apply_chain, PostFxError};
use crate::renderer::{mix64, render_layer, RenderError, RenderLayer, SceneInstance};

pub use birdseye::{export_birdseye, BirdseyeMetadata};
pub use config::{load_config, load_config_file, AugmentationConfig, CarsMode, ConfigError, PlacementStrategy};
pub use rig::{load_rigs, parse_rigs, CameraRig, RigError};
pub use stats::{compute_stats, DatasetStats};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("rig {rig}: placement strategy {strategy:?} needs an input the rig does not provide")]
    MissingStrategyInput { rig: String, strategy: PlacementStrategy },
    #[error("rig {rig}, augmentation {augmentation}: {source}")]
    Stage {
        rig: String,
        augmentation: u32,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    EnvMap(#[from] EnvMapError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    PostFx(#[from] PostFxError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Image(PathBuf, #[source] image::ImageError),
    #[error("{0}: {1}")]
    Json(PathBuf, #[source] serde_json::Error),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("{0}")]
    Input(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io(path.to_path_buf(), e)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub instance_id: u32,
    pub model: String,
    pub category: Category,
    pub material: Material,
    pub pose: PoseSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentRecord {
    pub kind: MapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeRecord {
    pub rig_index: usize,
    pub rig_id: String,
    pub augmentation: u32,
    pub seed: u64,
    /// Cars drawn before collision filtering.
    pub cars_drawn: u32,
    /// Cars that survived collision filtering, in id order.
    pub placements: Vec<Placement>,
    pub environment: EnvironmentRecord,
    pub background: BackgroundMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_source: Option<PathBuf>,
    /// Relative to the manifest directory.
    pub image: String,
    pub annotation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationManifest {
    pub config_fingerprint: String,
    pub seed: u64,
    pub augmentations_per_image: u32,
    pub rigs: Vec<String>,
    pub records: Vec<CompositeRecord>,
}

impl AugmentationManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::CorruptManifest(format!("{}: {e}", path.display())))
    }
}

/// Stable seed of composite `j` of rig `rig_index`.
pub fn composite_seed(seed: u64, rig_index: usize, augmentation: u32) -> u64 {
    let h = mix64(seed ^ 0x6a09_e667_f3bc_c908);
    let h = mix64(h ^ mix64(rig_index as u64 + 1));
    mix64(h ^ mix64(u64::from(augmentation) ^ 0xbb67_ae85_84ca_a73b))
}

const STREAM_COUNT: u64 = 0;
const STREAM_POSES: u64 = 1;
const STREAM_CATALOG: u64 = 2;
const STREAM_ENV: u64 = 3;
const STREAM_BACKGROUND: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn draw_car_count<R: Rng + ?Sized>(mode: CarsMode, max_cars: u32, rng: &mut R) -> u32 {
    let u: f64 = rng.gen();
    match mode {
        CarsMode::Exact => max_cars,
        CarsMode::Uniform if max_cars == 0 => 0,
        CarsMode::Uniform => (1 + (u * f64::from(max_cars)).floor() as u32).min(max_cars),
    }
}

/// One model per category with a small paint palette.
pub fn builtin_catalog() -> Catalog {
    let models = Category::ALL
        .iter()
        .map(|&c| Arc::new(procedural::car_model(c, c.as_str())))
        .collect();
    let palette = vec![
        [0.60, 0.05, 0.04],
        [0.02, 0.05, 0.25],
        [0.80, 0.80, 0.78],
        [0.03, 0.03, 0.03],
        [0.35, 0.36, 0.38],
        [0.10, 0.22, 0.08],
        [0.70, 0.55, 0.10],
    ];
    Catalog::new(models, palette, crate::assets::DEFAULT_SPECULAR_WEIGHT).expect("builtin catalog is valid")
}

/// Read-only state shared by all composite jobs.
pub struct Session {
    pub config: AugmentationConfig,
    pub rigs: Vec<CameraRig>,
    pub catalog: Catalog,
    env_pool: Vec<Arc<EnvironmentMap>>,
    fingerprint: String,
}

/// Everything produced for one composite before it is written.
pub struct CompositeOutput {
    pub record: CompositeRecord,
    pub image: RgbImage,
    pub annotations: AnnotationFile,
    pub layer: RenderLayer,
    pub post_layer: RenderLayer,
}

fn rel_name(rig_index: usize, augmentation: u32) -> String {
    format!("r{rig_index:04}_a{augmentation:03}")
}

impl Session {
    pub fn new(config: AugmentationConfig, rigs: Vec<CameraRig>) -> Result<Self, PipelineError> {
        config.validate()?;
        let catalog = match &config.catalog {
            Some(path) => Catalog::load(path)?,
            None => builtin_catalog(),
        };
        for rig in &rigs {
            check_strategy_inputs(&config, rig)?;
            if config.env_mode == EnvMode::TrueMap && rig.env_map.is_none() {
                return Err(PipelineError::Input(format!(
                    "rig {}: env_mode true_map needs an env_map",
                    rig.id
                )));
            }
        }
        if config.env_mode == EnvMode::RandomMap && config.env_pool.is_empty() {
            return Err(EnvMapError::EmptyPool.into());
        }
        if matches!(
            config.background_mode,
            BackgroundMode::RandomImage | BackgroundMode::SyntheticProxy
        ) && config.background_pool.is_empty()
        {
            return Err(CompositeError::EmptyPool.into());
        }
        let env_pool = if config.env_mode == EnvMode::RandomMap {
            config
                .env_pool
                .iter()
                .map(|p| {
                    load_envmap_file(p, config.env_gamma_decode).map(|e| Arc::new(e.with_kind(MapKind::RandomMap)))
                })
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let fingerprint = config.fingerprint();
        Ok(Self {
            config,
            rigs,
            catalog,
            env_pool,
            fingerprint,
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Runs every stage of one composite without touching the disk beyond
    /// reading inputs.
    pub fn run_composite(&self, rig_index: usize, augmentation: u32) -> Result<CompositeOutput, PipelineError> {
        let rig = &self.rigs[rig_index];
        self.run_inner(rig_index, augmentation)
            .map_err(|e| PipelineError::Stage {
                rig: rig.id.clone(),
                augmentation,
                source: Box::new(e),
            })
    }

    fn run_inner(&self, rig_index: usize, augmentation: u32) -> Result<CompositeOutput, PipelineError> {
        let cfg = &self.config;
        let rig = &self.rigs[rig_index];
        let calib = &rig.calibration;
        let size = (calib.intrinsics.width, calib.intrinsics.height);
        let seed = composite_seed(cfg.seed, rig_index, augmentation);

        let cars = draw_car_count(cfg.cars_mode, cfg.max_cars, &mut stream(seed, STREAM_COUNT));
        let poses = self.sample_poses(rig, cars as usize, &mut stream(seed, STREAM_POSES))?;
        let mut catalog_rng = stream(seed, STREAM_CATALOG);
        let drawn: Vec<_> = poses
            .iter()
            .map(|_| catalog_sample(&self.catalog, &mut catalog_rng))
            .collect();
        let models: Vec<_> = drawn.iter().map(|(m, _)| m.as_ref()).collect();
        let kept = kept_after_collisions(&poses, &models)?;
        let instances: Vec<SceneInstance> = kept
            .iter()
            .enumerate()
            .map(|(n, &i)| SceneInstance {
                model: drawn[i].0.clone(),
                material: drawn[i].1,
                pose: poses[i],
                instance_id: n as u32 + 1,
            })
            .collect();

        let (env, environment) = self.choose_env(rig, &mut stream(seed, STREAM_ENV))?;
        let layer = render_layer(&instances, calib, &env, &cfg.render, seed)?;

        // Ground truth is geometric: it comes from the rendered coverage,
        // before blur spreads alpha across silhouette edges.
        let synthetic = derive_annotations(&layer, &instances);
        let real = match &rig.real_annotations {
            Some(path) => update_real_masks(&load_real_annotations(path, size)?, &layer),
            None => Vec::new(),
        };
        let post_layer = apply_chain(&layer, &cfg.postfx)?;

        let mut bg_rng = stream(seed, STREAM_BACKGROUND);
        let (real_image, background_source) = match cfg.background_mode {
            BackgroundMode::Real => (Some(self.load_rig_image(rig)?), None),
            BackgroundMode::Black => (None, None),
            BackgroundMode::RandomImage | BackgroundMode::SyntheticProxy => {
                // peek the draw resolve_background will make
                let idx = bg_rng.clone().gen_range(0..cfg.background_pool.len());
                (None, Some(cfg.background_pool[idx].clone()))
            }
        };
        let background = resolve_background(
            cfg.background_mode,
            real_image.as_ref(),
            &cfg.background_pool,
            size,
            &mut bg_rng,
        )?;
        let image = composite(&background, &post_layer)?;

        let name = rel_name(rig_index, augmentation);
        let image_rel = format!("images/{name}.png");
        let annotations = AnnotationFile {
            image: image_rel.clone(),
            instances: real
                .iter()
                .chain(&synthetic)
                .map(InstanceAnnotation::to_record)
                .collect(),
        };
        let record = CompositeRecord {
            rig_index,
            rig_id: rig.id.clone(),
            augmentation,
            seed,
            cars_drawn: cars,
            placements: instances
                .iter()
                .map(|inst| Placement {
                    instance_id: inst.instance_id,
                    model: inst.model.name.clone(),
                    category: inst.model.category,
                    material: inst.material,
                    pose: inst.pose,
                })
                .collect(),
            environment,
            background: cfg.background_mode,
            background_source,
            image: image_rel,
            annotation: format!("annotations/{name}.json"),
            real_annotations: rig.real_annotations.clone(),
        };
        Ok(CompositeOutput {
            record,
            image,
            annotations,
            layer,
            post_layer,
        })
    }

    fn load_rig_image(&self, rig: &CameraRig) -> Result<RgbImage, PipelineError> {
        let img = load_rgb(&rig.image)?;
        let k = &rig.calibration.intrinsics;
        if img.dimensions() != (k.width, k.height) {
            return Err(PipelineError::Input(format!(
                "rig {}: image is {:?} but calibration says {:?}",
                rig.id,
                img.dimensions(),
                (k.width, k.height)
            )));
        }
        Ok(img)
    }

    fn sample_poses(
        &self,
        rig: &CameraRig,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<PoseSample>, PipelineError> {
        let cfg = &self.config;
        let calib = &rig.calibration;
        let missing = || PipelineError::MissingStrategyInput {
            rig: rig.id.clone(),
            strategy: cfg.placement_strategy,
        };
        Ok(match cfg.placement_strategy {
            PlacementStrategy::Manual => {
                let path = rig.trajectories.as_ref().ok_or_else(missing)?;
                let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
                let traj = TrajectorySet::from_json_str(&text, path.display().to_string())?;
                sample_manual(&traj, &calib.plane, count, rng)?
            }
            PlacementStrategy::RoadMask => {
                let path = rig.road_mask.as_ref().ok_or_else(missing)?;
                let mask = image::open(path)
                    .map_err(|e| PipelineError::Image(path.clone(), e))?
                    .to_luma8();
                sample_road_mask(&mask, &calib.intrinsics, &calib.plane, count, rng)?
            }
            PlacementStrategy::GroundPlane => sample_ground_plane(&cfg.placement_region, &calib.plane, count, rng)?,
            PlacementStrategy::Unconstrained => sample_unconstrained(&cfg.unconstrained_volume, count, rng)?,
        })
    }

    fn choose_env(
        &self,
        rig: &CameraRig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Arc<EnvironmentMap>, EnvironmentRecord), PipelineError> {
        let cfg = &self.config;
        Ok(match cfg.env_mode {
            EnvMode::TrueMap => {
                let path = rig.env_map.clone().ok_or(EnvMapError::MissingTrueMap)?;
                let env = load_envmap_file(&path, cfg.env_gamma_decode)?;
                (
                    Arc::new(env),
                    EnvironmentRecord {
                        kind: MapKind::TrueMap,
                        source: Some(path),
                    },
                )
            }
            EnvMode::RandomMap => {
                let idx = rng.gen_range(0..self.env_pool.len());
                (
                    self.env_pool[idx].clone(),
                    EnvironmentRecord {
                        kind: MapKind::RandomMap,
                        source: Some(cfg.env_pool[idx].clone()),
                    },
                )
            }
            EnvMode::None => (
                Arc::new(EnvironmentMap::constant(NO_MAP_RADIANCE)),
                EnvironmentRecord {
                    kind: MapKind::Constant,
                    source: None,
                },
            ),
        })
    }
}

fn check_strategy_inputs(cfg: &AugmentationConfig, rig: &CameraRig) -> Result<(), PipelineError> {
    let ok = match cfg.placement_strategy {
        PlacementStrategy::Manual => rig.trajectories.is_some(),
        PlacementStrategy::RoadMask => rig.road_mask.is_some(),
        PlacementStrategy::GroundPlane | PlacementStrategy::Unconstrained => true,
    };
    if ok {
        Ok(())
    } else {
        Err(PipelineError::MissingStrategyInput {
            rig: rig.id.clone(),
            strategy: cfg.placement_strategy,
        })
    }
}

/// Loads pre-existing real instance masks; they must match the rig size.
pub fn load_real_annotations(path: &Path, size: (u32, u32)) -> Result<Vec<InstanceAnnotation>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text).map_err(|e| PipelineError::Json(path.to_path_buf(), e))?;
    file.instances
        .iter()
        .map(|rec| {
            let ann = InstanceAnnotation::from_record(rec)?;
            if (ann.mask.width, ann.mask.height) != size {
                return Err(PipelineError::Input(format!(
                    "{}: mask size {:?} differs from image size {size:?}",
                    path.display(),
                    (ann.mask.width, ann.mask.height)
                )));
            }
            Ok(InstanceAnnotation {
                origin: Origin::Real,
                ..ann
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

/// Generates `rigs × augmentations_per_image` composites into `out_dir`.
///
/// Runs on the current rayon pool; its size does not affect any output.
pub fn augment_dataset(
    config: &AugmentationConfig,
    rigs: &[CameraRig],
    out_dir: &Path,
) -> Result<AugmentationManifest, PipelineError> {
    let session = Session::new(config.clone(), rigs.to_vec())?;
    for sub in ["images", "annotations"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| PipelineError::io(&d, e))?;
    }
    let n = config.augmentations_per_image;
    let jobs: Vec<(usize, u32)> = (0..rigs.len()).flat_map(|r| (0..n).map(move |j| (r, j))).collect();
    let records = jobs
        .par_iter()
        .map(|&(r, j)| {
            let out = session.run_composite(r, j)?;
            let img_path = out_dir.join(&out.record.image);
            out.image
                .save(&img_path)
                .map_err(|e| PipelineError::Image(img_path.clone(), e))?;
            write_json(&out_dir.join(&out.record.annotation), &out.annotations)?;
            Ok(out.record)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let manifest = AugmentationManifest {
        config_fingerprint: session.fingerprint().to_string(),
        seed: config.seed,
        augmentations_per_image: n,
        rigs: rigs.iter().map(|r| r.id.clone()).collect(),
        records,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Renders composite `augmentation` of one rig and dumps every buffer.
pub fn render_debug(
    config: &AugmentationConfig,
    rigs: &[CameraRig],
    rig_index: usize,
    augmentation: u32,
    out_dir: &Path,
) -> Result<CompositeOutput, PipelineError> {
    if rig_index >= rigs.len() {
        return Err(PipelineError::Input(format!(
            "rig index {rig_index} out of range ({} rigs)",
            rigs.len()
        )));
    }
    let session = Session::new(config.clone(), rigs.to_vec())?;
    let out = session.run_composite(rig_index, augmentation)?;
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let stem = rel_name(rig_index, augmentation);
    out.layer
        .dump_debug(out_dir, &format!("{stem}_render"))
        .map_err(|e| PipelineError::Image(out_dir.to_path_buf(), e))?;
    out.post_layer
        .dump_debug(out_dir, &format!("{stem}_postfx"))
        .map_err(|e| PipelineError::Image(out_dir.to_path_buf(), e))?;
    let composite_path = out_dir.join(format!("{stem}_composite.png"));
    out.image
        .save(&composite_path)
        .map_err(|e| PipelineError::Image(composite_path, e))?;
    write_json(&out_dir.join(format!("{stem}_annotations.json")), &out.annotations)?;
    write_json(&out_dir.join(format!("{stem}_record.json")), &out.record)?;
    Ok(out)
}
