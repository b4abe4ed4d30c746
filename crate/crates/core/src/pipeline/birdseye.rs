//! Birdseye export for the trajectory annotator, and the conversion of its
//! pixel-space polylines back to ground meters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rig::CameraRig;
use super::PipelineError;
use crate::compositor::load_rgb;
use crate::geometry::{ground_homography, warp_birdseye, BirdseyeGrid, GeometryError, GroundExtent};
use crate::placement::TrajectoryFile;

/// Sidecar describing how birdseye pixels map to ground meters.
///
/// Pixel `(u, v)` sits at ground `(origin[0] + u·mpp, origin[1] + v·mpp)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirdseyeMetadata {
    pub rig_id: String,
    pub meters_per_pixel: f64,
    pub extent: GroundExtent,
    pub origin: [f64; 2],
    pub width: u32,
    pub height: u32,
}

impl BirdseyeMetadata {
    pub fn new(rig_id: &str, grid: &BirdseyeGrid) -> Self {
        Self {
            rig_id: rig_id.to_string(),
            meters_per_pixel: grid.meters_per_pixel,
            extent: grid.extent,
            origin: grid.origin(),
            width: grid.width(),
            height: grid.height(),
        }
    }

    pub fn grid(&self) -> Result<BirdseyeGrid, GeometryError> {
        BirdseyeGrid::new(self.extent, self.meters_per_pixel)
    }

    /// Checks that the recorded size and origin agree with the extent.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let g = self.grid()?;
        if g.width() != self.width || g.height() != self.height || g.origin() != self.origin {
            return Err(GeometryError::InvalidPlane(format!(
                "metadata for {} implies a {}x{} raster at {:?}",
                self.rig_id,
                g.width(),
                g.height(),
                g.origin()
            )));
        }
        Ok(())
    }

    pub fn pixel_to_ground(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + p[0] * self.meters_per_pixel,
            self.origin[1] + p[1] * self.meters_per_pixel,
        ]
    }

    pub fn ground_to_pixel(&self, g: [f64; 2]) -> [f64; 2] {
        [
            (g[0] - self.origin[0]) / self.meters_per_pixel,
            (g[1] - self.origin[1]) / self.meters_per_pixel,
        ]
    }

    /// Converts annotator polylines (birdseye pixels) to a trajectory file.
    pub fn trajectories_from_pixels(&self, polylines: &[Vec<[f64; 2]>]) -> TrajectoryFile {
        TrajectoryFile {
            meters_per_pixel: Some(self.meters_per_pixel),
            extent: Some(self.extent),
            polylines: polylines
                .iter()
                .map(|line| line.iter().map(|&p| self.pixel_to_ground(p)).collect())
                .collect(),
            rig_id: Some(self.rig_id.clone()),
        }
    }
}

pub const DEFAULT_EXTENT: GroundExtent = GroundExtent {
    x_min: -20.0,
    x_max: 20.0,
    z_min: 4.0,
    z_max: 64.0,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BirdseyeExport {
    pub image: PathBuf,
    pub metadata: PathBuf,
    pub meta: BirdseyeMetadata,
}

/// Writes `<rig>_birdseye.png` and `<rig>_birdseye.json` into `out_dir`.
pub fn export_birdseye(
    rig: &CameraRig,
    meters_per_pixel: f64,
    extent: &GroundExtent,
    out_dir: &Path,
) -> Result<BirdseyeExport, PipelineError> {
    let calib = &rig.calibration;
    let grid = BirdseyeGrid::new(*extent, meters_per_pixel)?;
    let h = ground_homography(&calib.intrinsics, &calib.plane)?;
    let source = load_rgb(&rig.image)?;
    let warped = warp_birdseye(&source, &h, meters_per_pixel, extent)?;
    let meta = BirdseyeMetadata::new(&rig.id, &grid);
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let image = out_dir.join(format!("{}_birdseye.png", rig.id));
    let metadata = out_dir.join(format!("{}_birdseye.json", rig.id));
    warped
        .save(&image)
        .map_err(|e| PipelineError::Image(image.clone(), e))?;
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&metadata, text + "\n").map_err(|e| PipelineError::io(&metadata, e))?;
    Ok(BirdseyeExport { image, metadata, meta })
}
