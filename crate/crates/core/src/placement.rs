//! Car pose sampling: trajectories, road masks, the ground plane and
//! unconstrained 3D placement, plus footprint-based collision filtering.

use std::f64::consts::{PI, TAU};

use image::GrayImage;
use nalgebra::{Matrix3, UnitQuaternion};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{footprint, CarModel, OrientedRect};
use crate::geometry::{backproject_to_plane, CameraIntrinsics, GroundExtent, GroundPlane, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("no trajectories to sample from")]
    EmptyTrajectorySet,
    #[error("road mask has no pixels on the visible ground plane")]
    EmptyRoadMask,
    #[error("road mask is {got:?}, camera image is {expected:?}")]
    MaskDimensionMismatch { got: (u32, u32), expected: (u32, u32) },
    #[error("invalid trajectory set: {0}")]
    InvalidTrajectory(String),
    #[error("invalid placement bounds: {0}")]
    InvalidBounds(String),
    #[error("{0} poses but {1} models")]
    LengthMismatch(usize, usize),
}

/// A placed object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoseSample {
    /// Standing on the ground plane, rotated by `yaw` about the plane normal.
    OnPlane {
        /// Camera coordinates of the ground contact point.
        position: [f64; 3],
        /// Same point in ground-plane coordinates `(x, z)`.
        ground: [f64; 2],
        /// Heading in `[0, 2π)`; 0 faces ground `+z`, π/2 faces `+x`.
        yaw: f64,
    },
    /// Anywhere, with an arbitrary rotation.
    Free {
        position: [f64; 3],
        /// Unit quaternion `(w, x, y, z)` in camera coordinates.
        rotation: [f64; 4],
    },
}

impl PoseSample {
    pub fn on_plane(plane: &GroundPlane, ground: [f64; 2], yaw: f64) -> Self {
        let p = plane.lift(ground);
        PoseSample::OnPlane {
            position: [p.x, p.y, p.z],
            ground,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn position(&self) -> Vec3 {
        match self {
            PoseSample::OnPlane { position, .. } | PoseSample::Free { position, .. } => Vec3::from(*position),
        }
    }

    /// Linear part and translation of the model-to-camera transform.
    ///
    /// Proper rotation plus translation. Model up follows the plane's up
    /// and model `+z` the heading; model `+x` is `up × forward`, the car's
    /// right as seen from its front. Free poses apply their quaternion after
    /// turning the model half a turn about `z`, which puts model up on the
    /// camera's `−y`.
    pub fn model_to_camera(&self, plane: &GroundPlane) -> (Matrix3<f64>, Vec3) {
        match *self {
            PoseSample::OnPlane { yaw, .. } => {
                let (_, ex, ez) = plane.basis();
                let (s, c) = yaw.sin_cos();
                let side = ez * s - ex * c;
                let forward = ex * s + ez * c;
                (Matrix3::from_columns(&[side, plane.up(), forward]), self.position())
            }
            PoseSample::Free { rotation, .. } => {
                let [w, x, y, z] = rotation;
                let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
                let flip = Matrix3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0));
                (q.to_rotation_matrix().into_inner() * flip, self.position())
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Polylines of free lanes in ground coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub polylines: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
}

/// On-disk trajectory file as written by the birdseye annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meters_per_pixel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<GroundExtent>,
    pub polylines: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig_id: Option<String>,
}

impl TrajectorySet {
    pub fn new(polylines: Vec<Vec<[f64; 2]>>, source: impl Into<String>) -> Result<Self, PlacementError> {
        let set = Self {
            polylines,
            source: source.into(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        for (i, line) in self.polylines.iter().enumerate() {
            if line.len() < 2 {
                return Err(PlacementError::InvalidTrajectory(format!(
                    "polyline {i} has fewer than 2 points"
                )));
            }
            if line.iter().flatten().any(|v| !v.is_finite()) {
                return Err(PlacementError::InvalidTrajectory(format!(
                    "polyline {i} has a non-finite coordinate"
                )));
            }
            if line.windows(2).any(|w| w[0] == w[1]) {
                return Err(PlacementError::InvalidTrajectory(format!(
                    "polyline {i} repeats a point"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, source: impl Into<String>) -> Result<Self, PlacementError> {
        let file: TrajectoryFile =
            serde_json::from_str(text).map_err(|e| PlacementError::InvalidTrajectory(e.to_string()))?;
        Self::new(file.polylines, source)
    }

    fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        self.polylines.iter().flat_map(|l| l.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn total_length(&self) -> f64 {
        self.segments().map(|(a, b)| seg_len(a, b)).sum()
    }
}

fn seg_len(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Heading of the direction `a → b`, measured from ground `+z` towards `+x`.
pub fn segment_angle(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).atan2(b[1] - a[1])
}

/// Points uniformly by arc length along the trajectories, headed along the
/// segment in either direction with equal probability.
pub fn sample_manual<R: Rng + ?Sized>(
    traj: &TrajectorySet,
    plane: &GroundPlane,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PoseSample>, PlacementError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    traj.validate()?;
    let segments: Vec<_> = traj.segments().collect();
    let total = traj.total_length();
    if segments.is_empty() || !(total > 0.0) {
        return Err(PlacementError::EmptyTrajectorySet);
    }
    let mut poses = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s = rng.gen::<f64>() * total;
        let mut chosen = *segments.last().unwrap();
        let mut frac = 1.0;
        for &(a, b) in &segments {
            let len = seg_len(a, b);
            if s < len {
                chosen = (a, b);
                frac = s / len;
                break;
            }
            s -= len;
        }
        let (a, b) = chosen;
        let ground = [a[0] + (b[0] - a[0]) * frac, a[1] + (b[1] - a[1]) * frac];
        let flip = if rng.gen_bool(0.5) { PI } else { 0.0 };
        poses.push(PoseSample::on_plane(plane, ground, segment_angle(a, b) + flip));
    }
    Ok(poses)
}

/// Back-projects uniformly drawn road pixels onto the ground plane.
///
/// Nonzero mask pixels are road. Pixel centers are at integer coordinates.
pub fn sample_road_mask<R: Rng + ?Sized>(
    mask: &GrayImage,
    k: &CameraIntrinsics,
    plane: &GroundPlane,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PoseSample>, PlacementError> {
    if mask.dimensions() != (k.width, k.height) {
        return Err(PlacementError::MaskDimensionMismatch {
            got: mask.dimensions(),
            expected: (k.width, k.height),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<Vec3> = mask
        .enumerate_pixels()
        .filter(|(_, _, p)| p.0[0] != 0)
        .filter_map(|(x, y, _)| backproject_to_plane([f64::from(x), f64::from(y)], k, plane).ok())
        .collect();
    if candidates.is_empty() {
        return Err(PlacementError::EmptyRoadMask);
    }
    Ok((0..count)
        .map(|_| {
            let p = candidates[rng.gen_range(0..candidates.len())];
            let yaw = rng.gen::<f64>() * TAU;
            PoseSample::OnPlane {
                position: [p.x, p.y, p.z],
                ground: plane.to_ground(&p),
                yaw: wrap_angle(yaw),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    #[serde(default = "default_max_count")]
    pub max_count: u32,
}

fn default_max_count() -> u32 {
    64
}

impl Default for PlacementRegion {
    fn default() -> Self {
        Self {
            x_min: -8.0,
            x_max: 8.0,
            z_min: 4.0,
            z_max: 60.0,
            max_count: default_max_count(),
        }
    }
}

impl PlacementRegion {
    pub fn validate(&self) -> Result<(), PlacementError> {
        if !(self.x_min < self.x_max && self.z_min < self.z_max) {
            return Err(PlacementError::InvalidBounds(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Uniform `(x, z)` in the region and uniform yaw; at most
/// `region.max_count` poses are produced.
pub fn sample_ground_plane<R: Rng + ?Sized>(
    region: &PlacementRegion,
    plane: &GroundPlane,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PoseSample>, PlacementError> {
    region.validate()?;
    let n = count.min(region.max_count as usize);
    Ok((0..n)
        .map(|_| {
            let x = rng.gen_range(region.x_min..region.x_max);
            let z = rng.gen_range(region.z_min..region.z_max);
            let yaw = rng.gen::<f64>() * TAU;
            PoseSample::on_plane(plane, [x, z], yaw)
        })
        .collect())
}

/// Axis-aligned box in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for VolumeBounds {
    fn default() -> Self {
        Self {
            min: [-8.0, -2.0, 4.0],
            max: [8.0, 1.5, 60.0],
        }
    }
}

/// Uniform position in the box and a uniformly distributed rotation.
pub fn sample_unconstrained<R: Rng + ?Sized>(
    bounds: &VolumeBounds,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PoseSample>, PlacementError> {
    if (0..3).any(|i| !(bounds.min[i] < bounds.max[i])) {
        return Err(PlacementError::InvalidBounds(format!("{bounds:?}")));
    }
    Ok((0..count)
        .map(|_| {
            let position = [0, 1, 2].map(|i| rng.gen_range(bounds.min[i]..bounds.max[i]));
            PoseSample::Free {
                position,
                rotation: uniform_quaternion(rng),
            }
        })
        .collect())
}

/// Shoemake's subgroup algorithm; returns `(w, x, y, z)`.
pub fn uniform_quaternion<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (s2, c2) = (TAU * u2).sin_cos();
    let (s3, c3) = (TAU * u3).sin_cos();
    [b * c3, a * s2, a * c2, b * s3]
}

/// Indices of poses kept by greedy, order-preserving footprint filtering.
/// Free poses are always kept and never block others.
pub fn kept_after_collisions(poses: &[PoseSample], models: &[&CarModel]) -> Result<Vec<usize>, PlacementError> {
    if poses.len() != models.len() {
        return Err(PlacementError::LengthMismatch(poses.len(), models.len()));
    }
    let mut accepted: Vec<OrientedRect> = Vec::new();
    let mut kept = Vec::new();
    for (i, (pose, model)) in poses.iter().zip(models).enumerate() {
        match footprint(model, pose) {
            Ok(rect) => {
                if accepted.iter().all(|a| !a.intersects(&rect)) {
                    accepted.push(rect);
                    kept.push(i);
                }
            }
            Err(_) => kept.push(i),
        }
    }
    Ok(kept)
}

pub fn filter_collisions(poses: &[PoseSample], models: &[&CarModel]) -> Result<Vec<PoseSample>, PlacementError> {
    Ok(kept_after_collisions(poses, models)?
        .into_iter()
        .map(|i| poses[i])
        .collect())
}
