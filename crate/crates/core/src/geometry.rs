//! Pinhole camera, ground plane and the ground-to-image homography.
//!
//! Camera coordinates are x-right, y-down, z-forward in meters. A camera
//! mounted `h` meters above flat ground sees the plane `y = h`, stored as
//! normal `(0, -1, 0)` and offset `-h`. Points on the plane are addressed by
//! 2D ground coordinates `(x, z)` in meters, see [`GroundPlane::lift`].

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("ray is parallel to the ground plane")]
    RayParallelToPlane,
    #[error("ray hits the ground plane behind the camera")]
    IntersectionBehindCamera,
    #[error("ground plane passes through the camera origin")]
    DegeneratePlane,
    #[error("homography is singular")]
    SingularHomography,
    #[error("birdseye extent is empty")]
    EmptyExtent,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid ground plane: {0}")]
    InvalidPlane(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(focal: [f64; 2], center: [f64; 2], size: [u32; 2]) -> Result<Self, GeometryError> {
        let k = Self {
            focal_x: focal[0],
            focal_y: focal[1],
            center_x: center[0],
            center_y: center[1],
            width: size[0],
            height: size[1],
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.focal_x, self.focal_y
            )));
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        if !(0.0..w).contains(&self.center_x) || !(0.0..h).contains(&self.center_y) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.center_x, self.center_y, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal_x,
            0.0,
            self.center_x,
            0.0,
            self.focal_y,
            self.center_y,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Unnormalized camera ray direction through a pixel, with `z = 1`.
    pub fn ray_direction(&self, pixel: [f64; 2]) -> Vec3 {
        Vec3::new(
            (pixel[0] - self.center_x) / self.focal_x,
            (pixel[1] - self.center_y) / self.focal_y,
            1.0,
        )
    }
}

/// The plane `{ p : normal · p = offset }` in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl GroundPlane {
    pub fn new(normal: [f64; 3], offset: f64) -> Result<Self, GeometryError> {
        let p = Self { normal, offset };
        p.validate()?;
        Ok(p)
    }

    /// Flat ground `height` meters below the camera.
    pub fn from_height(height: f64) -> Self {
        Self {
            normal: [0.0, -1.0, 0.0],
            offset: -height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.normal_vec().norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPlane(format!(
                "normal has length {n}, expected 1"
            )));
        }
        if self.offset == 0.0 || !self.offset.is_finite() {
            return Err(GeometryError::DegeneratePlane);
        }
        Ok(())
    }

    pub fn normal_vec(&self) -> Vec3 {
        Vec3::from(self.normal)
    }

    /// Signed distance `normal·p − offset`.
    pub fn residual(&self, p: &Vec3) -> f64 {
        self.normal_vec().dot(p) - self.offset
    }

    /// Unit normal pointing from the plane towards the camera.
    pub fn up(&self) -> Vec3 {
        let n = self.normal_vec();
        if self.offset < 0.0 {
            n
        } else {
            -n
        }
    }

    /// Orthonormal in-plane basis `(origin, e_x, e_z)`.
    ///
    /// `origin` is the foot of the perpendicular from the camera, `e_x` is the
    /// camera x-axis projected onto the plane and `e_z = up × e_x`. For the
    /// canonical plane this is `(0, h, 0)`, `+x`, `+z`.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let n = self.normal_vec();
        let up = self.up();
        let origin = n * self.offset;
        let mut ex = Vec3::x() - n * n.x;
        if ex.norm() < 1e-6 {
            // camera x-axis is (nearly) the plane normal
            ex = Vec3::z() - n * n.z;
        }
        let ex = ex.normalize();
        let ez = up.cross(&ex);
        (origin, ex, ez)
    }

    /// Camera-space point for ground coordinates `(x, z)`.
    pub fn lift(&self, ground: [f64; 2]) -> Vec3 {
        let (o, ex, ez) = self.basis();
        o + ex * ground[0] + ez * ground[1]
    }

    /// Ground coordinates of the orthogonal projection of `p` onto the plane.
    pub fn to_ground(&self, p: &Vec3) -> [f64; 2] {
        let (o, ex, ez) = self.basis();
        let d = p - o;
        [d.dot(&ex), d.dot(&ez)]
    }

    /// Ray/plane intersection parameter `t` for `origin + t·dir`.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let n = self.normal_vec();
        let denom = n.dot(dir);
        if denom.abs() <= 1e-12 * dir.norm() {
            return None;
        }
        Some((self.offset - n.dot(origin)) / denom)
    }
}

/// Intrinsics and ground plane of one capture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    pub plane: GroundPlane,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationJson {
    focal: [f64; 2],
    center: [f64; 2],
    size: [u32; 2],
    plane: GroundPlane,
}

impl Calibration {
    pub fn new(intrinsics: CameraIntrinsics, plane: GroundPlane) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        plane.validate()?;
        Ok(Self { intrinsics, plane })
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self, CalibrationParseError> {
        let raw: CalibrationJson = serde_json::from_value(value)?;
        let k = CameraIntrinsics::new(raw.focal, raw.center, raw.size)?;
        Ok(Self::new(k, raw.plane)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self, CalibrationParseError> {
        Self::from_json_value(serde_json::from_str(text)?)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let k = &self.intrinsics;
        serde_json::to_value(CalibrationJson {
            focal: [k.focal_x, k.focal_y],
            center: [k.center_x, k.center_y],
            size: [k.width, k.height],
            plane: self.plane,
        })
        .expect("calibration serializes")
    }
}

#[derive(Debug, Error)]
pub enum CalibrationParseError {
    #[error("malformed calibration JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn project(point: &Vec3, k: &CameraIntrinsics) -> Result<[f64; 2], GeometryError> {
    if !(point.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(point.z));
    }
    Ok([
        k.focal_x * point.x / point.z + k.center_x,
        k.focal_y * point.y / point.z + k.center_y,
    ])
}

pub fn backproject_to_plane(pixel: [f64; 2], k: &CameraIntrinsics, plane: &GroundPlane) -> Result<Vec3, GeometryError> {
    let dir = k.ray_direction(pixel);
    let t = plane
        .intersect_ray(&Vec3::zeros(), &dir)
        .ok_or(GeometryError::RayParallelToPlane)?;
    if !(t > 0.0) {
        return Err(GeometryError::IntersectionBehindCamera);
    }
    Ok(dir * t)
}

/// Projective map from ground coordinates `(x, z, 1)` to image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub matrix: Matrix3<f64>,
}

impl Homography {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self, GeometryError> {
        let det = matrix.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(GeometryError::SingularHomography);
        }
        Ok(Self { matrix })
    }

    /// Applies the map; `None` when the point lands on the line at infinity.
    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        apply_h(&self.matrix, p).map(|(q, _)| q)
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self.matrix.try_inverse().ok_or(GeometryError::SingularHomography)?;
        Ok(Self { matrix: inv })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            matrix: self.matrix * s,
        }
    }
}

fn apply_h(m: &Matrix3<f64>, p: [f64; 2]) -> Option<([f64; 2], f64)> {
    let v = m * Vec3::new(p[0], p[1], 1.0);
    if v.z == 0.0 || !v.z.is_finite() {
        return None;
    }
    Some(([v.x / v.z, v.y / v.z], v.z))
}

pub fn ground_homography(k: &CameraIntrinsics, plane: &GroundPlane) -> Result<Homography, GeometryError> {
    if plane.offset == 0.0 {
        return Err(GeometryError::DegeneratePlane);
    }
    let (o, ex, ez) = plane.basis();
    let m = k.matrix() * Matrix3::from_columns(&[ex, ez, o]);
    Homography::new(m).map_err(|_| GeometryError::DegeneratePlane)
}

/// Axis-aligned rectangle in ground coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl GroundExtent {
    pub fn is_empty(&self) -> bool {
        !(self.x_max > self.x_min && self.z_max > self.z_min)
    }
}

/// Pixel grid laid over a ground extent: column `u` runs along `+x` from
/// `x_min` and row `v` along `+z` from `z_min`, so pixel `(0, 0)` is the
/// near left corner. Pixel centers sit on integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirdseyeGrid {
    pub extent: GroundExtent,
    pub meters_per_pixel: f64,
}

impl BirdseyeGrid {
    pub fn new(extent: GroundExtent, meters_per_pixel: f64) -> Result<Self, GeometryError> {
        if extent.is_empty() || !(meters_per_pixel > 0.0) {
            return Err(GeometryError::EmptyExtent);
        }
        let g = Self {
            extent,
            meters_per_pixel,
        };
        if g.width() == 0 || g.height() == 0 {
            return Err(GeometryError::EmptyExtent);
        }
        Ok(g)
    }

    pub fn width(&self) -> u32 {
        ((self.extent.x_max - self.extent.x_min) / self.meters_per_pixel).round() as u32
    }

    pub fn height(&self) -> u32 {
        ((self.extent.z_max - self.extent.z_min) / self.meters_per_pixel).round() as u32
    }

    /// Ground point at pixel `(0, 0)`.
    pub fn origin(&self) -> [f64; 2] {
        [self.extent.x_min, self.extent.z_min]
    }

    pub fn pixel_to_ground(&self, pixel: [f64; 2]) -> [f64; 2] {
        let o = self.origin();
        [
            o[0] + pixel[0] * self.meters_per_pixel,
            o[1] + pixel[1] * self.meters_per_pixel,
        ]
    }

    pub fn ground_to_pixel(&self, ground: [f64; 2]) -> [f64; 2] {
        let o = self.origin();
        [
            (ground[0] - o[0]) / self.meters_per_pixel,
            (ground[1] - o[1]) / self.meters_per_pixel,
        ]
    }
}

pub const SENTINEL: Rgb<u8> = Rgb([0, 0, 0]);

/// Resamples `image` onto a top-down grid over the ground plane.
///
/// Each output pixel is bilinearly sampled at the image position of its
/// ground point. Ground points behind the camera or outside the source are
/// filled with opaque black.
pub fn warp_birdseye(
    image: &RgbImage,
    h: &Homography,
    meters_per_pixel: f64,
    extent: &GroundExtent,
) -> Result<RgbImage, GeometryError> {
    let grid = BirdseyeGrid::new(*extent, meters_per_pixel)?;
    let m = normalize_scale(&h.matrix);
    let (w, ht) = (grid.width(), grid.height());
    let mut out = RgbImage::from_pixel(w, ht, SENTINEL);
    for (i, j, px) in out.enumerate_pixels_mut() {
        let g = grid.pixel_to_ground([f64::from(i), f64::from(j)]);
        let Some((uv, wz)) = apply_h(&m, g) else {
            continue;
        };
        // w is the camera depth of the ground point
        if wz <= 0.0 {
            continue;
        }
        if let Some(c) = sample_bilinear(image, uv) {
            *px = c;
        }
    }
    Ok(out)
}

/// Rescales by a power of two and sign so the largest entry lies in
/// `[1, 2)`; exact in floating point, so `s·H` and `H` agree whenever the
/// scaling itself was exact.
fn normalize_scale(m: &Matrix3<f64>) -> Matrix3<f64> {
    let (idx, max) = m.iter().enumerate().fold(
        (0, 0.0f64),
        |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc },
    );
    if max == 0.0 {
        return *m;
    }
    let exp = max.log2().floor();
    let s = 2f64.powi(-(exp as i32)) * m[idx].signum();
    m * s
}

fn sample_bilinear(image: &RgbImage, uv: [f64; 2]) -> Option<Rgb<u8>> {
    let (w, h) = (f64::from(image.width()), f64::from(image.height()));
    let [u, v] = uv;
    if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
        return None;
    }
    let x0 = u.floor() as u32;
    let y0 = v.floor() as u32;
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let fx = u - f64::from(x0);
    let fy = v - f64::from(y0);
    let p = |x, y| image.get_pixel(x, y).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = f64::from(a[ch]) * (1.0 - fx) + f64::from(b[ch]) * fx;
        let bot = f64::from(c[ch]) * (1.0 - fx) + f64::from(d[ch]) * fx;
        out[ch] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(Rgb(out))
}
