//! Equirectangular environment maps and the true/random/none lighting modes.
//!
//! Directions are in camera coordinates (y-down). The top row of the map
//! is straight up (`−y`) and the horizontal center looks along `+z`:
//!
//! ```text
//! u = atan2(x, z) / 2π + 0.5
//! v = acos(−y) / π
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, Rgb32FImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum EnvMapError {
    #[error("environment map is {0}x{1}, width must be twice the height")]
    BadAspect(u32, u32),
    #[error("environment map has negative or non-finite radiance")]
    InvalidRadiance,
    #[error("direction {0:?} is not unit length")]
    NonUnitDirection([f64; 3]),
    #[error("env mode true_map needs a per-rig environment map")]
    MissingTrueMap,
    #[error("env mode random_map needs a non-empty pool")]
    EmptyPool,
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
}

/// Lighting mode from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    #[default]
    TrueMap,
    RandomMap,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    TrueMap,
    RandomMap,
    Constant,
}

/// Radiance used when rendering without an environment map.
pub const NO_MAP_RADIANCE: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone)]
pub struct EnvironmentMap {
    width: u32,
    height: u32,
    pixels: Vec<[f32; 3]>,
    pub kind: MapKind,
    pub constant_radiance: [f64; 3],
}

impl EnvironmentMap {
    pub fn constant(radiance: [f64; 3]) -> Self {
        Self {
            width: 0,
            height: 0,
            pixels: Vec::new(),
            kind: MapKind::Constant,
            constant_radiance: radiance,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn texel(&self, x: u32, y: u32) -> [f32; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    /// The same map relabelled, e.g. as a random pick for another rig.
    pub fn with_kind(mut self, kind: MapKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Builds a map from a linear-or-encoded float raster.
///
/// With `gamma_decode` each channel is raised to 2.2.
pub fn load_envmap(image: &Rgb32FImage, gamma_decode: bool) -> Result<EnvironmentMap, EnvMapError> {
    let (w, h) = image.dimensions();
    if h == 0 || w != 2 * h {
        return Err(EnvMapError::BadAspect(w, h));
    }
    let mut pixels = Vec::with_capacity((w * h) as usize);
    for p in image.pixels() {
        let mut c = p.0;
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EnvMapError::InvalidRadiance);
        }
        if gamma_decode {
            c = c.map(|v| v.powf(2.2));
        }
        pixels.push(c);
    }
    Ok(EnvironmentMap {
        width: w,
        height: h,
        pixels,
        kind: MapKind::TrueMap,
        constant_radiance: [0.0; 3],
    })
}

/// Reads a panorama from disk. 8/16-bit images are gamma decoded when
/// `gamma_decode` is set; float images (Radiance HDR) are taken as linear.
pub fn load_envmap_file(path: &Path, gamma_decode: bool) -> Result<EnvironmentMap, EnvMapError> {
    let img = image::open(path).map_err(|source| EnvMapError::Image {
        path: path.to_owned(),
        source,
    })?;
    let is_float = matches!(img, DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_));
    load_envmap(&img.to_rgb32f(), gamma_decode && !is_float)
}

/// Bilinear radiance lookup, wrapping horizontally and clamping vertically.
pub fn sample_direction(env: &EnvironmentMap, dir: &Vec3) -> Result<[f64; 3], EnvMapError> {
    if (dir.norm() - 1.0).abs() > 1e-6 {
        return Err(EnvMapError::NonUnitDirection([dir.x, dir.y, dir.z]));
    }
    Ok(lookup(env, dir))
}

/// [`sample_direction`] without the unit-length check.
pub(crate) fn lookup(env: &EnvironmentMap, dir: &Vec3) -> [f64; 3] {
    if env.kind == MapKind::Constant {
        return env.constant_radiance;
    }
    let (u, v) = direction_to_uv(dir);
    let (w, h) = (env.width as f64, env.height as f64);
    let px = u * w - 0.5;
    let py = (v * h - 0.5).clamp(0.0, h - 1.0);
    let x0f = px.floor();
    let fx = px - x0f;
    let wi = env.width as i64;
    let x0 = (x0f as i64).rem_euclid(wi) as u32;
    let x1 = ((x0f as i64) + 1).rem_euclid(wi) as u32;
    let y0 = py.floor() as u32;
    let y1 = (y0 + 1).min(env.height - 1);
    let fy = py - f64::from(y0);
    let t = |x, y| env.texel(x, y).map(f64::from);
    let (a, b, c, d) = (t(x0, y0), t(x1, y0), t(x0, y1), t(x1, y1));
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = a[ch] + (b[ch] - a[ch]) * fx;
        let bot = c[ch] + (d[ch] - c[ch]) * fx;
        out[ch] = (top + (bot - top) * fy).max(0.0);
    }
    out
}

pub fn direction_to_uv(dir: &Vec3) -> (f64, f64) {
    let u = dir.x.atan2(dir.z) / std::f64::consts::TAU + 0.5;
    let v = (-dir.y).clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
    (u, v)
}

/// Chooses the environment for one composite.
pub fn choose_env<R: Rng + ?Sized>(
    mode: EnvMode,
    rig_map: Option<&Arc<EnvironmentMap>>,
    pool: &[Arc<EnvironmentMap>],
    rng: &mut R,
) -> Result<Arc<EnvironmentMap>, EnvMapError> {
    match mode {
        EnvMode::TrueMap => rig_map.cloned().ok_or(EnvMapError::MissingTrueMap),
        EnvMode::RandomMap => {
            if pool.is_empty() {
                return Err(EnvMapError::EmptyPool);
            }
            Ok(pool[rng.gen_range(0..pool.len())].clone())
        }
        EnvMode::None => Ok(Arc::new(EnvironmentMap::constant(NO_MAP_RADIANCE))),
    }
}

/// Like [`choose_env`], loading the chosen panorama from disk.
pub fn resolve_env<R: Rng + ?Sized>(
    mode: EnvMode,
    rig_map: Option<&Path>,
    pool: &[PathBuf],
    gamma_decode: bool,
    rng: &mut R,
) -> Result<EnvironmentMap, EnvMapError> {
    match mode {
        EnvMode::TrueMap => {
            let path = rig_map.ok_or(EnvMapError::MissingTrueMap)?;
            load_envmap_file(path, gamma_decode)
        }
        EnvMode::RandomMap => {
            if pool.is_empty() {
                return Err(EnvMapError::EmptyPool);
            }
            let path = &pool[rng.gen_range(0..pool.len())];
            Ok(load_envmap_file(path, gamma_decode)?.with_kind(MapKind::RandomMap))
        }
        EnvMode::None => Ok(EnvironmentMap::constant(NO_MAP_RADIANCE)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gray(w: u32, h: u32, v: f32) -> Rgb32FImage {
        Rgb32FImage::from_pixel(w, h, Rgb([v, v, v]))
    }

    /// Map whose texel (x, y) holds (x, y, 1).
    fn coords_map(w: u32, h: u32) -> EnvironmentMap {
        let img = Rgb32FImage::from_fn(w, h, |x, y| Rgb([x as f32, y as f32, 1.0]));
        load_envmap(&img, false).unwrap()
    }

    #[test]
    fn load_modes() {
        let env = load_envmap(&gray(512, 256, 0.5), false).unwrap();
        assert!(env.pixels.iter().all(|p| *p == [0.5; 3]));
        let env = load_envmap(&gray(512, 256, 0.5), true).unwrap();
        let expected = 0.5f32.powf(2.2);
        assert!(env.pixels.iter().all(|p| (p[0] - expected).abs() < 1e-7));
        assert!((f64::from(expected) - 0.2176).abs() < 1e-4);
        assert!(matches!(
            load_envmap(&gray(513, 256, 0.5), false),
            Err(EnvMapError::BadAspect(513, 256))
        ));
        assert!(matches!(
            load_envmap(&gray(8, 4, -1.0), false),
            Err(EnvMapError::InvalidRadiance)
        ));
    }

    #[test]
    fn pole_and_center_anchors() {
        let env = coords_map(64, 32);
        let up = sample_direction(&env, &Vec3::new(0.0, -1.0, 0.0)).unwrap();
        assert_eq!(up[1], 0.0, "top row");
        let down = sample_direction(&env, &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(down[1], 31.0, "bottom row");
        let (u, v) = direction_to_uv(&Vec3::new(0.0, 0.0, 1.0));
        assert_eq!((u, v), (0.5, 0.5));
        // u*w - 0.5 = 31.5 is halfway between texels 31 and 32
        let fwd = sample_direction(&env, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((fwd[0] - 31.5).abs() < 1e-12 && (fwd[1] - 15.5).abs() < 1e-12);
    }

    #[test]
    fn constant_map() {
        let env = EnvironmentMap::constant([1.0, 2.0, 3.0]);
        for d in [Vec3::x(), Vec3::y(), -Vec3::z(), Vec3::new(1.0, 1.0, 1.0).normalize()] {
            assert_eq!(sample_direction(&env, &d).unwrap(), [1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn non_unit_direction() {
        let env = EnvironmentMap::constant([1.0; 3]);
        assert!(matches!(
            sample_direction(&env, &Vec3::new(0.0, 0.0, 2.0)),
            Err(EnvMapError::NonUnitDirection(_))
        ));
    }

    #[test]
    fn horizontal_wrap_is_seamless() {
        let env = coords_map(64, 32);
        // just either side of the seam behind the camera, u ≈ 0 and u ≈ 1
        let a = sample_direction(&env, &Vec3::new(1e-9, 0.0, -1.0).normalize()).unwrap();
        let b = sample_direction(&env, &Vec3::new(-1e-9, 0.0, -1.0).normalize()).unwrap();
        for ch in 0..3 {
            assert!((a[ch] - b[ch]).abs() < 1e-4, "{a:?} vs {b:?}");
        }
        // blends texel 63 and texel 0
        assert!((a[0] - 31.5).abs() < 1e-4);
    }

    #[test]
    fn env_mode_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = choose_env(EnvMode::None, None, &[], &mut rng).unwrap();
        assert_eq!(none.kind, MapKind::Constant);
        assert_eq!(lookup(&none, &Vec3::x()), NO_MAP_RADIANCE);
        assert!(matches!(
            choose_env(EnvMode::TrueMap, None, &[], &mut rng),
            Err(EnvMapError::MissingTrueMap)
        ));
        assert!(matches!(
            choose_env(EnvMode::RandomMap, None, &[], &mut rng),
            Err(EnvMapError::EmptyPool)
        ));
        let one = Arc::new(EnvironmentMap::constant([0.25; 3]));
        let got = choose_env(EnvMode::RandomMap, None, std::slice::from_ref(&one), &mut rng).unwrap();
        assert!(Arc::ptr_eq(&got, &one));
        let rig = Arc::new(EnvironmentMap::constant([0.75; 3]));
        let got = choose_env(EnvMode::TrueMap, Some(&rig), &[one], &mut rng).unwrap();
        assert!(Arc::ptr_eq(&got, &rig));
    }

    #[test]
    fn resolve_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pano.png");
        image::RgbImage::from_pixel(16, 8, Rgb([255, 255, 255]))
            .save(&path)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let env = resolve_env(EnvMode::TrueMap, Some(&path), &[], true, &mut rng).unwrap();
        assert_eq!(env.dimensions(), (16, 8));
        assert_eq!(lookup(&env, &Vec3::z()), [1.0; 3]);
        let env = resolve_env(EnvMode::RandomMap, None, &[path], true, &mut rng).unwrap();
        assert_eq!(env.kind, MapKind::RandomMap);
    }
}
