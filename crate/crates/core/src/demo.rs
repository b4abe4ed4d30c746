//! Procedural stand-ins for real captures, used by the `demo` subcommand
//! and the test suites.
//!
//! Each rig gets a rendered street background with a few painted "real"
//! cars and their masks, a sky panorama, lane trajectories and a road mask.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::compositor::{encode_display, AnnotationFile, BinaryMask, InstanceAnnotation, Origin};
use crate::geometry::{project, Calibration, CameraIntrinsics, GroundPlane, Vec3};
use crate::placement::TrajectoryFile;

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub rigs: usize,
    pub width: u32,
    pub height: u32,
    pub real_cars: usize,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            rigs: 5,
            width: 512,
            height: 256,
            real_cars: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoFixture {
    pub rigs: PathBuf,
    pub config: PathBuf,
}

pub const LANES: [f64; 3] = [-3.5, 0.0, 3.5];
pub const ROAD_HALF_WIDTH: f64 = 6.0;

/// Calibration of demo rig `i`: slight pitch and height changes per rig.
pub fn demo_calibration(i: usize, width: u32, height: u32) -> Calibration {
    let f = 0.8 * f64::from(width);
    let k = CameraIntrinsics::new(
        [f, f],
        [f64::from(width) / 2.0, 0.42 * f64::from(height)],
        [width, height],
    )
    .expect("demo intrinsics are valid");
    let pitch = 0.01 * (i % 3) as f64;
    let cam_height = 1.5 + 0.05 * (i % 4) as f64;
    let normal = [0.0, -pitch.cos(), pitch.sin()];
    Calibration::new(k, GroundPlane::new(normal, -cam_height).expect("unit normal")).expect("valid demo rig")
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn rgb(c: [f64; 3]) -> Rgb<u8> {
    Rgb(c.map(encode_display))
}

/// Screen rectangle covered by a car-sized box standing at `ground`.
fn box_rect(calib: &Calibration, ground: [f64; 2], size: [f64; 3]) -> Option<[u32; 4]> {
    let plane = &calib.plane;
    let (_, ex, ez) = plane.basis();
    let up = plane.up();
    let base = plane.lift(ground);
    let k = &calib.intrinsics;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for sx in [-0.5, 0.5] {
        for sz in [-0.5, 0.5] {
            for sy in [0.0, 1.0] {
                let p: Vec3 = base + ex * (sx * size[1]) + ez * (sz * size[0]) + up * (sy * size[2]);
                let [u, v] = project(&p, k).ok()?;
                x0 = x0.min(u);
                y0 = y0.min(v);
                x1 = x1.max(u);
                y1 = y1.max(v);
            }
        }
    }
    let clamp_x = |v: f64| v.round().clamp(0.0, f64::from(k.width)) as u32;
    let clamp_y = |v: f64| v.round().clamp(0.0, f64::from(k.height)) as u32;
    let (a, b, c, d) = (clamp_x(x0), clamp_y(y0), clamp_x(x1), clamp_y(y1));
    (c > a && d > b).then_some([a, b, c - a, d - b])
}

/// Street scene seen through `calib`, with painted real cars.
pub fn street_image(calib: &Calibration, real_cars: &[[u32; 4]], shade: f64) -> RgbImage {
    let k = &calib.intrinsics;
    let plane = &calib.plane;
    let mut img = RgbImage::new(k.width, k.height);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let dir = k.ray_direction([f64::from(x), f64::from(y)]);
        let hit = plane.intersect_ray(&Vec3::zeros(), &dir).filter(|&t| t > 0.0);
        let color = match hit {
            Some(t) if t * dir.norm() < 400.0 => {
                let [gx, gz] = plane.to_ground(&(dir * t));
                let lane_line =
                    LANES.windows(2).any(|w| (gx - 0.5 * (w[0] + w[1])).abs() < 0.08) && gz.rem_euclid(6.0) < 3.0;
                let fog = (gz / 120.0).clamp(0.0, 0.6);
                let base = if gx.abs() < ROAD_HALF_WIDTH {
                    if lane_line {
                        [0.8, 0.8, 0.75]
                    } else {
                        let grain = 0.01 * ((gx * 7.0).sin() * (gz * 5.0).cos());
                        [0.09 + grain, 0.09 + grain, 0.1 + grain]
                    }
                } else if gx.abs() < ROAD_HALF_WIDTH + 2.5 {
                    [0.3, 0.28, 0.26]
                } else {
                    [0.08, 0.2, 0.05]
                };
                lerp(base, [0.5, 0.55, 0.6], fog)
            }
            _ => {
                let h = (f64::from(y) / f64::from(k.height)).clamp(0.0, 1.0);
                lerp([0.15, 0.3, 0.7], [0.6, 0.7, 0.85], h)
            }
        };
        *px = rgb(color.map(|c| c * shade));
    }
    for (n, r) in real_cars.iter().enumerate() {
        let body = [[0.3, 0.02, 0.02], [0.02, 0.1, 0.3], [0.4, 0.4, 0.4]][n % 3];
        for y in r[1]..r[1] + r[3] {
            for x in r[0]..r[0] + r[2] {
                let window = y < r[1] + r[3] / 3;
                img.put_pixel(x, y, rgb(if window { [0.05, 0.06, 0.08] } else { body }));
            }
        }
    }
    img
}

/// Equirectangular sky: blue gradient, a sun, gray ground below the horizon.
pub fn sky_panorama(width: u32, sun_azimuth: f64) -> RgbImage {
    let height = width / 2;
    RgbImage::from_fn(width, height, |x, y| {
        let u = (f64::from(x) + 0.5) / f64::from(width);
        let v = (f64::from(y) + 0.5) / f64::from(height);
        let phi = (u - 0.5) * std::f64::consts::TAU;
        let theta = v * std::f64::consts::PI;
        if theta > std::f64::consts::FRAC_PI_2 {
            return rgb([0.25, 0.24, 0.22]);
        }
        let sun = (phi - sun_azimuth).abs() < 0.15 && (theta - 0.6).abs() < 0.15;
        if sun {
            rgb([1.0, 0.98, 0.9])
        } else {
            rgb(lerp(
                [0.25, 0.45, 0.85],
                [0.75, 0.82, 0.9],
                theta / std::f64::consts::FRAC_PI_2,
            ))
        }
    })
}

pub fn road_mask(calib: &Calibration) -> GrayImage {
    let k = &calib.intrinsics;
    GrayImage::from_fn(k.width, k.height, |x, y| {
        let dir = k.ray_direction([f64::from(x), f64::from(y)]);
        let on_road = calib
            .plane
            .intersect_ray(&Vec3::zeros(), &dir)
            .filter(|&t| t > 0.0)
            .map(|t| calib.plane.to_ground(&(dir * t)))
            .is_some_and(|[gx, gz]| gx.abs() < ROAD_HALF_WIDTH - 1.0 && (5.0..60.0).contains(&gz));
        Luma([if on_road { 255 } else { 0 }])
    })
}

pub fn lane_trajectories(rig_id: &str) -> TrajectoryFile {
    TrajectoryFile {
        meters_per_pixel: None,
        extent: None,
        polylines: LANES
            .iter()
            .map(|&x| vec![[x, 6.0], [x, 25.0], [x + 0.3, 45.0]])
            .collect(),
        rig_id: Some(rig_id.to_string()),
    }
}

fn write(path: &Path, text: String) -> std::io::Result<()> {
    std::fs::write(path, text + "\n")
}

fn img_err(e: image::ImageError) -> std::io::Error {
    std::io::Error::other(e)
}

/// Writes a complete demo dataset into `dir`.
pub fn write_fixtures(dir: &Path, opts: &DemoOptions) -> std::io::Result<DemoFixture> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rigs = Vec::new();
    for i in 0..opts.rigs {
        let id = format!("street{i:02}");
        let calib = demo_calibration(i, opts.width, opts.height);
        let k = &calib.intrinsics;

        let mut rects: Vec<[u32; 4]> = Vec::new();
        for n in 0..opts.real_cars {
            let lane = LANES[n % LANES.len()] + rng.gen_range(-0.3..0.3);
            let z = rng.gen_range(12.0..40.0);
            if let Some(r) = box_rect(&calib, [lane, z], [4.4, 1.8, 1.5]) {
                rects.push(r);
            }
        }
        // paint far cars first so nearer ones overwrite them
        rects.sort_by_key(|r| r[1] + r[3]);
        let shade = rng.gen_range(0.8..1.1);
        let image = street_image(&calib, &rects, shade);
        image.save(dir.join(format!("{id}.png"))).map_err(img_err)?;

        let mut taken = vec![false; (k.width * k.height) as usize];
        let mut real = Vec::new();
        for (n, r) in rects.iter().enumerate().rev() {
            let mut mask = BinaryMask::new(k.width, k.height);
            for y in r[1]..r[1] + r[3] {
                for x in r[0]..r[0] + r[2] {
                    let p = (y * k.width + x) as usize;
                    if !taken[p] {
                        taken[p] = true;
                        mask.data[p] = true;
                    }
                }
            }
            if let Some(bbox) = mask.bbox() {
                real.push(InstanceAnnotation {
                    instance_id: n as u32 + 1,
                    origin: Origin::Real,
                    category: "car".into(),
                    mask,
                    bbox,
                    visible_fraction: 1.0,
                });
            }
        }
        real.sort_by_key(|a| a.instance_id);
        let ann = AnnotationFile {
            image: format!("{id}.png"),
            instances: real.iter().map(InstanceAnnotation::to_record).collect(),
        };
        write(
            &dir.join(format!("{id}_real.json")),
            serde_json::to_string_pretty(&ann)?,
        )?;

        sky_panorama(128, rng.gen_range(-3.0..3.0))
            .save(dir.join(format!("{id}_env.png")))
            .map_err(img_err)?;
        road_mask(&calib)
            .save(dir.join(format!("{id}_road.png")))
            .map_err(img_err)?;
        write(
            &dir.join(format!("{id}_lanes.json")),
            serde_json::to_string_pretty(&lane_trajectories(&id))?,
        )?;
        rigs.push(json!({
            "id": id,
            "image": format!("{id}.png"),
            "calibration": calib.to_json_value(),
            "env_map": format!("{id}_env.png"),
            "trajectories": format!("{id}_lanes.json"),
            "road_mask": format!("{id}_road.png"),
            "real_annotations": format!("{id}_real.json"),
        }));
    }
    let rigs_path = dir.join("rigs.json");
    write(&rigs_path, serde_json::to_string_pretty(&rigs)?)?;
    let config = json!({
        "augmentations_per_image": 3,
        "max_cars": 5,
        "placement_region": {"x_min": -6.0, "x_max": 6.0, "z_min": 6.0, "z_max": 35.0},
        "render": {"samples_per_pixel": 4, "diffuse_env_samples": 16, "shadow_samples": 8},
        "seed": opts.seed,
    });
    let config_path = dir.join("config.json");
    write(&config_path, serde_json::to_string_pretty(&config)?)?;
    Ok(DemoFixture {
        rigs: rigs_path,
        config: config_path,
    })
}
