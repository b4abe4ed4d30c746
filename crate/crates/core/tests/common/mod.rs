#![allow(dead_code)]

pub mod oracle;

use std::path::Path;
use std::sync::Arc;

use augmentor::assets::{procedural, Category, Material};
use augmentor::demo::{write_fixtures, DemoFixture, DemoOptions};
use augmentor::geometry::{Calibration, CameraIntrinsics, GroundPlane};
use augmentor::placement::PoseSample;
use augmentor::renderer::SceneInstance;

pub fn calibration(width: u32, height: u32, cam_height: f64) -> Calibration {
    let f = 0.8 * f64::from(width);
    let k = CameraIntrinsics::new(
        [f, f],
        [f64::from(width) / 2.0, 0.45 * f64::from(height)],
        [width, height],
    )
    .unwrap();
    Calibration::new(k, GroundPlane::from_height(cam_height)).unwrap()
}

pub fn car(
    id: u32,
    category: Category,
    plane: &GroundPlane,
    ground: [f64; 2],
    yaw: f64,
    material: Material,
) -> SceneInstance {
    SceneInstance {
        model: Arc::new(procedural::car_model(category, "test")),
        material,
        pose: PoseSample::on_plane(plane, ground, yaw),
        instance_id: id,
    }
}

/// Small demo dataset, cheap enough to render many times.
pub fn small_fixture(dir: &Path, rigs: usize) -> DemoFixture {
    write_fixtures(
        dir,
        &DemoOptions {
            rigs,
            width: 160,
            height: 80,
            ..DemoOptions::default()
        },
    )
    .unwrap()
}

pub fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = walk(a);
    names.sort();
    let mut other: Vec<_> = walk(b);
    other.sort();
    if names != other {
        return Err(format!("file sets differ: {names:?} vs {other:?}"));
    }
    for n in &names {
        if std::fs::read(a.join(n)).unwrap() != std::fs::read(b.join(n)).unwrap() {
            return Err(format!("{} differs", n.display()));
        }
    }
    Ok(names.len())
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}
