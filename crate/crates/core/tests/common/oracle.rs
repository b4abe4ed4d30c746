//! Independent reference implementations used by the oracle suites.

use std::sync::Arc;

use augmentor::assets::{parse_obj, procedural, CarModel, Category, Material};
use augmentor::geometry::{Calibration, CameraIntrinsics, GroundPlane, Vec3};
use augmentor::placement::PoseSample;
use augmentor::renderer::{Bvh, RenderLayer, SceneInstance, WorldTriangle};
use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::calibration;

pub fn random_camera(rng: &mut ChaCha8Rng) -> (CameraIntrinsics, GroundPlane) {
    let w = rng.gen_range(320..2000);
    let h = rng.gen_range(200..1200);
    let f = rng.gen_range(300.0..1500.0);
    let k = CameraIntrinsics::new(
        [f, f * rng.gen_range(0.95..1.05)],
        [rng.gen_range(0.3..0.7) * w as f64, rng.gen_range(0.3..0.7) * h as f64],
        [w, h],
    )
    .unwrap();
    let pitch: f64 = rng.gen_range(-0.25..0.25);
    let roll: f64 = rng.gen_range(-0.1..0.1);
    let n = Vec3::new(roll.sin(), -pitch.cos() * roll.cos(), pitch.sin() * roll.cos()).normalize();
    let plane = GroundPlane::new([n.x, n.y, n.z], -rng.gen_range(0.5..3.0)).unwrap();
    (k, plane)
}

/// In-plane frame written out from its definition.
pub fn frame(plane: &GroundPlane) -> (Vec3, Vec3, Vec3) {
    let n = Vec3::from(plane.normal);
    let up = if plane.offset < 0.0 { n } else { -n };
    let ex = (Vec3::x() - n * n.x).normalize();
    let ez = up.cross(&ex);
    (n * plane.offset, ex, ez)
}

pub fn pinhole(k: &CameraIntrinsics, p: &Vec3) -> [f64; 2] {
    [k.focal_x * p.x / p.z + k.center_x, k.focal_y * p.y / p.z + k.center_y]
}

/// DLT from four correspondences, normalized by an extra random row.
pub fn dlt(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4], rng: &mut ChaCha8Rng) -> SMatrix<f64, 3, 3> {
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        let r0 = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u];
        let r1 = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    for c in 0..9 {
        a[(8, c)] = rng.gen_range(-1.0..1.0);
    }
    let mut b = SVector::<f64, 9>::zeros();
    b[8] = 1.0;
    let h = a.lu().solve(&b).expect("DLT system is regular");
    SMatrix::<f64, 3, 3>::from_row_slice(h.as_slice())
}

/// Unit Frobenius norm, sign matched to `reference`.
pub fn normalized(m: &SMatrix<f64, 3, 3>, reference: &SMatrix<f64, 3, 3>) -> SMatrix<f64, 3, 3> {
    let s = m.norm() * m.dot(reference).signum();
    m / s
}

/// Plane intersection followed by an inside-out edge test.
pub fn brute_intersect(tri: &WorldTriangle, o: &Vec3, d: &Vec3) -> Option<f64> {
    let [a, b, c] = tri.vertices;
    let n = (b - a).cross(&(c - a));
    let denom = n.dot(d);
    if denom.abs() < 1e-14 * n.norm() {
        return None;
    }
    let t = n.dot(&(a - o)) / denom;
    if t <= 1e-9 {
        return None;
    }
    let p = o + d * t;
    let inside = [(a, b), (b, c), (c, a)]
        .iter()
        .all(|(u, v)| (v - u).cross(&(p - u)).dot(&n) >= 0.0);
    inside.then_some(t)
}

/// Nearest hit over every triangle; ties go to the lowest (instance, triangle).
pub fn brute_nearest(bvh: &Bvh, o: &Vec3, d: &Vec3) -> Option<(u32, u32, f64)> {
    let hits: Vec<(u32, u32, f64)> = bvh
        .triangles()
        .iter()
        .filter_map(|tri| brute_intersect(tri, o, d).map(|t| (tri.instance_id, tri.triangle, t)))
        .collect();
    let t_min = hits.iter().map(|h| h.2).fold(f64::INFINITY, f64::min);
    hits.into_iter()
        .filter(|h| h.2 <= t_min + 1e-12)
        .min_by_key(|h| (h.0, h.1))
}

/// Fully covered pixels of `id` whose four neighbours are fully covered too.
pub fn interior_pixels(layer: &RenderLayer, id: u32) -> Vec<usize> {
    let w = layer.width as usize;
    let full = |i: usize| layer.instance_ids[i] == id && layer.alpha(i) == 1.0;
    (0..layer.len())
        .filter(|&i| {
            let (x, y) = (i % w, i / w);
            x > 0
                && y > 0
                && x + 1 < w
                && y + 1 < layer.height as usize
                && [i, i - 1, i + 1, i - w, i + w].into_iter().all(full)
        })
        .collect()
}

pub const CARD_DEPTH: f64 = 0.002;

/// A thin upright board facing the camera; its silhouette is a rectangle.
pub fn card(id: u32, calib: &Calibration, x: f64, z: f64, width: f64, height: f64) -> SceneInstance {
    SceneInstance {
        model: Arc::new(CarModel {
            name: format!("card{id}"),
            category: Category::Other,
            mesh: parse_obj(&procedural::box_obj([width, height, CARD_DEPTH])).unwrap(),
        }),
        material: Material::diffuse([0.5; 3]),
        pose: PoseSample::on_plane(&calib.plane, [x, z], 0.0),
        instance_id: id,
    }
}

/// Pixel rectangle `[u0, u1] × [v0, v1]` of a card's front face.
pub fn card_rect(calib: &Calibration, x: f64, z: f64, width: f64, height: f64) -> [f64; 4] {
    let k = &calib.intrinsics;
    let h = -calib.plane.offset;
    let zf = z - CARD_DEPTH / 2.0;
    let u = |cx: f64| k.focal_x * cx / zf + k.center_x;
    let v = |cy: f64| k.focal_y * cy / zf + k.center_y;
    [u(x - width / 2.0), u(x + width / 2.0), v(h - height), v(h)]
}

pub fn area(r: [f64; 4]) -> f64 {
    (r[1] - r[0]).max(0.0) * (r[3] - r[2]).max(0.0)
}

pub fn intersection(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0].max(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].min(b[3])]
}

/// Two cards, the near one hiding part of the far one, and the far card's
/// analytic visible fraction.
pub fn occlusion_scene() -> (Calibration, Vec<SceneInstance>, f64) {
    let calib = calibration(640, 480, 1.5);
    let near = (-0.5, 8.0, 2.0, 1.5);
    let far = (0.5, 12.0, 3.0, 2.0);
    let scene = vec![
        card(1, &calib, near.0, near.1, near.2, near.3),
        card(2, &calib, far.0, far.1, far.2, far.3),
    ];
    let a = card_rect(&calib, near.0, near.1, near.2, near.3);
    let b = card_rect(&calib, far.0, far.1, far.2, far.3);
    let expected = 1.0 - area(intersection(a, b)) / area(b);
    (calib, scene, expected)
}
