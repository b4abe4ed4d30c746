//! Ray-traced rendering of placed cars under environment lighting.
//!
//! Shading is single-bounce image-based lighting: a cosine-weighted Monte
//! Carlo estimate of the diffuse term with shadow rays against the scene,
//! plus one mirror lobe weighted by Schlick's Fresnel approximation. The
//! ground is an invisible shadow catcher that only produces a darkening
//! factor for the compositor.
//!
//! Every pixel draws from its own counter-based random stream, so output is
//! identical for any number of worker threads.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::{ImageBuffer, Luma, Rgba};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{CarModel, Material};
use crate::envmap::{lookup, EnvironmentMap};
use crate::geometry::{Calibration, GroundPlane, Vec3};
use crate::placement::PoseSample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("instance id {0} appears more than once")]
    DuplicateInstanceId(u32),
    #[error("instance id 0 is reserved for background")]
    ZeroInstanceId,
    #[error("ray direction {0:?} is not unit length")]
    NonUnitDirection([f64; 3]),
    #[error("invalid render settings: {0}")]
    InvalidSettings(String),
}

/// Minimum ray parameter accepted as a hit.
const T_MIN: f64 = 1e-9;
/// Hits closer than this are considered tied.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SceneInstance {
    pub model: Arc<CarModel>,
    pub material: Material,
    pub pose: PoseSample,
    pub instance_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub samples_per_pixel: u32,
    pub diffuse_env_samples: u32,
    pub shadow_samples: u32,
    pub enable_shadows: bool,
    /// Upper bound on the shadow darkening factor.
    pub max_shadow: f64,
    pub rng_seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            samples_per_pixel: 4,
            diffuse_env_samples: 64,
            shadow_samples: 32,
            enable_shadows: true,
            max_shadow: 0.6,
            rng_seed: 0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.samples_per_pixel == 0 || self.diffuse_env_samples == 0 || self.shadow_samples == 0 {
            return Err(RenderError::InvalidSettings("sample counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_shadow) {
            return Err(RenderError::InvalidSettings(format!(
                "max_shadow {} outside [0, 1]",
                self.max_shadow
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction }
    }
}

/// A scene triangle in camera coordinates.
#[derive(Debug, Clone, Copy)]
pub struct WorldTriangle {
    pub vertices: [Vec3; 3],
    pub normals: [Vec3; 3],
    pub instance_id: u32,
    /// Index of the triangle within its model's mesh.
    pub triangle: u32,
    edge1: Vec3,
    edge2: Vec3,
}

impl WorldTriangle {
    fn new(vertices: [Vec3; 3], normals: [Vec3; 3], instance_id: u32, triangle: u32) -> Self {
        Self {
            vertices,
            normals,
            instance_id,
            triangle,
            edge1: vertices[1] - vertices[0],
            edge2: vertices[2] - vertices[0],
        }
    }

    fn centroid(&self) -> Vec3 {
        (self.vertices[0] + self.vertices[1] + self.vertices[2]) / 3.0
    }

    /// Möller–Trumbore; returns `(t, u, v)`.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64, f64)> {
        let p = dir.cross(&self.edge2);
        let det = self.edge1.dot(&p);
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.vertices[0];
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&self.edge1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = self.edge2.dot(&q) * inv;
        (t > T_MIN).then_some((t, u, v))
    }

    fn key(&self) -> (u32, u32) {
        (self.instance_id, self.triangle)
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Slab test; entry distance if the ray meets the box before `t_max`.
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.lo[i] - origin[i]) * inv_dir[i];
            let b = (self.hi[i] - origin[i]) * inv_dir[i];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf means the ray lies in the slab plane
            if !near.is_nan() {
                t0 = t0.max(near);
            }
            if !far.is_nan() {
                t1 = t1.min(far);
            }
        }
        (t0 <= t1 * (1.0 + 4.0 * f64::EPSILON) + TIE_EPS).then_some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaves: first triangle. Interior nodes: index of the left child; the
    /// right child is `second`.
    first: u32,
    second: u32,
    count: u32,
}

const LEAF_SIZE: usize = 4;

/// Fixed-capacity node stack; median splits keep the tree depth near
/// `log2(n / LEAF_SIZE)`, far below the capacity.
struct TraversalStack {
    items: [u32; 64],
    len: usize,
}

impl TraversalStack {
    fn new() -> Self {
        Self { items: [0; 64], len: 1 }
    }

    #[inline]
    fn push(&mut self, node: u32) {
        self.items[self.len] = node;
        self.len += 1;
    }

    #[inline]
    fn pop(&mut self) -> Option<usize> {
        (self.len > 0).then(|| {
            self.len -= 1;
            self.items[self.len] as usize
        })
    }
}

/// Bounding volume hierarchy over all instance triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    triangles: Vec<WorldTriangle>,
    plane: GroundPlane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub instance_id: u32,
    pub triangle: u32,
    pub t: f64,
    pub point: Vec3,
    /// Interpolated normal, flipped to face the incoming ray.
    pub normal: Vec3,
    /// Face normal, flipped to face the incoming ray.
    pub geometric_normal: Vec3,
    pub direction: Vec3,
}

/// Transforms every instance into camera space.
pub fn world_triangles(instances: &[SceneInstance], plane: &GroundPlane) -> Vec<WorldTriangle> {
    let mut out = Vec::new();
    for inst in instances {
        let (m, t) = inst.pose.model_to_camera(plane);
        let mesh = &inst.model.mesh;
        let verts: Vec<Vec3> = mesh.vertices.iter().map(|v| m * v + t).collect();
        let norms: Vec<Vec3> = mesh.normals.iter().map(|n| (m * n).normalize()).collect();
        for (i, tri) in mesh.triangles.iter().enumerate() {
            out.push(WorldTriangle::new(
                tri.vertices.map(|k| verts[k as usize]),
                tri.normals.map(|k| norms[k as usize]),
                inst.instance_id,
                i as u32,
            ));
        }
    }
    out
}

pub fn build_bvh(instances: &[SceneInstance], plane: &GroundPlane) -> Bvh {
    Bvh::from_triangles(world_triangles(instances, plane), *plane)
}

impl Bvh {
    pub fn from_triangles(mut triangles: Vec<WorldTriangle>, plane: GroundPlane) -> Self {
        let mut nodes = Vec::new();
        if !triangles.is_empty() {
            let n = triangles.len();
            build_node(&mut nodes, &mut triangles, 0, n);
        }
        Self {
            nodes,
            triangles,
            plane,
        }
    }

    pub fn triangles(&self) -> &[WorldTriangle] {
        &self.triangles
    }

    pub fn plane(&self) -> &GroundPlane {
        &self.plane
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Checks that leaves partition the triangles and children nest in
    /// their parents.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return if self.triangles.is_empty() {
                Ok(())
            } else {
                Err("triangles without nodes".into())
            };
        }
        let mut seen = vec![0u32; self.triangles.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.count > 0 {
                for k in node.first..node.first + node.count {
                    seen[k as usize] += 1;
                    let mut b = Aabb::empty();
                    self.triangles[k as usize].vertices.iter().for_each(|v| b.grow(v));
                    if !node.bounds.contains(&b) {
                        return Err(format!("triangle {k} escapes leaf {i}"));
                    }
                }
            } else {
                for c in [node.first, node.second] {
                    if !node.bounds.contains(&self.nodes[c as usize].bounds) {
                        return Err(format!("child {c} escapes node {i}"));
                    }
                    stack.push(c as usize);
                }
            }
        }
        match seen.iter().position(|&c| c != 1) {
            Some(k) => Err(format!("triangle {k} referenced {} times", seen[k])),
            None => Ok(()),
        }
    }

    /// Nearest hit with `T_MIN < t < t_max`, ties broken by lowest
    /// (instance id, triangle index).
    fn closest(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<(usize, f64, f64, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<(usize, f64, f64, f64)> = None;
        let mut best_t = t_max;
        let mut stack = TraversalStack::new();
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds.hit(origin, &inv, best_t + TIE_EPS).is_none() {
                continue;
            }
            if node.count > 0 {
                for k in node.first as usize..(node.first + node.count) as usize {
                    let tri = &self.triangles[k];
                    let Some((t, u, v)) = tri.intersect(origin, dir) else {
                        continue;
                    };
                    let better = match best {
                        None => t < t_max,
                        Some((bk, bt, _, _)) => {
                            t < bt - TIE_EPS || ((t - bt).abs() <= TIE_EPS && tri.key() < self.triangles[bk].key())
                        }
                    };
                    if better {
                        best = Some((k, t, u, v));
                        best_t = best_t.min(t);
                    }
                }
            } else {
                stack.push(node.second);
                stack.push(node.first);
            }
        }
        best
    }

    /// True if anything lies along the ray before `t_max`.
    pub fn occluded(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut stack = TraversalStack::new();
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds.hit(origin, &inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                let range = node.first as usize..(node.first + node.count) as usize;
                if self.triangles[range]
                    .iter()
                    .any(|tri| tri.intersect(origin, dir).is_some_and(|(t, _, _)| t < t_max))
                {
                    return true;
                }
            } else {
                stack.push(node.second);
                stack.push(node.first);
            }
        }
        false
    }

    /// Every instance the ray passes through, regardless of occlusion,
    /// sorted by id.
    pub fn instances_along(&self, origin: &Vec3, dir: &Vec3) -> Vec<u32> {
        let mut ids: Vec<u32> = Vec::new();
        if self.nodes.is_empty() {
            return ids;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut stack = TraversalStack::new();
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds.hit(origin, &inv, f64::INFINITY).is_none() {
                continue;
            }
            if node.count > 0 {
                for tri in &self.triangles[node.first as usize..(node.first + node.count) as usize] {
                    if !ids.contains(&tri.instance_id) && tri.intersect(origin, dir).is_some() {
                        ids.push(tri.instance_id);
                    }
                }
            } else {
                stack.push(node.second);
                stack.push(node.first);
            }
        }
        ids.sort_unstable();
        ids
    }

    fn make_hit(&self, k: usize, t: f64, u: f64, v: f64, origin: &Vec3, dir: &Vec3) -> Hit {
        let tri = &self.triangles[k];
        let mut geo = tri.edge1.cross(&tri.edge2);
        geo = if geo.norm() > 0.0 { geo.normalize() } else { -dir };
        if geo.dot(dir) > 0.0 {
            geo = -geo;
        }
        let [n0, n1, n2] = tri.normals;
        let mut n = n0 * (1.0 - u - v) + n1 * u + n2 * v;
        n = if n.norm() > 1e-12 { n.normalize() } else { geo };
        if n.dot(dir) > 0.0 {
            n = -n;
        }
        Hit {
            instance_id: tri.instance_id,
            triangle: tri.triangle,
            t,
            point: origin + dir * t,
            normal: n,
            geometric_normal: geo,
            direction: *dir,
        }
    }
}

fn build_node(nodes: &mut Vec<Node>, tris: &mut [WorldTriangle], start: usize, end: usize) -> usize {
    let slice = &mut tris[start..end];
    let mut bounds = Aabb::empty();
    let mut centroids = Aabb::empty();
    for t in slice.iter() {
        t.vertices.iter().for_each(|v| bounds.grow(v));
        centroids.grow(&t.centroid());
    }
    let idx = nodes.len();
    nodes.push(Node {
        bounds,
        first: start as u32,
        second: 0,
        count: (end - start) as u32,
    });
    let extent = centroids.hi - centroids.lo;
    if slice.len() <= LEAF_SIZE || extent.max() <= 0.0 {
        return idx;
    }
    let axis = extent.imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| {
        a.centroid()[axis]
            .total_cmp(&b.centroid()[axis])
            .then(a.key().cmp(&b.key()))
    });
    let left = build_node(nodes, tris, start, start + mid);
    let right = build_node(nodes, tris, start + mid, end);
    nodes[idx] = Node {
        bounds,
        first: left as u32,
        second: right as u32,
        count: 0,
    };
    idx
}

/// Nearest intersection along a unit-length ray.
pub fn trace(ray: &Ray, bvh: &Bvh) -> Result<Option<Hit>, RenderError> {
    let d = ray.direction;
    if (d.norm() - 1.0).abs() > 1e-9 {
        return Err(RenderError::NonUnitDirection([d.x, d.y, d.z]));
    }
    Ok(trace_unchecked(&ray.origin, &d, bvh))
}

fn trace_unchecked(origin: &Vec3, dir: &Vec3, bvh: &Bvh) -> Option<Hit> {
    bvh.closest(origin, dir, f64::INFINITY)
        .map(|(k, t, u, v)| bvh.make_hit(k, t, u, v, origin, dir))
}

pub fn schlick(cos_theta: f64, f0: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - cos_theta.clamp(0.0, 1.0)).powi(5)
}

/// Normal-incidence reflectance of the clear-coat mirror lobe.
pub const MIRROR_F0: f64 = 0.04;

/// Orthonormal tangent frame around a unit normal (Duff et al. 2017).
fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let sign = 1f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        Vec3::new(b, sign + n.y * n.y * a, -n.y),
    )
}

pub fn cosine_sample<R: Rng + ?Sized>(n: &Vec3, rng: &mut R) -> Vec3 {
    let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
    let r = u1.sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    let (t, b) = tangent_frame(n);
    (t * (r * c) + b * (r * s) + n * (1.0 - u1).max(0.0).sqrt()).normalize()
}

fn offset_origin(p: &Vec3, n: &Vec3) -> Vec3 {
    p + n * (1e-7 * p.norm().max(1.0))
}

/// Outgoing radiance toward the camera at a hit point.
pub fn shade<R: Rng + ?Sized>(
    hit: &Hit,
    env: &EnvironmentMap,
    material: &Material,
    bvh: &Bvh,
    settings: &RenderSettings,
    rng: &mut R,
) -> [f64; 3] {
    let n = hit.normal;
    let ng = hit.geometric_normal;
    let origin = offset_origin(&hit.point, &ng);

    let samples = settings.diffuse_env_samples.max(1);
    let mut irradiance = [0.0; 3];
    for _ in 0..samples {
        let w = cosine_sample(&n, rng);
        if w.dot(&ng) <= 0.0 || bvh.occluded(&origin, &w, f64::INFINITY) {
            continue;
        }
        let l = lookup(env, &w);
        for ch in 0..3 {
            irradiance[ch] += l[ch];
        }
    }
    let mut out = [0.0; 3];
    for ch in 0..3 {
        out[ch] = material.base_color[ch] * irradiance[ch] / f64::from(samples);
    }

    let weight = material.mirror_weight();
    if weight > 0.0 {
        let d = hit.direction;
        let cos_theta = n.dot(&-d);
        let r = (d - n * (2.0 * d.dot(&n))).normalize();
        if r.dot(&ng) > 0.0 && !bvh.occluded(&origin, &r, f64::INFINITY) {
            let f = weight * schlick(cos_theta, MIRROR_F0);
            let l = lookup(env, &r);
            for ch in 0..3 {
                out[ch] += f * l[ch];
            }
        }
    }
    out
}

/// Foreground buffers of one render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderLayer {
    pub width: u32,
    pub height: u32,
    /// Premultiplied linear RGBA.
    pub color: Vec<[f64; 4]>,
    /// Camera-space z of the nearest hit, `+∞` where nothing was hit.
    pub depth: Vec<f64>,
    /// Majority instance under the pixel, 0 for none.
    pub instance_ids: Vec<u32>,
    /// Ground shadow darkening factor in `[0, 1]`.
    pub shadow_alpha: Vec<f64>,
    /// Per instance, the sorted pixel indices where the instance alone
    /// would cover at least half the pixel.
    pub isolated_masks: BTreeMap<u32, Vec<u32>>,
}

impl RenderLayer {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            color: vec![[0.0; 4]; n],
            depth: vec![f64::INFINITY; n],
            instance_ids: vec![0; n],
            shadow_alpha: vec![0.0; n],
            isolated_masks: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.color.is_empty()
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.color[i][3]
    }

    /// Checks the buffer consistency rules of a freshly rendered layer.
    pub fn check_invariants(&self) -> Result<(), String> {
        for i in 0..self.len() {
            let a = self.alpha(i);
            let id = self.instance_ids[i];
            let d = self.depth[i];
            if (id != 0) != d.is_finite() || (id != 0) != (a > 0.0) {
                return Err(format!("pixel {i}: id {id}, depth {d}, alpha {a}"));
            }
            if self.shadow_alpha[i] > 0.0 && id != 0 {
                return Err(format!("pixel {i}: shadow inside silhouette"));
            }
            if !(0.0..=1.0).contains(&self.shadow_alpha[i]) || !(0.0..=1.0).contains(&a) {
                return Err(format!("pixel {i}: alpha or shadow out of range"));
            }
            if self.color[i][..3].iter().any(|&c| c > a + 1e-12 || c < 0.0) {
                return Err(format!("pixel {i}: color {:?} exceeds alpha", self.color[i]));
            }
        }
        Ok(())
    }

    /// Writes color (8-bit premultiplied RGBA, gamma 2.2), depth (16-bit,
    /// centimeters, 0 = none), ids (16-bit) and shadow (8-bit) PNGs.
    pub fn dump_debug(&self, dir: &Path, stem: &str) -> image::ImageResult<()> {
        let enc = |v: f64| (v.clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8;
        let color = ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let c = self.color[self.index(x, y)];
            Rgba([
                enc(c[0]),
                enc(c[1]),
                enc(c[2]),
                (c[3].clamp(0.0, 1.0) * 255.0).round() as u8,
            ])
        });
        color.save(dir.join(format!("{stem}_color.png")))?;
        let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let d = self.depth[self.index(x, y)];
            Luma([if d.is_finite() {
                (d * 100.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }])
        });
        depth.save(dir.join(format!("{stem}_depth.png")))?;
        let ids: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(self.width, self.height, |x, y| {
            Luma([self.instance_ids[self.index(x, y)].min(65535) as u16])
        });
        ids.save(dir.join(format!("{stem}_ids.png")))?;
        let shadow: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(self.width, self.height, |x, y| {
            Luma([(self.shadow_alpha[self.index(x, y)] * 255.0).round() as u8])
        });
        shadow.save(dir.join(format!("{stem}_shadow.png")))?;
        Ok(())
    }
}

pub fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for one pixel of one image.
///
/// The ChaCha key is derived from `(seed, image_index)` and the stream id is
/// `(y << 32) | x`, so every pixel owns an independent sequence.
pub fn seeded_pixel_rng(seed: u64, image_index: u64, x: u32, y: u32) -> ChaCha8Rng {
    let key = mix64(mix64(seed ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(image_index));
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream((u64::from(y) << 32) | u64::from(x));
    rng
}

struct PixelOut {
    color: [f64; 4],
    depth: f64,
    id: u32,
    shadow: f64,
    isolated: Vec<u32>,
}

/// Renders the instances through the pinhole camera.
///
/// Uses the current rayon pool; pixel values do not depend on its size.
pub fn render_layer(
    instances: &[SceneInstance],
    calib: &Calibration,
    env: &EnvironmentMap,
    settings: &RenderSettings,
    image_index: u64,
) -> Result<RenderLayer, RenderError> {
    settings.validate()?;
    let mut ids: Vec<u32> = instances.iter().map(|i| i.instance_id).collect();
    ids.sort_unstable();
    if ids.first() == Some(&0) {
        return Err(RenderError::ZeroInstanceId);
    }
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(RenderError::DuplicateInstanceId(w[0]));
    }
    let materials: BTreeMap<u32, Material> = instances.iter().map(|i| (i.instance_id, i.material)).collect();

    let k = calib.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut layer = RenderLayer::empty(w, h);
    if instances.is_empty() {
        return Ok(layer);
    }
    let bvh = build_bvh(instances, &calib.plane);

    let rows: Vec<Vec<PixelOut>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| render_pixel(x, y, &bvh, calib, env, &materials, settings, image_index))
                .collect()
        })
        .collect();

    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            let i = y * w as usize + x;
            layer.color[i] = px.color;
            layer.depth[i] = px.depth;
            layer.instance_ids[i] = px.id;
            layer.shadow_alpha[i] = px.shadow;
            for id in px.isolated {
                layer.isolated_masks.entry(id).or_default().push(i as u32);
            }
        }
    }
    Ok(layer)
}

#[allow(clippy::too_many_arguments)]
fn render_pixel(
    x: u32,
    y: u32,
    bvh: &Bvh,
    calib: &Calibration,
    env: &EnvironmentMap,
    materials: &BTreeMap<u32, Material>,
    settings: &RenderSettings,
    image_index: u64,
) -> PixelOut {
    let k = &calib.intrinsics;
    let mut rng = seeded_pixel_rng(settings.rng_seed, image_index, x, y);
    let spp = settings.samples_per_pixel.max(1);
    let origin = Vec3::zeros();
    let mut sum = [0.0; 3];
    let mut hits = 0u32;
    let mut depth = f64::INFINITY;
    let mut nearest_counts: Vec<(u32, u32)> = Vec::new();
    let mut isolated_counts: Vec<(u32, u32)> = Vec::new();
    let bump = |counts: &mut Vec<(u32, u32)>, id: u32| match counts.iter_mut().find(|c| c.0 == id) {
        Some(c) => c.1 += 1,
        None => counts.push((id, 1)),
    };

    // All sub-sample positions are drawn before shading consumes the stream,
    // so coverage depends only on the geometry in the scene.
    let jitter: Vec<(f64, f64)> = (0..spp)
        .map(|_| {
            if spp == 1 {
                (0.0, 0.0)
            } else {
                (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            }
        })
        .collect();
    for (jx, jy) in jitter {
        let dir = k.ray_direction([f64::from(x) + jx, f64::from(y) + jy]).normalize();
        if let Some(hit) = trace_unchecked(&origin, &dir, bvh) {
            let c = shade(&hit, env, &materials[&hit.instance_id], bvh, settings, &mut rng);
            // display-referred layer: clamp so premultiplied color never exceeds alpha
            for ch in 0..3 {
                sum[ch] += c[ch].clamp(0.0, 1.0);
            }
            hits += 1;
            depth = depth.min(hit.t * dir.z);
            bump(&mut nearest_counts, hit.instance_id);
        }
        for id in bvh.instances_along(&origin, &dir) {
            bump(&mut isolated_counts, id);
        }
    }

    let n = f64::from(spp);
    let id = nearest_counts
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |c| c.0);
    let mut isolated: Vec<u32> = isolated_counts.iter().filter(|c| 2 * c.1 >= spp).map(|c| c.0).collect();
    isolated.sort_unstable();

    let mut shadow = 0.0;
    if hits == 0 && settings.enable_shadows {
        shadow = ground_shadow(x, y, bvh, calib, settings, &mut rng);
    }

    PixelOut {
        color: [sum[0] / n, sum[1] / n, sum[2] / n, f64::from(hits) / n],
        depth,
        id,
        shadow,
        isolated,
    }
}

/// Fraction of the sky hemisphere blocked by cars, seen from the ground
/// point under the pixel center.
fn ground_shadow<R: Rng + ?Sized>(
    x: u32,
    y: u32,
    bvh: &Bvh,
    calib: &Calibration,
    settings: &RenderSettings,
    rng: &mut R,
) -> f64 {
    let dir = calib.intrinsics.ray_direction([f64::from(x), f64::from(y)]).normalize();
    let Some(t) = calib.plane.intersect_ray(&Vec3::zeros(), &dir) else {
        return 0.0;
    };
    if t <= 0.0 {
        return 0.0;
    }
    let up = calib.plane.up();
    let origin = offset_origin(&(dir * t), &up);
    let samples = settings.shadow_samples.max(1);
    let mut open = 0u32;
    for _ in 0..samples {
        let w = cosine_sample(&up, rng);
        if !bvh.occluded(&origin, &w, f64::INFINITY) {
            open += 1;
        }
    }
    (1.0 - f64::from(open) / f64::from(samples)).clamp(0.0, settings.max_shadow)
}
