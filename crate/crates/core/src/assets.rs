//! Car meshes, the model catalog and paint sampling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::placement::PoseSample;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: index out of range")]
    IndexOutOfRange { line: usize },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("footprints are only defined for on-plane poses")]
    OffPlanePose,
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Mesh { path: PathBuf, source: Box<AssetError> },
    #[error("catalog manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshTriangle {
    pub vertices: [u32; 3],
    pub normals: [u32; 3],
}

/// Triangle mesh in the right-handed model frame: y up, z forward and
/// x = y × z (the car's right seen from the front), meters, with the origin
/// on the ground under the vertex centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<MeshTriangle>,
}

impl TriangleMesh {
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Shifts the mesh so its lowest vertex has `y = 0` and the vertex
    /// centroid has `x = z = 0`.
    pub fn normalize(&mut self) {
        if self.vertices.is_empty() {
            return;
        }
        let n = self.vertices.len() as f64;
        let sum = self.vertices.iter().fold(Vec3::zeros(), |a, v| a + v);
        let min_y = self.bounds().0.y;
        let shift = Vec3::new(sum.x / n, min_y, sum.z / n);
        for v in &mut self.vertices {
            *v -= shift;
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.triangles.is_empty() {
            return Err("no triangles".into());
        }
        for t in &self.triangles {
            if t.vertices.iter().any(|&i| i as usize >= self.vertices.len())
                || t.normals.iter().any(|&i| i as usize >= self.normals.len())
            {
                return Err("index out of range".into());
            }
        }
        if let Some(n) = self.normals.iter().find(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(format!("normal {n:?} is not unit length"));
        }
        let min_y = self.bounds().0.y;
        if min_y.abs() > 1e-6 {
            return Err(format!("lowest vertex at y = {min_y}"));
        }
        Ok(())
    }

    /// Writes the mesh back out as `v`/`vn`/`f` records.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
        }
        for n in &self.normals {
            let _ = writeln!(s, "vn {:?} {:?} {:?}", n.x, n.y, n.z);
        }
        for t in &self.triangles {
            let _ = writeln!(
                s,
                "f {}//{} {}//{} {}//{}",
                t.vertices[0] + 1,
                t.normals[0] + 1,
                t.vertices[1] + 1,
                t.normals[1] + 1,
                t.vertices[2] + 1,
                t.normals[2] + 1
            );
        }
        s
    }
}

fn parse_floats<const N: usize>(
    fields: &mut std::str::SplitWhitespace<'_>,
    line: usize,
) -> Result<[f64; N], AssetError> {
    let mut out = [0.0; N];
    for slot in &mut out {
        let tok = fields.next().ok_or_else(|| AssetError::MalformedRecord {
            line,
            reason: format!("expected {N} coordinates"),
        })?;
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| AssetError::MalformedRecord {
                line,
                reason: format!("bad number {tok:?}"),
            })?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn resolve_index(raw: &str, len: usize, line: usize) -> Result<usize, AssetError> {
    let idx: i64 = raw.parse().map_err(|_| AssetError::MalformedRecord {
        line,
        reason: format!("bad index {raw:?}"),
    })?;
    let resolved = match idx {
        0 => None,
        i if i > 0 => Some(i as usize - 1),
        i => len.checked_sub(i.unsigned_abs() as usize),
    };
    match resolved {
        Some(i) if i < len => Ok(i),
        _ => Err(AssetError::IndexOutOfRange { line }),
    }
}

/// Source line of an `f` record and its (vertex, normal) corners.
type FaceRecord = (usize, Vec<(usize, Option<usize>)>);

/// Parses the `v`/`vn`/`f` subset of Wavefront OBJ.
///
/// Polygons are fan-triangulated. Faces without normal references get a
/// computed per-face normal. Other record types are ignored. The result is
/// normalized with [`TriangleMesh::normalize`].
pub fn parse_obj(text: &str) -> Result<TriangleMesh, AssetError> {
    let mut vertices = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    // faces are resolved after all records are read so that computed
    // normals do not shift explicit `vn` indices
    let mut faces: Vec<FaceRecord> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some("v") => {
                let [x, y, z] = parse_floats::<3>(&mut fields, line)?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("vn") => {
                let [x, y, z] = parse_floats::<3>(&mut fields, line)?;
                let n = Vec3::new(x, y, z);
                if n.norm() < 1e-12 {
                    return Err(AssetError::MalformedRecord {
                        line,
                        reason: "zero-length normal".into(),
                    });
                }
                normals.push(n.normalize());
            }
            Some("f") => {
                let mut corners = Vec::new();
                for tok in fields {
                    let mut parts = tok.split('/');
                    let v = resolve_index(parts.next().unwrap_or(""), vertices.len(), line)?;
                    let _texcoord = parts.next();
                    let n = match parts.next() {
                        Some(s) if !s.is_empty() => Some(resolve_index(s, normals.len(), line)?),
                        _ => None,
                    };
                    corners.push((v, n));
                }
                if corners.len() < 3 {
                    return Err(AssetError::MalformedRecord {
                        line,
                        reason: "face needs at least 3 vertices".into(),
                    });
                }
                faces.push((line, corners));
            }
            _ => {}
        }
    }

    let mut triangles = Vec::new();
    for (_, corners) in &faces {
        let explicit = corners.iter().all(|c| c.1.is_some());
        for k in 1..corners.len() - 1 {
            let tri = [corners[0], corners[k], corners[k + 1]];
            let vidx = tri.map(|c| c.0 as u32);
            let nidx = if explicit {
                tri.map(|c| c.1.unwrap() as u32)
            } else {
                let [a, b, c] = tri.map(|c| vertices[c.0]);
                let n = (b - a).cross(&(c - a));
                let n = if n.norm() > 0.0 { n.normalize() } else { Vec3::y() };
                normals.push(n);
                [(normals.len() - 1) as u32; 3]
            };
            triangles.push(MeshTriangle {
                vertices: vidx,
                normals: nidx,
            });
        }
    }

    if triangles.is_empty() {
        return Err(AssetError::EmptyMesh);
    }
    let mut mesh = TriangleMesh {
        vertices,
        normals,
        triangles,
    };
    mesh.normalize();
    Ok(mesh)
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh, AssetError> {
    let text = std::fs::read_to_string(path).map_err(|source| AssetError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_obj(&text).map_err(|e| AssetError::Mesh {
        path: path.to_owned(),
        source: Box::new(e),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Suv,
    Sedan,
    Hatchback,
    #[serde(alias = "station-wagon")]
    StationWagon,
    #[serde(alias = "mini-van")]
    MiniVan,
    Van,
    Other,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Suv,
        Category::Sedan,
        Category::Hatchback,
        Category::StationWagon,
        Category::MiniVan,
        Category::Van,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Suv => "suv",
            Category::Sedan => "sedan",
            Category::Hatchback => "hatchback",
            Category::StationWagon => "station_wagon",
            Category::MiniVan => "mini_van",
            Category::Van => "van",
            Category::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarModel {
    pub name: String,
    pub category: Category,
    pub mesh: TriangleMesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finish {
    Mirror,
    DiffuseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Linear RGB albedo.
    pub base_color: [f64; 3],
    pub specular_weight: f64,
    pub finish: Finish,
}

impl Material {
    pub fn diffuse(base_color: [f64; 3]) -> Self {
        Self {
            base_color,
            specular_weight: 0.0,
            finish: Finish::DiffuseOnly,
        }
    }

    /// Weight of the mirror lobe actually used when shading.
    pub fn mirror_weight(&self) -> f64 {
        match self.finish {
            Finish::Mirror => self.specular_weight,
            Finish::DiffuseOnly => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.base_color.iter().copied().all(in_unit) || !in_unit(self.specular_weight) {
            return Err(format!("material out of range: {self:?}"));
        }
        Ok(())
    }
}

pub const DEFAULT_SPECULAR_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Catalog {
    pub models: Vec<Arc<CarModel>>,
    /// Linear RGB paint colors.
    pub palette: Vec<[f64; 3]>,
    pub specular_weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogManifest {
    models: Vec<CatalogEntry>,
    palette: Vec<[f64; 3]>,
    #[serde(default = "default_specular")]
    specular_weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogEntry {
    path: PathBuf,
    category: Category,
    #[serde(default)]
    name: Option<String>,
}

fn default_specular() -> f64 {
    DEFAULT_SPECULAR_WEIGHT
}

impl Catalog {
    pub fn new(models: Vec<Arc<CarModel>>, palette: Vec<[f64; 3]>, specular_weight: f64) -> Result<Self, AssetError> {
        if models.is_empty() {
            return Err(AssetError::InvalidCatalog("no models".into()));
        }
        if palette.is_empty() {
            return Err(AssetError::InvalidCatalog("empty palette".into()));
        }
        for c in &palette {
            Material::diffuse(*c).validate().map_err(AssetError::InvalidCatalog)?;
        }
        if !(0.0..=1.0).contains(&specular_weight) {
            return Err(AssetError::InvalidCatalog(format!(
                "specular_weight {specular_weight} outside [0, 1]"
            )));
        }
        Ok(Self {
            models,
            palette,
            specular_weight,
        })
    }

    /// Loads a catalog manifest; model paths are relative to the manifest.
    pub fn load(path: &Path) -> Result<Self, AssetError> {
        let text = std::fs::read_to_string(path).map_err(|source| AssetError::Io {
            path: path.to_owned(),
            source,
        })?;
        let manifest: CatalogManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut models = Vec::with_capacity(manifest.models.len());
        for entry in manifest.models {
            let mesh_path = base.join(&entry.path);
            let mesh = load_obj(&mesh_path)?;
            let name = entry.name.unwrap_or_else(|| {
                entry
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            models.push(Arc::new(CarModel {
                name,
                category: entry.category,
                mesh,
            }));
        }
        Self::new(models, manifest.palette, manifest.specular_weight)
    }
}

/// Draws a model and a paint color, both uniformly.
pub fn catalog_sample<R: Rng + ?Sized>(catalog: &Catalog, rng: &mut R) -> (Arc<CarModel>, Material) {
    let model = catalog.models[rng.gen_range(0..catalog.models.len())].clone();
    let color = catalog.palette[rng.gen_range(0..catalog.palette.len())];
    let finish = if catalog.specular_weight > 0.0 {
        Finish::Mirror
    } else {
        Finish::DiffuseOnly
    };
    (
        model,
        Material {
            base_color: color,
            specular_weight: catalog.specular_weight,
            finish,
        },
    )
}

/// Rectangle on the ground plane, rotated by `yaw` about its center.
///
/// `half_extents` are along the local (model x, forward) axes. Yaw 0 points
/// forward along ground `+z`; yaw π/2 points along `+x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    pub yaw: f64,
}

impl OrientedRect {
    pub fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.yaw.sin_cos();
        ([-c, s], [s, c])
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (r, f) = self.axes();
        let [hx, hz] = self.half_extents;
        let at = |a: f64, b: f64| {
            [
                self.center[0] + a * r[0] + b * f[0],
                self.center[1] + a * r[1] + b * f[1],
            ]
        };
        [at(-hx, -hz), at(hx, -hz), at(hx, hz), at(-hx, hz)]
    }

    /// Separating-axis test; rectangles that only touch do not intersect.
    pub fn intersects(&self, other: &OrientedRect) -> bool {
        let (ra, fa) = self.axes();
        let (rb, fb) = other.axes();
        let ca = self.corners();
        let cb = other.corners();
        for axis in [ra, fa, rb, fb] {
            let proj = |pts: &[[f64; 2]; 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let d = p[0] * axis[0] + p[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = proj(&ca);
            let (b0, b1) = proj(&cb);
            if a1 <= b0 + 1e-12 || b1 <= a0 + 1e-12 {
                return false;
            }
        }
        true
    }
}

/// Ground footprint of a placed model.
pub fn footprint(model: &CarModel, pose: &PoseSample) -> Result<OrientedRect, AssetError> {
    let PoseSample::OnPlane { ground, yaw, .. } = pose else {
        return Err(AssetError::OffPlanePose);
    };
    let (lo, hi) = model.mesh.bounds();
    let local_center = [(lo.x + hi.x) / 2.0, (lo.z + hi.z) / 2.0];
    let rect = OrientedRect {
        center: [0.0, 0.0],
        half_extents: [(hi.x - lo.x) / 2.0, (hi.z - lo.z) / 2.0],
        yaw: *yaw,
    };
    let (r, f) = rect.axes();
    Ok(OrientedRect {
        center: [
            ground[0] + local_center[0] * r[0] + local_center[1] * f[0],
            ground[1] + local_center[0] * r[1] + local_center[1] * f[1],
        ],
        ..rect
    })
}

/// Simple convex car-like meshes for demos and tests.
pub mod procedural {
    use super::*;

    /// Typical outer dimensions (length, width, height) in meters.
    pub fn dimensions(category: Category) -> [f64; 3] {
        match category {
            Category::Suv => [4.7, 1.9, 1.75],
            Category::Sedan => [4.6, 1.8, 1.45],
            Category::Hatchback => [4.0, 1.75, 1.5],
            Category::StationWagon => [4.7, 1.8, 1.5],
            Category::MiniVan => [4.8, 1.9, 1.75],
            Category::Van => [5.2, 2.0, 2.1],
            Category::Other => [4.2, 1.8, 1.5],
        }
    }

    /// OBJ text for a convex wedge-profile car, extruded across its width.
    /// Faces are wound counter-clockwise seen from outside.
    pub fn wedge_car_obj(length: f64, width: f64, height: f64) -> String {
        let (l, h) = (length, height);
        // side profile in (z, y)
        let profile = [
            (-l / 2.0, 0.0),
            (l / 2.0, 0.0),
            (l / 2.0, 0.5 * h),
            (0.15 * l, h),
            (-0.35 * l, h),
            (-l / 2.0, 0.6 * h),
        ];
        let n = profile.len();
        let mut s = String::from("# wedge car\n");
        for x in [width / 2.0, -width / 2.0] {
            for (z, y) in profile {
                let _ = writeln!(s, "v {x:?} {y:?} {z:?}");
            }
        }
        // seen from +x the profile runs clockwise, so the +x cap is reversed
        s.push('f');
        for i in (0..n).rev() {
            let _ = write!(s, " {}", i + 1);
        }
        s.push_str("\nf");
        for i in 0..n {
            let _ = write!(s, " {}", n + i + 1);
        }
        s.push('\n');
        for i in 0..n {
            let j = (i + 1) % n;
            let _ = writeln!(s, "f {} {} {} {}", j + 1, n + j + 1, n + i + 1, i + 1);
        }
        s
    }

    /// Axis-aligned box with its base on `y = 0`.
    pub fn box_obj(size: [f64; 3]) -> String {
        let [sx, sy, sz] = size.map(|v| v / 2.0);
        let mut s = String::new();
        for (x, y, z) in [
            (-sx, 0.0, -sz),
            (sx, 0.0, -sz),
            (sx, 2.0 * sy, -sz),
            (-sx, 2.0 * sy, -sz),
            (-sx, 0.0, sz),
            (sx, 0.0, sz),
            (sx, 2.0 * sy, sz),
            (-sx, 2.0 * sy, sz),
        ] {
            let _ = writeln!(s, "v {x:?} {y:?} {z:?}");
        }
        s.push_str("f 1 4 3 2\nf 5 6 7 8\nf 1 5 8 4\nf 2 3 7 6\nf 1 2 6 5\nf 4 8 7 3\n");
        s
    }

    pub fn car_model(category: Category, name: &str) -> CarModel {
        let [l, w, h] = dimensions(category);
        CarModel {
            name: name.to_owned(),
            category,
            mesh: parse_obj(&wedge_car_obj(l, w, h)).expect("procedural mesh parses"),
        }
    }
}
