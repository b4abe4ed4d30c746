//! Overlaying the foreground layer on the background and deriving instance
//! ground truth.

use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::renderer::{RenderLayer, SceneInstance};

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error("background is {background:?} but layer is {layer:?}")]
    DimensionMismatch { background: (u32, u32), layer: (u32, u32) },
    #[error("background pool is empty")]
    EmptyPool,
    #[error("background mode `real` needs the rig image")]
    MissingRealImage,
    #[error("cannot read background {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("invalid RLE: {0}")]
    InvalidRle(String),
}

/// Pixels at or above this coverage belong to an instance mask.
pub const MASK_ALPHA_THRESHOLD: f64 = 0.5;
pub const DISPLAY_GAMMA: f64 = 2.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    #[default]
    Real,
    Black,
    RandomImage,
    SyntheticProxy,
}

/// Dense binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

/// Run-length code: row-major alternating runs, starting with zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_indices(width: u32, height: u32, indices: &[u32]) -> Self {
        let mut m = Self::new(width, height);
        for &i in indices {
            m.data[i as usize] = true;
        }
        m
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    /// Tight `[x, y, w, h]` box, `None` for an empty mask.
    pub fn bbox(&self) -> Option<[u32; 4]> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let mut any = false;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = (i as u32 % self.width, i as u32 / self.width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            any = true;
        }
        any.then(|| [x0, y0, x1 - x0 + 1, y1 - y0 + 1])
    }

    pub fn to_rle(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.data {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Rle {
            size: [self.width, self.height],
            counts,
        }
    }

    pub fn from_rle(rle: &Rle) -> Result<Self, CompositeError> {
        let [w, h] = rle.size;
        let total: u64 = rle.counts.iter().map(|&c| u64::from(c)).sum();
        if total != u64::from(w) * u64::from(h) {
            return Err(CompositeError::InvalidRle(format!(
                "runs sum to {total}, raster has {} pixels",
                u64::from(w) * u64::from(h)
            )));
        }
        let mut data = Vec::with_capacity(total as usize);
        for (k, &c) in rle.counts.iter().enumerate() {
            data.extend(std::iter::repeat_n(k % 2 == 1, c as usize));
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub instance_id: u32,
    pub origin: Origin,
    pub category: String,
    pub mask: BinaryMask,
    pub bbox: [u32; 4],
    pub visible_fraction: f64,
}

/// On-disk form of one annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub id: u32,
    pub origin: Origin,
    pub category: String,
    pub bbox: [u32; 4],
    pub rle: Rle,
    pub visible_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub image: String,
    pub instances: Vec<AnnotationRecord>,
}

impl InstanceAnnotation {
    pub fn to_record(&self) -> AnnotationRecord {
        AnnotationRecord {
            id: self.instance_id,
            origin: self.origin,
            category: self.category.clone(),
            bbox: self.bbox,
            rle: self.mask.to_rle(),
            visible_fraction: self.visible_fraction,
        }
    }

    /// Rebuilds an annotation; the box is recomputed from the mask.
    pub fn from_record(rec: &AnnotationRecord) -> Result<Self, CompositeError> {
        let mask = BinaryMask::from_rle(&rec.rle)?;
        let bbox = mask
            .bbox()
            .ok_or_else(|| CompositeError::InvalidRle(format!("instance {} has an empty mask", rec.id)))?;
        Ok(Self {
            instance_id: rec.id,
            origin: rec.origin,
            category: rec.category.clone(),
            mask,
            bbox,
            visible_fraction: rec.visible_fraction,
        })
    }
}

fn decode_lut() -> [f64; 256] {
    let mut lut = [0.0; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = (i as f64 / 255.0).powf(DISPLAY_GAMMA);
    }
    lut
}

pub fn encode_display(linear: f64) -> u8 {
    (linear.clamp(0.0, 1.0).powf(1.0 / DISPLAY_GAMMA) * 255.0).round() as u8
}

/// Premultiplied over in linear space with the shadow applied to the
/// background first.
pub fn composite(background: &RgbImage, layer: &RenderLayer) -> Result<RgbImage, CompositeError> {
    if background.dimensions() != (layer.width, layer.height) {
        return Err(CompositeError::DimensionMismatch {
            background: background.dimensions(),
            layer: (layer.width, layer.height),
        });
    }
    let lut = decode_lut();
    let mut out = background.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let c = layer.color[i];
        let alpha = c[3].clamp(0.0, 1.0);
        let shadow = layer.shadow_alpha[i].clamp(0.0, 1.0);
        if alpha == 0.0 && shadow == 0.0 {
            continue;
        }
        for ch in 0..3 {
            let bg = lut[px.0[ch] as usize] * (1.0 - shadow);
            px.0[ch] = encode_display(c[ch] + bg * (1.0 - alpha));
        }
    }
    Ok(out)
}

/// Visible instance masks. Instances that end up with no pixel are dropped.
pub fn derive_annotations(layer: &RenderLayer, instances: &[SceneInstance]) -> Vec<InstanceAnnotation> {
    let mut sorted: Vec<&SceneInstance> = instances.iter().collect();
    sorted.sort_by_key(|i| i.instance_id);
    let mut out = Vec::new();
    for inst in sorted {
        let id = inst.instance_id;
        let mut mask = BinaryMask::new(layer.width, layer.height);
        for (i, m) in mask.data.iter_mut().enumerate() {
            *m = layer.instance_ids[i] == id && layer.color[i][3] >= MASK_ALPHA_THRESHOLD;
        }
        let Some(bbox) = mask.bbox() else { continue };
        let visible = mask.count();
        let mut unoccluded = mask.clone();
        if let Some(iso) = layer.isolated_masks.get(&id) {
            for &p in iso {
                unoccluded.data[p as usize] = true;
            }
        }
        out.push(InstanceAnnotation {
            instance_id: id,
            origin: Origin::Synthetic,
            category: inst.model.category.as_str().to_string(),
            mask,
            bbox,
            visible_fraction: visible as f64 / unoccluded.count() as f64,
        });
    }
    out
}

/// Removes synthetic coverage from real masks, dropping emptied ones.
pub fn update_real_masks(real: &[InstanceAnnotation], layer: &RenderLayer) -> Vec<InstanceAnnotation> {
    real.iter()
        .filter_map(|ann| {
            let mut mask = ann.mask.clone();
            for (i, m) in mask.data.iter_mut().enumerate() {
                if layer.color.get(i).is_some_and(|c| c[3] >= MASK_ALPHA_THRESHOLD) {
                    *m = false;
                }
            }
            let bbox = mask.bbox()?;
            Some(InstanceAnnotation {
                mask,
                bbox,
                ..ann.clone()
            })
        })
        .collect()
}

/// Scales to cover `width × height` and crops the center.
pub fn fit_to(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    if image.dimensions() == (width, height) {
        return image.clone();
    }
    let (iw, ih) = (f64::from(image.width()), f64::from(image.height()));
    let scale = (f64::from(width) / iw).max(f64::from(height) / ih);
    let sw = ((iw * scale).ceil() as u32).max(width);
    let sh = ((ih * scale).ceil() as u32).max(height);
    let scaled = imageops::resize(image, sw, sh, imageops::FilterType::Triangle);
    imageops::crop_imm(&scaled, (sw - width) / 2, (sh - height) / 2, width, height).to_image()
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, CompositeError> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| CompositeError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn resolve_background<R: Rng + ?Sized>(
    mode: BackgroundMode,
    real_image: Option<&RgbImage>,
    pool: &[PathBuf],
    size: (u32, u32),
    rng: &mut R,
) -> Result<RgbImage, CompositeError> {
    match mode {
        BackgroundMode::Black => Ok(RgbImage::new(size.0, size.1)),
        BackgroundMode::Real => real_image.cloned().ok_or(CompositeError::MissingRealImage),
        BackgroundMode::RandomImage | BackgroundMode::SyntheticProxy => {
            if pool.is_empty() {
                return Err(CompositeError::EmptyPool);
            }
            let path = &pool[rng.gen_range(0..pool.len())];
            Ok(fit_to(&load_rgb(path)?, size.0, size.1))
        }
    }
}
