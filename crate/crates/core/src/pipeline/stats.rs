use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentationManifest, PipelineError, MANIFEST_FILE};
use crate::compositor::{AnnotationFile, BinaryMask, Origin};

pub const VISIBLE_FRACTION_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub composites: usize,
    /// Real instances still visible after augmentation.
    pub real_instances: usize,
    /// Annotated synthetic instances (fully hidden cars are not annotated).
    pub synthetic_instances: usize,
    /// Cars placed after collision filtering.
    pub placed_cars: usize,
    pub covered_real_pixels: u64,
    /// Annotated synthetic cars per composite → number of composites.
    pub cars_per_composite: BTreeMap<usize, usize>,
    /// Synthetic visible fractions in ten equal bins over `[0, 1]`.
    pub visible_fraction_histogram: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> PipelineError {
    PipelineError::CorruptManifest(msg.into())
}

fn read_annotations(path: &Path) -> Result<AnnotationFile, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| corrupt(format!("{}: {e}", path.display())))
}

fn real_pixels(file: &AnnotationFile) -> Result<u64, PipelineError> {
    let mut total = 0;
    for rec in file.instances.iter().filter(|r| r.origin == Origin::Real) {
        let mask = BinaryMask::from_rle(&rec.rle).map_err(|e| corrupt(e.to_string()))?;
        total += mask.count() as u64;
    }
    Ok(total)
}

/// Aggregates a manifest file (or the manifest inside a directory).
pub fn compute_stats(path: &Path) -> Result<DatasetStats, PipelineError> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let manifest = AugmentationManifest::load(&manifest_path)?;
    compute_stats_for(&manifest, manifest_path.parent().unwrap_or(Path::new(".")))
}

pub fn compute_stats_for(manifest: &AugmentationManifest, base: &Path) -> Result<DatasetStats, PipelineError> {
    let mut stats = DatasetStats {
        composites: manifest.records.len(),
        real_instances: 0,
        synthetic_instances: 0,
        placed_cars: 0,
        covered_real_pixels: 0,
        cars_per_composite: BTreeMap::new(),
        visible_fraction_histogram: vec![0; VISIBLE_FRACTION_BINS],
    };
    for rec in &manifest.records {
        let file = read_annotations(&base.join(&rec.annotation))?;
        let mut synthetic = 0;
        for inst in &file.instances {
            match inst.origin {
                Origin::Real => stats.real_instances += 1,
                Origin::Synthetic => {
                    synthetic += 1;
                    let f = inst.visible_fraction;
                    if !(0.0..=1.0).contains(&f) {
                        return Err(corrupt(format!("visible_fraction {f} in {}", rec.annotation)));
                    }
                    let bin = ((f * VISIBLE_FRACTION_BINS as f64) as usize).min(VISIBLE_FRACTION_BINS - 1);
                    stats.visible_fraction_histogram[bin] += 1;
                }
            }
        }
        stats.synthetic_instances += synthetic;
        stats.placed_cars += rec.placements.len();
        *stats.cars_per_composite.entry(synthetic).or_default() += 1;
        if let Some(original) = &rec.real_annotations {
            let before = real_pixels(&read_annotations(original)?)?;
            let after = real_pixels(&file)?;
            if after > before {
                return Err(corrupt(format!("{}: real masks grew", rec.annotation)));
            }
            stats.covered_real_pixels += before - after;
        }
    }
    Ok(stats)
}

impl DatasetStats {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("composites", self.composites.to_string()),
            ("real instances", self.real_instances.to_string()),
            ("synthetic instances", self.synthetic_instances.to_string()),
            ("placed cars", self.placed_cars.to_string()),
            ("covered real pixels", self.covered_real_pixels.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<22}{v:>12}");
        }
        let _ = writeln!(s, "\ncars per composite");
        for (k, v) in &self.cars_per_composite {
            let _ = writeln!(s, "  {k:>3}  {v:>8}");
        }
        let _ = writeln!(s, "\nvisible fraction");
        for (i, v) in self.visible_fraction_histogram.iter().enumerate() {
            let lo = i as f64 / VISIBLE_FRACTION_BINS as f64;
            let hi = (i + 1) as f64 / VISIBLE_FRACTION_BINS as f64;
            let _ = writeln!(
                s,
                "  [{lo:.1}, {hi:.1}{}  {v:>8}",
                if i + 1 == VISIBLE_FRACTION_BINS { "]" } else { ")" }
            );
        }
        s
    }
}
