//! 2D effects applied to the rendered foreground before compositing.
//!
//! Stages run in the order chromatic aberration, depth blur, tone
//! adjustment. Neutral parameters short-circuit to an exact copy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::renderer::RenderLayer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostFxError {
    #[error("depth blur strength must be non-negative, got {0}")]
    NegativeStrength(f64),
    #[error("invalid postfx parameters: {0}")]
    InvalidParams(String),
}

/// Largest blur radius in pixels.
pub const MAX_BLUR_RADIUS: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostFxParams {
    pub enabled: bool,
    pub chroma_shift: f64,
    pub dof_focus: f64,
    pub dof_strength: f64,
    /// Knots `(input, output)` of a piecewise-linear curve.
    pub color_curve: Vec<[f64; 2]>,
    pub gamma: f64,
}

impl Default for PostFxParams {
    fn default() -> Self {
        Self {
            enabled: true,
            chroma_shift: 1.0,
            dof_focus: 12.0,
            dof_strength: 15.0,
            color_curve: vec![[0.0, 0.0], [0.25, 0.22], [0.75, 0.78], [1.0, 1.0]],
            gamma: 1.05,
        }
    }
}

impl PostFxParams {
    /// Parameters under which every stage is the identity.
    pub fn neutral() -> Self {
        Self {
            enabled: true,
            chroma_shift: 0.0,
            dof_focus: 12.0,
            dof_strength: 0.0,
            color_curve: identity_curve(),
            gamma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PostFxError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(PostFxError::InvalidParams(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.dof_strength < 0.0 {
            return Err(PostFxError::NegativeStrength(self.dof_strength));
        }
        if !self.dof_strength.is_finite() || !self.chroma_shift.is_finite() {
            return Err(PostFxError::InvalidParams("non-finite parameter".into()));
        }
        if !(self.dof_focus > 0.0 && self.dof_focus.is_finite()) {
            return Err(PostFxError::InvalidParams(format!(
                "dof_focus must be positive, got {}",
                self.dof_focus
            )));
        }
        validate_curve(&self.color_curve)
    }
}

pub fn identity_curve() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [1.0, 1.0]]
}

fn validate_curve(curve: &[[f64; 2]]) -> Result<(), PostFxError> {
    if curve.len() < 2 {
        return Err(PostFxError::InvalidParams(
            "color curve needs at least two knots".into(),
        ));
    }
    if curve.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PostFxError::InvalidParams("color curve has non-finite knots".into()));
    }
    if curve.windows(2).any(|w| w[1][0] <= w[0][0] || w[1][1] <= w[0][1]) {
        return Err(PostFxError::InvalidParams(
            "color curve knots must be strictly increasing in both coordinates".into(),
        ));
    }
    Ok(())
}

fn is_identity_curve(curve: &[[f64; 2]]) -> bool {
    curve.iter().all(|k| k[0] == k[1])
}

/// Evaluates a piecewise-linear curve; the end segments extend linearly.
pub fn eval_curve(curve: &[[f64; 2]], x: f64) -> f64 {
    let n = curve.len();
    let seg = match curve.iter().position(|k| x < k[0]) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => n - 2,
    }
    .min(n - 2);
    let ([x0, y0], [x1, y1]) = (curve[seg], curve[seg + 1]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Bilinear sample of one color channel, zero outside the raster.
fn sample_channel(layer: &RenderLayer, ch: usize, x: f64, y: f64) -> f64 {
    let (w, h) = (i64::from(layer.width), i64::from(layer.height));
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as i64, y0 as i64);
    let at = |px: i64, py: i64| {
        if px < 0 || py < 0 || px >= w || py >= h {
            0.0
        } else {
            layer.color[(py * w + px) as usize][ch]
        }
    };
    let top = at(xi, yi) * (1.0 - fx) + at(xi + 1, yi) * fx;
    let bot = at(xi, yi + 1) * (1.0 - fx) + at(xi + 1, yi + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Radially rescales red by `1 + shift/R` and blue by `1 - shift/R` about
/// the image center, `R` being the half-diagonal.
///
/// Alpha is left alone, so resampled color is clamped to it to keep the
/// layer premultiplied.
pub fn chromatic_aberration(layer: &RenderLayer, shift: f64) -> RenderLayer {
    if shift == 0.0 || layer.is_empty() {
        return layer.clone();
    }
    let (w, h) = (f64::from(layer.width), f64::from(layer.height));
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let radius = 0.5 * w.hypot(h);
    let scales = [1.0 + shift / radius, 1.0, 1.0 - shift / radius];
    let mut out = layer.clone();
    out.color
        .par_chunks_mut(layer.width as usize)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, px) in row.iter_mut().enumerate() {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                for ch in [0, 2] {
                    let s = scales[ch];
                    let v = sample_channel(layer, ch, cx + dx / s, cy + dy / s);
                    px[ch] = v.clamp(0.0, px[3]);
                }
            }
        });
    out
}

pub fn blur_radius(depth: f64, focus: f64, strength: f64) -> f64 {
    if !depth.is_finite() || depth <= 0.0 {
        return 0.0;
    }
    (strength * (1.0 / depth - 1.0 / focus).abs()).clamp(0.0, MAX_BLUR_RADIUS)
}

/// Depth-of-field blur with per-pixel radius `strength·|1/depth − 1/focus|`.
///
/// Pixels exchange energy pairwise: `p` and `q` trade a share of their
/// difference when they lie within the larger of their two radii. Shares
/// are symmetric and every pixel gives away at most all of itself, so the
/// kernel is doubly stochastic: premultiplied energy is conserved, alpha
/// stays in `[0, 1]` and color stays below alpha.
pub fn depth_blur(layer: &RenderLayer, focus: f64, strength: f64) -> Result<RenderLayer, PostFxError> {
    if strength < 0.0 || strength.is_nan() {
        return Err(PostFxError::NegativeStrength(strength));
    }
    if strength == 0.0 {
        return Ok(layer.clone());
    }
    let radii: Vec<f64> = layer.depth.iter().map(|&d| blur_radius(d, focus, strength)).collect();
    if radii.iter().all(|&r| r < 1.0) {
        return Ok(layer.clone());
    }

    // unnormalized share of each pair, summed per pixel
    let mut load = vec![0.0f64; layer.len()];
    for_each_pair(layer, &radii, |p, q, k| {
        load[p] += k;
        load[q] += k;
    });

    let mut color = layer.color.clone();
    for_each_pair(layer, &radii, |p, q, k| {
        let w = k / load[p].max(load[q]).max(1.0);
        let (a, b) = (layer.color[p], layer.color[q]);
        for ch in 0..4 {
            let delta = w * (b[ch] - a[ch]);
            color[p][ch] += delta;
            color[q][ch] -= delta;
        }
    });

    let mut out = layer.clone();
    for (o, c) in out.color.iter_mut().zip(color) {
        let alpha = c[3].clamp(0.0, 1.0);
        *o = [
            c[0].clamp(0.0, alpha),
            c[1].clamp(0.0, alpha),
            c[2].clamp(0.0, alpha),
            alpha,
        ];
    }
    Ok(out)
}

/// Calls `f(p, q, 1/N)` once per unordered pixel pair closer than the
/// larger radius `r` of the two, `N` being the lattice size of a radius-`r`
/// disc. Pairs are visited in a fixed order.
fn for_each_pair(layer: &RenderLayer, radii: &[f64], mut f: impl FnMut(usize, usize, f64)) {
    let (w, h) = (layer.width as i64, layer.height as i64);
    let mut disc: Vec<(i64, i64)> = Vec::new();
    let mut disc_radius = f64::NAN;
    for (p, &r) in radii.iter().enumerate() {
        if r < 1.0 {
            continue;
        }
        if r != disc_radius {
            let ri = r.floor() as i64;
            disc.clear();
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if ((dx * dx + dy * dy) as f64) <= r * r {
                        disc.push((dx, dy));
                    }
                }
            }
            disc_radius = r;
        }
        let share = 1.0 / disc.len() as f64;
        let (x, y) = (p as i64 % w, p as i64 / w);
        for &(dx, dy) in &disc {
            let (tx, ty) = (x + dx, y + dy);
            if (dx, dy) == (0, 0) || !(0..w).contains(&tx) || !(0..h).contains(&ty) {
                continue;
            }
            let q = (ty * w + tx) as usize;
            // the pixel with the larger radius owns the pair; ties go to the lower index
            let rq = radii[q];
            if rq > r || (rq == r && q < p) {
                continue;
            }
            f(p, q, share);
        }
    }
}

/// Applies `curve` then `^(1/gamma)` to unpremultiplied color.
pub fn tone_adjust(layer: &RenderLayer, curve: &[[f64; 2]], gamma: f64) -> Result<RenderLayer, PostFxError> {
    validate_curve(curve)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(PostFxError::InvalidParams(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if gamma == 1.0 && is_identity_curve(curve) {
        return Ok(layer.clone());
    }
    let inv_gamma = 1.0 / gamma;
    let mut out = layer.clone();
    out.color.par_iter_mut().for_each(|px| {
        let a = px[3];
        if a <= 0.0 {
            return;
        }
        for c in px.iter_mut().take(3) {
            let v = eval_curve(curve, *c / a).clamp(0.0, 1.0);
            *c = v.powf(inv_gamma) * a;
        }
    });
    Ok(out)
}

pub fn apply_chain(layer: &RenderLayer, params: &PostFxParams) -> Result<RenderLayer, PostFxError> {
    params.validate()?;
    if !params.enabled {
        return Ok(layer.clone());
    }
    let shifted = chromatic_aberration(layer, params.chroma_shift);
    let blurred = depth_blur(&shifted, params.dof_focus, params.dof_strength)?;
    tone_adjust(&blurred, &params.color_curve, params.gamma)
}
