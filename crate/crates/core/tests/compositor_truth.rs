//! Compositing and annotation ground truth on constructed scenes.

mod common;

use augmentor::assets::{Category, Material};
use augmentor::compositor::{
    composite, derive_annotations, resolve_background, update_real_masks, BackgroundMode, BinaryMask,
    InstanceAnnotation, Origin,
};
use augmentor::envmap::EnvironmentMap;
use augmentor::renderer::{render_layer, RenderSettings};
use image::{ImageFormat, Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::io::Cursor;

use common::oracle::occlusion_scene;
use common::{calibration, car};

fn quick_settings() -> RenderSettings {
    RenderSettings {
        diffuse_env_samples: 1,
        shadow_samples: 4,
        ..RenderSettings::default()
    }
}

#[test]
fn visible_fraction_matches_analytic_overlap() {
    let (calib, scene, expected) = occlusion_scene();
    assert!(
        expected > 0.2 && expected < 0.9,
        "scene should be partially occluded: {expected}"
    );
    let layer = render_layer(
        &scene,
        &calib,
        &EnvironmentMap::constant([1.0; 3]),
        &quick_settings(),
        0,
    )
    .unwrap();
    let anns = derive_annotations(&layer, &scene);
    assert_eq!(anns.len(), 2);
    assert!(
        (anns[0].visible_fraction - 1.0).abs() < 0.02,
        "near card {}",
        anns[0].visible_fraction
    );
    let got = anns[1].visible_fraction;
    assert!((got - expected).abs() < 0.02, "far card {got} vs analytic {expected}");
    assert!(anns[0].mask.data.iter().zip(&anns[1].mask.data).all(|(a, b)| !(a & b)));
}

#[test]
fn real_masks_only_shrink() {
    let (calib, scene, _) = occlusion_scene();
    let layer = render_layer(
        &scene,
        &calib,
        &EnvironmentMap::constant([1.0; 3]),
        &quick_settings(),
        0,
    )
    .unwrap();
    let (w, h) = (calib.intrinsics.width, calib.intrinsics.height);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let real: Vec<InstanceAnnotation> = (0..6)
        .map(|n| {
            let mut mask = BinaryMask::new(w, h);
            let (x0, y0) = (rng.gen_range(0..w - 80), rng.gen_range(0..h - 60));
            for y in y0..y0 + 60 {
                for x in x0..x0 + 80 {
                    mask.data[(y * w + x) as usize] = true;
                }
            }
            let bbox = mask.bbox().unwrap();
            InstanceAnnotation {
                instance_id: n + 1,
                origin: Origin::Real,
                category: "car".into(),
                mask,
                bbox,
                visible_fraction: 1.0,
            }
        })
        .collect();
    let updated = update_real_masks(&real, &layer);
    for u in &updated {
        let original = real.iter().find(|r| r.instance_id == u.instance_id).unwrap();
        assert!(u.mask.data.iter().zip(&original.mask.data).all(|(&a, &b)| !a || b));
        assert_eq!(Some(u.bbox), u.mask.bbox());
        for (i, &m) in u.mask.data.iter().enumerate() {
            assert!(!m || layer.color[i][3] < 0.5);
        }
    }
}

fn textured_background(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([(x * 7 + y) as u8, (y * 3) as u8, ((x ^ y) * 5) as u8])
    })
}

fn png_round_trip(img: &RgbImage) -> RgbImage {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png).unwrap();
    image::load_from_memory(&bytes).unwrap().to_rgb8()
}

#[test]
fn empty_layer_composite_is_lossless() {
    let calib = calibration(200, 120, 1.5);
    let bg = textured_background(200, 120);
    let layer = render_layer(&[], &calib, &EnvironmentMap::constant([1.0; 3]), &quick_settings(), 0).unwrap();
    let out = png_round_trip(&composite(&bg, &layer).unwrap());
    assert_eq!(out.as_raw(), bg.as_raw());
}

#[test]
fn five_cars_leave_outside_pixels_untouched() {
    let calib = calibration(240, 140, 1.5);
    let plane = calib.plane;
    let cats = [
        Category::Sedan,
        Category::Suv,
        Category::Van,
        Category::Hatchback,
        Category::MiniVan,
    ];
    let scene: Vec<_> = cats
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            let x = -6.0 + 3.0 * n as f64;
            car(
                n as u32 + 1,
                c,
                &plane,
                [x, 9.0 + 2.0 * n as f64],
                0.4 * n as f64,
                Material::diffuse([0.6, 0.3, 0.2]),
            )
        })
        .collect();
    let layer = render_layer(
        &scene,
        &calib,
        &EnvironmentMap::constant([1.0; 3]),
        &quick_settings(),
        3,
    )
    .unwrap();
    let bg = textured_background(240, 140);
    let out = png_round_trip(&composite(&bg, &layer).unwrap());
    let (mut outside, mut changed) = (0, 0);
    for (i, (a, b)) in out.pixels().zip(bg.pixels()).enumerate() {
        if layer.color[i][3] == 0.0 && layer.shadow_alpha[i] == 0.0 {
            assert_eq!(a, b, "pixel {i}");
            outside += 1;
        } else if a != b {
            changed += 1;
        }
    }
    assert!(outside > 1000 && changed > 1000, "outside {outside}, changed {changed}");
    assert_eq!(derive_annotations(&layer, &scene).len(), 5);
}

#[test]
fn background_pool_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let pool: Vec<_> = (0..5u8)
        .map(|n| {
            let p = dir.path().join(format!("bg{n}.png"));
            RgbImage::from_pixel(4, 4, Rgb([n * 40, 0, 0])).save(&p).unwrap();
            p
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 2000;
    let mut counts = [0u32; 5];
    for _ in 0..draws {
        let img = resolve_background(BackgroundMode::RandomImage, None, &pool, (4, 4), &mut rng).unwrap();
        counts[usize::from(img.get_pixel(0, 0).0[0] / 40)] += 1;
    }
    let expected = f64::from(draws) / 5.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (f64::from(c) - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(4.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "counts {counts:?}, p = {p}");
}

proptest! {
    #[test]
    fn rle_round_trips(w in 1u32..40, h in 1u32..40, bits in prop::collection::vec(any::<bool>(), 1600)) {
        let mut m = BinaryMask::new(w, h);
        for (i, d) in m.data.iter_mut().enumerate() {
            *d = bits[i];
        }
        let rle = m.to_rle();
        prop_assert_eq!(rle.counts.iter().map(|&c| c as usize).sum::<usize>(), (w * h) as usize);
        prop_assert_eq!(BinaryMask::from_rle(&rle).unwrap(), m);
    }

    #[test]
    fn composite_with_no_coverage_is_identity(w in 1u32..30, h in 1u32..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let out = composite(&bg, &augmentor::renderer::RenderLayer::empty(w, h)).unwrap();
        prop_assert_eq!(out, bg);
    }
}
