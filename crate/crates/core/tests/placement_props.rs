mod common;

use std::f64::consts::PI;

use augmentor::assets::{footprint, procedural, Category};
use augmentor::demo::{demo_calibration, road_mask};
use augmentor::geometry::{GroundPlane, Vec3};
use augmentor::placement::{
    kept_after_collisions, sample_ground_plane, sample_manual, sample_road_mask, sample_unconstrained, segment_angle,
    PlacementRegion, PoseSample, TrajectorySet, VolumeBounds,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const N: usize = 1000;

fn tilted_plane() -> GroundPlane {
    let (p, r): (f64, f64) = (0.04, -0.02);
    let n = Vec3::new(r.sin(), -p.cos() * r.cos(), p.sin() * r.cos()).normalize();
    GroundPlane::new([n.x, n.y, n.z], -1.65).unwrap()
}

fn on_plane(pose: &PoseSample, plane: &GroundPlane) -> f64 {
    let PoseSample::OnPlane { position, ground, .. } = pose else {
        panic!("expected an on-plane pose")
    };
    let p = Vec3::from(*position);
    let lifted = plane.lift(*ground);
    plane.residual(&p).abs().max((p - lifted).norm())
}

fn lanes() -> TrajectorySet {
    TrajectorySet::new(
        vec![
            vec![[-3.5, 5.0], [-3.5, 6.0], [-3.0, 8.0]],
            vec![[0.0, 6.0], [0.5, 9.0], [3.0, 13.0]],
            vec![[3.5, 40.0], [3.5, 20.0]],
        ],
        "lanes",
    )
    .unwrap()
}

fn segments(traj: &TrajectorySet) -> Vec<([f64; 2], [f64; 2])> {
    traj.polylines
        .iter()
        .flat_map(|l| l.windows(2).map(|w| (w[0], w[1])))
        .collect()
}

fn distance_to_segment(p: [f64; 2], (a, b): ([f64; 2], [f64; 2])) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn angle_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[test]
fn manual_poses_lie_on_segments_and_follow_them() {
    let plane = tilted_plane();
    let traj = lanes();
    let segs = segments(&traj);
    let poses = sample_manual(&traj, &plane, N, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(poses.len(), N);
    for pose in &poses {
        assert!(on_plane(pose, &plane) < 1e-6);
        let PoseSample::OnPlane { ground, yaw, .. } = *pose else {
            unreachable!()
        };
        let seg = segs
            .iter()
            .copied()
            .min_by(|s, t| distance_to_segment(ground, *s).total_cmp(&distance_to_segment(ground, *t)))
            .unwrap();
        assert!(distance_to_segment(ground, seg) < 1e-9);
        assert!(angle_mod_pi(yaw, segment_angle(seg.0, seg.1)) < 1e-9, "yaw {yaw}");
    }
}

#[test]
fn manual_sampling_is_weighted_by_arc_length() {
    let plane = GroundPlane::from_height(1.5);
    // segment lengths 1, 2, 3 and 4 m
    let traj = TrajectorySet::new(
        vec![
            vec![[0.0, 0.0], [0.0, 1.0], [0.0, 3.0]],
            vec![[5.0, 0.0], [5.0, 3.0], [5.0, 7.0]],
        ],
        "weights",
    )
    .unwrap();
    let segs = segments(&traj);
    let draws = 10_000;
    let mut counts = [0u32; 4];
    for pose in sample_manual(&traj, &plane, draws, &mut ChaCha8Rng::seed_from_u64(2)).unwrap() {
        let PoseSample::OnPlane { ground, .. } = pose else {
            unreachable!()
        };
        let i = (0..4).find(|&i| distance_to_segment(ground, segs[i]) < 1e-9).unwrap();
        counts[i] += 1;
    }
    let lengths = [1.0, 2.0, 3.0, 4.0];
    let chi2: f64 = counts
        .iter()
        .zip(lengths)
        .map(|(&c, l)| {
            let e = draws as f64 * l / 10.0;
            (f64::from(c) - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "counts {counts:?}, p = {p}");
}

#[test]
fn road_mask_poses_are_on_road() {
    let calib = demo_calibration(1, 320, 160);
    let mask = road_mask(&calib);
    let poses = sample_road_mask(
        &mask,
        &calib.intrinsics,
        &calib.plane,
        N,
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    assert_eq!(poses.len(), N);
    for pose in &poses {
        assert!(on_plane(pose, &calib.plane) < 1e-6);
        let [u, v] = augmentor::geometry::project(&pose.position(), &calib.intrinsics).unwrap();
        let (x, y) = (u.round() as u32, v.round() as u32);
        assert!((u - f64::from(x)).abs() < 1e-6 && (v - f64::from(y)).abs() < 1e-6);
        assert_ne!(mask.get_pixel(x, y).0[0], 0);
    }
}

#[test]
fn ground_plane_poses_fill_the_region() {
    let plane = tilted_plane();
    let region = PlacementRegion {
        max_count: N as u32,
        ..PlacementRegion::default()
    };
    let poses = sample_ground_plane(&region, &plane, N, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(poses.len(), N);
    for pose in &poses {
        assert!(on_plane(pose, &plane) < 1e-6);
        let PoseSample::OnPlane {
            ground: [x, z], yaw, ..
        } = *pose
        else {
            unreachable!()
        };
        assert!((region.x_min..region.x_max).contains(&x) && (region.z_min..region.z_max).contains(&z));
        assert!((0.0..2.0 * PI).contains(&yaw));
    }
}

#[test]
fn unconstrained_poses_stay_in_volume() {
    let bounds = VolumeBounds::default();
    let poses = sample_unconstrained(&bounds, N, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(poses.len(), N);
    for pose in poses {
        let PoseSample::Free { position, rotation } = pose else {
            panic!("expected a free pose")
        };
        assert!((0..3).all(|i| (bounds.min[i]..bounds.max[i]).contains(&position[i])));
        let norm: f64 = rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kept_footprints_are_disjoint() {
    let plane = GroundPlane::from_height(1.5);
    let models: Vec<_> = [Category::Sedan, Category::Van, Category::Hatchback, Category::Suv]
        .iter()
        .map(|&c| procedural::car_model(c, "m"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let region = PlacementRegion {
        x_min: -12.0,
        x_max: 12.0,
        z_min: 5.0,
        z_max: 45.0,
        max_count: N as u32,
    };
    let poses = sample_ground_plane(&region, &plane, N, &mut rng).unwrap();
    let chosen: Vec<_> = (0..N).map(|_| &models[rng.gen_range(0..models.len())]).collect();
    let kept = kept_after_collisions(&poses, &chosen).unwrap();
    assert!(kept.len() > 20 && kept.len() < N);
    let rects: Vec<_> = kept.iter().map(|&i| footprint(chosen[i], &poses[i]).unwrap()).collect();
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            assert!(
                !rects[i].intersects(&rects[j]),
                "kept poses {} and {} overlap",
                kept[i],
                kept[j]
            );
        }
    }
    // every rejected pose collides with something kept before it
    for i in (0..N).filter(|i| !kept.contains(i)) {
        let r = footprint(chosen[i], &poses[i]).unwrap();
        assert!(kept
            .iter()
            .take_while(|&&k| k < i)
            .any(|&k| rects[kept.iter().position(|&x| x == k).unwrap()].intersects(&r)));
    }
}

proptest! {
    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), count in 0usize..50) {
        let plane = tilted_plane();
        let a = sample_manual(&lanes(), &plane, count, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_manual(&lanes(), &plane, count, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn on_plane_poses_satisfy_plane_equation(
        pitch in -0.2f64..0.2, height in 0.5f64..3.0, x in -30.0f64..30.0, z in 0.0f64..80.0, yaw in -10.0f64..10.0,
    ) {
        let plane = GroundPlane::new([0.0, -pitch.cos(), pitch.sin()], -height).unwrap();
        let pose = PoseSample::on_plane(&plane, [x, z], yaw);
        prop_assert!(on_plane(&pose, &plane) < 1e-6);
        let (rot, t) = pose.model_to_camera(&plane);
        prop_assert!((rot.determinant() - 1.0).abs() < 1e-9);
        prop_assert!((rot * Vec3::y() - plane.up()).norm() < 1e-12);
        prop_assert!((t - pose.position()).norm() == 0.0);
    }
}
