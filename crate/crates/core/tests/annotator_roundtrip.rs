//! The file contract with the birdseye annotator: exported image and
//! metadata in, pixel polylines out, trajectories back into placement.

mod common;

use augmentor::demo::LANES;
use augmentor::geometry::project;
use augmentor::pipeline::birdseye::DEFAULT_EXTENT;
use augmentor::pipeline::{export_birdseye, load_rigs, BirdseyeMetadata};
use augmentor::placement::{sample_manual, PoseSample, TrajectoryFile, TrajectorySet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::small_fixture;

#[test]
fn drawn_lanes_come_back_as_placements() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = small_fixture(&tmp.path().join("fx"), 1);
    let rig = &load_rigs(&fx.rigs).unwrap()[0];
    let export = export_birdseye(rig, 0.1, &DEFAULT_EXTENT, &tmp.path().join("bev")).unwrap();

    // what the annotator reads back
    let meta: BirdseyeMetadata = serde_json::from_str(&std::fs::read_to_string(&export.metadata).unwrap()).unwrap();
    meta.validate().unwrap();
    let img = image::open(&export.image).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (meta.width, meta.height));
    assert_eq!((meta.width, meta.height), (400, 600));
    assert_eq!(meta.pixel_to_ground([0.0, 0.0]), [-20.0, 4.0]);

    // three lanes drawn along the painted road, in birdseye pixels
    let drawn: Vec<Vec<[f64; 2]>> = LANES
        .iter()
        .map(|&x| {
            let u = (x - meta.origin[0]) / meta.meters_per_pixel;
            vec![[u, 30.0], [u + 2.0, 200.0], [u - 3.0, 380.0]]
        })
        .collect();
    let file = meta.trajectories_from_pixels(&drawn);
    let text = serde_json::to_string_pretty(&file).unwrap();

    // export → import → export is byte-stable
    let reparsed: TrajectoryFile = serde_json::from_str(&text).unwrap();
    assert_eq!(reparsed, file);
    assert_eq!(serde_json::to_string_pretty(&reparsed).unwrap(), text);

    // pixel → meters → pixel identity
    for (line, px) in file.polylines.iter().zip(&drawn) {
        for (g, p) in line.iter().zip(px) {
            let back = meta.ground_to_pixel(*g);
            assert!((back[0] - p[0]).abs() < 1e-9 && (back[1] - p[1]).abs() < 1e-9);
            let e = meta.extent;
            assert!((e.x_min..=e.x_max).contains(&g[0]) && (e.z_min..=e.z_max).contains(&g[1]));
        }
    }

    let traj = TrajectorySet::from_json_str(&text, "annotator").unwrap();
    let plane = rig.calibration.plane;
    let poses = sample_manual(&traj, &plane, 300, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for pose in poses {
        let PoseSample::OnPlane { ground, .. } = pose else {
            panic!("manual poses stand on the plane")
        };
        let on_some_segment = traj.polylines.iter().flat_map(|l| l.windows(2)).any(|w| {
            let (a, b) = (w[0], w[1]);
            let cross = (b[0] - a[0]) * (ground[1] - a[1]) - (b[1] - a[1]) * (ground[0] - a[0]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let t = ((ground[0] - a[0]) * (b[0] - a[0]) + (ground[1] - a[1]) * (b[1] - a[1])) / (len * len);
            (cross / len).abs() < 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&t)
        });
        assert!(on_some_segment, "{ground:?}");
        // the point shows up where the birdseye said it would
        let p = project(&pose.position(), &rig.calibration.intrinsics).unwrap();
        assert!(p[0].is_finite() && p[1].is_finite());
    }
}

#[test]
fn mismatched_metadata_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = small_fixture(&tmp.path().join("fx"), 1);
    let rig = &load_rigs(&fx.rigs).unwrap()[0];
    let export = export_birdseye(rig, 0.25, &DEFAULT_EXTENT, tmp.path()).unwrap();
    let mut meta = export.meta.clone();
    meta.validate().unwrap();
    meta.height += 1;
    assert!(meta.validate().is_err());
    let unknown = r#"{"rig_id":"a","meters_per_pixel":0.1,"extent":{"x_min":0,"x_max":1,"z_min":0,"z_max":1},"origin":[0,0],"width":10,"height":10,"zoom":2}"#;
    assert!(serde_json::from_str::<BirdseyeMetadata>(unknown).is_err());
}

#[test]
fn annotator_files_reject_bad_polylines() {
    assert!(TrajectorySet::from_json_str(r#"{"polylines": [[[0, 1]]]}"#, "x").is_err());
    assert!(TrajectorySet::from_json_str(r#"{"polylines": [[[0, 1], [0, 1]]]}"#, "x").is_err());
    assert!(TrajectorySet::from_json_str(r#"{"polylines": [], "undo": []}"#, "x").is_err());
    let ok = TrajectorySet::from_json_str(
        r#"{"meters_per_pixel": 0.1, "polylines": [[[0, 5], [0, 9]]], "rig_id": "street00"}"#,
        "x",
    )
    .unwrap();
    assert_eq!(ok.total_length(), 4.0);
}
