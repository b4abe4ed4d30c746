use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use augmentor::demo::{demo_calibration, write_fixtures, DemoOptions};
use augmentor_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe { aug_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn calibration() -> *mut AugCalibration {
    let json = c(&demo_calibration(1, 640, 320).to_json_value().to_string());
    let mut calib = ptr::null_mut();
    assert_eq!(
        unsafe { aug_calibration_from_json(json.as_ptr(), &mut calib) },
        AugStatus::Ok
    );
    assert!(!calib.is_null());
    calib
}

#[test]
fn projection_round_trip_and_homography() {
    let calib = calibration();
    let mut ground_point = [0.0; 3];
    let mut pixel = [0.0; 2];
    unsafe {
        assert_eq!(
            aug_backproject(calib, [300.0, 250.0].as_ptr(), ground_point.as_mut_ptr()),
            AugStatus::Ok
        );
        assert_eq!(
            aug_project(calib, ground_point.as_ptr(), pixel.as_mut_ptr()),
            AugStatus::Ok
        );
    }
    assert!(
        (pixel[0] - 300.0).abs() < 1e-9 && (pixel[1] - 250.0).abs() < 1e-9,
        "{pixel:?}"
    );

    let mut h = [0.0; 9];
    assert_eq!(unsafe { aug_ground_homography(calib, h.as_mut_ptr()) }, AugStatus::Ok);
    assert!(h.iter().all(|v| v.is_finite()) && h.iter().any(|&v| v != 0.0));

    // above the horizon the ray never meets the ground
    let status = unsafe { aug_backproject(calib, [300.0, 0.0].as_ptr(), ground_point.as_mut_ptr()) };
    assert_eq!(status, AugStatus::Geometry);
    assert!(
        last_error().contains("behind the camera") || last_error().contains("parallel"),
        "{}",
        last_error()
    );

    let status = unsafe { aug_project(calib, [0.0, 0.0, -1.0].as_ptr(), pixel.as_mut_ptr()) };
    assert_eq!(status, AugStatus::Geometry);
    unsafe { aug_calibration_free(calib) };
}

#[test]
fn null_and_invalid_arguments_are_reported() {
    let mut out = [0.0; 2];
    assert_eq!(
        unsafe { aug_project(ptr::null(), [0.0, 0.0, 1.0].as_ptr(), out.as_mut_ptr()) },
        AugStatus::NullArgument
    );
    assert_eq!(last_error(), "`calib` is null");

    let calib = calibration();
    assert_eq!(
        unsafe { aug_project(calib, ptr::null(), out.as_mut_ptr()) },
        AugStatus::NullArgument
    );
    assert_eq!(
        unsafe { aug_project(calib, [0.0, 0.0, 2.0].as_ptr(), out.as_mut_ptr()) },
        AugStatus::Ok
    );
    assert_eq!(last_error(), "", "success clears the message");
    unsafe { aug_calibration_free(calib) };

    let bad = [0xffu8 as c_char, 0];
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { aug_calibration_from_json(bad.as_ptr(), &mut handle) },
        AugStatus::InvalidString
    );
    let json = c("{\"focal\": 3}");
    assert_eq!(
        unsafe { aug_calibration_from_json(json.as_ptr(), &mut handle) },
        AugStatus::Rig
    );
    assert!(handle.is_null());

    // freeing null is harmless
    unsafe {
        aug_calibration_free(ptr::null_mut());
        aug_config_free(ptr::null_mut());
        aug_manifest_free(ptr::null_mut());
    }
    assert_eq!(unsafe { aug_manifest_len(ptr::null()) }, 0);
}

#[test]
fn config_handles() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { aug_config_default(&mut cfg) }, AugStatus::Ok);

    let mut required = 0usize;
    let mut small = [0 as c_char; 8];
    let status = unsafe { aug_config_to_json(cfg, small.as_mut_ptr(), small.len(), &mut required) };
    assert_eq!(status, AugStatus::BufferTooSmall);
    assert!(required > small.len());
    let mut buf = vec![0 as c_char; required];
    assert_eq!(
        unsafe { aug_config_to_json(cfg, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) },
        AugStatus::Ok
    );
    let json: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap()).unwrap();
    assert_eq!(
        (json["augmentations_per_image"].as_u64(), json["max_cars"].as_u64()),
        (Some(20), Some(5))
    );

    assert_eq!(
        unsafe { aug_config_set_max_cars(cfg, 100_000) },
        AugStatus::InvalidArgument
    );
    assert!(last_error().contains("max_cars"), "{}", last_error());
    assert_eq!(unsafe { aug_config_set_max_cars(cfg, 2) }, AugStatus::Ok);
    assert_eq!(unsafe { aug_config_set_seed(cfg, 77) }, AugStatus::Ok);
    // the seed grew the document by a byte
    assert_eq!(
        unsafe { aug_config_to_json(cfg, buf.as_mut_ptr(), buf.len(), &mut required) },
        AugStatus::BufferTooSmall
    );
    buf.resize(required, 0);
    assert_eq!(
        unsafe { aug_config_to_json(cfg, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) },
        AugStatus::Ok
    );
    let json: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap()).unwrap();
    assert_eq!((json["max_cars"].as_u64(), json["seed"].as_u64()), (Some(2), Some(77)));
    unsafe { aug_config_free(cfg) };

    let mut other = ptr::null_mut();
    let unknown = c(r#"{"max_cars": 3, "blur": 1}"#);
    assert_eq!(
        unsafe { aug_config_from_json(unknown.as_ptr(), &mut other) },
        AugStatus::Config
    );
    assert!(last_error().contains("blur"));
    let missing = c("/nonexistent/config.json");
    assert_eq!(
        unsafe { aug_config_load(missing.as_ptr(), &mut other) },
        AugStatus::Config
    );
    assert!(other.is_null());
}

fn demo(dir: &Path) -> (CString, CString) {
    let opts = DemoOptions {
        rigs: 2,
        width: 128,
        height: 64,
        ..DemoOptions::default()
    };
    let fx = write_fixtures(dir, &opts).unwrap();
    (c(fx.config.to_str().unwrap()), c(fx.rigs.to_str().unwrap()))
}

#[test]
fn augment_stats_and_birdseye() {
    let tmp = tempfile::tempdir().unwrap();
    let (config_path, rigs) = demo(&tmp.path().join("fx"));
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { aug_config_load(config_path.as_ptr(), &mut cfg) },
        AugStatus::Ok
    );

    let one = tmp.path().join("one");
    let two = tmp.path().join("two");
    let mut manifest = ptr::null_mut();
    let status = unsafe { aug_augment(cfg, rigs.as_ptr(), c(one.to_str().unwrap()).as_ptr(), 1, &mut manifest) };
    assert_eq!(status, AugStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { aug_manifest_len(manifest) }, 6);
    unsafe { aug_manifest_free(manifest) };
    let status = unsafe {
        aug_augment(
            cfg,
            rigs.as_ptr(),
            c(two.to_str().unwrap()).as_ptr(),
            2,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, AugStatus::Ok);
    for rel in ["manifest.json", "images/r0001_a002.png", "annotations/r0000_a001.json"] {
        assert_eq!(
            std::fs::read(one.join(rel)).unwrap(),
            std::fs::read(two.join(rel)).unwrap(),
            "{rel}"
        );
    }
    unsafe { aug_config_free(cfg) };

    let mut required = 0usize;
    let dataset = c(one.to_str().unwrap());
    assert_eq!(
        unsafe { aug_stats_json(dataset.as_ptr(), ptr::null_mut(), 0, &mut required) },
        AugStatus::BufferTooSmall
    );
    let mut buf = vec![0 as c_char; required];
    assert_eq!(
        unsafe { aug_stats_json(dataset.as_ptr(), buf.as_mut_ptr(), buf.len(), ptr::null_mut()) },
        AugStatus::Ok
    );
    let stats: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap()).unwrap();
    assert_eq!(stats["composites"], 6);
    let nowhere = c(tmp.path().join("missing").to_str().unwrap());
    assert_ne!(
        unsafe { aug_stats_json(nowhere.as_ptr(), buf.as_mut_ptr(), buf.len(), ptr::null_mut()) },
        AugStatus::Ok
    );

    let bev = tmp.path().join("bev");
    let bev_dir = c(bev.to_str().unwrap());
    let status = unsafe { aug_export_birdseye(rigs.as_ptr(), c("street01").as_ptr(), 0.2, bev_dir.as_ptr()) };
    assert_eq!(status, AugStatus::Ok, "{}", last_error());
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(bev.join("street01_birdseye.json")).unwrap()).unwrap();
    assert_eq!(
        (meta["width"].as_u64(), meta["height"].as_u64()),
        (Some(200), Some(300))
    );
    assert!(bev.join("street01_birdseye.png").exists());
    let status = unsafe { aug_export_birdseye(rigs.as_ptr(), c("street09").as_ptr(), 0.2, bev_dir.as_ptr()) };
    assert_eq!(status, AugStatus::InvalidArgument);
    let status = unsafe { aug_export_birdseye(rigs.as_ptr(), c("street01").as_ptr(), -1.0, bev_dir.as_ptr()) };
    assert_eq!(status, AugStatus::InvalidArgument);
}

#[test]
fn missing_rig_list_is_a_rig_error() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { aug_config_default(&mut cfg) }, AugStatus::Ok);
    let status = unsafe {
        aug_augment(
            cfg,
            c("/nonexistent/rigs.json").as_ptr(),
            c("/tmp/x").as_ptr(),
            0,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, AugStatus::Rig);
    assert!(last_error().contains("/nonexistent/rigs.json"));
    unsafe { aug_config_free(cfg) };
}

#[test]
fn errors_are_per_thread() {
    assert_eq!(
        unsafe { aug_project(ptr::null(), ptr::null(), ptr::null_mut()) },
        AugStatus::NullArgument
    );
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert!(!last_error().is_empty());
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(aug_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_api() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/augmentor.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    for name in [
        "aug_last_error",
        "aug_calibration_from_json",
        "aug_project",
        "aug_backproject",
        "aug_ground_homography",
        "aug_config_default",
        "aug_config_from_json",
        "aug_config_load",
        "aug_config_set_max_cars",
        "aug_config_to_json",
        "aug_augment",
        "aug_manifest_len",
        "aug_stats_json",
        "aug_export_birdseye",
        "typedef struct AugConfig AugConfig",
        "AUG_STATUS_BUFFER_TOO_SMALL = 9",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }

    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping compile check");
        return;
    };
    assert!(cc.status.success());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use_header.c");
    std::fs::write(
        &src,
        "#include \"augmentor.h\"\n\
         int main(void) {\n\
           AugCalibration *c = NULL;\n\
           double uv[2];\n\
           AugStatus s = aug_calibration_from_json(\"{}\", &c);\n\
           if (s == AUG_STATUS_OK) s = aug_project(c, (const double[3]){0, 0, 1}, uv);\n\
           aug_calibration_free(c);\n\
           return (int)s;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header_path.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
