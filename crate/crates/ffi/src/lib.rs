//! C ABI over the augmentor toolkit.
//!
//! Every entry point returns an [`AugStatus`]. On failure a human-readable
//! message is kept per thread and can be copied out with [`aug_last_error`].
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `_free` function. Panics never unwind into C; they surface as
//! [`AugStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use augmentor::geometry::{backproject_to_plane, ground_homography, project, Calibration, Vec3};
use augmentor::pipeline::birdseye::DEFAULT_EXTENT;
use augmentor::pipeline::{
    augment_dataset, compute_stats, export_birdseye, load_config, load_config_file, load_rigs, AugmentationConfig,
    AugmentationManifest, PipelineError,
};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidString = 2,
    /// A numeric argument was out of range.
    InvalidArgument = 3,
    /// Configuration JSON was malformed or violated a range.
    Config = 4,
    /// The rig list or a calibration could not be loaded.
    Rig = 5,
    /// A geometric operation had no valid result.
    Geometry = 6,
    /// A file could not be read or written.
    Io = 7,
    /// Any other pipeline failure.
    Pipeline = 8,
    /// The output buffer is too small; the required size was reported.
    BufferTooSmall = 9,
    /// An internal panic was caught at the boundary.
    Panic = 10,
}

/// Camera intrinsics and ground plane.
pub struct AugCalibration(Calibration);

/// Augmentation parameters.
pub struct AugConfig(AugmentationConfig);

/// Record of a finished augmentation run.
pub struct AugManifest(AugmentationManifest);

struct Failure {
    status: AugStatus,
    message: String,
}

impl Failure {
    fn new(status: AugStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Config(_) => AugStatus::Config,
            PipelineError::Rig(_) => AugStatus::Rig,
            PipelineError::Geometry(_) => AugStatus::Geometry,
            PipelineError::Io(..) | PipelineError::Image(..) => AugStatus::Io,
            _ => AugStatus::Pipeline,
        };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AugStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let detail = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::new(AugStatus::Panic, format!("internal panic: {detail}")))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            AugStatus::Ok
        }
        Err(f) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = f.message);
            f.status
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a pointer valid for reads.
    unsafe { p.as_ref() }.ok_or_else(|| Failure::new(AugStatus::NullArgument, format!("`{name}` is null")))
}

fn non_null_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller passes either null or a pointer valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| Failure::new(AugStatus::NullArgument, format!("`{name}` is null")))
}

fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(AugStatus::NullArgument, format!("`{name}` is null")));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::new(AugStatus::InvalidString, format!("`{name}` is not valid UTF-8")))
}

fn path(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    string(p, name).map(PathBuf::from)
}

fn array<'a, const N: usize>(p: *const f64, name: &str) -> Result<&'a [f64; N], Failure> {
    non_null(p.cast::<[f64; N]>(), name)
}

fn array_mut<'a, const N: usize>(p: *mut f64, name: &str) -> Result<&'a mut [f64; N], Failure> {
    non_null_mut(p.cast::<[f64; N]>(), name)
}

fn hand_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    *non_null_mut(out, "out")? = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies `text` plus a NUL into `buf`; `required` receives the full size.
fn copy_out(text: &str, buf: *mut c_char, capacity: usize, required: *mut usize) -> Result<(), Failure> {
    let needed = text.len() + 1;
    // SAFETY: `required` is null or writable per the API contract.
    if let Some(r) = unsafe { required.as_mut() } {
        *r = needed;
    }
    if buf.is_null() || capacity < needed {
        return Err(Failure::new(
            AugStatus::BufferTooSmall,
            format!("buffer holds {capacity} bytes, {needed} needed"),
        ));
    }
    // SAFETY: `buf` is valid for `capacity >= needed` bytes.
    unsafe {
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
    }
    Ok(())
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::new(AugStatus::Pipeline, format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aug_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
///
/// Returns the number of bytes the full message needs, including the NUL.
/// The message is truncated to `capacity - 1` bytes when the buffer is short.
/// An empty string means the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn aug_last_error(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Parses a calibration JSON document into a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aug_calibration_from_json(json: *const c_char, out: *mut *mut AugCalibration) -> AugStatus {
    guard(|| {
        let calib = Calibration::from_json_str(string(json, "json")?)
            .map_err(|e| Failure::new(AugStatus::Rig, e.to_string()))?;
        hand_out(out, AugCalibration(calib))
    })
}

/// Releases a calibration handle. Null is ignored.
///
/// # Safety
/// `calib` must come from `aug_calibration_from_json` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn aug_calibration_free(calib: *mut AugCalibration) {
    if !calib.is_null() {
        drop(Box::from_raw(calib));
    }
}

/// Projects a camera-space point `point[3]` to pixel `out_pixel[2]`.
///
/// # Safety
/// Pointers must be valid for the stated element counts.
#[no_mangle]
pub unsafe extern "C" fn aug_project(
    calib: *const AugCalibration,
    point: *const f64,
    out_pixel: *mut f64,
) -> AugStatus {
    guard(|| {
        let calib = &non_null(calib, "calib")?.0;
        let p = array::<3>(point, "point")?;
        let px = project(&Vec3::from(*p), &calib.intrinsics)
            .map_err(|e| Failure::new(AugStatus::Geometry, e.to_string()))?;
        *array_mut::<2>(out_pixel, "out_pixel")? = px;
        Ok(())
    })
}

/// Intersects the viewing ray of `pixel[2]` with the ground plane.
///
/// # Safety
/// Pointers must be valid for the stated element counts.
#[no_mangle]
pub unsafe extern "C" fn aug_backproject(
    calib: *const AugCalibration,
    pixel: *const f64,
    out_point: *mut f64,
) -> AugStatus {
    guard(|| {
        let calib = &non_null(calib, "calib")?.0;
        let px = *array::<2>(pixel, "pixel")?;
        let p = backproject_to_plane(px, &calib.intrinsics, &calib.plane)
            .map_err(|e| Failure::new(AugStatus::Geometry, e.to_string()))?;
        *array_mut::<3>(out_point, "out_point")? = [p.x, p.y, p.z];
        Ok(())
    })
}

/// Writes the ground-to-image homography, row-major, into `out_matrix[9]`.
///
/// # Safety
/// `out_matrix` must be valid for nine doubles.
#[no_mangle]
pub unsafe extern "C" fn aug_ground_homography(calib: *const AugCalibration, out_matrix: *mut f64) -> AugStatus {
    guard(|| {
        let calib = &non_null(calib, "calib")?.0;
        let h = ground_homography(&calib.intrinsics, &calib.plane)
            .map_err(|e| Failure::new(AugStatus::Geometry, e.to_string()))?;
        let out = array_mut::<9>(out_matrix, "out_matrix")?;
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = h.matrix[(r, c)];
            }
        }
        Ok(())
    })
}

/// Creates a configuration holding the published defaults.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aug_config_default(out: *mut *mut AugConfig) -> AugStatus {
    guard(|| hand_out(out, AugConfig(AugmentationConfig::default())))
}

/// Parses configuration JSON; absent keys take their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aug_config_from_json(json: *const c_char, out: *mut *mut AugConfig) -> AugStatus {
    guard(|| {
        let cfg = load_config(string(json, "json")?).map_err(|e| Failure::new(AugStatus::Config, e.to_string()))?;
        hand_out(out, AugConfig(cfg))
    })
}

/// Loads a configuration file; relative paths inside resolve against it.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aug_config_load(file: *const c_char, out: *mut *mut AugConfig) -> AugStatus {
    guard(|| {
        let cfg = load_config_file(&path(file, "file")?).map_err(|e| Failure::new(AugStatus::Config, e.to_string()))?;
        hand_out(out, AugConfig(cfg))
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aug_config_set_seed(config: *mut AugConfig, seed: u64) -> AugStatus {
    guard(|| {
        non_null_mut(config, "config")?.0.seed = seed;
        Ok(())
    })
}

/// Sets the per-composite car cap; rejected values leave the config as is.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aug_config_set_max_cars(config: *mut AugConfig, max_cars: u32) -> AugStatus {
    guard(|| {
        let cfg = &mut non_null_mut(config, "config")?.0;
        let mut next = cfg.clone();
        next.max_cars = max_cars;
        next.validate()
            .map_err(|e| Failure::new(AugStatus::InvalidArgument, e.to_string()))?;
        *cfg = next;
        Ok(())
    })
}

/// Serializes the configuration as JSON into `buf`.
///
/// `required` (optional) receives the size including the NUL. Returns
/// `BufferTooSmall` when `capacity` is short.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn aug_config_to_json(
    config: *const AugConfig,
    buf: *mut c_char,
    capacity: usize,
    required: *mut usize,
) -> AugStatus {
    guard(|| {
        let text = serde_json::to_string(&non_null(config, "config")?.0)
            .map_err(|e| Failure::new(AugStatus::Config, e.to_string()))?;
        copy_out(&text, buf, capacity, required)
    })
}

/// # Safety
/// `config` must come from an `aug_config_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn aug_config_free(config: *mut AugConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the full augmentation over the rigs listed in `rigs_path`.
///
/// `threads` is the worker count, 0 for the default pool. Outputs do not
/// depend on it. `out_manifest` may be null when the caller only needs the
/// files on disk.
///
/// # Safety
/// Strings must be NUL-terminated; `out_manifest` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn aug_augment(
    config: *const AugConfig,
    rigs_path: *const c_char,
    out_dir: *const c_char,
    threads: usize,
    out_manifest: *mut *mut AugManifest,
) -> AugStatus {
    guard(|| {
        let cfg = &non_null(config, "config")?.0;
        let rigs = load_rigs(&path(rigs_path, "rigs_path")?).map_err(|e| Failure::from(PipelineError::from(e)))?;
        let out = path(out_dir, "out_dir")?;
        let manifest = with_threads(threads, || augment_dataset(cfg, &rigs, &out))??;
        if !out_manifest.is_null() {
            hand_out(out_manifest, AugManifest(manifest))?;
        }
        Ok(())
    })
}

/// Number of composites recorded in the manifest, 0 for null.
///
/// # Safety
/// `manifest` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aug_manifest_len(manifest: *const AugManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.0.records.len())
}

/// # Safety
/// `manifest` must come from `aug_augment` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn aug_manifest_free(manifest: *mut AugManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Dataset statistics for an output directory or manifest file, as JSON.
///
/// # Safety
/// `dataset` must be NUL-terminated; `buf` must be null or valid for
/// `capacity` bytes; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn aug_stats_json(
    dataset: *const c_char,
    buf: *mut c_char,
    capacity: usize,
    required: *mut usize,
) -> AugStatus {
    guard(|| {
        let stats = compute_stats(&path(dataset, "dataset")?)?;
        let text = serde_json::to_string(&stats).map_err(|e| Failure::new(AugStatus::Pipeline, e.to_string()))?;
        copy_out(&text, buf, capacity, required)
    })
}

/// Writes `<rig>_birdseye.png` and `<rig>_birdseye.json` for one rig into
/// `out_dir`, covering the default ground extent.
///
/// # Safety
/// Strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn aug_export_birdseye(
    rigs_path: *const c_char,
    rig_id: *const c_char,
    meters_per_pixel: f64,
    out_dir: *const c_char,
) -> AugStatus {
    guard(|| {
        if !(meters_per_pixel.is_finite() && meters_per_pixel > 0.0) {
            return Err(Failure::new(
                AugStatus::InvalidArgument,
                format!("meters_per_pixel must be positive, got {meters_per_pixel}"),
            ));
        }
        let id = string(rig_id, "rig_id")?;
        let rigs = load_rigs(&path(rigs_path, "rigs_path")?).map_err(|e| Failure::from(PipelineError::from(e)))?;
        let rig = rigs
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Failure::new(AugStatus::InvalidArgument, format!("no rig named `{id}`")))?;
        export_birdseye(rig, meters_per_pixel, &DEFAULT_EXTENT, &path(out_dir, "out_dir")?)?;
        Ok(())
    })
}
