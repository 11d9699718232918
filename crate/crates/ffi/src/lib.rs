//! C ABI over the sdfocc engine.
//!
//! Every call returns an [`SdfoccStatus`]. On failure the message is kept per
//! thread and can be read with [`sdfocc_last_error`]. Fields and occupancy
//! grids cross the boundary as opaque handles owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sdfocc::config::RunConfig;
use sdfocc::evaluation::{extract_occupancy, occ_metrics, OccGrid};
use sdfocc::field::{load_field, AnyField, FieldProvider};
use sdfocc::fit::{fit, FitOptions};
use sdfocc::geometry::{Camera, Intrinsics, Mat3, Pose, Vec3};
use sdfocc::renderer::{render_view, RenderModes};
use sdfocc::scenes::{write_dataset, SceneConfig};
use sdfocc::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdfoccStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidString = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    Domain = 7,
    BufferSize = 8,
    Internal = 9,
    Panic = 10,
}

/// Loaded field checkpoint.
pub struct SdfoccField {
    inner: AnyField<f64>,
}

/// Labelled voxel grid, optionally with an evaluation mask.
pub struct SdfoccOccGrid {
    inner: OccGrid,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SdfoccOccMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Pinhole camera; `rotation` is the row-major world→camera matrix.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfoccCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SdfoccStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => SdfoccStatus::Config,
            Error::Io { .. } => SdfoccStatus::Io,
            Error::Parse { .. } => SdfoccStatus::Parse,
            Error::Numeric { .. } => SdfoccStatus::Numeric,
            Error::Domain(_) | Error::BehindCamera { .. } | Error::EmptyRay | Error::EmptyEvaluation => SdfoccStatus::Domain,
            Error::Structural(_) => SdfoccStatus::Internal,
        };
        Failure(code, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> SdfoccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdfoccStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside sdfocc".into());
            SdfoccStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SdfoccStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SdfoccStatus::InvalidString, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Failure(SdfoccStatus::BufferSize, format!("{what} holds {len} entries, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdfocc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sdfocc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Renders a synthetic dataset described by a scene TOML file into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_synth(scene_path: *const c_char, out_dir: *const c_char) -> SdfoccStatus {
    guard(|| {
        let scene = path_arg(scene_path, "scene_path")?;
        let out = path_arg(out_dir, "out_dir")?;
        let cfg = SceneConfig::load(&scene)?;
        write_dataset(&cfg, &out)?;
        Ok(())
    })
}

/// Runs a fit from a run TOML file; `resume` continues from the stored checkpoint.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_fit(config_path: *const c_char, resume: bool) -> SdfoccStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let cfg = RunConfig::load(&path)?;
        fit(&cfg, FitOptions { resume, stop_at: None }, &mut |_| {})?;
        Ok(())
    })
}

/// Loads a field checkpoint. Free the handle with [`sdfocc_field_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_field_load(path: *const c_char, out: *mut *mut SdfoccField) -> SdfoccStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_field::<f64>(&p)?;
        *out = Box::into_raw(Box::new(SdfoccField { inner }));
        Ok(())
    })
}

/// # Safety
/// `field` must come from [`sdfocc_field_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_field_free(field: *mut SdfoccField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Grid resolution of the field volume.
///
/// # Safety
/// `field` must be a live handle; `out` must point to 3 writable u32.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_field_resolution(field: *const SdfoccField, out: *mut u32) -> SdfoccStatus {
    guard(|| {
        let f = handle(field, "field")?;
        let dst = out_slice(out, 3, 3, "out")?;
        for (d, r) in dst.iter_mut().zip(f.inner.spec().resolution) {
            *d = r as u32;
        }
        Ok(())
    })
}

/// SDF value (meters) at a world point.
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_field_sdf(field: *const SdfoccField, x: f64, y: f64, z: f64, out: *mut f64) -> SdfoccStatus {
    guard(|| {
        let f = handle(field, "field")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f.inner.sdf_value(Vec3::new(x, y, z));
        Ok(())
    })
}

/// Occupancy labels on the field's own voxel centers, k fastest.
///
/// # Safety
/// `field` must be a live handle; `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_field_occupancy(field: *const SdfoccField, out: *mut u8, len: usize) -> SdfoccStatus {
    guard(|| {
        let f = handle(field, "field")?;
        let spec = *f.inner.spec();
        let dst = out_slice(out, len, spec.num_voxels(), "out")?;
        dst.copy_from_slice(&extract_occupancy(&f.inner, &spec).labels);
        Ok(())
    })
}

/// Renders z-depth (meters, 0 on miss), rows top to bottom.
///
/// # Safety
/// `field` and `camera` must be valid; `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_field_render_depth(
    field: *const SdfoccField,
    camera: *const SdfoccCamera,
    samples: u32,
    out: *mut f32,
    len: usize,
) -> SdfoccStatus {
    guard(|| {
        let f = handle(field, "field")?;
        let c = handle(camera, "camera")?;
        let r = c.rotation;
        let rotation = Mat3([[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]);
        let pose = Pose::new(rotation, Vec3::new(c.translation[0], c.translation[1], c.translation[2]))?;
        let intrinsics = Intrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width as usize, c.height as usize)?;
        let dst = out_slice(out, len, intrinsics.width * intrinsics.height, "out")?;
        let view = render_view(&f.inner, &Camera { intrinsics, pose }, samples as usize, RenderModes::DEPTH)?;
        dst.copy_from_slice(&view.depth.data);
        Ok(())
    })
}

/// Loads a `.socg` occupancy grid. Free it with [`sdfocc_occ_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_occ_load(path: *const c_char, out: *mut *mut SdfoccOccGrid) -> SdfoccStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = OccGrid::load(&p)?;
        *out = Box::into_raw(Box::new(SdfoccOccGrid { inner }));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from [`sdfocc_occ_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_occ_free(grid: *mut SdfoccOccGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of voxels in the grid.
///
/// # Safety
/// `grid` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_occ_len(grid: *const SdfoccOccGrid, out: *mut usize) -> SdfoccStatus {
    guard(|| {
        let g = handle(grid, "grid")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = g.inner.labels.len();
        Ok(())
    })
}

/// Extracts the field's occupancy on the grid's voxels and scores it.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdfocc_occ_metrics(
    field: *const SdfoccField,
    gt: *const SdfoccOccGrid,
    use_mask: bool,
    out: *mut SdfoccOccMetrics,
) -> SdfoccStatus {
    guard(|| {
        let f = handle(field, "field")?;
        let g = handle(gt, "gt")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let pred = extract_occupancy(&f.inner, &g.inner.spec);
        let m = occ_metrics(&pred, &g.inner, use_mask)?;
        *out = SdfoccOccMetrics {
            iou: m.iou,
            precision: m.precision,
            recall: m.recall,
            tp: m.tp as u64,
            fp: m.fp as u64,
            fn_: m.fn_ as u64,
        };
        Ok(())
    })
}
