//! C ABI for the ridgeforge pipeline.
//!
//! Conventions:
//! - Handles (`RfCloud`, `RfRaster`) are opaque; free them with the matching
//!   `rf_*_free`. Passing NULL to a free is a no-op.
//! - Every fallible call returns an [`RfStatus`]; on failure a thread-local
//!   message is readable through [`rf_last_error_message`].
//! - Buffers are caller-allocated; size queries come first.

use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::Vector3;

use ridgeforge::geometry::PointCloud;
use ridgeforge::mosaic::{fuse, FuseParams};
use ridgeforge::pose::canonical_pose;
use ridgeforge::raster::Raster;
use ridgeforge::register::CorrespondenceSet;
use ridgeforge::unwrap::{unwrap_cloud, UnwrapParams};
use ridgeforge::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    /// Success.
    RfOk = 0,
    /// A required pointer argument was NULL.
    RfNullPointer = 1,
    /// A string argument was not valid UTF-8.
    RfInvalidUtf8 = 2,
    /// File could not be read or written.
    RfIoError = 3,
    /// Input file or buffer failed to parse.
    RfParseError = 4,
    /// The operation is undefined on this input (degenerate geometry,
    /// empty foreground, indeterminate pose, ...).
    RfDomainError = 5,
    /// Internal invariant violation caught at the boundary.
    RfInternalError = 6,
}

/// Opaque 3D point cloud handle.
pub struct RfCloud {
    inner: PointCloud,
}

/// Opaque raster image handle.
pub struct RfRaster {
    inner: Raster,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> RfStatus {
    match err {
        Error::Io(_) => RfStatus::RfIoError,
        Error::Parse { .. } | Error::Json(_) => RfStatus::RfParseError,
        _ => RfStatus::RfDomainError,
    }
}

fn fail(err: Error) -> RfStatus {
    let code = status_of(&err);
    set_error(err.to_string());
    code
}

/// Run `f` with panics converted to `RfInternalError`.
fn guarded(f: impl FnOnce() -> RfStatus) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic across FFI boundary".into());
            set_error(msg);
            RfStatus::RfInternalError
        }
    }
}

macro_rules! nonnull {
    ($ptr:expr, $name:literal) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                set_error(concat!($name, " is NULL"));
                return RfStatus::RfNullPointer;
            }
        }
    };
}

/// Copy the message of the most recent error on this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the full message length in
/// bytes, excluding the terminator; 0 means no error has been recorded.
///
/// # Safety
/// `buf`, when non-NULL, must have room for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn rf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Load a cloud from an XYZ or PLY file (chosen by extension).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_cloud_read(path: *const c_char, out: *mut *mut RfCloud) -> RfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is NULL");
            return RfStatus::RfNullPointer;
        }
        if path.is_null() {
            set_error("path is NULL");
            return RfStatus::RfNullPointer;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return RfStatus::RfInvalidUtf8;
            }
        };
        match ridgeforge::io::read_cloud(Path::new(path)) {
            Ok(cloud) => {
                unsafe { *out = Box::into_raw(Box::new(RfCloud { inner: cloud })) };
                RfStatus::RfOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Build a cloud from `n` interleaved xyz triples (3*n doubles).
///
/// # Safety
/// `xyz` must point to at least `3 * n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rf_cloud_create(
    xyz: *const f64,
    n: usize,
    out: *mut *mut RfCloud,
) -> RfStatus {
    guarded(|| {
        if out.is_null() || (xyz.is_null() && n > 0) {
            set_error("xyz or out is NULL");
            return RfStatus::RfNullPointer;
        }
        let flat: &[f64] = if n == 0 {
            &[]
        } else {
            unsafe { std::slice::from_raw_parts(xyz, 3 * n) }
        };
        let points = flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        let cloud = PointCloud::new(points, "ffi");
        unsafe { *out = Box::into_raw(Box::new(RfCloud { inner: cloud })) };
        RfStatus::RfOk
    })
}

/// Number of points, or 0 for NULL.
///
/// # Safety
/// `cloud`, when non-NULL, must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rf_cloud_point_count(cloud: *const RfCloud) -> usize {
    unsafe { cloud.as_ref() }.map_or(0, |c| c.inner.points.len())
}

/// Copy up to `cap` points as interleaved xyz triples into `out_xyz`.
/// Returns the number of points copied.
///
/// # Safety
/// `out_xyz` must have room for `3 * cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_cloud_points(
    cloud: *const RfCloud,
    out_xyz: *mut f64,
    cap: usize,
) -> usize {
    let Some(c) = (unsafe { cloud.as_ref() }) else {
        return 0;
    };
    if out_xyz.is_null() {
        return 0;
    }
    let n = c.inner.points.len().min(cap);
    let out = unsafe { std::slice::from_raw_parts_mut(out_xyz, 3 * n) };
    for (i, p) in c.inner.points.iter().take(n).enumerate() {
        out[3 * i] = p.x;
        out[3 * i + 1] = p.y;
        out[3 * i + 2] = p.z;
    }
    n
}

/// Release a cloud handle.
///
/// # Safety
/// `cloud` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rf_cloud_free(cloud: *mut RfCloud) {
    if !cloud.is_null() {
        drop(unsafe { Box::from_raw(cloud) });
    }
}

/// Unwrap a cloud into a rolled-equivalent image. Pass 0 for `radius` or
/// `pitch` to use the defaults (0.6 mm, 0.05 mm).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_unwrap(
    cloud: *const RfCloud,
    radius: f64,
    pitch: f64,
    out: *mut *mut RfRaster,
) -> RfStatus {
    guarded(|| {
        let cloud = nonnull!(cloud, "cloud");
        if out.is_null() {
            set_error("out is NULL");
            return RfStatus::RfNullPointer;
        }
        let mut params = UnwrapParams::default();
        if radius > 0.0 {
            params.neighborhood_radius = radius;
        }
        if pitch > 0.0 {
            params.pitch = pitch;
        }
        match unwrap_cloud(&cloud.inner, &params) {
            Ok((raster, _)) => {
                unsafe { *out = Box::into_raw(Box::new(RfRaster { inner: raster })) };
                RfStatus::RfOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Raster width in pixels, or 0 for NULL.
///
/// # Safety
/// `raster`, when non-NULL, must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rf_raster_width(raster: *const RfRaster) -> usize {
    unsafe { raster.as_ref() }.map_or(0, |r| r.inner.grid.width)
}

/// Raster height in pixels, or 0 for NULL.
///
/// # Safety
/// `raster`, when non-NULL, must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rf_raster_height(raster: *const RfRaster) -> usize {
    unsafe { raster.as_ref() }.map_or(0, |r| r.inner.grid.height)
}

/// Pixel pitch in mm, or 0 for NULL.
///
/// # Safety
/// `raster`, when non-NULL, must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rf_raster_pitch(raster: *const RfRaster) -> f64 {
    unsafe { raster.as_ref() }.map_or(0.0, |r| r.inner.grid.pitch)
}

/// Copy the gray channel, row-major, background pixels as 0. Returns the
/// number of values copied (min of `cap` and width*height).
///
/// # Safety
/// `out` must have room for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_raster_gray(
    raster: *const RfRaster,
    out: *mut f64,
    cap: usize,
) -> usize {
    let Some(r) = (unsafe { raster.as_ref() }) else {
        return 0;
    };
    if out.is_null() {
        return 0;
    }
    let n = (r.inner.grid.width * r.inner.grid.height).min(cap);
    let dst = unsafe { std::slice::from_raw_parts_mut(out, n) };
    match r.inner.gray.as_ref() {
        Some(gray) => dst.copy_from_slice(&gray[..n]),
        None => dst.fill(0.0),
    }
    n
}

/// Release a raster handle.
///
/// # Safety
/// `raster` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rf_raster_free(raster: *mut RfRaster) {
    if !raster.is_null() {
        drop(unsafe { Box::from_raw(raster) });
    }
}

/// Register cloud A onto cloud B through `n` correspondence pairs
/// (interleaved ax,ay,az,bx,by,bz per pair) and fuse them along a
/// minimum-penalty seam. On success `out` owns the merged cloud and
/// `out_disagreement`, if non-NULL, receives the post-registration mean
/// overlap disagreement in mm.
///
/// # Safety
/// `pairs` must point to `6 * n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rf_fuse(
    cloud_a: *const RfCloud,
    cloud_b: *const RfCloud,
    pairs: *const f64,
    n: usize,
    out: *mut *mut RfCloud,
    out_disagreement: *mut f64,
) -> RfStatus {
    guarded(|| {
        let a = nonnull!(cloud_a, "cloud_a");
        let b = nonnull!(cloud_b, "cloud_b");
        if out.is_null() || (pairs.is_null() && n > 0) {
            set_error("pairs or out is NULL");
            return RfStatus::RfNullPointer;
        }
        let flat: &[f64] = if n == 0 {
            &[]
        } else {
            unsafe { std::slice::from_raw_parts(pairs, 6 * n) }
        };
        let corr: Vec<(Vector3<f64>, Vector3<f64>)> = flat
            .chunks_exact(6)
            .map(|c| {
                (
                    Vector3::new(c[0], c[1], c[2]),
                    Vector3::new(c[3], c[4], c[5]),
                )
            })
            .collect();
        let set = CorrespondenceSet::from_points(&corr);
        match fuse(&a.inner, &b.inner, &set, &FuseParams::default()) {
            Ok((merged, report)) => {
                if !out_disagreement.is_null() {
                    unsafe { *out_disagreement = report.disagreement_mean };
                }
                unsafe { *out = Box::into_raw(Box::new(RfCloud { inner: merged })) };
                RfStatus::RfOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Fit the canonical pose of a finger cloud. Writes a row-major 3x3
/// rotation and a translation such that `R*p + t` is the normalized pose.
/// `out_roll_indeterminate`, if non-NULL, is set to 1 when the cross-section
/// is too circular to define roll (the rotation then fixes roll to zero).
/// Pass 0 for `slice_thickness` to use the default (1.0 mm).
///
/// # Safety
/// `out_rotation` must hold 9 doubles and `out_translation` 3.
#[no_mangle]
pub unsafe extern "C" fn rf_canonical_pose(
    cloud: *const RfCloud,
    slice_thickness: f64,
    out_rotation: *mut f64,
    out_translation: *mut f64,
    out_roll_indeterminate: *mut i32,
) -> RfStatus {
    guarded(|| {
        let cloud = nonnull!(cloud, "cloud");
        if out_rotation.is_null() || out_translation.is_null() {
            set_error("out_rotation or out_translation is NULL");
            return RfStatus::RfNullPointer;
        }
        let thickness = if slice_thickness > 0.0 {
            slice_thickness
        } else {
            ridgeforge::config::DEFAULT_SLICE_THICKNESS_MM
        };
        match canonical_pose(&cloud.inner, &Vector3::y(), thickness) {
            Ok(cp) => {
                let r = cp.transform.r();
                let t = cp.transform.t();
                let rot = unsafe { std::slice::from_raw_parts_mut(out_rotation, 9) };
                for i in 0..3 {
                    for j in 0..3 {
                        rot[3 * i + j] = r[(i, j)];
                    }
                }
                let tr = unsafe { std::slice::from_raw_parts_mut(out_translation, 3) };
                tr.copy_from_slice(&[t.x, t.y, t.z]);
                if !out_roll_indeterminate.is_null() {
                    unsafe { *out_roll_indeterminate = cp.roll_indeterminate as i32 };
                }
                RfStatus::RfOk
            }
            Err(e) => fail(e),
        }
    })
}

#[cfg(test)]
mod tests;
