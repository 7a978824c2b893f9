//! Exercises every entry point through the C ABI, including the error paths.

use std::ffi::CString;
use std::io::Write;
use std::os::raw::c_char;
use std::ptr;

use nalgebra::Vector3;
use ridgeforge::register::RigidTransform;
use ridgeforge::synth::{generate_finger, partial_scan, synth_correspondences, FingerSpec};

use super::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { rf_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n.min(buf.len() - 1));
    String::from_utf8(buf).unwrap()
}

fn finger_cloud(seed: u64, density: f64) -> *mut RfCloud {
    let spec = FingerSpec {
        seed,
        ..Default::default()
    };
    let (cloud, _) = generate_finger(&spec, density);
    let flat: Vec<f64> = cloud.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let mut handle: *mut RfCloud = ptr::null_mut();
    let code = unsafe { rf_cloud_create(flat.as_ptr(), cloud.points.len(), &mut handle) };
    assert_eq!(code, RfStatus::RfOk);
    assert_eq!(unsafe { rf_cloud_point_count(handle) }, cloud.points.len());
    handle
}

#[test]
fn create_roundtrip_and_free() {
    let pts = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let mut handle: *mut RfCloud = ptr::null_mut();
    assert_eq!(
        unsafe { rf_cloud_create(pts.as_ptr(), 2, &mut handle) },
        RfStatus::RfOk
    );
    assert_eq!(unsafe { rf_cloud_point_count(handle) }, 2);
    let mut out = [0.0f64; 6];
    assert_eq!(unsafe { rf_cloud_points(handle, out.as_mut_ptr(), 2) }, 2);
    assert_eq!(out, pts);
    unsafe { rf_cloud_free(handle) };
    unsafe { rf_cloud_free(ptr::null_mut()) };
}

#[test]
fn null_arguments_are_reported() {
    let mut handle: *mut RfCloud = ptr::null_mut();
    assert_eq!(
        unsafe { rf_cloud_read(ptr::null(), &mut handle) },
        RfStatus::RfNullPointer
    );
    assert!(last_error().contains("NULL"));
    assert_eq!(
        unsafe { rf_unwrap(ptr::null(), 0.0, 0.0, ptr::null_mut()) },
        RfStatus::RfNullPointer
    );
    assert_eq!(unsafe { rf_cloud_point_count(ptr::null()) }, 0);
    assert_eq!(unsafe { rf_raster_width(ptr::null()) }, 0);
    assert_eq!(unsafe { rf_raster_pitch(ptr::null()) }, 0.0);
}

#[test]
fn read_missing_file_is_io_error() {
    let path = CString::new("/nonexistent/cloud.xyz").unwrap();
    let mut handle: *mut RfCloud = ptr::null_mut();
    assert_eq!(
        unsafe { rf_cloud_read(path.as_ptr(), &mut handle) },
        RfStatus::RfIoError
    );
}

#[test]
fn read_malformed_xyz_is_parse_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.xyz");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "0 0 0").unwrap();
    writeln!(f, "1 not-a-number 2").unwrap();
    drop(f);
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut RfCloud = ptr::null_mut();
    assert_eq!(
        unsafe { rf_cloud_read(cpath.as_ptr(), &mut handle) },
        RfStatus::RfParseError
    );
    assert!(last_error().contains("line 2"), "got: {}", last_error());
}

#[test]
fn unwrap_produces_plausible_raster() {
    let cloud = finger_cloud(5, 30.0);
    let mut raster: *mut RfRaster = ptr::null_mut();
    assert_eq!(
        unsafe { rf_unwrap(cloud, 0.0, 0.0, &mut raster) },
        RfStatus::RfOk
    );
    let (w, h) = unsafe { (rf_raster_width(raster), rf_raster_height(raster)) };
    assert!(w > 20 && h > 20, "raster {w}x{h}");
    assert!(unsafe { rf_raster_pitch(raster) } > 0.0);
    let mut gray = vec![-1.0f64; w * h];
    assert_eq!(
        unsafe { rf_raster_gray(raster, gray.as_mut_ptr(), gray.len()) },
        w * h
    );
    assert!(gray.iter().all(|&g| (0.0..=1.0).contains(&g)));
    assert!(gray.iter().any(|&g| g > 0.0));
    unsafe { rf_raster_free(raster) };
    unsafe { rf_cloud_free(cloud) };
}

#[test]
fn unwrap_empty_cloud_is_domain_error() {
    let mut handle: *mut RfCloud = ptr::null_mut();
    assert_eq!(
        unsafe { rf_cloud_create(ptr::null(), 0, &mut handle) },
        RfStatus::RfOk
    );
    let mut raster: *mut RfRaster = ptr::null_mut();
    assert_eq!(
        unsafe { rf_unwrap(handle, 0.0, 0.0, &mut raster) },
        RfStatus::RfDomainError
    );
    unsafe { rf_cloud_free(handle) };
}

#[test]
fn fuse_two_scans_through_abi() {
    let spec = FingerSpec {
        seed: 9,
        ..Default::default()
    };
    let (cloud, truth) = generate_finger(&spec, 30.0);
    let off = 30f64.to_radians();
    let va = Vector3::new(off.cos(), 0.0, off.sin());
    let vb = Vector3::new(off.cos(), 0.0, -off.sin());
    let ident = RigidTransform::identity();
    let (sa, ta) = partial_scan(&cloud, &truth, &va, 200.0, 0.0, &ident, 1);
    let (sb, tb) = partial_scan(&cloud, &truth, &vb, 200.0, 0.0, &ident, 2);
    let corr = synth_correspondences(&ta, &tb, 12, 0.0, 3).unwrap();
    let flat_a: Vec<f64> = sa.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let flat_b: Vec<f64> = sb.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let mut ha: *mut RfCloud = ptr::null_mut();
    let mut hb: *mut RfCloud = ptr::null_mut();
    unsafe {
        rf_cloud_create(flat_a.as_ptr(), sa.points.len(), &mut ha);
        rf_cloud_create(flat_b.as_ptr(), sb.points.len(), &mut hb);
    }
    let pairs: Vec<f64> = corr
        .pairs
        .iter()
        .flat_map(|c| [c.p[0], c.p[1], c.p[2], c.q[0], c.q[1], c.q[2]])
        .collect();
    let mut merged: *mut RfCloud = ptr::null_mut();
    let mut disagreement = f64::NAN;
    let code = unsafe {
        rf_fuse(
            ha,
            hb,
            pairs.as_ptr(),
            corr.pairs.len(),
            &mut merged,
            &mut disagreement,
        )
    };
    assert_eq!(code, RfStatus::RfOk, "{}", last_error());
    assert!(unsafe { rf_cloud_point_count(merged) } > unsafe { rf_cloud_point_count(ha) } / 2);
    assert!((0.0..0.1).contains(&disagreement), "{disagreement}");
    unsafe {
        rf_cloud_free(merged);
        rf_cloud_free(ha);
        rf_cloud_free(hb);
    }
}

#[test]
fn fuse_too_few_pairs_is_domain_error() {
    let ha = finger_cloud(4, 20.0);
    let pairs = [0.0f64; 12];
    let mut merged: *mut RfCloud = ptr::null_mut();
    let code = unsafe { rf_fuse(ha, ha, pairs.as_ptr(), 2, &mut merged, ptr::null_mut()) };
    assert_eq!(code, RfStatus::RfDomainError);
    assert!(
        last_error().contains("DegenerateConfiguration"),
        "got: {}",
        last_error()
    );
    unsafe { rf_cloud_free(ha) };
}

#[test]
fn canonical_pose_through_abi() {
    let cloud = finger_cloud(11, 30.0);
    let mut rot = [0.0f64; 9];
    let mut tr = [0.0f64; 3];
    let mut indet = -1i32;
    let code = unsafe { rf_canonical_pose(cloud, 0.0, rot.as_mut_ptr(), tr.as_mut_ptr(), &mut indet) };
    assert_eq!(code, RfStatus::RfOk, "{}", last_error());
    assert_eq!(indet, 0);
    // rows orthonormal, determinant +1
    let r = nalgebra::Matrix3::from_row_slice(&rot);
    assert!((r.determinant() - 1.0).abs() < 1e-9);
    assert!((r * r.transpose() - nalgebra::Matrix3::identity()).norm() < 1e-9);
    unsafe { rf_cloud_free(cloud) };
}

#[test]
fn generated_header_covers_the_api() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/ridgeforge.h"
    ))
    .expect("header generated at build time");
    for sym in [
        "rf_cloud_read",
        "rf_cloud_create",
        "rf_cloud_point_count",
        "rf_cloud_points",
        "rf_cloud_free",
        "rf_unwrap",
        "rf_raster_width",
        "rf_raster_height",
        "rf_raster_pitch",
        "rf_raster_gray",
        "rf_raster_free",
        "rf_fuse",
        "rf_canonical_pose",
        "rf_last_error_message",
        "RfCloud",
        "RfRaster",
        "RfStatus",
    ] {
        assert!(header.contains(sym), "header is missing {sym}");
    }
}
