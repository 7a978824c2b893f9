//! End-to-end acceptance gate. Each test checks one numbered release
//! criterion and prints a single PASS line on success. A process-wide
//! mutex serializes the tests so the timed pipeline run is not distorted
//! by concurrent work on the same core.

use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ridgeforge::eval;
use ridgeforge::mosaic::{min_cost_seam, PenaltyMap};
use ridgeforge::pose::{ellipse_from_conic, fit_ellipse};
use ridgeforge::raster::{GridSpec, Raster};
use ridgeforge::register::{fit_rigid, CorrespondenceSet};
use ridgeforge::unwrap::{arc_length_maps, depth_gradients, remap};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn passed(name: &str) {
    println!("acceptance: {name}: PASS");
}

/// 1. Noiseless rigid fits over 100 random transforms recover rotation to
///    1e-9 rad and translation to 1e-9 mm, and never return a reflection.
#[test]
fn a01_rigid_fit_exact_recovery() {
    let _g = gate();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..100 {
        let axis = Unit::new_normalize(Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let angle = rng.gen_range(-3.1..3.1f64);
        let r_true = Rotation3::from_axis_angle(&axis, angle).into_inner();
        let t_true = Vector3::new(
            rng.gen_range(-100.0..100.0f64),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
        );
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = (0..12)
            .map(|_| {
                let p = Vector3::new(
                    rng.gen_range(-10.0..10.0f64),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                );
                (p, r_true * p + t_true)
            })
            .collect();
        let (fit, _) = fit_rigid(&CorrespondenceSet::from_points(&pairs)).unwrap();
        assert!(
            fit.r().determinant() > 0.0,
            "reflection returned for a proper rigid motion"
        );
        let delta: Matrix3<f64> = fit.r() * r_true.transpose();
        // atan2 of the skew part stays accurate near the identity, where
        // the plain acos-of-trace formula loses half the mantissa
        let v = Vector3::new(
            delta[(2, 1)] - delta[(1, 2)],
            delta[(0, 2)] - delta[(2, 0)],
            delta[(1, 0)] - delta[(0, 1)],
        ) / 2.0;
        let rot_err = v.norm().atan2((delta.trace() - 1.0) / 2.0);
        let trans_err = (fit.t() - t_true).norm();
        assert!(rot_err < 1e-9, "rotation error {rot_err:.3e} >= 1e-9 rad");
        assert!(trans_err < 1e-9, "translation error {trans_err:.3e} >= 1e-9 mm");
    }
    passed("01 rigid fit recovers 100 random transforms exactly");
}

fn half_cylinder_unwrapped_width(radius: f64, pitch: f64) -> f64 {
    // Grid centers aligned on x = +-radius so the silhouette columns carry
    // depth zero and the one-sided edge gradients see the full cap.
    let half_w = (radius / pitch).round() as usize;
    let w = 2 * half_w + 1;
    let h = 5;
    let grid = GridSpec {
        width: w,
        height: h,
        pitch,
        origin: Vector2::new(-(half_w as f64 + 0.5) * pitch, 0.0),
    };
    let mut depth = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let p = grid.center_of(r, c);
            depth[r * w + c] = (radius * radius - p.x * p.x).max(0.0).sqrt();
        }
    }
    let raster = Raster {
        grid,
        gray: Some(vec![0.5; w * h]),
        depth: Some(depth),
        pos: None,
        mask: vec![true; w * h],
        interpolated: vec![false; w * h],
        count: vec![1; w * h],
    };
    let g = depth_gradients(&raster).unwrap();
    let map = arc_length_maps(&g, (h / 2, half_w));
    let out = remap(&raster, &map);
    let (_, c0, _, c1) = out.foreground_bbox().unwrap();
    (c1 - c0 + 1) as f64 * pitch
}

/// 2. A half-cylinder of radius 8 mm sampled at 0.05 mm unwraps to within
///    1% of the true arc length pi*R, and the error at least halves when
///    the pitch halves.
#[test]
fn a02_half_cylinder_unwrap_width() {
    let _g = gate();
    let radius = 8.0;
    let target = std::f64::consts::PI * radius;
    let w_coarse = half_cylinder_unwrapped_width(radius, 0.05);
    let w_fine = half_cylinder_unwrapped_width(radius, 0.025);
    let e_coarse = (w_coarse - target).abs() / target;
    let e_fine = (w_fine - target).abs() / target;
    assert!(
        e_coarse < 0.01,
        "relative width error {e_coarse:.5} >= 1% at pitch 0.05"
    );
    assert!(
        e_fine <= 0.5 * e_coarse,
        "halving the pitch did not halve the error: {e_coarse:.5} -> {e_fine:.5}"
    );
    passed("02 half-cylinder width within 1% of pi*R, error halves with pitch");
}

/// Bellman-Ford over the 8-connected grid with the same edge costs as the
/// seam search. Relaxations repeat until no strict improvement remains, so
/// the result is the exact minimum over ordered path sums.
fn exhaustive_shortest(penalty: &PenaltyMap, s: (usize, usize), g: (usize, usize)) -> f64 {
    let (w, h) = (penalty.grid.width, penalty.grid.height);
    let mut dist = vec![f64::INFINITY; w * h];
    dist[s.0 * w + s.1] = 0.0;
    loop {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                let k = r * w + c;
                if !dist[k].is_finite() {
                    continue;
                }
                for (dr, dc) in [
                    (-1i64, -1i64),
                    (-1, 0),
                    (-1, 1),
                    (0, -1),
                    (0, 1),
                    (1, -1),
                    (1, 0),
                    (1, 1),
                ] {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let nk = nr as usize * w + nc as usize;
                    let step = if dr != 0 && dc != 0 {
                        std::f64::consts::SQRT_2
                    } else {
                        1.0
                    };
                    let nd = dist[k] + 0.5 * (penalty.l[k] + penalty.l[nk]) * step;
                    if nd < dist[nk] {
                        dist[nk] = nd;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return dist[g.0 * w + g.1];
        }
    }
}

/// 3. On 200 random penalty grids up to 24x24 the seam search returns
///    exactly the brute-force shortest-path cost.
#[test]
fn a03_seam_cost_matches_brute_force() {
    let _g = gate();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..200 {
        let w = rng.gen_range(2..=24usize);
        let h = rng.gen_range(2..=24usize);
        let n = w * h;
        let l: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64)).collect();
        let pm = PenaltyMap {
            grid: GridSpec {
                width: w,
                height: h,
                pitch: 1.0,
                origin: Vector2::zeros(),
            },
            l_dis: l.clone(),
            l_cen: vec![0.0; n],
            l,
            lambda: 0.0,
            k: 1.0,
            overlap: vec![true; n],
        };
        let s = (rng.gen_range(0..h), rng.gen_range(0..w));
        let g = loop {
            let g = (rng.gen_range(0..h), rng.gen_range(0..w));
            if g != s {
                break g;
            }
        };
        let seam = min_cost_seam(&pm, s, g).unwrap();
        let brute = exhaustive_shortest(&pm, s, g);
        assert!(
            seam.total_cost == brute,
            "case {case} ({w}x{h}): seam cost {} != brute force {}",
            seam.total_cost,
            brute
        );
    }
    passed("03 seam cost equals brute-force shortest path on 200 grids");
}

/// 4. Fusing two 60-degree-offset partial scans leaves mean overlap
///    disagreement below 0.05 mm noiseless and below 0.09 mm at
///    sigma = 0.03 mm.
#[test]
fn a04_fusion_overlap_disagreement() {
    let _g = gate();
    let noiseless = eval::fusion_protocol(404, 1, 0.0, 40.0).unwrap();
    assert!(
        noiseless.mean_disagreement < 0.05,
        "noiseless mean disagreement {} >= 0.05 mm",
        noiseless.mean_disagreement
    );
    let noisy = eval::fusion_protocol(404, 1, 0.03, 40.0).unwrap();
    assert!(
        noisy.mean_disagreement < 0.09,
        "noisy mean disagreement {} >= 0.09 mm",
        noisy.mean_disagreement
    );
    passed("04 fusion disagreement < 0.05 mm clean, < 0.09 mm at sigma 0.03");
}

fn conic_of(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> [f64; 6] {
    let (s, c) = theta.sin_cos();
    let ca = a * a * s * s + b * b * c * c;
    let cb = 2.0 * (b * b - a * a) * s * c;
    let cc = a * a * c * c + b * b * s * s;
    let cd = -2.0 * ca * cx - cb * cy;
    let ce = -cb * cx - 2.0 * cc * cy;
    let cf = ca * cx * cx + cb * cx * cy + cc * cy * cy - a * a * b * b;
    [ca, cb, cc, cd, ce, cf]
}

/// 5. Exact samples of the ellipse a=8, b=6, theta=30 deg are fitted to
///    1e-6 relative; sigma = 0.01 mm samples to 1%; and conversion of 1000
///    random valid conics matches the generating parameters to 1e-9.
#[test]
fn a05_conic_fit_and_conversion() {
    let _g = gate();
    let (a, b, theta) = (8.0, 6.0, 30f64.to_radians());
    let (cx, cy) = (2.0, -1.5);
    let (s, c) = theta.sin_cos();
    let sample = |t: f64, nx: f64, ny: f64| {
        let (x, y) = (a * t.cos(), b * t.sin());
        Vector2::new(cx + c * x - s * y + nx, cy + s * x + c * y + ny)
    };
    let exact: Vec<Vector2<f64>> = (0..64)
        .map(|i| sample(i as f64 / 64.0 * std::f64::consts::TAU, 0.0, 0.0))
        .collect();
    let fit = fit_ellipse(&exact).unwrap();
    for (got, want) in [
        (fit.center[0], cx),
        (fit.center[1], cy),
        (fit.semi_major, a),
        (fit.semi_minor, b),
        (fit.theta_deg, 30.0),
    ] {
        let rel = (got - want).abs() / want.abs();
        assert!(rel < 1e-6, "exact fit: {got} vs {want}, rel {rel:.3e}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut gauss = move || {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let mag = (-2.0 * u1.ln()).sqrt() * 0.01;
        let ang = std::f64::consts::TAU * u2;
        (mag * ang.cos(), mag * ang.sin())
    };
    let noisy: Vec<Vector2<f64>> = (0..200)
        .map(|i| {
            let (nx, ny) = gauss();
            sample(i as f64 / 200.0 * std::f64::consts::TAU, nx, ny)
        })
        .collect();
    let fit = fit_ellipse(&noisy).unwrap();
    for (got, want) in [
        (fit.center[0], cx),
        (fit.center[1], cy),
        (fit.semi_major, a),
        (fit.semi_minor, b),
        (fit.theta_deg, 30.0),
    ] {
        let rel = (got - want).abs() / want.abs();
        assert!(rel < 0.01, "noisy fit: {got} vs {want}, rel {rel:.3e}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(506);
    for case in 0..1000 {
        let a = rng.gen_range(1.0..10.0f64);
        let b = a * rng.gen_range(0.3..0.9f64);
        let theta = rng.gen_range(-1.4..1.4f64);
        let cx = rng.gen_range(-20.0..20.0f64);
        let cy = rng.gen_range(-20.0..20.0f64);
        // random overall scale, either sign: the conversion must be
        // invariant to it
        let scale = rng.gen_range(0.1..10.0f64) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let coeffs = conic_of(cx, cy, a, b, theta).map(|v| v * scale);
        let got = ellipse_from_conic(coeffs).unwrap();
        for (got, want) in [
            (got.center[0], cx),
            (got.center[1], cy),
            (got.semi_major, a),
            (got.semi_minor, b),
            (got.theta_deg, theta.to_degrees()),
        ] {
            let rel = (got - want).abs() / want.abs().max(1.0);
            assert!(
                rel < 1e-9,
                "case {case}: derived {got} vs direct {want}, rel {rel:.3e}"
            );
        }
    }
    passed("05 conic fit exact/noisy and 1000 conversion round trips");
}

/// 6. Over 50 synthetic fingers with injected rotations up to 30 degrees
///    per axis, median absolute pitch/yaw error is below 1 degree and roll
///    below 2 degrees; near-circular fingers always flag roll as
///    indeterminate.
#[test]
fn a06_pose_recovery() {
    let _g = gate();
    let report = eval::pose_protocol(606, 50, 30.0, 40.0).unwrap();
    assert!(
        report.median_pitch_error < 1.0,
        "median pitch error {} deg >= 1",
        report.median_pitch_error
    );
    assert!(
        report.median_yaw_error < 1.0,
        "median yaw error {} deg >= 1",
        report.median_yaw_error
    );
    assert!(
        report.median_roll_error < 2.0,
        "median roll error {} deg >= 2",
        report.median_roll_error
    );
    assert!(
        report.circular_flag_fraction == 1.0,
        "near-circular control flagged in only {:.0}% of trials",
        report.circular_flag_fraction * 100.0
    );
    passed("06 pose medians under 1/1/2 deg, circular control always flagged");
}

/// 7. Compose-then-decompose over 100 random cameras round-trips every
///    parameter to 1e-8 relative, and with 0.5 px anchor noise on 30 pairs
///    the RMS reprojection residual over 100 Monte Carlo trials lands in
///    [0.3, 0.7] px.
#[test]
fn a07_projection_roundtrip_and_noise() {
    let _g = gate();
    let report = eval::calib_protocol(707, 100).unwrap();
    assert!(
        report.max_roundtrip_rel_error < 1e-8,
        "max round-trip relative error {:.3e} >= 1e-8",
        report.max_roundtrip_rel_error
    );
    assert!(
        report.mean_rms_residual >= 0.3 && report.mean_rms_residual <= 0.7,
        "mean RMS residual {} px outside [0.3, 0.7]",
        report.mean_rms_residual
    );
    passed("07 camera round trip < 1e-8, noisy RMS residual in [0.3, 0.7] px");
}

/// 8. At pose offsets of at least 10 degrees, pose-aware unwrapping beats
///    generic unwrapping on landmark displacement in at least 90% of 50
///    synthetic trials.
#[test]
fn a08_pose_aware_unwrap_wins() {
    let _g = gate();
    let report = eval::contact_protocol(42, 50, 10.0, 40.0).unwrap();
    assert!(
        report.trials.len() >= 45,
        "only {} usable trials out of 50",
        report.trials.len()
    );
    assert!(
        report.win_fraction >= 0.9,
        "pose-aware wins in only {:.0}% of trials",
        report.win_fraction * 100.0
    );
    passed("08 pose-aware unwrap wins >= 90% of offset trials");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ridgeforge"))
}

/// 9. The full synth -> visualize -> unwrap -> fuse -> normalize-pose
///    pipeline on a ~200k-point finger completes in under 30 s on one
///    thread.
#[test]
fn a09_pipeline_runtime() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let status = cli()
            .env("RIDGEFORGE_THREADS", "1")
            .args(args)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "stage {args:?} failed");
    };
    let finger = format!("{out}/finger.xyz");
    let scan0 = format!("{out}/scan_0.xyz");
    let scan1 = format!("{out}/scan_1.xyz");
    let pairs = format!("{out}/correspondences.json");
    let merged = format!("{out}/merged.xyz");
    let start = Instant::now();
    run(&["synth", "--seed", "11", "--density", "190", "--out-dir", &out]);
    run(&["visualize", &finger, "--pitch", "0.05", "--out-dir", &out]);
    run(&["unwrap", &finger, "--pitch", "0.05", "--out-dir", &out]);
    run(&["fuse", &scan0, &scan1, &pairs, "--out-dir", &out]);
    run(&["normalize-pose", &merged, "--out-dir", &out]);
    let elapsed = start.elapsed();
    let n = std::fs::read_to_string(&finger).unwrap().lines().count();
    assert!(n >= 200_000, "finger cloud has only {n} points");
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "pipeline took {:.1} s (limit 30 s)",
        elapsed.as_secs_f64()
    );
    passed("09 200k-point pipeline under 30 s single-threaded");
}

/// 10. Every evaluation protocol re-run with the same seed produces a
///     bit-identical report.
#[test]
fn a10_protocols_are_deterministic() {
    let _g = gate();
    let fusion = |seed| serde_json::to_vec(&eval::fusion_protocol(seed, 1, 0.02, 20.0).unwrap());
    let pose = |seed| serde_json::to_vec(&eval::pose_protocol(seed, 4, 30.0, 25.0).unwrap());
    let calib = |seed| serde_json::to_vec(&eval::calib_protocol(seed, 20).unwrap());
    let contact = |seed| serde_json::to_vec(&eval::contact_protocol(seed, 2, 10.0, 25.0).unwrap());
    assert_eq!(fusion(1010).unwrap(), fusion(1010).unwrap(), "fusion differs");
    assert_eq!(pose(1010).unwrap(), pose(1010).unwrap(), "pose differs");
    assert_eq!(calib(1010).unwrap(), calib(1010).unwrap(), "calib differs");
    assert_eq!(contact(1010).unwrap(), contact(1010).unwrap(), "contact differs");
    passed("10 all evaluation protocols re-run bit-identically");
}
