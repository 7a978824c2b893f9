//! Deterministic evaluation protocols over the synthetic oracle: fusion
//! disagreement, pose-perturbation recovery, calibration round trips, and
//! the generic-vs-pose-aware contact comparison.

use nalgebra::{Matrix2, Rotation3, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crossmodal::{
    decompose_projection, estimate_projection, fit_contact_pose, reprojection_error,
    CameraModel, ContactPose, Pair2D3D,
};
use crate::error::Result;
use crate::pose::{canonical_pose, pose_error, PoseAngles};
use crate::register::{DisagreementHistogram, RigidTransform};
use crate::synth::{generate_finger, partial_scan, render_contact, synth_correspondences, FingerSpec};
use crate::unwrap::{unwrap_cloud, unwrap_posed, UnwrapParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionTrial {
    pub seed: u64,
    pub noise_sigma: f64,
    pub mean_disagreement: f64,
    pub seam_length: usize,
    pub histogram: DisagreementHistogram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionReport {
    pub protocol: String,
    pub seed: u64,
    pub trials: Vec<FusionTrial>,
    pub mean_disagreement: f64,
}

/// Fuse two partial scans of the same synthetic finger per trial and
/// collect the overlap disagreement.
pub fn fusion_protocol(
    seed: u64,
    trials: usize,
    noise_sigma: f64,
    density: f64,
) -> Result<FusionReport> {
    let mut out = Vec::new();
    for trial in 0..trials {
        let trial_seed = seed.wrapping_add(trial as u64);
        let spec = FingerSpec {
            seed: trial_seed,
            ..Default::default()
        };
        let (cloud, truth) = generate_finger(&spec, density);
        let a30 = 30f64.to_radians();
        let v1 = Vector3::new(a30.cos(), 0.0, a30.sin());
        let v2 = Vector3::new(a30.cos(), 0.0, -a30.sin());
        let id = RigidTransform::identity();
        let pose_b = RigidTransform::new(
            Rotation3::from_euler_angles(0.05, 0.3, -0.1).into_inner(),
            Vector3::new(2.0, -1.0, 1.5),
        );
        let (scan_a, ta) = partial_scan(
            &cloud,
            &truth,
            &v1,
            200.0,
            noise_sigma,
            &id,
            trial_seed.wrapping_mul(3).wrapping_add(1),
        );
        let (scan_b, tb) = partial_scan(
            &cloud,
            &truth,
            &v2,
            200.0,
            noise_sigma,
            &pose_b,
            trial_seed.wrapping_mul(3).wrapping_add(2),
        );
        let corr = synth_correspondences(&ta, &tb, 12, 0.0, trial_seed.wrapping_mul(3))?;
        let params = crate::mosaic::FuseParams::default();
        let (_, report) = crate::mosaic::fuse(&scan_a, &scan_b, &corr, &params)?;
        out.push(FusionTrial {
            seed: trial_seed,
            noise_sigma,
            mean_disagreement: report.disagreement_mean,
            seam_length: report.seam_length,
            histogram: report.disagreement_histogram,
        });
    }
    let mean = out.iter().map(|t| t.mean_disagreement).sum::<f64>() / out.len().max(1) as f64;
    Ok(FusionReport {
        protocol: "fusion".into(),
        seed,
        trials: out,
        mean_disagreement: mean,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseTrial {
    pub injected: PoseAngles,
    pub estimated: PoseAngles,
    pub error: PoseAngles,
    pub roll_indeterminate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseReport {
    pub protocol: String,
    pub seed: u64,
    pub trials: Vec<PoseTrial>,
    pub median_pitch_error: f64,
    pub median_roll_error: f64,
    pub median_yaw_error: f64,
    /// Fraction of near-circular control trials that flag roll as
    /// indeterminate.
    pub circular_flag_fraction: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        f64::NAN
    } else {
        v[v.len() / 2]
    }
}

/// Inject known rotations into synthetic fingers and measure the recovery
/// error of canonical pose normalization.
pub fn pose_protocol(
    seed: u64,
    trials: usize,
    max_angle_deg: f64,
    density: f64,
) -> Result<PoseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for trial in 0..trials {
        let spec = FingerSpec {
            seed: seed.wrapping_add(trial as u64),
            ..Default::default()
        };
        let (cloud, _) = generate_finger(&spec, density);
        let injected = PoseAngles::new(
            rng.gen_range(-max_angle_deg..max_angle_deg),
            rng.gen_range(-max_angle_deg..max_angle_deg),
            rng.gen_range(-max_angle_deg..max_angle_deg),
        );
        let r = injected.to_rotation();
        let moved = crate::geometry::PointCloud::new(
            cloud.points.iter().map(|p| r * p).collect(),
            "pose-trial",
        );
        let cp = canonical_pose(&moved, &Vector3::y(), 1.0)?;
        // the canonicalizing rotation inverts the injected one
        let estimated = PoseAngles::from_rotation(&cp.transform.r().transpose());
        let error = pose_error(&injected, &estimated);
        out.push(PoseTrial {
            injected,
            estimated,
            error,
            roll_indeterminate: cp.roll_indeterminate,
        });
    }
    // near-circular control: same protocol on a circular cylinder spec
    let mut circular_flags = 0usize;
    let circ_trials = trials.clamp(1, 10);
    for trial in 0..circ_trials {
        let spec = FingerSpec {
            semi_a: 7.0,
            semi_b: 6.9,
            seed: seed.wrapping_add(1000 + trial as u64),
            ..Default::default()
        };
        let (cloud, _) = generate_finger(&spec, density);
        let cp = canonical_pose(&cloud, &Vector3::y(), 1.0)?;
        if cp.roll_indeterminate {
            circular_flags += 1;
        }
    }
    Ok(PoseReport {
        protocol: "pose".into(),
        seed,
        median_pitch_error: median(out.iter().map(|t| t.error.pitch).collect()),
        median_roll_error: median(out.iter().map(|t| t.error.roll).collect()),
        median_yaw_error: median(out.iter().map(|t| t.error.yaw).collect()),
        circular_flag_fraction: circular_flags as f64 / circ_trials as f64,
        trials: out,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibReport {
    pub protocol: String,
    pub seed: u64,
    pub roundtrip_cameras: usize,
    pub max_roundtrip_rel_error: f64,
    pub noisy_trials: usize,
    pub rms_residuals: Vec<f64>,
    pub mean_rms_residual: f64,
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
    let r = Rotation3::from_euler_angles(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    )
    .into_inner();
    CameraModel {
        fx: rng.gen_range(400.0..1200.0),
        fy: rng.gen_range(400.0..1200.0),
        skew: rng.gen_range(-2.0..2.0),
        cx: rng.gen_range(200.0..500.0),
        cy: rng.gen_range(150.0..400.0),
        rotation: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        translation: [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(8.0..15.0),
        ],
    }
}

/// Compose-then-decompose round trips plus Monte Carlo noisy projection
/// estimation.
pub fn calib_protocol(seed: u64, noisy_trials: usize) -> Result<CalibReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let cameras = 100;
    for _ in 0..cameras {
        let cam = random_camera(&mut rng);
        let got = decompose_projection(&cam.compose())?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        for (a, b) in [
            (got.fx, cam.fx),
            (got.fy, cam.fy),
            (got.cx, cam.cx),
            (got.cy, cam.cy),
            (got.skew, cam.skew),
        ] {
            max_rel = max_rel.max(rel(a, b));
        }
        max_rel = max_rel.max((got.r() - cam.r()).norm());
        max_rel = max_rel.max((got.t() - cam.t()).norm() / cam.t().norm());
    }
    let mut rms = Vec::new();
    for _ in 0..noisy_trials {
        let cam = random_camera(&mut rng);
        let p = cam.compose();
        let pairs: Vec<Pair2D3D> = (0..30)
            .map(|_| {
                let x = Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                );
                let uv = p.project(&x).unwrap();
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let mag = (-2.0 * u1.ln()).sqrt() * 0.5;
                let ang = std::f64::consts::TAU * u2;
                Pair2D3D::new(
                    [uv.x + mag * ang.cos(), uv.y + mag * ang.sin()],
                    [x.x, x.y, x.z],
                )
            })
            .collect();
        let est = estimate_projection(&pairs)?;
        rms.push(reprojection_error(&est, &pairs)?.sqrt());
    }
    let mean_rms = rms.iter().sum::<f64>() / rms.len().max(1) as f64;
    Ok(CalibReport {
        protocol: "calib".into(),
        seed,
        roundtrip_cameras: cameras,
        max_roundtrip_rel_error: max_rel,
        noisy_trials,
        rms_residuals: rms,
        mean_rms_residual: mean_rms,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactTrial {
    pub offset_deg: f64,
    pub generic_displacement: f64,
    pub pose_aware_displacement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactReport {
    pub protocol: String,
    pub seed: u64,
    pub trials: Vec<ContactTrial>,
    /// Fraction of trials where the pose-aware pipeline yields strictly
    /// smaller landmark displacement.
    pub win_fraction: f64,
}

/// Mean residual landmark displacement after the best 2D rigid alignment
/// of mapped pixels onto target pixels.
fn rigid_residual(pairs: &[(Vector2<f64>, Vector2<f64>)]) -> f64 {
    let n = pairs.len() as f64;
    let ma: Vector2<f64> = pairs.iter().map(|(a, _)| *a).sum::<Vector2<f64>>() / n;
    let mb: Vector2<f64> = pairs.iter().map(|(_, b)| *b).sum::<Vector2<f64>>() / n;
    let mut cov = Matrix2::zeros();
    for (a, b) in pairs {
        cov += (b - mb) * (a - ma).transpose();
    }
    let angle = (cov[(0, 1)] - cov[(1, 0)]).atan2(cov[(0, 0)] + cov[(1, 1)]);
    let (s, c) = angle.sin_cos();
    let r = Matrix2::new(c, -s, s, c);
    pairs
        .iter()
        .map(|(a, b)| (r * (a - ma) + mb - b).norm())
        .sum::<f64>()
        / n
}

/// Compare generic vs pose-aware unwrapping against a contact render at a
/// known pose offset, measured as residual landmark displacement.
pub fn contact_protocol(
    seed: u64,
    trials: usize,
    min_offset_deg: f64,
    density: f64,
) -> Result<ContactReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let unwrap_params = UnwrapParams::default();
    for trial in 0..trials {
        let spec = FingerSpec {
            seed: seed.wrapping_add(trial as u64),
            ..Default::default()
        };
        let (cloud, truth) = generate_finger(&spec, density);
        let offset: f64 = rng.gen_range(min_offset_deg..(min_offset_deg + 15.0));
        // tilt about a random in-plane axis
        let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let axis = nalgebra::Unit::new_normalize(Vector3::new(dir.cos(), dir.sin(), 0.0));
        let r = Rotation3::from_axis_angle(&axis, offset.to_radians()).into_inner();
        let contact = ContactPose {
            k: 10.0,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [0.0, 0.0, 0.0],
            residual: 0.0,
            depth_ambiguous: false,
        };
        let (landmark_px, _) = render_contact(&cloud, &truth, &contact);
        // A contact print only captures the patch touching the plate: keep
        // landmarks whose rotated surface normal points at the viewer.
        let rmat = contact.r3();
        let visible: Vec<usize> = truth
            .landmarks
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                let n = truth.spec.surface_normal(l.t, l.phi);
                (rmat * n).z > 30f64.to_radians().cos()
            })
            .map(|(i, _)| i)
            .collect();
        if visible.len() < 6 {
            continue;
        }
        let pairs: Vec<Pair2D3D> = visible
            .iter()
            .map(|&i| Pair2D3D::new(landmark_px[i].1, truth.landmarks[i].position))
            .collect();
        let fitted = fit_contact_pose(&pairs)?;
        let rigid = RigidTransform::new(fitted.r3(), Vector3::zeros());

        let (_, ctx_generic) = unwrap_cloud(&cloud, &unwrap_params)?;
        let (_, ctx_aware) = unwrap_posed(&cloud, &rigid, &unwrap_params)?;
        let collect = |ctx: &crate::unwrap::UnwrapContext| -> Vec<(Vector2<f64>, Vector2<f64>)> {
            visible
                .iter()
                .filter_map(|&i| {
                    let px = landmark_px[i].1;
                    ctx.map_point(&truth.landmarks[i].pos()).map(|(ar, ac)| {
                        // work in mm on both sides for a comparable scale
                        (
                            Vector2::new(ar, ac) * ctx.output_grid.pitch,
                            Vector2::new(px[1], px[0]) / contact.k,
                        )
                    })
                })
                .collect()
        };
        let gp = collect(&ctx_generic);
        let ap = collect(&ctx_aware);
        if gp.len() < 3 || ap.len() < 3 {
            continue;
        }
        out.push(ContactTrial {
            offset_deg: offset,
            generic_displacement: rigid_residual(&gp),
            pose_aware_displacement: rigid_residual(&ap),
        });
    }
    let wins = out
        .iter()
        .filter(|t| t.pose_aware_displacement < t.generic_displacement)
        .count();
    Ok(ContactReport {
        protocol: "contact".into(),
        seed,
        win_fraction: wins as f64 / out.len().max(1) as f64,
        trials: out,
    })
}
