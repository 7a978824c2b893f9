//! Canonical pose normalization: slice the cloud into thin cross-sections,
//! fit constrained ellipses, fit the center axis line over the stable band,
//! and derive the rigid transform taking the finger to a canonical frame
//! (axis along +y, band-median major axis along +x).

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::register::RigidTransform;

/// Conic coefficients plus derived geometric parameters of one fitted
/// cross-section. Coefficients are scale-normalized so 4AC - B^2 = 1 with
/// A > 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipseParams {
    pub coeffs: [f64; 6],
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Major-axis angle from +x, degrees, in (-90, 90].
    pub theta_deg: f64,
}

impl EllipseParams {
    pub fn axis_ratio(&self) -> f64 {
        self.semi_major / self.semi_minor
    }
}

#[derive(Debug, Clone)]
pub struct Slice {
    /// Mean coordinate of members along the slicing axis (bin midpoint when
    /// the slab is empty).
    pub axial: f64,
    pub points: Vec<Vector2<f64>>,
    pub indices: Vec<usize>,
}

/// Output of [`slice_cloud`]: the slicing frame plus the slabs in axial
/// order. Slab count is ceil(extent / thickness); empty slabs are retained.
#[derive(Debug, Clone)]
pub struct SliceSet {
    pub axis: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub thickness: f64,
    pub slices: Vec<Slice>,
}

#[derive(Debug, Clone)]
pub struct CenterAxis {
    pub point: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub centers: Vec<Vector3<f64>>,
    pub rms_residual: f64,
    /// Ellipses fitted in the retained band, paired with their axial
    /// coordinates.
    pub band_ellipses: Vec<(f64, EllipseParams)>,
}

/// Angles in degrees: pitch about x, roll about y (the finger axis after
/// canonicalization), yaw about z. Composition order R = Rz * Ry * Rx.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl PoseAngles {
    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        Self { pitch, roll, yaw }
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        Rotation3::from_euler_angles(
            self.pitch.to_radians(),
            self.roll.to_radians(),
            self.yaw.to_radians(),
        )
        .into_inner()
    }

    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        let (rx, ry, rz) = Rotation3::from_matrix_unchecked(*r).euler_angles();
        Self {
            pitch: rx.to_degrees(),
            roll: ry.to_degrees(),
            yaw: rz.to_degrees(),
        }
    }
}

/// Result of canonicalization. `roll_indeterminate` is raised when the
/// band-median axis ratio falls below 1.05; the axis alignment is still
/// valid but the roll component is fixed at zero.
#[derive(Debug, Clone)]
pub struct CanonicalPose {
    pub transform: RigidTransform,
    pub roll_indeterminate: bool,
    pub median_axis_ratio: f64,
    pub axis: CenterAxis,
}

/// Deterministic in-plane basis perpendicular to `axis`.
pub fn slice_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let h = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let e1 = (h - axis * h.dot(axis)).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Bin the cloud into slabs of the given thickness along `axis` and project
/// each slab's points onto the plane orthogonal to the axis.
pub fn slice_cloud(cloud: &PointCloud, axis: &Vector3<f64>, thickness: f64) -> Result<SliceSet> {
    assert!(thickness > 0.0, "slice thickness must be positive");
    if cloud.points.is_empty() {
        return Err(Error::EmptyInput("slice_cloud"));
    }
    let axis = axis.normalize();
    let (e1, e2) = slice_basis(&axis);
    let ts: Vec<f64> = cloud.points.iter().map(|p| p.dot(&axis)).collect();
    let t_min = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let extent = t_max - t_min;
    let n_slices = ((extent / thickness).ceil() as usize).max(1);
    let mut slices: Vec<Slice> = (0..n_slices)
        .map(|i| Slice {
            axial: t_min + (i as f64 + 0.5) * thickness,
            points: Vec::new(),
            indices: Vec::new(),
        })
        .collect();
    for (i, (p, t)) in cloud.points.iter().zip(&ts).enumerate() {
        let bin = (((t - t_min) / thickness) as usize).min(n_slices - 1);
        slices[bin].points.push(Vector2::new(p.dot(&e1), p.dot(&e2)));
        slices[bin].indices.push(i);
    }
    for (bin, s) in slices.iter_mut().enumerate() {
        if !s.indices.is_empty() {
            s.axial = s.indices.iter().map(|&i| ts[i]).sum::<f64>() / s.indices.len() as f64;
        } else {
            s.axial = t_min + (bin as f64 + 0.5) * thickness;
        }
    }
    Ok(SliceSet {
        axis,
        e1,
        e2,
        t_min,
        t_max,
        thickness,
        slices,
    })
}

/// Convert general conic coefficients to geometric ellipse parameters.
/// Fails with `NotAnEllipse` when the conic is not a real ellipse.
pub fn ellipse_from_conic(coeffs: [f64; 6]) -> Result<EllipseParams> {
    let [mut a, mut b, mut c, mut d, mut e, mut f] = coeffs;
    let disc = b * b - 4.0 * a * c;
    // written to also reject NaN discriminants
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(disc < 0.0) {
        return Err(Error::NotAnEllipse);
    }
    // 4AC > B^2 forces A and C to share a sign; fix it positive so the
    // eigenvalue ordering below identifies the major axis.
    if a + c < 0.0 {
        a = -a;
        b = -b;
        c = -c;
        d = -d;
        e = -e;
        f = -f;
    }
    let x0 = (2.0 * c * d - b * e) / disc;
    let y0 = (2.0 * a * e - b * d) / disc;
    let num = 2.0 * (a * e * e + c * d * d - b * d * e + disc * f);
    let s = ((a - c) * (a - c) + b * b).sqrt();
    let q_plus = num * (a + c + s);
    let q_minus = num * (a + c - s);
    if q_plus < 0.0 || q_minus < 0.0 {
        return Err(Error::NotAnEllipse);
    }
    let ax1 = q_plus.sqrt() / -disc;
    let ax2 = q_minus.sqrt() / -disc;
    let semi_major = ax1.max(ax2);
    let semi_minor = ax1.min(ax2);
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(semi_minor > 0.0) || !semi_major.is_finite() {
        return Err(Error::NotAnEllipse);
    }
    // Major-axis direction: eigenvector of [[A, B/2], [B/2, C]] for the
    // smaller eigenvalue (the long axis of the level set).
    let lam = 0.5 * (a + c - s);
    let v1 = Vector2::new(0.5 * b, lam - a);
    let v2 = Vector2::new(lam - c, 0.5 * b);
    let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
    let mut theta = if v.norm() < 1e-300 {
        0.0
    } else {
        v.y.atan2(v.x)
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    while theta <= -half_pi {
        theta += std::f64::consts::PI;
    }
    while theta > half_pi {
        theta -= std::f64::consts::PI;
    }
    // Normalize coefficients: 4AC - B^2 = 1, A > 0.
    let scale = 1.0 / (-disc).sqrt() * if a < 0.0 { -1.0 } else { 1.0 };
    let coeffs = [
        a * scale,
        b * scale,
        c * scale,
        d * scale,
        e * scale,
        f * scale,
    ];
    Ok(EllipseParams {
        coeffs,
        center: [x0, y0],
        semi_major,
        semi_minor,
        theta_deg: theta.to_degrees(),
    })
}

/// Constrained direct least-squares ellipse fit (quadratic/linear block
/// partition of the generalized eigenproblem), with point normalization for
/// conditioning.
pub fn fit_ellipse(points: &[Vector2<f64>]) -> Result<EllipseParams> {
    if points.len() < 6 {
        return Err(Error::InsufficientPoints(6));
    }
    let n = points.len() as f64;
    let mean: Vector2<f64> = points.iter().sum::<Vector2<f64>>() / n;
    let scale = (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt();
    if scale < 1e-300 {
        return Err(Error::NotAnEllipse);
    }
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let q = (p - mean) / scale;
        let d1 = Vector3::new(q.x * q.x, q.x * q.y, q.y * q.y);
        let d2 = Vector3::new(q.x, q.y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3.try_inverse().ok_or(Error::NotAnEllipse)?;
    let t = -s3_inv * s2.transpose();
    let m_raw = s1 + s2 * t;
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let m = c1_inv * m_raw;

    let eig = nalgebra::linalg::Schur::new(m).complex_eigenvalues();
    let scale_m = m.norm().max(1.0);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lam in eig.iter() {
        if lam.im.abs() > 1e-8 * scale_m {
            continue;
        }
        let shifted = m - Matrix3::identity() * lam.re;
        let svd = shifted.svd(true, true);
        let v_t = svd.v_t.as_ref().unwrap();
        let v = v_t.row(2).transpose();
        let cons = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cons > 1e-12 {
            match best {
                Some((c, _)) if c >= cons => {}
                _ => best = Some((cons, v)),
            }
        }
    }
    let (_, a1) = best.ok_or(Error::NotAnEllipse)?;
    let a2 = t * a1;
    // Conic in normalized coordinates q = (p - mean)/scale.
    let (na, nb, nc) = (a1[0], a1[1], a1[2]);
    let (nd, ne, nf) = (a2[0], a2[1], a2[2]);
    // Undo the normalization.
    let s2i = scale * scale;
    let (ga, gb, gc) = (na / s2i, nb / s2i, nc / s2i);
    let gd0 = nd / scale;
    let ge0 = ne / scale;
    let gd = -2.0 * ga * mean.x - gb * mean.y + gd0;
    let ge = -gb * mean.x - 2.0 * gc * mean.y + ge0;
    let gf = ga * mean.x * mean.x
        + gb * mean.x * mean.y
        + gc * mean.y * mean.y
        - gd0 * mean.x
        - ge0 * mean.y
        + nf;
    ellipse_from_conic([ga, gb, gc, gd, ge, gf])
}

/// Fraction of the axial extent discarded at the top (tip side, larger
/// axial coordinate) before axis fitting.
pub const BAND_DISCARD_TOP: f64 = 0.20;
/// Fraction discarded at the bottom.
pub const BAND_DISCARD_BOTTOM: f64 = 0.10;

/// Fit ellipses over the stable axial band and pass a total-least-squares
/// 3D line through the slice centers.
pub fn fit_center_axis(set: &SliceSet) -> Result<CenterAxis> {
    let extent = set.t_max - set.t_min;
    let lo = set.t_min + BAND_DISCARD_BOTTOM * extent;
    let hi = set.t_max - BAND_DISCARD_TOP * extent;
    let band: Vec<&Slice> = set
        .slices
        .iter()
        .filter(|s| s.axial >= lo && s.axial <= hi && s.points.len() >= 6)
        .collect();
    let fits: Vec<(f64, EllipseParams)> = band
        .par_iter()
        .filter_map(|s| fit_ellipse(&s.points).ok().map(|e| (s.axial, e)))
        .collect();
    if fits.len() < 3 {
        return Err(Error::InsufficientSlices(3));
    }
    let centers: Vec<Vector3<f64>> = fits
        .iter()
        .map(|(t, e)| set.e1 * e.center[0] + set.e2 * e.center[1] + set.axis * *t)
        .collect();
    let mean: Vector3<f64> =
        centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let mut cov = Matrix3::zeros();
    for c in &centers {
        let d = c - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut i_max = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] > eig.eigenvalues[i_max] {
            i_max = i;
        }
    }
    let mut dir: Vector3<f64> = eig.eigenvectors.column(i_max).into();
    dir = dir.normalize();
    if dir.dot(&set.axis) < 0.0 {
        dir = -dir;
    }
    let mut ss = 0.0;
    for c in &centers {
        let d = c - mean;
        ss += (d - dir * d.dot(&dir)).norm_squared();
    }
    let rms = (ss / centers.len() as f64).sqrt();
    Ok(CenterAxis {
        point: mean,
        direction: dir,
        centers,
        rms_residual: rms,
        band_ellipses: fits,
    })
}

/// Threshold on the band-median axis ratio below which roll is considered
/// indeterminate.
pub const ROLL_RATIO_THRESHOLD: f64 = 1.05;

/// Circular median of angles that live on a half-turn (mod 180 degrees),
/// returned in radians in (-pi/2, pi/2].
fn median_half_turn(angles: &[f64]) -> f64 {
    let dist = |a: f64, b: f64| -> f64 {
        let mut d = (a - b).rem_euclid(std::f64::consts::PI);
        if d > std::f64::consts::FRAC_PI_2 {
            d = std::f64::consts::PI - d;
        }
        d
    };
    let mut best = (f64::INFINITY, 0.0);
    for &a in angles {
        let cost: f64 = angles.iter().map(|&b| dist(a, b)).sum();
        if cost < best.0 {
            best = (cost, a);
        }
    }
    best.1
}

/// Derive the rigid transform taking the finger to the canonical frame:
/// center axis along +y, axis centroid at the origin, band-median major
/// axis along +x. `axis_guess` orients the slicing (the finger's rough
/// axial direction); use +y when unknown.
pub fn canonical_pose(
    cloud: &PointCloud,
    axis_guess: &Vector3<f64>,
    thickness: f64,
) -> Result<CanonicalPose> {
    // Slabs cut obliquely to the true axis truncate the tube ends
    // asymmetrically and drag the fitted axis back toward the slicing
    // direction; re-slicing along the running estimate removes the bias.
    let mut dir = axis_guess.normalize();
    let mut axis = fit_center_axis(&slice_cloud(cloud, &dir, thickness)?)?;
    for _ in 0..3 {
        let dot = axis.direction.dot(&dir);
        let next = if dot < 0.0 { -axis.direction } else { axis.direction };
        if dot.abs() > 1.0 - 1e-12 {
            break;
        }
        dir = next;
        axis = fit_center_axis(&slice_cloud(cloud, &dir, thickness)?)?;
    }
    let r1 = Rotation3::rotation_between(&axis.direction, &Vector3::y())
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
        .into_inner();
    let t1 = -r1 * axis.point;
    let upright = RigidTransform::new(r1, t1);

    // Re-slice the axis-aligned cloud along +y to measure roll in the x-z
    // plane with an explicit basis (theta measured from +x toward +z).
    let rotated = crate::register::apply_rigid(cloud, &upright);
    let ts: Vec<f64> = rotated.points.iter().map(|p| p.y).collect();
    let t_min = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let extent = t_max - t_min;
    let lo = t_min + BAND_DISCARD_BOTTOM * extent;
    let hi = t_max - BAND_DISCARD_TOP * extent;
    let n_slices = ((extent / thickness).ceil() as usize).max(1);
    let mut slabs: Vec<Vec<Vector2<f64>>> = vec![Vec::new(); n_slices];
    for p in &rotated.points {
        let bin = (((p.y - t_min) / thickness) as usize).min(n_slices - 1);
        slabs[bin].push(Vector2::new(p.x, p.z));
    }
    let mut thetas = Vec::new();
    let mut ratios = Vec::new();
    for (bin, pts) in slabs.iter().enumerate() {
        let mid = t_min + (bin as f64 + 0.5) * thickness;
        if mid < lo || mid > hi || pts.len() < 6 {
            continue;
        }
        if let Ok(e) = fit_ellipse(pts) {
            thetas.push(e.theta_deg.to_radians());
            ratios.push(e.axis_ratio());
        }
    }
    if ratios.len() < 3 {
        return Err(Error::InsufficientSlices(3));
    }
    ratios.sort_by(f64::total_cmp);
    let median_ratio = ratios[ratios.len() / 2];
    let roll_indeterminate = median_ratio < ROLL_RATIO_THRESHOLD;
    let r2 = if roll_indeterminate {
        Matrix3::identity()
    } else {
        let theta = median_half_turn(&thetas);
        // theta measured from +x toward +z in the x-z plane; Ry(theta)
        // carries that direction back onto +x.
        Rotation3::from_axis_angle(&Vector3::y_axis(), theta).into_inner()
    };
    let r = r2 * r1;
    let t = r2 * t1;
    Ok(CanonicalPose {
        transform: RigidTransform::new(r, t),
        roll_indeterminate,
        median_axis_ratio: median_ratio,
        axis,
    })
}

/// Component-wise absolute angular difference, wrapped to [0, 180].
pub fn pose_error(injected: &PoseAngles, estimated: &PoseAngles) -> PoseAngles {
    let wrap = |a: f64, b: f64| -> f64 {
        let d = (a - b).rem_euclid(360.0);
        if d > 180.0 {
            360.0 - d
        } else {
            d
        }
    };
    PoseAngles {
        pitch: wrap(injected.pitch, estimated.pitch),
        roll: wrap(injected.roll, estimated.roll),
        yaw: wrap(injected.yaw, estimated.yaw),
    }
}
