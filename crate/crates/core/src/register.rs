//! Correspondence-driven weighted rigid fitting (SVD), iterative rigid
//! refinement, and the overlap-disagreement evaluation metric.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointCloud};
use crate::raster::Raster;

/// One matched 3D pair with a non-negative weight.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Correspondence {
    pub p: [f64; 3],
    pub q: [f64; 3],
    #[serde(default = "default_weight")]
    pub w: f64,
    /// Optional 2D anchor (row, col) in the first source raster.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a_px: Option<[f64; 2]>,
    /// Optional 2D anchor (row, col) in the second source raster.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b_px: Option<[f64; 2]>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn from_points(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Self {
        Self {
            pairs: pairs
                .iter()
                .map(|(p, q)| Correspondence {
                    p: [p.x, p.y, p.z],
                    q: [q.x, q.y, q.z],
                    w: 1.0,
                    a_px: None,
                    b_px: None,
                })
                .collect(),
        }
    }

    pub fn p(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.pairs[i].p)
    }

    pub fn q(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.pairs[i].q)
    }
}

/// Proper rigid motion: rotation (det +1) plus translation in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Row-major 3x3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = rotation[(i, j)];
            }
        }
        Self {
            rotation: r,
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn r(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn t(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r() * p + self.t()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r().transpose();
        Self::new(rt, -(rt * self.t()))
    }

    /// `self` after `other`: (self ∘ other)(p) = self(other(p)).
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.r() * other.r(), self.r() * other.t() + self.t())
    }

    /// Orthonormality / determinant invariant check.
    pub fn validate(&self) -> Result<()> {
        let r = self.r();
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCloud("rotation is not orthonormal with det +1"));
        }
        Ok(())
    }

    pub fn rotation_angle_deg(&self) -> f64 {
        let tr = self.r().trace();
        (((tr - 1.0) / 2.0).clamp(-1.0, 1.0)).acos().to_degrees()
    }
}

/// Intermediate quantities of a rigid fit, kept for inspection.
#[derive(Debug, Clone)]
pub struct RigidFitDiagnostics {
    pub centroid_p: Vector3<f64>,
    pub centroid_q: Vector3<f64>,
    pub cross_covariance: Matrix3<f64>,
    pub singular_values: [f64; 3],
    pub rms_residual: f64,
    pub reflection_corrected: bool,
    /// Two equal singular values: the minimizer is not unique.
    pub degenerate_svd: bool,
}

/// Read 3D pairs off the two rasters' position maps at the stored 2D
/// anchors; weights are all 1.
pub fn lift_correspondences(
    anchors: &[([f64; 2], [f64; 2])],
    raster_a: &Raster,
    raster_b: &Raster,
) -> Result<CorrespondenceSet> {
    let pos_a = raster_a.pos.as_ref().expect("raster_a needs a pos map");
    let pos_b = raster_b.pos.as_ref().expect("raster_b needs a pos map");
    let mut pairs = Vec::with_capacity(anchors.len());
    for (i, (a, b)) in anchors.iter().enumerate() {
        let lookup = |px: &[f64; 2], raster: &Raster, pos: &[Vector3<f64>]| -> Option<Vector3<f64>> {
            let (r, c) = (px[0].round() as i64, px[1].round() as i64);
            if !raster.grid.contains(r, c) {
                return None;
            }
            let k = r as usize * raster.grid.width + c as usize;
            if raster.mask[k] {
                Some(pos[k])
            } else {
                None
            }
        };
        let p = lookup(a, raster_a, pos_a).ok_or(Error::DanglingAnchor(i))?;
        let q = lookup(b, raster_b, pos_b).ok_or(Error::DanglingAnchor(i))?;
        pairs.push(Correspondence {
            p: [p.x, p.y, p.z],
            q: [q.x, q.y, q.z],
            w: 1.0,
            a_px: Some(*a),
            b_px: Some(*b),
        });
    }
    Ok(CorrespondenceSet { pairs })
}

/// Weighted least-squares rigid fit mapping P onto Q via SVD of the
/// weighted cross-covariance, with the determinant correction.
pub fn fit_rigid(corr: &CorrespondenceSet) -> Result<(RigidTransform, RigidFitDiagnostics)> {
    let n = corr.pairs.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration);
    }
    let w_sum: f64 = corr.pairs.iter().map(|c| c.w).sum();
    if w_sum <= 0.0 {
        return Err(Error::DegenerateConfiguration);
    }
    let centroid_p: Vector3<f64> = corr
        .pairs
        .iter()
        .map(|c| Vector3::from(c.p) * c.w)
        .sum::<Vector3<f64>>()
        / w_sum;
    let centroid_q: Vector3<f64> = corr
        .pairs
        .iter()
        .map(|c| Vector3::from(c.q) * c.w)
        .sum::<Vector3<f64>>()
        / w_sum;
    let mut h = Matrix3::zeros();
    for c in &corr.pairs {
        let dp = Vector3::from(c.p) - centroid_p;
        let dq = Vector3::from(c.q) - centroid_q;
        h += c.w * dp * dq.transpose();
    }
    // Collinear input: the source scatter has rank <= 1.
    let mut scatter = Matrix3::zeros();
    for c in &corr.pairs {
        let dp = Vector3::from(c.p) - centroid_p;
        scatter += c.w * dp * dp.transpose();
    }
    let sev = scatter.symmetric_eigen();
    let mut evals: Vec<f64> = sev.eigenvalues.iter().cloned().collect();
    evals.sort_by(|a, b| b.total_cmp(a));
    if evals[1] <= 1e-12 * evals[0].max(1e-300) {
        return Err(Error::DegenerateConfiguration);
    }

    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let v = v_t.transpose();
    let mut singular = [svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]];
    singular.sort_by(|a, b| b.total_cmp(a));
    let mut rotation = v * u.transpose();
    let mut reflection_corrected = false;
    if rotation.determinant() < 0.0 {
        // Negate the column of V for the smallest singular value.
        let mut min_i = 0;
        for i in 1..3 {
            if svd.singular_values[i] < svd.singular_values[min_i] {
                min_i = i;
            }
        }
        let mut v2 = v;
        for r in 0..3 {
            v2[(r, min_i)] = -v2[(r, min_i)];
        }
        rotation = v2 * u.transpose();
        reflection_corrected = true;
    }
    let translation = centroid_q - rotation * centroid_p;
    let transform = RigidTransform::new(rotation, translation);
    let mut ss = 0.0;
    for c in &corr.pairs {
        let r = rotation * Vector3::from(c.p) + translation - Vector3::from(c.q);
        ss += c.w * r.norm_squared();
    }
    let rms = (ss / w_sum).sqrt();
    let degenerate_svd = {
        let s = svd.singular_values;
        let mx = s.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
        (s[0] - s[1]).abs() <= 1e-9 * mx
            || (s[1] - s[2]).abs() <= 1e-9 * mx
            || (s[0] - s[2]).abs() <= 1e-9 * mx
    };
    Ok((
        transform,
        RigidFitDiagnostics {
            centroid_p,
            centroid_q,
            cross_covariance: h,
            singular_values: singular,
            rms_residual: rms,
            reflection_corrected,
            degenerate_svd,
        },
    ))
}

/// Map points by R p + t and normals by R.
pub fn apply_rigid(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    let r = transform.r();
    let t = transform.t();
    PointCloud {
        points: cloud.points.iter().map(|p| r * p + t).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| r * n).collect()),
        source_id: cloud.source_id.clone(),
    }
}

/// Median nearest-neighbor spacing of a cloud, estimated from a sample.
pub fn median_nn_spacing(cloud: &PointCloud, index: &NeighborIndex) -> f64 {
    let step = (cloud.len() / 500).max(1);
    let mut ds: Vec<f64> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate().step_by(step) {
        // nearest excluding self: query a growing radius
        let mut r = index.cell_size();
        loop {
            let mut best = f64::INFINITY;
            for j in index.query_radius(p, r) {
                if j != i {
                    best = best.min((cloud.points[j] - p).norm());
                }
            }
            if best.is_finite() {
                ds.push(best);
                break;
            }
            r *= 2.0;
            if r > 1e6 {
                break;
            }
        }
    }
    ds.sort_by(f64::total_cmp);
    if ds.is_empty() {
        0.0
    } else {
        ds[ds.len() / 2]
    }
}

/// Iterative nearest-neighbor rigid refinement (ICP) of `cloud_a` onto
/// `cloud_b` starting from `init`. Pairs beyond 3x the median point spacing
/// of `cloud_b` are rejected; iterations stop once the mean residual change
/// drops below `tol` or it stops improving.
pub fn refine_rigid(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    init: &RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<RigidTransform> {
    let spacing = {
        let idx = NeighborIndex::build(cloud_b, 1.0)?;
        median_nn_spacing(cloud_b, &idx)
    };
    let reject = (3.0 * spacing).max(1e-9);
    let index = NeighborIndex::build(cloud_b, reject)?;
    let mut current = init.clone();
    let mut prev_residual = f64::INFINITY;
    for _ in 0..max_iters {
        let moved = apply_rigid(cloud_a, &current);
        let mut pairs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
        let step = (moved.len() / 20_000).max(1);
        for p in moved.points.iter().step_by(step) {
            if let Some((j, _)) = index.nearest_within(p, reject) {
                pairs.push((*p, cloud_b.points[j]));
            }
        }
        if pairs.len() < 3 {
            return Err(Error::NoOverlap);
        }
        let corr = CorrespondenceSet::from_points(&pairs);
        let (delta, diag) = fit_rigid(&corr)?;
        let residual = diag.rms_residual;
        if residual > prev_residual {
            break; // reject non-improving step, keep the last accepted pose
        }
        current = delta.compose(&current);
        if (prev_residual - residual).abs() < tol {
            prev_residual = residual;
            break;
        }
        prev_residual = residual;
    }
    if !prev_residual.is_finite() {
        return Err(Error::NoOverlap);
    }
    Ok(current)
}

/// Histogram of per-pixel disagreement, fixed 0.01 mm bins over 0-0.5 mm.
/// Values beyond the range fall into the last bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisagreementHistogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

pub const DISAGREEMENT_BIN_WIDTH: f64 = 0.01;
pub const DISAGREEMENT_RANGE: f64 = 0.5;

/// Mean nearest-neighbor distance from cloud A to cloud B over their
/// overlap. A point of A belongs to the overlap when its nearest B neighbor
/// lies within `max_distance` (default 1.5x the median spacing of B), so
/// only genuinely shared surface enters the statistic.
pub fn overlap_disagreement(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    max_distance: Option<f64>,
) -> Result<(f64, DisagreementHistogram)> {
    if cloud_a.is_empty() {
        return Err(Error::EmptyInput("overlap_disagreement"));
    }
    let spacing = crate::geometry::median_spacing(cloud_b)?;
    let radius = max_distance.unwrap_or(1.5 * spacing);
    let index = crate::geometry::NeighborIndex::build(cloud_b, radius.max(1e-9))?;
    let n_bins = (DISAGREEMENT_RANGE / DISAGREEMENT_BIN_WIDTH).round() as usize;
    let mut counts = vec![0u64; n_bins];
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in &cloud_a.points {
        if let Some((_, d)) = index.nearest_within(p, radius) {
            sum += d;
            n += 1;
            let bin = ((d / DISAGREEMENT_BIN_WIDTH) as usize).min(n_bins - 1);
            counts[bin] += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    Ok((
        sum / n as f64,
        DisagreementHistogram {
            bin_width: DISAGREEMENT_BIN_WIDTH,
            counts,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen::<f64>() * 10.0 - 5.0,
                    rng.gen::<f64>() * 10.0 - 5.0,
                    rng.gen::<f64>() * 10.0 - 5.0,
                )
            })
            .collect()
    }

    #[test]
    fn fit_identity() {
        let pts = random_points(10, 1);
        let pairs: Vec<_> = pts.iter().map(|p| (*p, *p)).collect();
        let (t, diag) = fit_rigid(&CorrespondenceSet::from_points(&pairs)).unwrap();
        assert!(t.rotation_angle_deg() < 1e-9);
        assert!(t.t().norm() < 1e-9);
        assert!(diag.rms_residual < 1e-12);
    }

    #[test]
    fn fit_recovers_known_transform() {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
        let trans = Vector3::new(1.0, 2.0, 3.0);
        let pts = random_points(10, 2);
        let pairs: Vec<_> = pts.iter().map(|p| (*p, rot * p + trans)).collect();
        let (t, _) = fit_rigid(&CorrespondenceSet::from_points(&pairs)).unwrap();
        let err_rot = (t.r() - rot.matrix()).norm();
        assert!(err_rot < 1e-9, "rotation error {err_rot}");
        assert!((t.t() - trans).norm() < 1e-9);
    }

    #[test]
    fn fit_mirror_takes_reflection_path() {
        // Non-coplanar points against their mirror image: the optimal
        // orthogonal map is improper, forcing the det < 0 branch.
        let pts = random_points(12, 4);
        let pairs: Vec<_> = pts
            .iter()
            .map(|p| (*p, Vector3::new(p.x, p.y, -p.z)))
            .collect();
        let (t, diag) = fit_rigid(&CorrespondenceSet::from_points(&pairs)).unwrap();
        assert!(diag.reflection_corrected);
        assert_relative_eq!(t.r().determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fit_collinear_errors() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let pairs: Vec<_> = pts.iter().map(|p| (*p, *p)).collect();
        assert!(matches!(
            fit_rigid(&CorrespondenceSet::from_points(&pairs)),
            Err(Error::DegenerateConfiguration)
        ));
    }

    #[test]
    fn fit_optimality_vs_random_rotations() {
        let mut rng = StdRng::seed_from_u64(8);
        for trial in 0..5 {
            let pts = random_points(6, 100 + trial);
            let qts = random_points(6, 200 + trial);
            let pairs: Vec<_> = pts.iter().zip(&qts).map(|(p, q)| (*p, *q)).collect();
            let corr = CorrespondenceSet::from_points(&pairs);
            let (_, diag) = fit_rigid(&corr).unwrap();
            let best = diag.rms_residual;
            let cp = diag.centroid_p;
            let cq = diag.centroid_q;
            for _ in 0..1000 {
                let axis = Vector3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                )
                .normalize();
                let ang = rng.gen::<f64>() * std::f64::consts::TAU;
                let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), ang);
                let t = cq - r * cp;
                let mut ss = 0.0;
                for (p, q) in &pairs {
                    ss += (r * p + t - q).norm_squared();
                }
                let rms = (ss / pairs.len() as f64).sqrt();
                assert!(best <= rms + 1e-9);
            }
        }
    }

    #[test]
    fn fit_equivariance_under_common_rotation() {
        let _rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4);
        let pts = random_points(8, 3);
        let qts = random_points(8, 4);
        let pairs: Vec<_> = pts.iter().zip(&qts).map(|(p, q)| (*p, *q)).collect();
        let (t0, _) = fit_rigid(&CorrespondenceSet::from_points(&pairs)).unwrap();
        let s = Rotation3::from_euler_angles(0.2, -0.7, 1.1);
        let spairs: Vec<_> = pairs.iter().map(|(p, q)| (s * p, s * q)).collect();
        let (t1, _) = fit_rigid(&CorrespondenceSet::from_points(&spairs)).unwrap();
        let conj = s.matrix() * t0.r() * s.matrix().transpose();
        assert!((t1.r() - conj).norm() < 1e-9);
    }

    #[test]
    fn fit_weight_scaling_invariance() {
        let pts = random_points(8, 5);
        let qts = random_points(8, 6);
        let pairs: Vec<_> = pts.iter().zip(&qts).map(|(p, q)| (*p, *q)).collect();
        let mut corr = CorrespondenceSet::from_points(&pairs);
        let (t0, _) = fit_rigid(&corr).unwrap();
        for c in &mut corr.pairs {
            c.w *= 37.5;
        }
        let (t1, _) = fit_rigid(&corr).unwrap();
        assert!((t0.r() - t1.r()).norm() < 1e-12);
        assert!((t0.t() - t1.t()).norm() < 1e-12);
    }

    #[test]
    fn apply_rigid_round_trip_and_isometry() {
        let cloud = PointCloud::new(random_points(50, 7), "c");
        let t = RigidTransform::new(
            *Rotation3::from_euler_angles(0.1, 0.2, 0.3).matrix(),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let moved = apply_rigid(&cloud, &t);
        let back = apply_rigid(&moved, &t.inverse());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-9);
        }
        for i in 0..10 {
            for j in 0..10 {
                let d0 = (cloud.points[i] - cloud.points[j]).norm();
                let d1 = (moved.points[i] - moved.points[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        let id = apply_rigid(&cloud, &RigidTransform::identity());
        assert_eq!(id.points, cloud.points);
    }

    #[test]
    fn refine_identical_clouds_converges_immediately() {
        let cloud = PointCloud::new(random_points(300, 9), "a");
        let t = refine_rigid(&cloud, &cloud, &RigidTransform::identity(), 10, 1e-9).unwrap();
        assert!(t.rotation_angle_deg() < 1e-6);
        assert!(t.t().norm() < 1e-6);
    }

    #[test]
    fn refine_disjoint_clouds_error() {
        let a = PointCloud::new(random_points(50, 10), "a");
        let far: Vec<_> = random_points(50, 11)
            .into_iter()
            .map(|p| p + Vector3::new(1000.0, 0.0, 0.0))
            .collect();
        let b = PointCloud::new(far, "b");
        assert!(matches!(
            refine_rigid(&a, &b, &RigidTransform::identity(), 5, 1e-6),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn lift_correspondences_roundtrip_and_dangling() {
        use crate::raster::orthographic_project;
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0)], "c");
        let ra = orthographic_project(&cloud, None, None, 0.05).unwrap();
        let anchors = vec![([0.0, 0.0], [0.0, 0.0])];
        let corr = lift_correspondences(&anchors, &ra, &ra).unwrap();
        assert_eq!(corr.pairs[0].p, [1.0, 2.0, 3.0]);
        assert_eq!(corr.pairs[0].w, 1.0);
        let bad = vec![([5.0, 5.0], [0.0, 0.0])];
        assert!(matches!(
            lift_correspondences(&bad, &ra, &ra),
            Err(Error::DanglingAnchor(0))
        ));
    }

    #[test]
    fn disagreement_identical_and_shifted() {
        let mut pts = Vec::new();
        for x in 0..30 {
            for y in 0..30 {
                pts.push(Vector3::new(x as f64 * 0.05, y as f64 * 0.05, 1.0));
            }
        }
        let a = PointCloud::new(pts.clone(), "a");
        let (mean, _) = overlap_disagreement(&a, &a, None).unwrap();
        assert!(mean < 1e-12);
        let shifted: Vec<_> = pts.iter().map(|p| p + Vector3::new(0.0, 0.0, 0.05)).collect();
        let b = PointCloud::new(shifted, "b");
        let (mean, hist) = overlap_disagreement(&a, &b, None).unwrap();
        assert_relative_eq!(mean, 0.05, epsilon = 1e-9);
        assert_eq!(hist.counts[5], 900);
    }
}
