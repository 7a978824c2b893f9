//! Point-cloud container, spatial neighborhood queries, local tangent-frame
//! estimation and the per-point surface-depth visualization.
//!
//! The grayscale value of each point is its signed distance to the tangent
//! plane fitted to its metric neighborhood, normalized over the whole cloud.
//! Ridges sit above the local plane, valleys below, so the result carries
//! ridge/valley polarity independent of lighting.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// A set of 3D points in millimeters with optional unit normals.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub source_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, source_id: impl Into<String>) -> Self {
        Self {
            points,
            normals: None,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Check the container invariants: finite coordinates, and unit normals
    /// matching the point count when present.
    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidCloud("non-finite coordinate"));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::InvalidCloud("normals.len != points.len"));
            }
            for n in normals {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidCloud("normal is not unit length"));
                }
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }
}

/// Uniform-grid spatial hash over a point cloud.
///
/// Queries are exact: `query_radius` returns precisely the indices at strict
/// distance `< r` from the probe.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    cell_size: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

fn cell_of(p: &Vector3<f64>, cell_size: f64) -> (i64, i64, i64) {
    (
        (p.x / cell_size).floor() as i64,
        (p.y / cell_size).floor() as i64,
        (p.z / cell_size).floor() as i64,
    )
}

impl NeighborIndex {
    /// Build a uniform grid hash with the given cell size (mm).
    pub fn build(cloud: &PointCloud, cell_size: f64) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty cloud"));
        }
        assert!(cell_size > 0.0, "cell_size must be positive");
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            cells.entry(cell_of(p, cell_size)).or_default().push(i);
        }
        Ok(Self {
            points: cloud.points.clone(),
            cell_size,
            cells,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Indices of all points at strict distance `< r` from `p`.
    pub fn query_radius(&self, p: &Vector3<f64>, r: f64) -> Vec<usize> {
        assert!(r > 0.0, "radius must be positive");
        let reach = (r / self.cell_size).ceil() as i64;
        let (cx, cy, cz) = cell_of(p, self.cell_size);
        let r2 = r * r;
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            if (self.points[i] - p).norm_squared() < r2 {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Nearest point within `r` of `p` as `(index, distance)`, or None.
    /// Unlike [`Self::nearest`], the search never leaves the `r`-ball, so
    /// isolated query points stay cheap.
    pub fn nearest_within(&self, p: &Vector3<f64>, r: f64) -> Option<(usize, f64)> {
        assert!(r > 0.0, "radius must be positive");
        let reach = (r / self.cell_size).ceil() as i64;
        let (cx, cy, cz) = cell_of(p, self.cell_size);
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            let d = (self.points[i] - p).norm();
                            if d <= r && best.is_none_or(|(_, b)| d < b) {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
        }
        best
    }

    /// Index of the nearest point to `p`, searched by expanding cell shells.
    pub fn nearest(&self, p: &Vector3<f64>) -> usize {
        let (cx, cy, cz) = cell_of(p, self.cell_size);
        let mut best: Option<(f64, usize)> = None;
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &i in bucket {
                                let d = (self.points[i] - p).norm();
                                if best.is_none_or(|(b, _)| d < b) {
                                    best = Some((d, i));
                                }
                            }
                        }
                    }
                }
            }
            // Any point in shell k lies at distance >= (k-1)*cell from p, so
            // once that bound exceeds the current best no later shell can win.
            if let Some((d, i)) = best {
                if (ring as f64 - 1.0) * self.cell_size >= d {
                    return i;
                }
            }
            ring += 1;
        }
    }
}

/// Median nearest-neighbor distance, estimated from up to 500 probe points.
/// Used to pick raster pitches that keep projected masks solid.
pub fn median_spacing(cloud: &PointCloud) -> Result<f64> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InsufficientPoints(n));
    }
    let mut lo = cloud.points[0];
    let mut hi = cloud.points[0];
    for p in &cloud.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let diag = (hi - lo).norm().max(1e-9);
    let cell = (diag / (n as f64).cbrt()).max(1e-9);
    let index = NeighborIndex::build(cloud, cell)?;
    let step = (n / 500).max(1);
    let mut dists = Vec::new();
    let mut i = 0;
    while i < n {
        let p = cloud.points[i];
        let mut r = cell;
        loop {
            let best = index
                .query_radius(&p, r)
                .into_iter()
                .filter(|&j| j != i)
                .map(|j| (cloud.points[j] - p).norm())
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                dists.push(best);
                break;
            }
            r *= 2.0;
        }
        i += step;
    }
    dists.sort_by(f64::total_cmp);
    Ok(dists[dists.len() / 2])
}

/// Local tangent frame at a point: neighborhood centroid plus PCA normal.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    pub centroid: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub neighbor_count: usize,
}

/// Per-point depth/gray field produced by [`visualize`].
#[derive(Debug, Clone)]
pub struct SurfaceDepthField {
    /// Raw signed tangent-plane distance (mm); meaningful where `visible`.
    pub depth: Vec<f64>,
    /// Normalized gray in `[0, 1]`; meaningful where `visible`.
    pub gray: Vec<f64>,
    pub visible: Vec<bool>,
    /// Estimated local normals; `None` where the neighborhood was degenerate.
    pub normals: Vec<Option<Vector3<f64>>>,
    pub d_min: f64,
    pub d_max: f64,
}

impl SurfaceDepthField {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

pub fn build_neighbor_index(cloud: &PointCloud, cell_size: f64) -> Result<NeighborIndex> {
    NeighborIndex::build(cloud, cell_size)
}

fn sign_normalize(v: Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Fit the tangent plane to `neighbors` by PCA and orient the normal toward
/// the query point `p`.
pub fn estimate_local_frame(
    cloud: &PointCloud,
    p: &Vector3<f64>,
    neighbors: &[usize],
) -> Result<LocalFrame> {
    if neighbors.len() < 3 {
        return Err(Error::InsufficientNeighbors(neighbors.len()));
    }
    let centroid: Vector3<f64> =
        neighbors.iter().map(|&i| cloud.points[i]).sum::<Vector3<f64>>() / neighbors.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in neighbors {
        let d = cloud.points[i] - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    // Sort eigenpairs by ascending eigenvalue.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    if l2 <= 0.0 || l1 <= 1e-10 * l2 {
        // All points coincident or exactly collinear: no plane is defined.
        return Err(Error::DegenerateNeighborhood);
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    // Tie between the two smallest eigenvalues: pick deterministically the
    // lexicographically largest of the two candidate eigenvectors.
    if (l1 - l0) <= 1e-9 * l2 {
        let a = sign_normalize(eig.eigenvectors.column(order[0]).into_owned());
        let b = sign_normalize(eig.eigenvectors.column(order[1]).into_owned());
        normal = if (a.x, a.y, a.z) >= (b.x, b.y, b.z) { a } else { b };
    }
    normal.normalize_mut();
    if (p - centroid).dot(&normal) < 0.0 {
        normal = -normal;
    }
    Ok(LocalFrame {
        centroid,
        normal,
        neighbor_count: neighbors.len(),
    })
}

/// Signed distance of `p` from the tangent plane of `frame` (mm).
pub fn surface_depth(p: &Vector3<f64>, frame: &LocalFrame) -> f64 {
    (p - frame.centroid).dot(&frame.normal)
}

/// Affine map of raw depths onto `[0, 1]`.
pub fn normalize_depths(depths: &[f64]) -> Result<Vec<f64>> {
    assert!(!depths.is_empty(), "need at least one depth value");
    let d_min = depths.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = depths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if d_max == d_min {
        return Err(Error::ConstantField);
    }
    Ok(depths.iter().map(|d| (d - d_min) / (d_max - d_min)).collect())
}

/// Visibility mask: true iff the angle between the point normal and the view
/// normal does not exceed `max_angle_deg`.
pub fn cull_invisible(
    normals: &[Vector3<f64>],
    view_normal: &Vector3<f64>,
    max_angle_deg: f64,
) -> Vec<bool> {
    let view = view_normal.normalize();
    normals
        .iter()
        .map(|n| {
            let cos = (n.dot(&view) / n.norm()).clamp(-1.0, 1.0);
            cos.acos().to_degrees() <= max_angle_deg
        })
        .collect()
}

pub const DEFAULT_MAX_VIEW_ANGLE_DEG: f64 = 85.0;

/// Per-point local-surface-depth visualization.
///
/// Points with fewer than 3 neighbors inside `r`, or with a degenerate
/// neighborhood, are marked invisible rather than failing the whole cloud.
/// If every visible depth is identical the gray field is uniform 0.5.
pub fn visualize(
    cloud: &PointCloud,
    r: f64,
    view_normal: &Vector3<f64>,
    max_angle_deg: f64,
) -> Result<SurfaceDepthField> {
    let index = NeighborIndex::build(cloud, r)?;
    let view = view_normal.normalize();

    let per_point: Vec<(f64, Option<Vector3<f64>>)> = cloud
        .points
        .par_iter()
        .map(|p| {
            let neigh = index.query_radius(p, r);
            match estimate_local_frame(cloud, p, &neigh) {
                Ok(frame) => {
                    // Ridge texture can dwarf the curvature inset of the fine
                    // neighborhood and flip the outward orientation; a 3x
                    // coarser centroid sits robustly below the surface.
                    let coarse = index.query_radius(p, 3.0 * r);
                    let cc = coarse
                        .iter()
                        .map(|&i| cloud.points[i])
                        .sum::<Vector3<f64>>()
                        / coarse.len() as f64;
                    let mut normal = frame.normal;
                    let mut depth = surface_depth(p, &frame);
                    if (p - cc).dot(&normal) < 0.0 {
                        normal = -normal;
                        depth = -depth;
                    }
                    (depth, Some(normal))
                }
                Err(_) => (0.0, None),
            }
        })
        .collect();

    let n = cloud.len();
    let mut depth = vec![0.0; n];
    let mut visible = vec![false; n];
    let mut normals = vec![None; n];
    for (i, (d, nrm)) in per_point.into_iter().enumerate() {
        depth[i] = d;
        normals[i] = nrm;
        if let Some(nrm) = nrm {
            let cos = nrm.dot(&view).clamp(-1.0, 1.0);
            visible[i] = cos.acos().to_degrees() <= max_angle_deg;
        }
    }

    let vis_depths: Vec<f64> = depth
        .iter()
        .zip(&visible)
        .filter(|(_, v)| **v)
        .map(|(d, _)| *d)
        .collect();
    if vis_depths.is_empty() {
        return Err(Error::EmptyOutput);
    }
    let d_min = vis_depths.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = vis_depths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut gray = vec![0.0; n];
    for i in 0..n {
        if visible[i] {
            gray[i] = if d_max == d_min {
                0.5
            } else {
                (depth[i] - d_min) / (d_max - d_min)
            };
        }
    }
    Ok(SurfaceDepthField {
        depth,
        gray,
        visible,
        normals,
        d_min,
        d_max,
    })
}
