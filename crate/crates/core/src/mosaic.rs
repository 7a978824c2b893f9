//! Seam-aware fusion of two aligned clouds: penalty maps over the projected
//! overlap, endpoint selection on the mask boundaries, minimum-cost seam via
//! Dijkstra, and distance-weighted blending across a narrow band.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::raster::{fill_holes, orthographic_project_on_grid, GridSpec, Raster};
use crate::register::{
    apply_rigid, fit_rigid, overlap_disagreement, refine_rigid, CorrespondenceSet,
    DisagreementHistogram, RigidTransform,
};

/// Seam penalties on the shared projection grid. `l` is infinite outside
/// the overlap region.
#[derive(Debug, Clone)]
pub struct PenaltyMap {
    pub grid: GridSpec,
    pub l_dis: Vec<f64>,
    pub l_cen: Vec<f64>,
    pub l: Vec<f64>,
    pub lambda: f64,
    /// Center-seeking decay rate (projection grid size in pixels).
    pub k: f64,
    pub overlap: Vec<bool>,
}

/// Minimum-cost 8-connected pixel path between two boundary endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Seam {
    pub path: Vec<(usize, usize)>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    /// Mask B is fully inside mask A.
    A,
    /// Mask A is fully inside mask B.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeamEndpoints {
    Pair((usize, usize), (usize, usize)),
    Contained(Containment),
}

const NEIGHBORS8: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Exterior background: mask-false pixels 4-connected to the border.
fn exterior(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut ext = vec![false; mask.len()];
    let mut stack = Vec::new();
    let push = |r: usize, c: usize, ext: &mut Vec<bool>, stack: &mut Vec<(usize, usize)>| {
        let k = r * w + c;
        if !mask[k] && !ext[k] {
            ext[k] = true;
            stack.push((r, c));
        }
    };
    for c in 0..w {
        push(0, c, &mut ext, &mut stack);
        push(h - 1, c, &mut ext, &mut stack);
    }
    for r in 0..h {
        push(r, 0, &mut ext, &mut stack);
        push(r, w - 1, &mut ext, &mut stack);
    }
    while let Some((r, c)) = stack.pop() {
        if r > 0 {
            push(r - 1, c, &mut ext, &mut stack);
        }
        if r + 1 < h {
            push(r + 1, c, &mut ext, &mut stack);
        }
        if c > 0 {
            push(r, c - 1, &mut ext, &mut stack);
        }
        if c + 1 < w {
            push(r, c + 1, &mut ext, &mut stack);
        }
    }
    ext
}

/// Outermost boundary: mask pixels 8-adjacent to exterior background or to
/// the image edge.
fn outer_boundary(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let ext = exterior(mask, w, h);
    let mut boundary = vec![false; mask.len()];
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            if !mask[k] {
                continue;
            }
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                boundary[k] = true;
                continue;
            }
            for (dr, dc) in NEIGHBORS8 {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if ext[nr as usize * w + nc as usize] {
                    boundary[k] = true;
                    break;
                }
            }
        }
    }
    boundary
}

/// Exact Chebyshev distance transform to a seed set (two-pass chamfer).
fn chebyshev_distance(seed: &[bool], w: usize, h: usize) -> Vec<f64> {
    let inf = f64::INFINITY;
    let mut d: Vec<f64> = seed.iter().map(|s| if *s { 0.0 } else { inf }).collect();
    // forward pass
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            let mut best = d[k];
            for (dr, dc) in [(-1i64, -1i64), (-1, 0), (-1, 1), (0, -1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && (nc as usize) < w {
                    best = best.min(d[nr as usize * w + nc as usize] + 1.0);
                }
            }
            d[k] = best;
        }
    }
    // backward pass
    for r in (0..h).rev() {
        for c in (0..w).rev() {
            let k = r * w + c;
            let mut best = d[k];
            for (dr, dc) in [(1i64, 1i64), (1, 0), (1, -1), (0, 1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < h as i64 && nc >= 0 && (nc as usize) < w {
                    best = best.min(d[nr as usize * w + nc as usize] + 1.0);
                }
            }
            d[k] = best;
        }
    }
    d
}

/// Build the disagreement + center-seeking penalty maps over the overlap of
/// two same-grid rasters. `lambda` defaults to the mean disagreement over
/// the overlap; `k` defaults to the larger side of the overlap bounding box
/// in pixels.
pub fn penalty_maps(
    raster_a: &Raster,
    raster_b: &Raster,
    lambda: Option<f64>,
    k_override: Option<f64>,
) -> Result<PenaltyMap> {
    if !raster_a.same_grid(raster_b) {
        return Err(Error::GridMismatch);
    }
    let (w, h) = (raster_a.grid.width, raster_a.grid.height);
    let pos_a = raster_a.pos.as_ref().expect("pos map required");
    let pos_b = raster_b.pos.as_ref().expect("pos map required");
    let overlap: Vec<bool> = raster_a
        .mask
        .iter()
        .zip(&raster_b.mask)
        .map(|(a, b)| *a && *b)
        .collect();
    if !overlap.iter().any(|o| *o) {
        return Err(Error::NoOverlap);
    }
    // Overlap boundary: overlap pixels 8-adjacent to non-overlap or the edge.
    let mut boundary = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            if !overlap[k] {
                continue;
            }
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                boundary[k] = true;
                continue;
            }
            for (dr, dc) in NEIGHBORS8 {
                let nk = (r as i64 + dr) as usize * w + (c as i64 + dc) as usize;
                if !overlap[nk] {
                    boundary[k] = true;
                    break;
                }
            }
        }
    }
    let dist = chebyshev_distance(&boundary, w, h);
    // Overlap bounding box for the default decay rate.
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for r in 0..h {
        for c in 0..w {
            if overlap[r * w + c] {
                bb = Some(match bb {
                    None => (r, c, r, c),
                    Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                });
            }
        }
    }
    let (r0, c0, r1, c1) = bb.unwrap();
    let k_rate = k_override.unwrap_or(((r1 - r0 + 1).max(c1 - c0 + 1)) as f64);

    let mut l_dis = vec![0.0; w * h];
    let mut l_cen = vec![0.0; w * h];
    let mut sum_dis = 0.0;
    let mut n_overlap = 0usize;
    for k in 0..w * h {
        if overlap[k] {
            l_dis[k] = (pos_a[k] - pos_b[k]).norm();
            l_cen[k] = (-k_rate * dist[k]).exp();
            sum_dis += l_dis[k];
            n_overlap += 1;
        }
    }
    let lambda = lambda.unwrap_or(sum_dis / n_overlap as f64);
    let l: Vec<f64> = (0..w * h)
        .map(|k| {
            if overlap[k] {
                l_dis[k] + lambda * l_cen[k]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(PenaltyMap {
        grid: raster_a.grid,
        l_dis,
        l_cen,
        l,
        lambda,
        k: k_rate,
        overlap,
    })
}

/// Intersect the outermost boundaries of the two masks and pick the two
/// farthest intersection pixels as seam endpoints.
pub fn seam_endpoints(raster_a: &Raster, raster_b: &Raster) -> Result<SeamEndpoints> {
    if !raster_a.same_grid(raster_b) {
        return Err(Error::GridMismatch);
    }
    let (w, h) = (raster_a.grid.width, raster_a.grid.height);
    let any_overlap = raster_a
        .mask
        .iter()
        .zip(&raster_b.mask)
        .any(|(a, b)| *a && *b);
    if !any_overlap {
        return Err(Error::NoOverlap);
    }
    let ba = outer_boundary(&raster_a.mask, w, h);
    let bb = outer_boundary(&raster_b.mask, w, h);
    let hits: Vec<(usize, usize)> = (0..w * h)
        .filter(|&k| ba[k] && bb[k])
        .map(|k| (k / w, k % w))
        .collect();
    match hits.len() {
        0 => {
            let b_outside_a = raster_b
                .mask
                .iter()
                .zip(&raster_a.mask)
                .any(|(b, a)| *b && !*a);
            let a_outside_b = raster_a
                .mask
                .iter()
                .zip(&raster_b.mask)
                .any(|(a, b)| *a && !*b);
            if !b_outside_a {
                Ok(SeamEndpoints::Contained(Containment::A))
            } else if !a_outside_b {
                Ok(SeamEndpoints::Contained(Containment::B))
            } else {
                // Overlapping interiors with no boundary crossing can only
                // mean one mask ends inside the other; treat the larger as
                // the container.
                if raster_a.foreground_count() >= raster_b.foreground_count() {
                    Ok(SeamEndpoints::Contained(Containment::A))
                } else {
                    Ok(SeamEndpoints::Contained(Containment::B))
                }
            }
        }
        1 => Err(Error::DegenerateTangency),
        _ => {
            let mut best = ((0usize, 0usize), (0usize, 0usize), -1.0f64);
            for i in 0..hits.len() {
                for j in (i + 1)..hits.len() {
                    let dr = hits[i].0 as f64 - hits[j].0 as f64;
                    let dc = hits[i].1 as f64 - hits[j].1 as f64;
                    let d = (dr * dr + dc * dc).sqrt();
                    if d > best.2 {
                        best = (hits[i], hits[j], d);
                    }
                }
            }
            Ok(SeamEndpoints::Pair(best.0, best.1))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra shortest path on the 8-connected pixel graph. An edge costs the
/// mean of its two endpoint penalties times the step length (1 or sqrt 2).
pub fn min_cost_seam(
    penalty: &PenaltyMap,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<Seam> {
    let (w, h) = (penalty.grid.width, penalty.grid.height);
    let sk = start.0 * w + start.1;
    let gk = goal.0 * w + goal.1;
    assert!(
        penalty.l[sk].is_finite() && penalty.l[gk].is_finite(),
        "seam endpoints must carry finite penalty"
    );
    let mut dist = vec![f64::INFINITY; w * h];
    let mut prev = vec![usize::MAX; w * h];
    let mut heap = BinaryHeap::new();
    dist[sk] = 0.0;
    heap.push(Reverse((Cost(0.0), sk)));
    while let Some(Reverse((Cost(d), k))) = heap.pop() {
        if d > dist[k] {
            continue;
        }
        if k == gk {
            break;
        }
        let (r, c) = (k / w, k % w);
        for (dr, dc) in NEIGHBORS8 {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                continue;
            }
            let nk = nr as usize * w + nc as usize;
            if !penalty.l[nk].is_finite() {
                continue;
            }
            let step = if dr != 0 && dc != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            };
            let nd = d + 0.5 * (penalty.l[k] + penalty.l[nk]) * step;
            if nd < dist[nk] {
                dist[nk] = nd;
                prev[nk] = k;
                heap.push(Reverse((Cost(nd), nk)));
            }
        }
    }
    if !dist[gk].is_finite() {
        return Err(Error::SeamNotFound);
    }
    let mut path = vec![(gk / w, gk % w)];
    let mut k = gk;
    while k != sk {
        k = prev[k];
        path.push((k / w, k % w));
    }
    path.reverse();
    Ok(Seam {
        path,
        total_cost: dist[gk],
    })
}

/// Distance-weighted blend of the band points around the seam, Eq-style:
/// each candidate is replaced by the convex combination of its nearest
/// neighbor on each side, weighted by the distance to the opposite band
/// boundary.
pub fn blend_band(
    v_left: &[Vector3<f64>],
    v_right: &[Vector3<f64>],
    e_left: &[Vector3<f64>],
    e_right: &[Vector3<f64>],
    candidates: &[Vector3<f64>],
) -> (Vec<Vector3<f64>>, bool) {
    if v_left.is_empty() || v_right.is_empty() {
        // One side has no data: propagate unblended with a diagnostic flag.
        return (candidates.to_vec(), false);
    }
    let nearest = |set: &[Vector3<f64>], p: &Vector3<f64>| -> Vector3<f64> {
        *set.iter()
            .min_by(|a, b| (*a - p).norm().total_cmp(&(*b - p).norm()))
            .unwrap()
    };
    let min_dist = |set: &[Vector3<f64>], p: &Vector3<f64>| -> f64 {
        set.iter()
            .map(|a| (a - p).norm())
            .fold(f64::INFINITY, f64::min)
    };
    let out = candidates
        .iter()
        .map(|pc| {
            let pl = nearest(v_left, pc);
            let pr = nearest(v_right, pc);
            let w_r = if e_left.is_empty() { 1.0 } else { min_dist(e_left, pc) };
            let w_l = if e_right.is_empty() { 1.0 } else { min_dist(e_right, pc) };
            if w_l + w_r <= 0.0 {
                0.5 * (pl + pr)
            } else {
                (pl * w_l + pr * w_r) / (w_l + w_r)
            }
        })
        .collect();
    (out, true)
}

#[derive(Debug, Clone)]
pub struct FuseParams {
    pub pitch: f64,
    pub band_width: f64,
    pub lambda: Option<f64>,
    pub k_override: Option<f64>,
    pub refine_iters: usize,
    pub refine_tol: f64,
}

impl Default for FuseParams {
    fn default() -> Self {
        Self {
            pitch: crate::raster::DEFAULT_PITCH_MM,
            band_width: 0.4,
            lambda: None,
            k_override: None,
            refine_iters: 30,
            refine_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuseReport {
    pub seam_length: usize,
    pub endpoints: Option<((usize, usize), (usize, usize))>,
    pub lambda: f64,
    pub contained: bool,
    pub blended_points: usize,
    pub disagreement_mean: f64,
    pub disagreement_histogram: DisagreementHistogram,
    pub refined_transform: RigidTransform,
}

/// Per-pixel side labels after cutting the union mask along the seam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    A,
    B,
    Seam,
    None,
}

fn side_labels(
    mask_a: &[bool],
    mask_b: &[bool],
    seam: &Seam,
    w: usize,
    h: usize,
) -> Vec<Side> {
    let mut labels = vec![Side::None; w * h];
    let mut on_seam = vec![false; w * h];
    for &(r, c) in &seam.path {
        on_seam[r * w + c] = true;
    }
    let union: Vec<bool> = mask_a.iter().zip(mask_b).map(|(a, b)| *a || *b).collect();
    // 4-connected components of union minus seam (4-connectivity keeps the
    // 8-connected seam watertight).
    let mut comp = vec![usize::MAX; w * h];
    let mut n_comp = 0usize;
    for start in 0..w * h {
        if comp[start] != usize::MAX || !union[start] || on_seam[start] {
            continue;
        }
        let id = n_comp;
        n_comp += 1;
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(k) = stack.pop() {
            let (r, c) = (k / w, k % w);
            for (nr, nc) in [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ] {
                if nr < h && nc < w {
                    let nk = nr * w + nc;
                    if comp[nk] == usize::MAX && union[nk] && !on_seam[nk] {
                        comp[nk] = id;
                        stack.push(nk);
                    }
                }
            }
        }
    }
    // Majority vote by each component's exclusive pixels.
    let mut votes = vec![(0i64, 0i64); n_comp];
    for k in 0..w * h {
        if comp[k] == usize::MAX {
            continue;
        }
        if mask_a[k] && !mask_b[k] {
            votes[comp[k]].0 += 1;
        } else if mask_b[k] && !mask_a[k] {
            votes[comp[k]].1 += 1;
        }
    }
    for k in 0..w * h {
        if on_seam[k] {
            labels[k] = Side::Seam;
        } else if comp[k] != usize::MAX {
            let (a, b) = votes[comp[k]];
            labels[k] = if a >= b { Side::A } else { Side::B };
        }
    }
    labels
}

/// Full seam-aware fusion: coarse fit, rigid refinement, projection, seam
/// search, side assignment, band blending and merge. Cloud A is moved into
/// cloud B's frame.
pub fn fuse(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    corr: &CorrespondenceSet,
    params: &FuseParams,
) -> Result<(PointCloud, FuseReport)> {
    let (coarse, _) = fit_rigid(corr)?;
    let refined = refine_rigid(cloud_a, cloud_b, &coarse, params.refine_iters, params.refine_tol)?;
    let a2 = apply_rigid(cloud_a, &refined);
    let (mean, hist) = overlap_disagreement(&a2, cloud_b, None)?;

    // Seam search needs solid masks: coarsen the grid to the point spacing
    // when the requested pitch oversamples the data, then close the
    // remaining interior holes.
    let spacing = crate::geometry::median_spacing(&a2)?.max(crate::geometry::median_spacing(cloud_b)?);
    let seam_pitch = params.pitch.max(2.0 * spacing);
    let grid = GridSpec::covering(a2.points.iter().chain(cloud_b.points.iter()), seam_pitch)
        .ok_or(Error::EmptyInput("empty clouds"))?;
    let ra = fill_holes(&orthographic_project_on_grid(&a2, None, None, grid)?);
    let rb = fill_holes(&orthographic_project_on_grid(cloud_b, None, None, grid)?);

    let endpoints = match seam_endpoints(&ra, &rb) {
        Ok(e) => e,
        // A single tangency pixel is treated like containment.
        Err(Error::DegenerateTangency) => {
            if ra.foreground_count() >= rb.foreground_count() {
                SeamEndpoints::Contained(Containment::A)
            } else {
                SeamEndpoints::Contained(Containment::B)
            }
        }
        Err(e) => return Err(e),
    };

    let (w, h) = (grid.width, grid.height);
    match endpoints {
        SeamEndpoints::Contained(container) => {
            let (container_cloud, container_mask, other) = match container {
                Containment::A => (&a2, &ra.mask, cloud_b),
                Containment::B => (cloud_b, &rb.mask, &a2),
            };
            let mut points = container_cloud.points.clone();
            for p in &other.points {
                let (r, c) = grid.pixel_of(p.x, p.y);
                let inside = grid.contains(r, c) && container_mask[r as usize * w + c as usize];
                if !inside {
                    points.push(*p);
                }
            }
            let merged = PointCloud::new(points, format!("{}+{}", cloud_a.source_id, cloud_b.source_id));
            let report = FuseReport {
                seam_length: 0,
                endpoints: None,
                lambda: 0.0,
                contained: true,
                blended_points: 0,
                disagreement_mean: mean,
                disagreement_histogram: hist,
                refined_transform: refined,
            };
            Ok((merged, report))
        }
        SeamEndpoints::Pair(e1, e2) => {
            let penalty = penalty_maps(&ra, &rb, params.lambda, params.k_override)?;
            let seam = min_cost_seam(&penalty, e1, e2)?;
            let labels = side_labels(&ra.mask, &rb.mask, &seam, w, h);

            // Chebyshev distance (pixels) to the seam gates the band.
            let mut seam_mask = vec![false; w * h];
            for &(r, c) in &seam.path {
                seam_mask[r * w + c] = true;
            }
            let dist_px = chebyshev_distance(&seam_mask, w, h);
            let half_band_px = params.band_width / (2.0 * seam_pitch);

            let classify = |p: &Vector3<f64>| -> (Side, f64) {
                let (r, c) = grid.pixel_of(p.x, p.y);
                if !grid.contains(r, c) {
                    return (Side::None, f64::INFINITY);
                }
                let k = r as usize * w + c as usize;
                (labels[k], dist_px[k])
            };

            let mut kept: Vec<Vector3<f64>> = Vec::new();
            let mut band_a: Vec<Vector3<f64>> = Vec::new();
            let mut band_b: Vec<Vector3<f64>> = Vec::new();
            let mut edge_a: Vec<Vector3<f64>> = Vec::new();
            let mut edge_b: Vec<Vector3<f64>> = Vec::new();
            let edge_shell = 2.0; // pixels just outside the band feed E sets
            for p in &a2.points {
                let (side, d) = classify(p);
                if d <= half_band_px || side == Side::Seam {
                    band_a.push(*p);
                } else if side == Side::A || side == Side::None {
                    kept.push(*p);
                    if d <= half_band_px + edge_shell {
                        edge_a.push(*p);
                    }
                }
            }
            for p in &cloud_b.points {
                let (side, d) = classify(p);
                if d <= half_band_px || side == Side::Seam {
                    band_b.push(*p);
                } else if side == Side::B || side == Side::None {
                    kept.push(*p);
                    if d <= half_band_px + edge_shell {
                        edge_b.push(*p);
                    }
                }
            }
            let mut candidates = band_a.clone();
            candidates.extend_from_slice(&band_b);
            let (blended, _) = blend_band(&band_a, &band_b, &edge_a, &edge_b, &candidates);
            let blended_points = blended.len();
            kept.extend(blended);
            let merged =
                PointCloud::new(kept, format!("{}+{}", cloud_a.source_id, cloud_b.source_id));
            let report = FuseReport {
                seam_length: seam.path.len(),
                endpoints: Some((e1, e2)),
                lambda: penalty.lambda,
                contained: false,
                blended_points,
                disagreement_mean: mean,
                disagreement_histogram: hist,
                refined_transform: refined,
            };
            Ok((merged, report))
        }
    }
}
