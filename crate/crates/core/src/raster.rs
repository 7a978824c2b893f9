//! Orthographic projection onto a pixel grid, hole filling and histogram
//! equalization. The raster is the shared 2D substrate for unwrapping,
//! seam search and cross-modal alignment.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Placement of a raster in the XY plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Pixel pitch in mm/pixel.
    pub pitch: f64,
    /// World (mm) position of the lower-left corner of pixel (0, 0).
    pub origin: Vector2<f64>,
}

impl GridSpec {
    /// Column/row of the pixel containing world point (x, y), unchecked.
    pub fn pixel_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((y - self.origin.y) / self.pitch).floor() as i64,
            ((x - self.origin.x) / self.pitch).floor() as i64,
        )
    }

    /// World coordinates of the center of pixel (row, col).
    pub fn center_of(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin.x + (col as f64 + 0.5) * self.pitch,
            self.origin.y + (row as f64 + 0.5) * self.pitch,
        )
    }

    /// Continuous pixel coordinates (row, col) of a world point.
    pub fn fractional_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (y - self.origin.y) / self.pitch - 0.5,
            (x - self.origin.x) / self.pitch - 0.5,
        )
    }

    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Grid covering the XY bounding box of the given points.
    pub fn covering<'a>(points: impl Iterator<Item = &'a Vector3<f64>>, pitch: f64) -> Option<Self> {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        let mut any = false;
        for p in points {
            any = true;
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        if !any {
            return None;
        }
        let width = (((max_x - min_x) / pitch).floor() as usize) + 1;
        let height = (((max_y - min_y) / pitch).floor() as usize) + 1;
        Some(Self {
            width,
            height,
            pitch,
            origin: Vector2::new(min_x, min_y),
        })
    }
}

/// Regular 2D grid carrying gray, depth, mean 3D position and a foreground
/// mask. All channels are defined exactly on mask-true pixels once holes
/// have been filled.
#[derive(Debug, Clone)]
pub struct Raster {
    pub grid: GridSpec,
    pub gray: Option<Vec<f64>>,
    pub depth: Option<Vec<f64>>,
    pub pos: Option<Vec<Vector3<f64>>>,
    pub mask: Vec<bool>,
    /// True on pixels whose values came from hole interpolation.
    pub interpolated: Vec<bool>,
    /// Number of source points that contributed to each pixel.
    pub count: Vec<u32>,
}

impl Raster {
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.grid.width + col
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.grid == other.grid
    }

    /// Bounding box (row0, col0, row1, col1) of the foreground, inclusive.
    pub fn foreground_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.grid.height {
            for c in 0..self.grid.width {
                if self.mask[r * self.grid.width + c] {
                    bb = Some(match bb {
                        None => (r, c, r, c),
                        Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                    });
                }
            }
        }
        bb
    }
}

/// Project the visible subset of a cloud onto `grid`; per-pixel channels are
/// means over the contributing points.
pub fn orthographic_project_on_grid(
    cloud: &PointCloud,
    gray: Option<&[f64]>,
    visible: Option<&[bool]>,
    grid: GridSpec,
) -> Result<Raster> {
    let n = grid.width * grid.height;
    let mut sum_gray = vec![0.0; n];
    let mut sum_depth = vec![0.0; n];
    let mut sum_pos = vec![Vector3::zeros(); n];
    let mut count = vec![0u32; n];
    let mut total = 0usize;
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some(vis) = visible {
            if !vis[i] {
                continue;
            }
        }
        let (row, col) = grid.pixel_of(p.x, p.y);
        if !grid.contains(row, col) {
            continue;
        }
        let k = row as usize * grid.width + col as usize;
        if let Some(g) = gray {
            sum_gray[k] += g[i];
        }
        sum_depth[k] += p.z;
        sum_pos[k] += p;
        count[k] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyInput("no visible point lands on the grid"));
    }
    let mut mask = vec![false; n];
    for k in 0..n {
        if count[k] > 0 {
            mask[k] = true;
            let c = count[k] as f64;
            sum_gray[k] /= c;
            sum_depth[k] /= c;
            sum_pos[k] /= c;
        }
    }
    Ok(Raster {
        grid,
        gray: gray.map(|_| sum_gray),
        depth: Some(sum_depth),
        pos: Some(sum_pos),
        mask,
        interpolated: vec![false; n],
        count,
    })
}

pub const DEFAULT_PITCH_MM: f64 = 0.05;

/// Project onto a grid sized to the visible points' bounding box.
pub fn orthographic_project(
    cloud: &PointCloud,
    gray: Option<&[f64]>,
    visible: Option<&[bool]>,
    pitch: f64,
) -> Result<Raster> {
    assert!(pitch > 0.0, "pitch must be positive");
    let grid = GridSpec::covering(
        cloud
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| visible.is_none_or(|v| v[*i]))
            .map(|(_, p)| p),
        pitch,
    )
    .ok_or(Error::EmptyInput("no visible points to project"))?;
    orthographic_project_on_grid(cloud, gray, visible, grid)
}

/// Visibility refinement for closed surfaces viewed along +z: per pixel,
/// keep only points within `band` of the topmost depth, so the far sheet
/// never leaks into per-pixel means through normal-estimation errors.
pub fn occlusion_cull(
    cloud: &PointCloud,
    visible: &[bool],
    pitch: f64,
    band: f64,
) -> Vec<bool> {
    let grid = match GridSpec::covering(
        cloud
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| visible[*i])
            .map(|(_, p)| p),
        pitch,
    ) {
        Some(g) => g,
        None => return visible.to_vec(),
    };
    let mut zmax = vec![f64::NEG_INFINITY; grid.width * grid.height];
    for (i, p) in cloud.points.iter().enumerate() {
        if !visible[i] {
            continue;
        }
        let (r, c) = grid.pixel_of(p.x, p.y);
        if grid.contains(r, c) {
            let k = r as usize * grid.width + c as usize;
            zmax[k] = zmax[k].max(p.z);
        }
    }
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !visible[i] {
                return false;
            }
            let (r, c) = grid.pixel_of(p.x, p.y);
            if !grid.contains(r, c) {
                return false;
            }
            p.z >= zmax[r as usize * grid.width + c as usize] - band
        })
        .collect()
}

/// Drop every foreground component except the largest one, where two
/// 4-adjacent foreground pixels belong to the same component only if their
/// depths differ by at most `max_jump`. A jump that large cannot occur on a
/// single view-culled sheet, so smaller components are stray back-surface
/// patches that slipped past the per-pixel occlusion test (typically exposed
/// rims at open ends of a closed surface).
pub fn keep_major_component(raster: &mut Raster, max_jump: f64) {
    let (w, h) = (raster.grid.width, raster.grid.height);
    let depth = match raster.depth.as_ref() {
        Some(d) => d.clone(),
        None => return,
    };
    let mut label = vec![usize::MAX; w * h];
    let mut sizes: Vec<usize> = Vec::new();
    for start in 0..w * h {
        if !raster.mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        label[start] = id;
        let mut size = 0usize;
        while let Some(k) = stack.pop() {
            size += 1;
            let (r, c) = (k / w, k % w);
            let mut push = |nk: usize| {
                if raster.mask[nk]
                    && label[nk] == usize::MAX
                    && (depth[nk] - depth[k]).abs() <= max_jump
                {
                    label[nk] = id;
                    stack.push(nk);
                }
            };
            if c > 0 {
                push(k - 1);
            }
            if c + 1 < w {
                push(k + 1);
            }
            if r > 0 {
                push(k - w);
            }
            if r + 1 < h {
                push(k + w);
            }
        }
        sizes.push(size);
    }
    if sizes.len() <= 1 {
        return;
    }
    let keep = sizes
        .iter()
        .enumerate()
        .max_by_key(|(_, s)| **s)
        .map(|(i, _)| i)
        .unwrap();
    for k in 0..w * h {
        if raster.mask[k] && label[k] != keep {
            raster.mask[k] = false;
            raster.interpolated[k] = false;
            raster.count[k] = 0;
            if let Some(g) = raster.gray.as_mut() {
                g[k] = 0.0;
            }
            if let Some(d) = raster.depth.as_mut() {
                d[k] = 0.0;
            }
            if let Some(p) = raster.pos.as_mut() {
                p[k] = Vector3::zeros();
            }
        }
    }
}

/// Classify mask-false pixels: exterior background (4-connected to the
/// raster border) vs interior holes.
fn hole_pixels(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut exterior = vec![false; mask.len()];
    let mut stack = Vec::new();
    let push = |r: usize, c: usize, exterior: &mut Vec<bool>, stack: &mut Vec<(usize, usize)>| {
        let k = r * width + c;
        if !mask[k] && !exterior[k] {
            exterior[k] = true;
            stack.push((r, c));
        }
    };
    for c in 0..width {
        push(0, c, &mut exterior, &mut stack);
        push(height - 1, c, &mut exterior, &mut stack);
    }
    for r in 0..height {
        push(r, 0, &mut exterior, &mut stack);
        push(r, width - 1, &mut exterior, &mut stack);
    }
    while let Some((r, c)) = stack.pop() {
        let mut visit = |r: usize, c: usize| push(r, c, &mut exterior, &mut stack);
        if r > 0 {
            visit(r - 1, c);
        }
        if r + 1 < height {
            visit(r + 1, c);
        }
        if c > 0 {
            visit(r, c - 1);
        }
        if c + 1 < width {
            visit(r, c + 1);
        }
    }
    mask.iter()
        .zip(&exterior)
        .map(|(m, e)| !m && !e)
        .collect()
}

/// Harmonic (discrete Laplace) interpolation of one channel over the hole
/// pixels via Gauss-Seidel, Dirichlet data on the surrounding foreground.
fn harmonic_fill(values: &mut [f64], mask: &[bool], holes: &[usize], width: usize) {
    if holes.is_empty() {
        return;
    }
    // Seed with the mean of the foreground values.
    let mut sum = 0.0;
    let mut cnt = 0usize;
    for (k, &m) in mask.iter().enumerate() {
        if m {
            sum += values[k];
            cnt += 1;
        }
    }
    let seed = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
    for &k in holes {
        values[k] = seed;
    }
    let tol = 1e-6;
    for _ in 0..100_000 {
        let mut max_delta: f64 = 0.0;
        for &k in holes {
            // All 4-neighbors of an interior hole are foreground or hole.
            let neighbors = [k - width, k + width, k - 1, k + 1];
            let mut acc = 0.0;
            let mut n = 0.0;
            for &j in &neighbors {
                acc += values[j];
                n += 1.0;
            }
            let next = acc / n;
            max_delta = max_delta.max((next - values[k]).abs());
            values[k] = next;
        }
        if max_delta < tol {
            break;
        }
    }
}

/// Fill interior holes of every present channel by harmonic interpolation.
/// Original foreground values are untouched; filled pixels are added to the
/// mask and flagged in `interpolated`.
pub fn fill_holes(raster: &Raster) -> Raster {
    assert!(raster.foreground_count() >= 1, "need at least one foreground pixel");
    let (w, h) = (raster.grid.width, raster.grid.height);
    let hole_mask = hole_pixels(&raster.mask, w, h);
    let holes: Vec<usize> = hole_mask
        .iter()
        .enumerate()
        .filter(|(_, h)| **h)
        .map(|(k, _)| k)
        .collect();
    let mut out = raster.clone();
    if holes.is_empty() {
        return out;
    }
    if let Some(gray) = &mut out.gray {
        harmonic_fill(gray, &raster.mask, &holes, w);
    }
    if let Some(depth) = &mut out.depth {
        harmonic_fill(depth, &raster.mask, &holes, w);
    }
    if let Some(pos) = &mut out.pos {
        for axis in 0..3 {
            let mut channel: Vec<f64> = pos.iter().map(|p| p[axis]).collect();
            harmonic_fill(&mut channel, &raster.mask, &holes, w);
            for (p, v) in pos.iter_mut().zip(&channel) {
                p[axis] = *v;
            }
        }
    }
    for &k in &holes {
        out.mask[k] = true;
        out.interpolated[k] = true;
    }
    out
}

/// Foreground-only CDF histogram equalization with 256 bins. The map is
/// monotone; a single-bin (uniform) image is returned unchanged.
pub fn hist_equalize(raster: &Raster) -> Raster {
    let gray = raster.gray.as_ref().expect("gray channel required");
    let mut hist = [0usize; 256];
    let mut total = 0usize;
    let bin_of = |g: f64| -> usize { ((g * 256.0) as usize).min(255) };
    for (g, m) in gray.iter().zip(&raster.mask) {
        if *m {
            hist[bin_of(*g)] += 1;
            total += 1;
        }
    }
    let mut out = raster.clone();
    if total == 0 {
        return out;
    }
    if hist.iter().filter(|&&h| h > 0).count() <= 1 {
        return out;
    }
    let mut cdf = [0.0f64; 256];
    let mut acc = 0usize;
    for b in 0..256 {
        acc += hist[b];
        cdf[b] = acc as f64 / total as f64;
    }
    let out_gray = out.gray.as_mut().unwrap();
    for (k, m) in raster.mask.iter().enumerate() {
        if *m {
            out_gray[k] = cdf[bin_of(gray[k])];
        }
    }
    out
}
