//! Nonparametric unfolding of the projected depth surface by per-axis
//! arc-length integration. Each row is stretched by the cumulative length of
//! the depth profile along x, each column along y, anchored at the pixel
//! with the smallest gradient magnitude.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{self, PointCloud};
use crate::raster::{fill_holes, hist_equalize, orthographic_project, GridSpec, Raster};
use crate::register::RigidTransform;

/// Per-pixel depth slopes dz/dx and dz/dy (mm/mm), defined on foreground.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub mask: Vec<bool>,
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
}

/// Per-pixel unfolded target offsets in mm, zero at the unfold center.
#[derive(Debug, Clone)]
pub struct UnwrapMap {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub center: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
}

/// Central differences in the interior, one-sided at foreground boundaries.
pub fn depth_gradients(raster: &Raster) -> Result<GradientField> {
    let depth = raster.depth.as_ref().expect("depth channel required");
    let (w, h) = (raster.grid.width, raster.grid.height);
    let pitch = raster.grid.pitch;
    let bbox = raster.foreground_bbox().ok_or(Error::EmptyInput("empty raster"))?;
    if bbox.2 - bbox.0 < 1 || bbox.3 - bbox.1 < 1 {
        return Err(Error::TooThin);
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let at = |r: usize, c: usize| -> usize { r * w + c };
    let fg = |r: i64, c: i64| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && raster.mask[r as usize * w + c as usize]
    };
    for r in 0..h {
        for c in 0..w {
            if !raster.mask[at(r, c)] {
                continue;
            }
            let (ri, ci) = (r as i64, c as i64);
            let left = fg(ri, ci - 1);
            let right = fg(ri, ci + 1);
            gx[at(r, c)] = match (left, right) {
                (true, true) => (depth[at(r, c + 1)] - depth[at(r, c - 1)]) / (2.0 * pitch),
                (true, false) => (depth[at(r, c)] - depth[at(r, c - 1)]) / pitch,
                (false, true) => (depth[at(r, c + 1)] - depth[at(r, c)]) / pitch,
                (false, false) => 0.0,
            };
            let down = fg(ri - 1, ci);
            let up = fg(ri + 1, ci);
            gy[at(r, c)] = match (down, up) {
                (true, true) => (depth[at(r + 1, c)] - depth[at(r - 1, c)]) / (2.0 * pitch),
                (true, false) => (depth[at(r, c)] - depth[at(r - 1, c)]) / pitch,
                (false, true) => (depth[at(r + 1, c)] - depth[at(r, c)]) / pitch,
                (false, false) => 0.0,
            };
        }
    }
    Ok(GradientField {
        gx,
        gy,
        mask: raster.mask.clone(),
        width: w,
        height: h,
        pitch,
    })
}

/// Foreground pixel with minimal gradient magnitude; ties broken by smallest
/// (row, col) in lexicographic order.
pub fn find_unfold_center(grad: &GradientField) -> (usize, usize) {
    let mut best: Option<((usize, usize), f64)> = None;
    for r in 0..grad.height {
        for c in 0..grad.width {
            let k = r * grad.width + c;
            if !grad.mask[k] {
                continue;
            }
            let mag = (grad.gx[k] * grad.gx[k] + grad.gy[k] * grad.gy[k]).sqrt();
            if best.is_none_or(|(_, m)| mag < m) {
                best = Some(((r, c), mag));
            }
        }
    }
    best.expect("gradient field has no foreground").0
}

/// Signed cumulative trapezoidal arc-length integrals along rows (u) and
/// columns (v) from the unfold center. Off-foreground pixels integrate with
/// unit slope so u and v stay strictly monotone across the whole grid.
pub fn arc_length_maps(grad: &GradientField, center: (usize, usize)) -> UnwrapMap {
    let (w, h) = (grad.width, grad.height);
    let (cr, cc) = center;
    let pitch = grad.pitch;
    let fx = |k: usize| -> f64 {
        if grad.mask[k] {
            (1.0 + grad.gx[k] * grad.gx[k]).sqrt()
        } else {
            1.0
        }
    };
    let fy = |k: usize| -> f64 {
        if grad.mask[k] {
            (1.0 + grad.gy[k] * grad.gy[k]).sqrt()
        } else {
            1.0
        }
    };
    let mut u = vec![0.0; w * h];
    let mut v = vec![0.0; w * h];
    for r in 0..h {
        let base = r * w;
        for c in (cc + 1)..w {
            u[base + c] =
                u[base + c - 1] + 0.5 * (fx(base + c - 1) + fx(base + c)) * pitch;
        }
        for c in (0..cc).rev() {
            u[base + c] = u[base + c + 1] - 0.5 * (fx(base + c + 1) + fx(base + c)) * pitch;
        }
    }
    for c in 0..w {
        for r in (cr + 1)..h {
            v[r * w + c] =
                v[(r - 1) * w + c] + 0.5 * (fy((r - 1) * w + c) + fy(r * w + c)) * pitch;
        }
        for r in (0..cr).rev() {
            v[r * w + c] = v[(r + 1) * w + c] - 0.5 * (fy((r + 1) * w + c) + fy(r * w + c)) * pitch;
        }
    }
    UnwrapMap {
        u,
        v,
        center: (cr, cc),
        width: w,
        height: h,
        pitch,
    }
}

/// Forward-warp `image` through `map` onto an enlarged canvas. Splat
/// conflicts keep the sample landing closest to its target pixel center;
/// stretch gaps are filled harmonically.
pub fn remap(image: &Raster, map: &UnwrapMap) -> Raster {
    let (w, h) = (image.grid.width, image.grid.height);
    assert_eq!((map.width, map.height), (w, h), "map/image grids differ");
    let pitch = image.grid.pitch;
    let (cr, cc) = map.center;

    // Target pixel coordinates for every foreground source pixel.
    let mut targets: Vec<(usize, f64, f64)> = Vec::new();
    let mut min_r = f64::INFINITY;
    let mut min_c = f64::INFINITY;
    let mut max_r = f64::NEG_INFINITY;
    let mut max_c = f64::NEG_INFINITY;
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            if !image.mask[k] {
                continue;
            }
            let tr = cr as f64 + map.v[k] / pitch;
            let tc = cc as f64 + map.u[k] / pitch;
            min_r = min_r.min(tr);
            min_c = min_c.min(tc);
            max_r = max_r.max(tr);
            max_c = max_c.max(tc);
            targets.push((k, tr, tc));
        }
    }
    let margin = 2.0;
    let out_w = ((max_c - min_c).ceil() as usize) + 2 * margin as usize + 1;
    let out_h = ((max_r - min_r).ceil() as usize) + 2 * margin as usize + 1;
    let grid = GridSpec {
        width: out_w,
        height: out_h,
        pitch,
        origin: Vector2::new(
            image.grid.origin.x + (min_c - margin) * pitch,
            image.grid.origin.y + (min_r - margin) * pitch,
        ),
    };
    let n = out_w * out_h;
    let mut gray = vec![0.0; n];
    let mut depth = vec![0.0; n];
    let mut pos = vec![Vector3::zeros(); n];
    let mut mask = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let src_gray = image.gray.as_ref();
    let src_depth = image.depth.as_ref();
    let src_pos = image.pos.as_ref();
    for (k, tr, tc) in targets {
        let orow = (tr - min_r + margin).round() as i64;
        let ocol = (tc - min_c + margin).round() as i64;
        if orow < 0 || ocol < 0 || orow as usize >= out_h || ocol as usize >= out_w {
            continue;
        }
        let ok = orow as usize * out_w + ocol as usize;
        let frac_r = (tr - min_r + margin) - orow as f64;
        let frac_c = (tc - min_c + margin) - ocol as f64;
        let d = (frac_r * frac_r + frac_c * frac_c).sqrt();
        if d < best_dist[ok] {
            best_dist[ok] = d;
            mask[ok] = true;
            if let Some(g) = src_gray {
                gray[ok] = g[k];
            }
            if let Some(z) = src_depth {
                depth[ok] = z[k];
            }
            if let Some(p) = src_pos {
                pos[ok] = p[k];
            }
        }
    }
    let out = Raster {
        grid,
        gray: src_gray.map(|_| gray),
        depth: src_depth.map(|_| depth),
        pos: src_pos.map(|_| pos),
        mask,
        interpolated: vec![false; n],
        count: vec![0; n],
    };
    fill_holes(&out)
}

/// Everything needed to map a 3D point through an unwrap run.
#[derive(Debug, Clone)]
pub struct UnwrapContext {
    /// Grid of the pre-unwrap orthographic projection.
    pub projection_grid: GridSpec,
    pub map: UnwrapMap,
    /// Grid of the unwrapped output raster.
    pub output_grid: GridSpec,
    /// World-to-projection rotation applied before projecting, if any.
    pub pose: RigidTransform,
}

impl UnwrapContext {
    /// Continuous output pixel (row, col) a 3D point lands on, or None if it
    /// projects outside the foreground of the source raster.
    pub fn map_point(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let q = self.pose.apply_point(p);
        let (fr, fc) = self.projection_grid.fractional_pixel(q.x, q.y);
        if !self
            .projection_grid
            .contains(fr.round() as i64, fc.round() as i64)
        {
            return None;
        }
        // Bilinear lookup of the warp maps; nearest-pixel rounding would
        // quantize mapped positions to the source pitch.
        let (w, h) = (self.map.width, self.map.height);
        let r0 = (fr.floor() as i64).clamp(0, h as i64 - 1) as usize;
        let c0 = (fc.floor() as i64).clamp(0, w as i64 - 1) as usize;
        let r1 = (r0 + 1).min(h - 1);
        let c1 = (c0 + 1).min(w - 1);
        let tr = (fr - r0 as f64).clamp(0.0, 1.0);
        let tc = (fc - c0 as f64).clamp(0.0, 1.0);
        let lerp = |m: &[f64]| -> f64 {
            let top = m[r0 * w + c0] * (1.0 - tc) + m[r0 * w + c1] * tc;
            let bot = m[r1 * w + c0] * (1.0 - tc) + m[r1 * w + c1] * tc;
            top * (1.0 - tr) + bot * tr
        };
        let (u, v) = (lerp(&self.map.u), lerp(&self.map.v));
        let (cr, cc) = self.map.center;
        // Warped world position, then into output pixels.
        let world_x = self.projection_grid.origin.x + (cc as f64 + u / self.map.pitch + 0.5) * self.map.pitch;
        let world_y = self.projection_grid.origin.y + (cr as f64 + v / self.map.pitch + 0.5) * self.map.pitch;
        let (or, oc) = self.output_grid.fractional_pixel(world_x, world_y);
        Some((or, oc))
    }
}

/// Tunables shared by the unwrap pipelines.
#[derive(Debug, Clone, Copy)]
pub struct UnwrapParams {
    pub neighborhood_radius: f64,
    pub pitch: f64,
    pub max_view_angle_deg: f64,
    pub equalize: bool,
}

impl Default for UnwrapParams {
    fn default() -> Self {
        Self {
            neighborhood_radius: crate::config::DEFAULT_RADIUS_MM,
            pitch: crate::raster::DEFAULT_PITCH_MM,
            max_view_angle_deg: geometry::DEFAULT_MAX_VIEW_ANGLE_DEG,
            equalize: true,
        }
    }
}

/// Depth band below the per-pixel top surface that still counts as the near
/// sheet when projecting a closed surface.
pub const OCCLUSION_BAND_MM: f64 = 1.0;

/// Full generic pipeline: visualize, project, fill, integrate, remap,
/// equalize. Returns the unwrapped raster plus the mapping context.
pub fn unwrap_cloud(cloud: &PointCloud, params: &UnwrapParams) -> Result<(Raster, UnwrapContext)> {
    unwrap_posed(cloud, &RigidTransform::identity(), params)
}

/// Pose-aware unwrap: rotate the cloud by `pose` first, then run the generic
/// pipeline on the rotated geometry.
pub fn unwrap_posed(
    cloud: &PointCloud,
    pose: &RigidTransform,
    params: &UnwrapParams,
) -> Result<(Raster, UnwrapContext)> {
    let posed = crate::register::apply_rigid(cloud, pose);
    let view = Vector3::z();
    let field = geometry::visualize(
        &posed,
        params.neighborhood_radius,
        &view,
        params.max_view_angle_deg,
    )?;
    // Projecting sparser data than the pitch resolves would leave speckle
    // masks; coarsen to the point spacing when needed.
    let pitch = params.pitch.max(2.0 * geometry::median_spacing(&posed)?);
    let visible = crate::raster::occlusion_cull(&posed, &field.visible, pitch, OCCLUSION_BAND_MM);
    let mut projected = orthographic_project(
        &posed,
        Some(&field.gray),
        Some(&visible),
        pitch,
    )?;
    // Rim patches of the far sheet can survive the per-pixel occlusion test
    // where nothing overlaps them from above. Their depth cliff against the
    // near sheet exceeds any slope the view cull admits per pixel step, so a continuity
    // split isolates them.
    let max_jump = params.max_view_angle_deg.to_radians().tan() * pitch;
    crate::raster::keep_major_component(&mut projected, max_jump);
    let filled = fill_holes(&projected);
    let grad = depth_gradients(&filled)?;
    let center = find_unfold_center(&grad);
    let map = arc_length_maps(&grad, center);
    let warped = remap(&filled, &map);
    let out = if params.equalize {
        hist_equalize(&warped)
    } else {
        warped
    };
    let ctx = UnwrapContext {
        projection_grid: filled.grid,
        output_grid: out.grid,
        map,
        pose: pose.clone(),
    };
    Ok((out, ctx))
}
