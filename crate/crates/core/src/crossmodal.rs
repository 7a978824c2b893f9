//! 2D-3D registration against contactless and contact-based targets:
//! projection-matrix estimation with nonlinear refinement, QR-based camera
//! decomposition, scaled-orthographic contact pose fitting, and final
//! planar alignment with cropping.

use nalgebra::{
    DMatrix, DVector, Matrix2, Matrix3, Matrix3x4, Rotation3, Vector2, Vector3,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::raster::{GridSpec, Raster};
use crate::register::RigidTransform;
use crate::unwrap::{unwrap_posed, UnwrapParams};

/// Matched 2D pixel / 3D scene point pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Pair2D3D {
    pub px: [f64; 2],
    pub xyz: [f64; 3],
}

impl Pair2D3D {
    pub fn new(px: [f64; 2], xyz: [f64; 3]) -> Self {
        Self { px, xyz }
    }
    fn uv(&self) -> Vector2<f64> {
        Vector2::new(self.px[0], self.px[1])
    }
    fn point(&self) -> Vector3<f64> {
        Vector3::new(self.xyz[0], self.xyz[1], self.xyz[2])
    }
}

/// 3x4 projection, defined up to scale, stored normalized so the first
/// three entries of the last row have unit norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    pub p: [[f64; 4]; 3],
}

impl ProjectionMatrix {
    pub fn from_matrix(m: &Matrix3x4<f64>) -> Self {
        let row3 = Vector3::new(m[(2, 0)], m[(2, 1)], m[(2, 2)]);
        let n = row3.norm();
        assert!(n > 0.0, "degenerate last row");
        let m = m / n;
        let mut p = [[0.0; 4]; 3];
        for r in 0..3 {
            for c in 0..4 {
                p[r][c] = m[(r, c)];
            }
        }
        Self { p }
    }

    pub fn matrix(&self) -> Matrix3x4<f64> {
        Matrix3x4::from_fn(|r, c| self.p[r][c])
    }

    /// Project a scene point; errors if it lies on the principal plane.
    pub fn project(&self, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        let p = &self.p;
        let den = p[2][0] * x.x + p[2][1] * x.y + p[2][2] * x.z + p[2][3];
        if den.abs() < 1e-12 {
            return Err(Error::PrincipalPlanePoint);
        }
        let u = (p[0][0] * x.x + p[0][1] * x.y + p[0][2] * x.z + p[0][3]) / den;
        let v = (p[1][0] * x.x + p[1][1] * x.y + p[1][2] * x.z + p[1][3]) / den;
        Ok(Vector2::new(u, v))
    }
}

/// Intrinsics + extrinsics recovered from a projection matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraModel {
    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        )
    }

    pub fn r(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn t(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.translation)
    }

    /// K [R | t] as a normalized projection matrix.
    pub fn compose(&self) -> ProjectionMatrix {
        let kr = self.k() * self.r();
        let kt = self.k() * self.t();
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
        m.set_column(3, &kt);
        ProjectionMatrix::from_matrix(&m)
    }
}

/// Scaled-orthographic contact pose: pixel = k * (R3 x + t3) dropped to the
/// image plane. The z component of t3 is unobservable and held at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactPose {
    pub k: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    /// Mean 2D projection error (pixels) at the optimum.
    pub residual: f64,
    /// Set when the scene points have no depth spread along the viewing
    /// axis, leaving the depth-axis rotation component unconstrained.
    pub depth_ambiguous: bool,
}

impl ContactPose {
    pub fn r3(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn t3(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.translation)
    }

    pub fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let q = self.r3() * x + self.t3();
        Vector2::new(self.k * q.x, self.k * q.y)
    }
}

/// Mean squared reprojection error (px^2) over the pairs.
pub fn reprojection_error(p: &ProjectionMatrix, pairs: &[Pair2D3D]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("reprojection_error"));
    }
    let mut acc = 0.0;
    for pair in pairs {
        let uv = p.project(&pair.point())?;
        let d = uv - pair.uv();
        acc += d.norm_squared();
    }
    Ok(acc / pairs.len() as f64)
}

fn scene_rank_deficient(pairs: &[Pair2D3D], keep_dims: usize) -> bool {
    let n = pairs.len() as f64;
    let mean: Vector3<f64> = pairs.iter().map(|p| p.point()).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in pairs {
        let d = p.point() - mean;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[keep_dims - 1] <= 1e-10 * ev[0].max(1e-300)
}

/// Isotropic normalization: centroid to the origin, RMS distance to
/// `target`. Returns (scale, offset) with q = scale * (p - offset).
fn norm_params_2d(points: &[Vector2<f64>], target: f64) -> (f64, Vector2<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector2<f64>>() / n;
    let rms = (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt();
    (target / rms.max(1e-300), mean)
}

fn norm_params_3d(points: &[Vector3<f64>], target: f64) -> (f64, Vector3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let rms = (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt();
    (target / rms.max(1e-300), mean)
}

fn dlt(pairs: &[Pair2D3D]) -> Result<Matrix3x4<f64>> {
    let uvs: Vec<Vector2<f64>> = pairs.iter().map(|p| p.uv()).collect();
    let xyzs: Vec<Vector3<f64>> = pairs.iter().map(|p| p.point()).collect();
    let (s2, m2) = norm_params_2d(&uvs, std::f64::consts::SQRT_2);
    let (s3, m3) = norm_params_3d(&xyzs, 3f64.sqrt());
    let n = pairs.len();
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, pair) in pairs.iter().enumerate() {
        let uv = (pair.uv() - m2) * s2;
        let x = (pair.point() - m3) * s3;
        let xh = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -uv.x * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -uv.y * xh[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().unwrap();
    let p = v_t.row(v_t.nrows() - 1);
    let pn = Matrix3x4::from_fn(|r, c| p[4 * r + c]);
    // Undo normalization: P = T2^-1 * Pn * T3 with similarity transforms.
    let t2_inv = Matrix3::new(
        1.0 / s2,
        0.0,
        m2.x,
        0.0,
        1.0 / s2,
        m2.y,
        0.0,
        0.0,
        1.0,
    );
    let t3 = nalgebra::Matrix4::new(
        s3, 0.0, 0.0, -s3 * m3.x, 0.0, s3, 0.0, -s3 * m3.y, 0.0, 0.0, s3, -s3 * m3.z, 0.0,
        0.0, 0.0, 1.0,
    );
    let full = t2_inv * pn * t3;
    Ok(full)
}

fn residual_vector(p: &ProjectionMatrix, pairs: &[Pair2D3D]) -> Option<DVector<f64>> {
    let mut r = DVector::zeros(2 * pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let uv = p.project(&pair.point()).ok()?;
        r[2 * i] = uv.x - pair.px[0];
        r[2 * i + 1] = uv.y - pair.px[1];
    }
    Some(r)
}

/// DLT initialization followed by damped least-squares refinement of the
/// geometric reprojection error.
pub fn estimate_projection(pairs: &[Pair2D3D]) -> Result<ProjectionMatrix> {
    if pairs.len() < 6 {
        return Err(Error::InsufficientPairs {
            needed: 6,
            got: pairs.len(),
        });
    }
    if scene_rank_deficient(pairs, 3) {
        return Err(Error::DegenerateGeometry);
    }
    let mut m = dlt(pairs)?;
    // Orient so the mean projective depth is positive.
    let depth_sum: f64 = pairs
        .iter()
        .map(|pr| {
            let x = pr.point();
            m[(2, 0)] * x.x + m[(2, 1)] * x.y + m[(2, 2)] * x.z + m[(2, 3)]
        })
        .sum();
    if depth_sum < 0.0 {
        m = -m;
    }
    let mut best = ProjectionMatrix::from_matrix(&m);
    let mut e = reprojection_error(&best, pairs)?;

    let mut lambda = 1e-3;
    for _ in 0..100 {
        let r = match residual_vector(&best, pairs) {
            Some(r) => r,
            None => break,
        };
        // numeric Jacobian over the 12 entries (scale handled by the
        // post-step renormalization)
        let mut jac = DMatrix::zeros(2 * pairs.len(), 12);
        let base = best.matrix();
        let scale = base.norm();
        let h = 1e-6 * scale.max(1.0);
        for j in 0..12 {
            let mut pert = base;
            pert[(j / 4, j % 4)] += h;
            let pp = ProjectionMatrix::from_matrix(&pert);
            let rp = match residual_vector(&pp, pairs) {
                Some(rp) => rp,
                None => continue,
            };
            let col = (rp - &r) / h;
            jac.set_column(j, &col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..12 {
            let damped = &jtj + DMatrix::identity(12, 12) * lambda * jtj.trace() / 12.0;
            let delta = match damped.lu().solve(&(-&jtr)) {
                Some(d) => d,
                None => break,
            };
            let mut cand = base;
            for j in 0..12 {
                cand[(j / 4, j % 4)] += delta[j];
            }
            let row3 = Vector3::new(cand[(2, 0)], cand[(2, 1)], cand[(2, 2)]);
            if row3.norm() < 1e-12 {
                lambda *= 10.0;
                continue;
            }
            let cand = ProjectionMatrix::from_matrix(&cand);
            match reprojection_error(&cand, pairs) {
                Ok(ec) if ec < e => {
                    let rel = (e - ec) / e.max(1e-300);
                    best = cand;
                    e = ec;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel >= 1e-10;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

/// QR-based decomposition of the projection into K, R, t with positive
/// focal lengths and K33 = 1.
pub fn decompose_projection(p: &ProjectionMatrix) -> Result<CameraModel> {
    let m = p.matrix();
    let h: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let hv: Vector3<f64> = m.column(3).into_owned();
    let h_inv = h.try_inverse().ok_or(Error::SingularProjection)?;
    let qr = nalgebra::linalg::QR::new(h_inv);
    let q_d = qr.q();
    let r_d = qr.r();
    let k_raw = r_d.try_inverse().ok_or(Error::SingularProjection)?;
    let r_raw = q_d.transpose();
    // Sign correction: flip columns of K / rows of R so diag(K) > 0.
    let s = Matrix3::from_diagonal(&Vector3::new(
        k_raw[(0, 0)].signum(),
        k_raw[(1, 1)].signum(),
        k_raw[(2, 2)].signum(),
    ));
    let mut k = k_raw * s;
    let mut r = s * r_raw;
    if r.determinant() < 0.0 {
        r = -r;
    }
    k /= k[(2, 2)];
    // Scale tying K R to H, then t = K^-1 (lambda h).
    let kr = k * r;
    let num: f64 = kr.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
    let den: f64 = h.iter().map(|a| a * a).sum();
    let lambda = num / den;
    let t = k.try_inverse().ok_or(Error::SingularProjection)? * (hv * lambda);
    Ok(CameraModel {
        fx: k[(0, 0)],
        fy: k[(1, 1)],
        skew: k[(0, 1)],
        cx: k[(0, 2)],
        cy: k[(1, 2)],
        rotation: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        translation: [t.x, t.y, t.z],
    })
}

fn contact_objective(k: f64, r: &Matrix3<f64>, t: &Vector3<f64>, pairs: &[Pair2D3D]) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let q = r * p.point() + t;
            let d = Vector2::new(k * q.x - p.px[0], k * q.y - p.px[1]);
            d.norm()
        })
        .sum::<f64>()
        / pairs.len() as f64
}

/// Weak-perspective initialization: 2x3 affine fit, then factor out scale
/// and an orthonormal rotation.
fn weak_perspective_init(pairs: &[Pair2D3D]) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    let n = pairs.len();
    let mut a = DMatrix::zeros(2 * n, 8);
    let mut b = DVector::zeros(2 * n);
    for (i, p) in pairs.iter().enumerate() {
        let x = p.point();
        for (j, v) in [x.x, x.y, x.z, 1.0].iter().enumerate() {
            a[(2 * i, j)] = *v;
            a[(2 * i + 1, 4 + j)] = *v;
        }
        b[2 * i] = p.px[0];
        b[2 * i + 1] = p.px[1];
    }
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|_| Error::DegenerateGeometry)?;
    let a1 = Vector3::new(sol[0], sol[1], sol[2]);
    let a2 = Vector3::new(sol[4], sol[5], sol[6]);
    let k = 0.5 * (a1.norm() + a2.norm());
    if k < 1e-12 {
        return Err(Error::DegenerateGeometry);
    }
    let r1 = a1.normalize();
    let mut r2 = a2 - r1 * a2.dot(&r1);
    if r2.norm() < 1e-9 {
        return Err(Error::DegenerateGeometry);
    }
    r2 = r2.normalize();
    let r3 = r1.cross(&r2);
    let r = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    let t = Vector3::new(sol[3] / k, sol[7] / k, 0.0);
    Ok((k, r, t))
}

/// Fit the scaled-orthographic contact pose by damped least squares from a
/// weak-perspective start. The reported residual is the mean 2D projection
/// error at the optimum.
pub fn fit_contact_pose(pairs: &[Pair2D3D]) -> Result<ContactPose> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientPairs {
            needed: 3,
            got: pairs.len(),
        });
    }
    if scene_rank_deficient(pairs, 2) {
        return Err(Error::DegenerateGeometry);
    }
    let (mut k, r0, mut t) = weak_perspective_init(pairs)?;
    let mut w = Rotation3::from_matrix_unchecked(
        nearest_rotation(&r0),
    )
    .scaled_axis();
    let mut obj = contact_objective(k, &rot(&w), &t, pairs);
    let init_obj = obj;

    let params = |w: &Vector3<f64>, tx: f64, ty: f64, k: f64| -> [f64; 6] {
        [w.x, w.y, w.z, tx, ty, k]
    };
    let mut theta = params(&w, t.x, t.y, k);
    let eval_res = |th: &[f64; 6], out: &mut DVector<f64>| {
        let r = rot(&Vector3::new(th[0], th[1], th[2]));
        let tt = Vector3::new(th[3], th[4], 0.0);
        for (i, p) in pairs.iter().enumerate() {
            let q = r * p.point() + tt;
            out[2 * i] = th[5] * q.x - p.px[0];
            out[2 * i + 1] = th[5] * q.y - p.px[1];
        }
    };
    let n = pairs.len();
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut r = DVector::zeros(2 * n);
        eval_res(&theta, &mut r);
        let mut jac = DMatrix::zeros(2 * n, 6);
        for j in 0..6 {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut th = theta;
            th[j] += h;
            let mut rp = DVector::zeros(2 * n);
            eval_res(&th, &mut rp);
            jac.set_column(j, &((rp - &r) / h));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..12 {
            let damped = &jtj + DMatrix::identity(6, 6) * lambda * (jtj.trace() / 6.0).max(1e-12);
            let delta = match damped.lu().solve(&(-&jtr)) {
                Some(d) => d,
                None => break,
            };
            let mut cand = theta;
            for j in 0..6 {
                cand[j] += delta[j];
            }
            if cand[5] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let cobj = contact_objective(
                cand[5],
                &rot(&Vector3::new(cand[0], cand[1], cand[2])),
                &Vector3::new(cand[3], cand[4], 0.0),
                pairs,
            );
            if cobj < obj {
                let rel = (obj - cobj) / obj.max(1e-300);
                theta = cand;
                obj = cobj;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel >= 1e-10;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    w = Vector3::new(theta[0], theta[1], theta[2]);
    t = Vector3::new(theta[3], theta[4], 0.0);
    k = theta[5];
    debug_assert!(obj <= init_obj + 1e-12);
    let r = rot(&w);
    // Depth spread along the viewing axis after rotation.
    let zs: Vec<f64> = pairs.iter().map(|p| (r * p.point()).z).collect();
    let z_mean = zs.iter().sum::<f64>() / zs.len() as f64;
    let z_var = zs.iter().map(|z| (z - z_mean).powi(2)).sum::<f64>() / zs.len() as f64;
    let spread: f64 = pairs
        .iter()
        .map(|p| p.point().norm_squared())
        .sum::<f64>()
        / pairs.len() as f64;
    let depth_ambiguous = z_var <= 1e-10 * spread.max(1e-300);
    Ok(ContactPose {
        k,
        rotation: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        translation: [t.x, t.y, t.z],
        residual: obj,
        depth_ambiguous,
    })
}

fn rot(w: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*w).into_inner()
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = (u * v_t).determinant();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    u * s * v_t
}

/// 2D rigid least-squares fit of anchor pairs (a -> b), then warp image_a
/// into image_b's frame and crop to image_b's foreground bounding box.
/// Anchors are (row, col) pixel coordinates in each image.
pub fn align2d_crop(
    image_a: &Raster,
    image_b: &Raster,
    anchors: &[([f64; 2], [f64; 2])],
) -> Result<Raster> {
    if anchors.len() < 2 {
        return Err(Error::InsufficientAnchors(2));
    }
    let n = anchors.len() as f64;
    let mean_a = anchors
        .iter()
        .fold(Vector2::zeros(), |acc: Vector2<f64>, (a, _)| {
            acc + Vector2::new(a[0], a[1])
        })
        / n;
    let mean_b = anchors
        .iter()
        .fold(Vector2::zeros(), |acc: Vector2<f64>, (_, b)| {
            acc + Vector2::new(b[0], b[1])
        })
        / n;
    let mut cov = Matrix2::zeros();
    for (a, b) in anchors {
        let da = Vector2::new(a[0], a[1]) - mean_a;
        let db = Vector2::new(b[0], b[1]) - mean_b;
        cov += db * da.transpose();
    }
    // closed-form 2D Kabsch
    let angle = (cov[(0, 1)] - cov[(1, 0)]).atan2(cov[(0, 0)] + cov[(1, 1)]);
    let (s, c) = angle.sin_cos();
    let r = Matrix2::new(c, -s, s, c);
    let t = mean_b - r * mean_a;

    let bbox = image_b
        .foreground_bbox()
        .ok_or(Error::EmptyInput("align2d_crop target"))?;
    let (r0, c0, r1, c1) = bbox;
    let (out_h, out_w) = (r1 - r0 + 1, c1 - c0 + 1);
    let grid = GridSpec {
        width: out_w,
        height: out_h,
        pitch: image_b.grid.pitch,
        origin: image_b.grid.origin
            + nalgebra::Vector2::new(c0 as f64, r0 as f64) * image_b.grid.pitch,
    };
    let gray_a = image_a.gray.as_ref().ok_or(Error::EmptyInput("gray channel"))?;
    let r_inv = r.transpose();
    let mut gray = vec![0.0; out_w * out_h];
    let mut mask = vec![false; out_w * out_h];
    let (aw, ah) = (image_a.grid.width, image_a.grid.height);
    for orow in 0..out_h {
        for ocol in 0..out_w {
            // pixel in image_b's frame
            let pb = Vector2::new((orow + r0) as f64, (ocol + c0) as f64);
            let pa = r_inv * (pb - t);
            let (fr, fc) = (pa.x, pa.y);
            let ri = fr.floor() as i64;
            let ci = fc.floor() as i64;
            if ri < 0 || ci < 0 || ri + 1 >= ah as i64 || ci + 1 >= aw as i64 {
                continue;
            }
            let (ri, ci) = (ri as usize, ci as usize);
            let corners = [
                ri * aw + ci,
                ri * aw + ci + 1,
                (ri + 1) * aw + ci,
                (ri + 1) * aw + ci + 1,
            ];
            if corners.iter().any(|&k| !image_a.mask[k]) {
                continue;
            }
            let (dr, dc) = (fr - ri as f64, fc - ci as f64);
            let g = gray_a[corners[0]] * (1.0 - dr) * (1.0 - dc)
                + gray_a[corners[1]] * (1.0 - dr) * dc
                + gray_a[corners[2]] * dr * (1.0 - dc)
                + gray_a[corners[3]] * dr * dc;
            let k = orow * out_w + ocol;
            gray[k] = g;
            mask[k] = true;
        }
    }
    Ok(Raster {
        grid,
        gray: Some(gray),
        depth: None,
        pos: None,
        mask,
        interpolated: vec![false; out_w * out_h],
        count: vec![0; out_w * out_h],
    })
}

/// Contact-based registration: fit the contact pose, re-unwrap the cloud
/// under that pose, then align the unwrapped image to the target frame
/// using the contact pairs as anchors.
pub fn contact_register(
    cloud: &PointCloud,
    contact_pairs: &[Pair2D3D],
    target: &Raster,
    params: &UnwrapParams,
) -> Result<(Raster, ContactPose)> {
    let pose = fit_contact_pose(contact_pairs)?;
    let rigid = RigidTransform::new(pose.r3(), Vector3::zeros());
    let (unwrapped, ctx) = unwrap_posed(cloud, &rigid, params)?;
    let mut anchors = Vec::new();
    for p in contact_pairs {
        if let Some((ar, ac)) = ctx.map_point(&p.point()) {
            // target pixel of the 2D observation
            let (br, bc) = target.grid.fractional_pixel(
                target.grid.origin.x + p.px[0] * target.grid.pitch,
                target.grid.origin.y + p.px[1] * target.grid.pitch,
            );
            let _ = (br, bc);
            // px is already (row, col) in the target frame
            anchors.push(([ar, ac], [p.px[1], p.px[0]]));
        }
    }
    if anchors.len() < 2 {
        return Err(Error::InsufficientAnchors(2));
    }
    let aligned = align2d_crop(&unwrapped, target, &anchors)?;
    Ok((aligned, pose))
}
