//! Synthetic finger oracle: parametric elliptic-cross-section surfaces with
//! sinusoidal ring ridges, deterministic landmarks, partial scans with known
//! transforms, and scaled-orthographic contact renders.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crossmodal::ContactPose;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::raster::{GridSpec, Raster};
use crate::register::{Correspondence, CorrespondenceSet, RigidTransform};

/// Parametric finger description. The axis runs along +y from 0 to
/// `length`; cross-sections are ellipses with semi-axes tapering toward the
/// tip; ridges are a phase-modulated axial sinusoid displacing the surface
/// along the cross-section normal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerSpec {
    pub length: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    /// Fractional shrink of both semi-axes at the tip (linear taper over
    /// the last 30% of the length).
    pub taper: f64,
    pub ridge_amplitude: f64,
    pub ridge_wavelength: f64,
    pub seed: u64,
    pub pose: RigidTransform,
}

impl Default for FingerSpec {
    fn default() -> Self {
        Self {
            length: 25.0,
            semi_a: 8.0,
            semi_b: 6.0,
            taper: 0.25,
            ridge_amplitude: 0.05,
            ridge_wavelength: 0.2,
            seed: 42,
            pose: RigidTransform::identity(),
        }
    }
}

impl FingerSpec {
    /// Taper factor at axial coordinate t.
    fn shape(&self, t: f64) -> f64 {
        let knee = 0.7 * self.length;
        if t <= knee {
            1.0
        } else {
            1.0 - self.taper * (t - knee) / (self.length - knee)
        }
    }

    pub fn a_of(&self, t: f64) -> f64 {
        self.semi_a * self.shape(t)
    }

    pub fn b_of(&self, t: f64) -> f64 {
        self.semi_b * self.shape(t)
    }

    fn phase_params(&self) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        )
    }

    /// Seed-driven ridge phase at azimuth parameter phi.
    pub fn phase(&self, phi: f64) -> f64 {
        let (p0, p1) = self.phase_params();
        p0 + 0.8 * (3.0 * phi + p1).sin()
    }

    /// Signed ridge displacement at (t, phi).
    pub fn ridge(&self, t: f64, phi: f64) -> f64 {
        self.ridge_amplitude
            * (std::f64::consts::TAU * t / self.ridge_wavelength + self.phase(phi)).sin()
    }

    /// Exact surface point at parameters (t, phi), before the generator pose.
    pub fn surface(&self, t: f64, phi: f64) -> Vector3<f64> {
        let (a, b) = (self.a_of(t), self.b_of(t));
        let base = Vector3::new(a * phi.cos(), t, b * phi.sin());
        // outward normal of the cross-section ellipse
        let n2 = Vector2::new(b * phi.cos(), a * phi.sin()).normalize();
        base + Vector3::new(n2.x, 0.0, n2.y) * self.ridge(t, phi)
    }

    /// Surface normal at (t, phi) by finite differences of the parametric
    /// map (before the generator pose).
    pub fn surface_normal(&self, t: f64, phi: f64) -> Vector3<f64> {
        let h = 1e-5;
        let dt = (self.surface(t + h, phi) - self.surface(t - h, phi)) / (2.0 * h);
        let dp = (self.surface(t, phi + h) - self.surface(t, phi - h)) / (2.0 * h);
        dt.cross(&dp).normalize()
    }

    /// Ramanujan approximation of the cross-section perimeter at t.
    pub fn perimeter(&self, t: f64) -> f64 {
        let (a, b) = (self.a_of(t), self.b_of(t));
        let h = ((a - b) / (a + b)).powi(2);
        std::f64::consts::PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
    }

    /// Analytic lateral surface area (perimeter integrated along the axis).
    pub fn surface_area(&self) -> f64 {
        let n = 1000;
        let dt = self.length / n as f64;
        (0..n)
            .map(|i| self.perimeter((i as f64 + 0.5) * dt) * dt)
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Landmark {
    pub id: usize,
    pub t: f64,
    pub phi: f64,
    pub position: [f64; 3],
}

impl Landmark {
    pub fn pos(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.position)
    }
}

/// Everything known exactly about a generated finger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: FingerSpec,
    /// (t, phi) parameters of each cloud point, index-aligned.
    pub params: Vec<(f64, f64)>,
    pub landmarks: Vec<Landmark>,
}

/// Truth record of one partial scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanTruth {
    /// Transform applied to the base finger frame to produce this scan.
    pub transform: RigidTransform,
    /// Landmarks visible in this scan, noiseless, in scan coordinates.
    pub landmarks: Vec<Landmark>,
    pub view_azimuth_deg: f64,
    pub coverage_deg: f64,
}

impl ScanTruth {
    /// Rigid transform taking this scan's coordinates into `other`'s.
    pub fn relative_to(&self, other: &ScanTruth) -> RigidTransform {
        other.transform.compose(&self.transform.inverse())
    }
}

pub const DEFAULT_LANDMARK_COUNT: usize = 80;

/// Sample the parametric surface at roughly `density` points per mm^2 and
/// derive the seeded landmark set. Landmark positions sit exactly on the
/// surface.
pub fn generate_finger(spec: &FingerSpec, density: f64) -> (PointCloud, GroundTruth) {
    assert!(density > 0.0, "density must be positive");
    let h = 1.0 / density.sqrt();
    let n_rows = (spec.length / h).round().max(1.0) as usize;
    let mut points = Vec::new();
    let mut params = Vec::new();
    for i in 0..n_rows {
        let t = (i as f64 + 0.5) * spec.length / n_rows as f64;
        let n_ring = (spec.perimeter(t) / h).round().max(8.0) as usize;
        let (a, b) = (spec.a_of(t), spec.b_of(t));
        // equal-arc spacing around the ellipse by incremental stepping
        let target_step = spec.perimeter(t) / n_ring as f64;
        let mut phi = 0.0f64;
        for _ in 0..n_ring {
            points.push(spec.pose.apply_point(&spec.surface(t, phi)));
            params.push((t, phi));
            let speed = ((a * phi.sin()).powi(2) + (b * phi.cos()).powi(2)).sqrt();
            phi += target_step / speed.max(1e-9);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let lam = spec.ridge_wavelength;
    let k_lo = (0.15 * spec.length / lam).ceil() as i64;
    let k_hi = (0.75 * spec.length / lam).floor() as i64;
    let landmarks: Vec<Landmark> = (0..DEFAULT_LANDMARK_COUNT)
        .map(|id| {
            let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let k = rng.gen_range(k_lo..=k_hi);
            // ridge crest: 2 pi t / lambda + phase = pi/2 + 2 pi k
            let t = lam * (0.25 + k as f64 - spec.phase(phi) / std::f64::consts::TAU);
            let p = spec.pose.apply_point(&spec.surface(t, phi));
            Landmark {
                id,
                t,
                phi,
                position: [p.x, p.y, p.z],
            }
        })
        .collect();
    let cloud = PointCloud::new(points, format!("synth-{}", spec.seed));
    (
        cloud,
        GroundTruth {
            spec: spec.clone(),
            params,
            landmarks,
        },
    )
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(std::f64::consts::TAU);
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Keep the surface points whose azimuth around the finger axis lies within
/// `coverage_deg` of the view direction, add isotropic Gaussian noise, and
/// apply `pose`. The returned truth records the exact transform and the
/// noiseless landmark positions that survive the cut.
pub fn partial_scan(
    cloud: &PointCloud,
    truth: &GroundTruth,
    view: &Vector3<f64>,
    coverage_deg: f64,
    noise_sigma: f64,
    pose: &RigidTransform,
    seed: u64,
) -> (PointCloud, ScanTruth) {
    assert!(
        coverage_deg > 0.0 && coverage_deg <= 360.0,
        "coverage must be in (0, 360]"
    );
    let view_az = view.z.atan2(view.x);
    let half = (coverage_deg / 2.0).to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let visible = |p: &Vector3<f64>| -> bool {
        let az = p.z.atan2(p.x);
        wrap_angle(az - view_az).abs() <= half + 1e-12
    };
    let mut points = Vec::new();
    for p in &cloud.points {
        if visible(p) {
            let noise = Vector3::new(gauss(), gauss(), gauss()) * noise_sigma;
            points.push(pose.apply_point(&(p + noise)));
        }
    }
    let landmarks: Vec<Landmark> = truth
        .landmarks
        .iter()
        .filter(|l| visible(&l.pos()))
        .map(|l| {
            let p = pose.apply_point(&l.pos());
            Landmark {
                id: l.id,
                t: l.t,
                phi: l.phi,
                position: [p.x, p.y, p.z],
            }
        })
        .collect();
    let scan = PointCloud::new(points, format!("{}-scan", cloud.source_id));
    (
        scan,
        ScanTruth {
            transform: pose.clone(),
            landmarks,
            view_azimuth_deg: view_az.to_degrees(),
            coverage_deg,
        },
    )
}

/// Emit `n` shared landmarks as 3D correspondence pairs, with optional
/// isotropic positional noise (mm) on both sides.
pub fn synth_correspondences(
    truth_a: &ScanTruth,
    truth_b: &ScanTruth,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<CorrespondenceSet> {
    let mut shared: Vec<(&Landmark, &Landmark)> = truth_a
        .landmarks
        .iter()
        .filter_map(|la| {
            truth_b
                .landmarks
                .iter()
                .find(|lb| lb.id == la.id)
                .map(|lb| (la, lb))
        })
        .collect();
    shared.sort_by_key(|(la, _)| la.id);
    if shared.len() < n {
        return Err(Error::InsufficientLandmarks {
            shared: shared.len(),
            requested: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let pairs = shared
        .iter()
        .take(n)
        .map(|(la, lb)| {
            let np = Vector3::new(gauss(), gauss(), gauss()) * noise_sigma;
            let nq = Vector3::new(gauss(), gauss(), gauss()) * noise_sigma;
            Correspondence {
                p: {
                    let v = la.pos() + np;
                    [v.x, v.y, v.z]
                },
                q: {
                    let v = lb.pos() + nq;
                    [v.x, v.y, v.z]
                },
                w: 1.0,
                a_px: None,
                b_px: None,
            }
        })
        .collect();
    Ok(CorrespondenceSet { pairs })
}

///// Project the finger through a scaled-orthographic contact pose: returns
/// each landmark's pixel position and a gray raster of the projected ridge
/// pattern for inspection. Pixel coordinates are (u, v) = k * (R x + t)
/// dropped to the plane.
pub fn render_contact(
    cloud: &PointCloud,
    truth: &GroundTruth,
    pose: &ContactPose,
) -> (Vec<(usize, [f64; 2])>, Raster) {
    let landmark_px: Vec<(usize, [f64; 2])> = truth
        .landmarks
        .iter()
        .map(|l| {
            let uv = pose.project(&l.pos());
            (l.id, [uv.x, uv.y])
        })
        .collect();
    // project each cloud point; gray = normalized ridge displacement
    let projected: Vec<Vector3<f64>> = cloud
        .points
        .iter()
        .map(|p| {
            let uv = pose.project(p);
            Vector3::new(uv.x, uv.y, 0.0)
        })
        .collect();
    let grid = GridSpec::covering(projected.iter(), 1.0).unwrap_or(GridSpec {
        width: 1,
        height: 1,
        pitch: 1.0,
        origin: Vector2::zeros(),
    });
    let n = grid.width * grid.height;
    let mut acc = vec![0.0; n];
    let mut cnt = vec![0u32; n];
    let amp = truth.spec.ridge_amplitude.max(1e-12);
    for (p, (t, phi)) in projected.iter().zip(&truth.params) {
        let (r, c) = grid.pixel_of(p.x, p.y);
        if grid.contains(r, c) {
            let k = r as usize * grid.width + c as usize;
            acc[k] += 0.5 + 0.5 * truth.spec.ridge(*t, *phi) / amp;
            cnt[k] += 1;
        }
    }
    let gray: Vec<f64> = acc
        .iter()
        .zip(&cnt)
        .map(|(a, c)| if *c > 0 { a / *c as f64 } else { 0.0 })
        .collect();
    let mask: Vec<bool> = cnt.iter().map(|c| *c > 0).collect();
    let raster = Raster {
        grid,
        gray: Some(gray),
        depth: None,
        pos: None,
        mask,
        interpolated: vec![false; n],
        count: cnt,
    };
    (landmark_px, raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{fit_center_axis, slice_cloud};
    use crate::register::fit_rigid;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    #[test]
    fn smooth_spec_slice_fits_recover_axes() {
        let spec = FingerSpec {
            ridge_amplitude: 0.0,
            taper: 0.0,
            ..Default::default()
        };
        let (cloud, _) = generate_finger(&spec, 40.0);
        let set = slice_cloud(&cloud, &Vector3::y(), 1.0).unwrap();
        let axis = fit_center_axis(&set).unwrap();
        for (_, e) in &axis.band_ellipses {
            assert!((e.semi_major - 8.0).abs() / 8.0 < 1e-3, "a = {}", e.semi_major);
            assert!((e.semi_minor - 6.0).abs() / 6.0 < 1e-3, "b = {}", e.semi_minor);
        }
    }

    #[test]
    fn point_count_matches_density_times_area() {
        let spec = FingerSpec::default();
        let density = 30.0;
        let (cloud, _) = generate_finger(&spec, density);
        let expected = density * spec.surface_area();
        let got = cloud.points.len() as f64;
        assert!(
            (got - expected).abs() / expected < 0.05,
            "count {got} vs {expected}"
        );
    }

    #[test]
    fn surface_membership_exact() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 10.0);
        for (p, (t, phi)) in cloud.points.iter().zip(&truth.params).step_by(37) {
            let s = spec.surface(*t, *phi);
            assert!((p - s).norm() < 1e-9);
        }
        for l in &truth.landmarks {
            let s = spec.surface(l.t, l.phi);
            assert!((l.pos() - s).norm() < 1e-9);
            // crest check: ridge displacement at the landmark is maximal
            assert_relative_eq!(spec.ridge(l.t, l.phi), spec.ridge_amplitude, epsilon = 1e-9);
        }
    }

    #[test]
    fn landmark_determinism() {
        let spec = FingerSpec::default();
        let (_, t1) = generate_finger(&spec, 10.0);
        let (_, t2) = generate_finger(&spec, 10.0);
        for (a, b) in t1.landmarks.iter().zip(&t2.landmarks) {
            assert_eq!(a.position, b.position);
            assert_eq!((a.t, a.phi), (b.t, b.phi));
        }
    }

    #[test]
    fn full_coverage_identity_scan_is_unchanged() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 10.0);
        let (scan, st) = partial_scan(
            &cloud,
            &truth,
            &Vector3::x(),
            360.0,
            0.0,
            &RigidTransform::identity(),
            0,
        );
        assert_eq!(scan.points.len(), cloud.points.len());
        for (a, b) in scan.points.iter().zip(&cloud.points) {
            assert_eq!(a, b);
        }
        assert_eq!(st.landmarks.len(), truth.landmarks.len());
    }

    #[test]
    fn overlap_band_of_two_offset_scans() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 15.0);
        let id = RigidTransform::identity();
        let v1 = Vector3::new(30f64.to_radians().cos(), 0.0, 30f64.to_radians().sin());
        let v2 = Vector3::new(30f64.to_radians().cos(), 0.0, -(30f64.to_radians().sin()));
        let (a, _) = partial_scan(&cloud, &truth, &v1, 200.0, 0.0, &id, 1);
        let (b, _) = partial_scan(&cloud, &truth, &v2, 200.0, 0.0, &id, 2);
        // both scans keep exactly the points in their azimuth band; the
        // shared points span the analytic 140-degree overlap
        let in_both: Vec<&Vector3<f64>> = cloud
            .points
            .iter()
            .filter(|p| a.points.contains(p) && b.points.contains(p))
            .collect();
        let azs: Vec<f64> = in_both.iter().map(|p| p.z.atan2(p.x).to_degrees()).collect();
        let lo = azs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = azs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((hi - lo - 140.0).abs() < 2.0, "overlap band {}", hi - lo);
    }

    #[test]
    fn noise_rms_along_normal_matches_sigma() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 10.0);
        let sigma = 0.03;
        let (scan, _) = partial_scan(
            &cloud,
            &truth,
            &Vector3::x(),
            360.0,
            sigma,
            &RigidTransform::identity(),
            9,
        );
        assert_eq!(scan.points.len(), cloud.points.len());
        let mut acc = 0.0;
        for ((p, q), (t, phi)) in scan.points.iter().zip(&cloud.points).zip(&truth.params) {
            let n = spec.surface_normal(*t, *phi);
            acc += (p - q).dot(&n).powi(2);
        }
        let rms = (acc / scan.points.len() as f64).sqrt();
        assert!(
            (0.027..=0.033).contains(&rms),
            "normal-component RMS {rms}"
        );
    }

    #[test]
    fn correspondences_recover_truth_transform() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 15.0);
        let pose_b = RigidTransform::new(
            Rotation3::from_euler_angles(0.1, 0.4, -0.2).into_inner(),
            Vector3::new(3.0, -1.0, 2.0),
        );
        let (_, ta) = partial_scan(
            &cloud,
            &truth,
            &Vector3::x(),
            240.0,
            0.0,
            &RigidTransform::identity(),
            1,
        );
        let (_, tb) = partial_scan(&cloud, &truth, &Vector3::x(), 240.0, 0.0, &pose_b, 2);
        let corr = synth_correspondences(&ta, &tb, 12, 0.0, 5).unwrap();
        let (fit, _) = fit_rigid(&corr).unwrap();
        let rel = ta.relative_to(&tb);
        assert!((fit.r() - rel.r()).norm() < 1e-9);
        assert!((fit.t() - rel.t()).norm() < 1e-9);
    }

    #[test]
    fn too_many_requested_landmarks() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 10.0);
        let id = RigidTransform::identity();
        let (_, ta) = partial_scan(&cloud, &truth, &Vector3::x(), 120.0, 0.0, &id, 1);
        let (_, tb) = partial_scan(&cloud, &truth, &Vector3::x(), 120.0, 0.0, &id, 2);
        let shared = ta.landmarks.len();
        assert!(matches!(
            synth_correspondences(&ta, &tb, shared + 1, 0.0, 0),
            Err(Error::InsufficientLandmarks { .. })
        ));
    }

    #[test]
    fn frontal_contact_render_is_xy() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 10.0);
        let pose = ContactPose {
            k: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
            residual: 0.0,
            depth_ambiguous: false,
        };
        let (px, _) = render_contact(&cloud, &truth, &pose);
        for ((id, uv), l) in px.iter().zip(&truth.landmarks) {
            assert_eq!(id, &l.id);
            assert_relative_eq!(uv[0], l.position[0], epsilon = 1e-12);
            assert_relative_eq!(uv[1], l.position[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn doubling_k_doubles_pixels() {
        let spec = FingerSpec::default();
        let (cloud, truth) = generate_finger(&spec, 10.0);
        let mk = |k: f64| ContactPose {
            k,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
            residual: 0.0,
            depth_ambiguous: false,
        };
        let (p1, _) = render_contact(&cloud, &truth, &mk(2.0));
        let (p2, _) = render_contact(&cloud, &truth, &mk(4.0));
        for (a, b) in p1.iter().zip(&p2) {
            assert_relative_eq!(b.1[0], 2.0 * a.1[0], epsilon = 1e-9);
            assert_relative_eq!(b.1[1], 2.0 * a.1[1], epsilon = 1e-9);
        }
    }
}
