//! Randomized invariant checks over the numeric building blocks.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use proptest::prelude::*;

use ridgeforge::pose::{fit_ellipse, PoseAngles};
use ridgeforge::raster::{GridSpec, Raster};
use ridgeforge::register::{fit_rigid, CorrespondenceSet};
use ridgeforge::unwrap::{arc_length_maps, depth_gradients};

fn rotation(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
    let axis = Vector3::new(axis[0], axis[1], axis[2]);
    if axis.norm() < 1e-6 {
        Matrix3::identity()
    } else {
        Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A noiseless rigid fit reproduces the generating transform and never
    /// returns a reflection, whatever the geometry of the point set.
    #[test]
    fn rigid_fit_recovers_random_transforms(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-50.0f64..50.0),
        pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 4..24),
    ) {
        let r = rotation(axis, angle);
        let t = Vector3::new(t[0], t[1], t[2]);
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = pts
            .iter()
            .map(|p| {
                let p = Vector3::new(p[0], p[1], p[2]);
                (p, r * p + t)
            })
            .collect();
        let corr = CorrespondenceSet::from_points(&pairs);
        match fit_rigid(&corr) {
            Ok((fit, _)) => {
                prop_assert!((fit.r().determinant() - 1.0).abs() < 1e-6);
                for (p, q) in &pairs {
                    prop_assert!((fit.apply_point(p) - q).norm() < 1e-6);
                }
            }
            // Collinear draws may legitimately be rejected.
            Err(ridgeforge::Error::DegenerateConfiguration) => {}
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error: {e}"))),
        }
    }

    /// u is strictly increasing along rows and v along columns for any
    /// depth surface: the integrand never drops below 1.
    #[test]
    fn arc_length_monotone_on_random_depth(
        depth in prop::collection::vec(-4.0f64..4.0, 64),
        cr in 0usize..8,
        cc in 0usize..8,
    ) {
        let grid = GridSpec {
            width: 8,
            height: 8,
            pitch: 0.5,
            origin: Vector2::zeros(),
        };
        let raster = Raster {
            grid,
            gray: Some(vec![0.5; 64]),
            depth: Some(depth),
            pos: None,
            mask: vec![true; 64],
            interpolated: vec![false; 64],
            count: vec![1; 64],
        };
        let g = depth_gradients(&raster).unwrap();
        let map = arc_length_maps(&g, (cr, cc));
        for r in 0..8 {
            for c in 1..8 {
                prop_assert!(map.u[r * 8 + c] > map.u[r * 8 + c - 1]);
            }
        }
        for c in 0..8 {
            for r in 1..8 {
                prop_assert!(map.v[r * 8 + c] > map.v[(r - 1) * 8 + c]);
            }
        }
        prop_assert_eq!(map.u[cr * 8 + cc], 0.0);
        prop_assert_eq!(map.v[cr * 8 + cc], 0.0);
    }

    /// Euler decomposition inverts composition for angles within the
    /// gimbal-safe band.
    #[test]
    fn pose_angles_roundtrip(
        pitch in -1.2f64..1.2,
        roll in -1.2f64..1.2,
        yaw in -1.2f64..1.2,
    ) {
        let angles = PoseAngles::new(pitch, roll, yaw);
        let back = PoseAngles::from_rotation(&angles.to_rotation());
        prop_assert!((back.pitch - pitch).abs() < 1e-9);
        prop_assert!((back.roll - roll).abs() < 1e-9);
        prop_assert!((back.yaw - yaw).abs() < 1e-9);
    }

    /// Exact samples of any well-separated ellipse are fitted back to the
    /// generating parameters.
    #[test]
    fn ellipse_fit_recovers_exact_samples(
        a in 2.0f64..12.0,
        ratio in 0.3f64..0.85,
        theta in -1.5f64..1.5,
        cx in -5.0f64..5.0,
        cy in -5.0f64..5.0,
    ) {
        let b = a * ratio;
        let (s, c) = theta.sin_cos();
        let pts: Vec<Vector2<f64>> = (0..24)
            .map(|i| {
                let t = i as f64 / 24.0 * std::f64::consts::TAU;
                let (x, y) = (a * t.cos(), b * t.sin());
                Vector2::new(cx + c * x - s * y, cy + s * x + c * y)
            })
            .collect();
        let fit = fit_ellipse(&pts).unwrap();
        prop_assert!((fit.center[0] - cx).abs() < 1e-6);
        prop_assert!((fit.center[1] - cy).abs() < 1e-6);
        prop_assert!((fit.semi_major - a).abs() / a < 1e-6);
        prop_assert!((fit.semi_minor - b).abs() / b < 1e-6);
    }
}
