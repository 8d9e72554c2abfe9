use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use objslam::eval::{stage_means, Prf};
use objslam::geom::{iou_2d, rodrigues, umeyama_align, vector_pair_transform, Box2D, SE3Pose, Similarity3};

fn arb_box() -> impl Strategy<Value = Box2D> {
    (0.0..600.0f64, 0.0..400.0f64, 1.0..200.0f64, 1.0..200.0f64).prop_map(|(u, v, w, h)| Box2D::new(u, v, u + w, v + h))
}

fn arb_vec(lo: f64, hi: f64) -> impl Strategy<Value = Vector3<f64>> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn arb_unit() -> impl Strategy<Value = Vector3<f64>> {
    arb_vec(-1.0, 1.0).prop_filter("non-zero", |v| v.norm() > 1e-2).prop_map(|v| v.normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou_2d(&a, &b);
        prop_assert_eq!(ab, iou_2d(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou_2d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rodrigues_is_a_rotation(axis in arb_unit(), angle in -20.0..20.0f64) {
        let r = rodrigues(&axis, angle).unwrap();
        let m = r.matrix();
        prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() <= 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() <= 1e-9);
        // the axis is fixed
        prop_assert!((r * axis - axis).norm() <= 1e-9);
    }

    #[test]
    fn pair_transform_round_trip(a in arb_vec(-5.0, 5.0), b in arb_vec(-5.0, 5.0)) {
        prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
        let pt = vector_pair_transform(&a, &b).unwrap();
        prop_assert!((pt.rotation * (pt.scale * a) - b).norm() <= 1e-6);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&pt.angle));
        prop_assert!((pt.scale - b.norm() / a.norm()).abs() <= 1e-12 * pt.scale.max(1.0));
    }

    #[test]
    fn umeyama_ignores_correspondence_order(
        pts in prop::collection::vec(arb_vec(-3.0, 3.0), 4..10),
        axis in arb_unit(),
        angle in 0.0..3.0f64,
        t in arb_vec(-4.0, 4.0),
        scale in 0.5..2.0f64,
        shift in 0usize..10,
    ) {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let dst: Vec<_> = pts.iter().map(|p| scale * (rot * p) + t).collect();
        let Ok(a) = umeyama_align(&pts, &dst, true) else {
            // degenerate (near-collinear) draws are rejected consistently
            let mut rs = pts.clone();
            rs.rotate_left(shift % pts.len());
            let mut rd = dst.clone();
            rd.rotate_left(shift % pts.len());
            prop_assert!(umeyama_align(&rs, &rd, true).is_err());
            return Ok(());
        };
        let mut rs = pts.clone();
        rs.rotate_left(shift % pts.len());
        rs.reverse();
        let mut rd = dst.clone();
        rd.rotate_left(shift % pts.len());
        rd.reverse();
        let b = umeyama_align(&rs, &rd, true).unwrap();
        prop_assert!((a.rotation().matrix() - b.rotation().matrix()).abs().max() <= 1e-9);
        prop_assert!((a.translation() - b.translation()).norm() <= 1e-9);
        prop_assert!((a.scale - b.scale).abs() <= 1e-9);
    }

    #[test]
    fn similarity_inverse_composes_to_identity(axis in arb_unit(), angle in 0.0..3.0f64, t in arb_vec(-4.0, 4.0), scale in 0.3..3.0f64, p in arb_vec(-5.0, 5.0)) {
        let pose = SE3Pose::new(Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle), t);
        let s = Similarity3 { pose, scale };
        let back = s.inverse().apply(&s.apply(&p));
        prop_assert!((back - p).norm() <= 1e-9);
    }

    #[test]
    fn prf_algebra(actual in 0usize..500, predicted in 0usize..500, tp_frac in 0.0..=1.0f64) {
        let tp = (tp_frac * predicted.min(actual) as f64).floor() as usize;
        let prf = Prf::from_counts(tp, predicted, actual);
        prop_assert!((0.0..=1.0).contains(&prf.precision));
        prop_assert!((0.0..=1.0).contains(&prf.recall));
        if predicted > 0 {
            prop_assert_eq!(prf.precision, tp as f64 / predicted as f64);
        }
        if actual > 0 {
            prop_assert_eq!(prf.recall, tp as f64 / actual as f64);
        }
        if prf.precision + prf.recall > 0.0 {
            let f = 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall);
            prop_assert!((prf.f_measure - f).abs() <= 1e-15);
            // F is the harmonic mean, so it lies between P and R
            prop_assert!(prf.f_measure <= prf.precision.max(prf.recall) + 1e-15);
            prop_assert!(prf.f_measure >= prf.precision.min(prf.recall) - 1e-15);
        } else {
            prop_assert_eq!(prf.f_measure, 0.0);
        }
    }

    #[test]
    fn stage_means_are_non_negative(times in prop::collection::vec(0.0..1e4f64, 1..1200)) {
        let stages = stage_means(&times);
        prop_assert!(stages.values().all(|v| *v >= 0.0));
        let expected = [10usize, 100, 1000].iter().filter(|&&s| times.len() > s - s.max(100) / 10).count();
        prop_assert_eq!(stages.len(), expected);
    }
}

#[test]
fn single_frame_stream_has_one_stage() {
    let stages = stage_means(&[2000.0]);
    assert_eq!(stages.len(), 1);
    assert_eq!(stages[&10], 2.0);
}
