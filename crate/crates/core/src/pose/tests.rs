use nalgebra::{Vector2, Vector3, Vector6};

use super::scenario::{pose_error, KeypointSource, PairConfig, PairScenario, Photometry};
use super::*;
use crate::image::Image;
use crate::synth::{generate_scene, SceneSpec};

fn noiseless_pair(reference: usize, target: usize) -> PairScenario {
    let spec = SceneSpec {
        frames: 20,
        noise_sigma: 0.0,
        ..SceneSpec::default()
    };
    let config = PairConfig {
        keypoints: KeypointSource::Projected { noise: 0.0 },
        ..PairConfig::default()
    };
    PairScenario::new(generate_scene(&spec).unwrap(), reference, target, config, 0).unwrap()
}

fn flat(width: usize, height: usize) -> IrradianceImage {
    IrradianceImage {
        values: Image::filled(width, height, 100.0),
        valid: Image::filled(width, height, true),
    }
}

#[test]
fn utility_examples() {
    let k = |level, inliers| utility_k(PyramidContext { level, inliers });
    assert!((k(0, 30) - 2.5).abs() < 1e-15);
    assert!((k(2, 30) - 0.045790).abs() < 1e-6);
    assert!((k(0, 2) - 0.0045553).abs() < 1e-7);
}

#[test]
fn utility_bounds_and_monotonicity() {
    for l in 0..12 {
        for n in 0..80 {
            let k = utility_k(PyramidContext { level: l, inliers: n });
            assert!(k > 0.0 && k < 5.0 * (-2.0 * l as f64).exp());
            assert!(utility_k(PyramidContext { level: l, inliers: n + 1 }) > k);
            assert!(utility_k(PyramidContext { level: l + 1, inliers: n }) < k);
        }
    }
}

#[test]
fn self_comparison_has_zero_residuals_and_does_not_move() {
    let sc = noiseless_pair(10, 10);
    let obs = sc.observation(Photometry::Raw).unwrap();
    let id = PoseSE3::identity();
    let photo = photometric_residuals(&obs, &id).unwrap();
    assert!(!photo.values.is_empty());
    assert!(photo.values.iter().all(|r| r.abs() < 1e-9));
    let geo = geometric_residuals(&obs, &id).unwrap();
    assert!(geo.values.iter().all(|e| e.norm() < 1e-9));

    let out = optimize_pose(&obs, id, &PoseConfig::default()).unwrap();
    assert!(out.report.converged);
    assert!(out.pose.translation().norm() < 1e-9);
    assert!(out.pose.angle() < 1e-9);
}

#[test]
fn residuals_at_ground_truth_are_within_quantization() {
    let sc = noiseless_pair(10, 16);
    let obs = sc.observation(Photometry::Rectified).unwrap();
    let r = photometric_residuals(&obs, &sc.truth()).unwrap();
    let rms = (r.values.iter().map(|v| v * v).sum::<f64>() / r.values.len() as f64).sqrt();
    assert!(rms <= 2.0, "rms {rms}");
    let g = geometric_residuals(&obs, &sc.truth()).unwrap();
    assert!(g.values.iter().all(|e| e.norm() < 1e-9));
}

#[test]
fn leaving_the_view_empties_the_photometric_term() {
    let sc = noiseless_pair(10, 16);
    let obs = sc.observation(Photometry::Raw).unwrap();
    let away = PoseSE3::from_translation_axis_angle(Vector3::new(50.0, 0.0, 0.0), Vector3::zeros());
    assert!(matches!(photometric_residuals(&obs, &away), Err(Error::EmptyResidual(_))));
}

fn single_keypoint_obs(kp: Keypoint) -> SceneObservation {
    let k = Intrinsics::centered(64, 48, 50.0);
    SceneObservation::new(k, flat(64, 48), flat(64, 48), vec![], vec![kp], 1).unwrap()
}

#[test]
fn sideways_translation_gives_the_pinhole_disparity() {
    let (u, v, z, dx) = (20.0, 30.0, 2.5, 0.1);
    let obs = single_keypoint_obs(Keypoint {
        u,
        v,
        inv_depth: 1.0 / z,
        observed: (u, v),
    });
    let pose = PoseSE3::from_translation_axis_angle(Vector3::new(dx, 0.0, 0.0), Vector3::zeros());
    let res = geometric_residuals(&obs, &pose).unwrap();
    assert_eq!(res.values.len(), 1);
    assert!((res.values[0] - Vector2::new(50.0 * dx / z, 0.0)).norm() < 1e-12);
}

#[test]
fn keypoints_behind_the_camera_are_dropped() {
    let obs = single_keypoint_obs(Keypoint {
        u: 20.0,
        v: 30.0,
        inv_depth: 0.5,
        observed: (20.0, 30.0),
    });
    let back = PoseSE3::from_translation_axis_angle(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros());
    let res = geometric_residuals(&obs, &back).unwrap();
    assert!(res.values.is_empty());
    assert_eq!(res.dropped, 1);
    let no_kp = obs.with_keypoints(vec![]);
    assert!(matches!(geometric_residuals(&no_kp, &back), Err(Error::Data(_))));
}

#[test]
fn huber_energy_conventions() {
    let delta = HuberThresholds::default();
    let stats = ResidualStats::new(1, 0, 1.0, 0.0).unwrap();
    let t = Terms {
        photo: vec![delta.photometric],
        ..Terms::default()
    };
    assert_eq!(energy_of(&t, &stats, 1.0, delta), 81.0 / 2.0);
    let zero = Terms {
        photo: vec![0.0],
        geo: vec![Vector2::zeros()],
        ..Terms::default()
    };
    let both = ResidualStats::new(1, 1, 1.0, 1.0).unwrap();
    assert_eq!(energy_of(&zero, &both, 2.5, delta), 0.0);
}

#[test]
fn geometric_term_is_linear_in_k() {
    let delta = HuberThresholds::default();
    let t = Terms {
        photo: vec![1.0, -4.0, 12.0],
        geo: vec![Vector2::new(0.5, 1.0), Vector2::new(4.0, -2.0)],
        ..Terms::default()
    };
    let stats = ResidualStats::new(3, 2, 2.0, 0.7).unwrap();
    let photo_only = energy_of(&t, &stats, 0.0, delta);
    let one = energy_of(&t, &stats, 1.3, delta) - photo_only;
    let two = energy_of(&t, &stats, 2.6, delta) - photo_only;
    assert!((two - 2.0 * one).abs() < 1e-15 * two.abs().max(1.0));
}

#[test]
fn energy_ignores_residual_order() {
    let delta = HuberThresholds::default();
    let photo: Vec<f64> = (0..200).map(|i| ((i * 37) % 23) as f64 - 11.0).collect();
    let geo: Vec<Vector2<f64>> = (0..20).map(|i| Vector2::new(i as f64 * 0.3 - 2.0, 1.0 - i as f64 * 0.1)).collect();
    let stats = ResidualStats::new(photo.len(), geo.len(), 3.0, 0.5).unwrap();
    let a = Terms {
        photo: photo.clone(),
        geo: geo.clone(),
        ..Terms::default()
    };
    let b = Terms {
        photo: photo.into_iter().rev().collect(),
        geo: geo.into_iter().rev().collect(),
        ..Terms::default()
    };
    let (ea, eb) = (energy_of(&a, &stats, 1.7, delta), energy_of(&b, &stats, 1.7, delta));
    assert!((ea - eb).abs() <= 1e-12 * ea);
}

#[test]
fn empty_counts_make_the_energy_undefined() {
    let sc = noiseless_pair(10, 16);
    let obs = sc.observation(Photometry::Raw).unwrap().with_points(vec![]).with_keypoints(vec![]);
    let stats = ResidualStats::new(0, 0, 0.0, 0.0).unwrap();
    let ctx = PyramidContext { level: 0, inliers: 0 };
    let r = joint_energy(&obs, &sc.truth(), &stats, ctx, HuberThresholds::default());
    assert!(matches!(r, Err(Error::UndefinedEnergy(_))));
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let sc = PairScenario::standard(3).unwrap();
    let obs = sc.observation(Photometry::Rectified).unwrap();
    let delta = HuberThresholds::default();
    let pose = sc.perturbed(0.3, 0.01, 7);
    for level in [0, 2] {
        let stats = stats_at(&obs, &pose, level, 2.0, 0.3).unwrap();
        let ctx = PyramidContext {
            level,
            inliers: geometric_inliers(&obs, &pose, delta.geometric),
        };
        let grad = joint_gradient(&obs, &pose, &stats, ctx, delta).unwrap();
        // Small enough that almost no sample crosses a bilinear cell boundary.
        let h = 1e-8;
        for i in 0..6 {
            let mut xi = Vector6::zeros();
            xi[i] = h;
            let plus = joint_energy(&obs, &pose.retract(&xi), &stats, ctx, delta).unwrap();
            let minus = joint_energy(&obs, &pose.retract(&-xi), &stats, ctx, delta).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-5 * grad.norm(),
                "level {level} axis {i}: fd {fd} analytic {}",
                grad[i]
            );
        }
    }
}

#[test]
fn recovers_a_perturbed_pose() {
    let sc = PairScenario::standard(0).unwrap();
    let depth = sc.mean_depth();
    let obs = sc.observation(Photometry::Rectified).unwrap();
    let out = optimize_pose(&obs, sc.perturbed(2.0, 0.05 * depth, 1), &PoseConfig::default()).unwrap();
    let (rot, trans) = pose_error(&out.pose, &sc.truth());
    assert!(rot < 0.2 && trans < 0.01 * depth, "rot {rot} deg, trans {trans}");
    let text = out.report.to_string();
    assert!(text.lines().next().unwrap().starts_with("level 3 iter 0 energy "));
    assert!(text.contains(" K ") && text.contains(" n_g "));
}

#[test]
fn rectification_beats_raw_intensities() {
    let sc = PairScenario::standard(0).unwrap();
    let depth = sc.mean_depth();
    let start = sc.perturbed(2.0, 0.05 * depth, 1);
    let error = |photometry| {
        let obs = sc.observation(photometry).unwrap().with_keypoints(vec![]);
        let out = optimize_pose(&obs, start, &PoseConfig::default()).unwrap();
        pose_error(&out.pose, &sc.truth())
    };
    let (rect_rot, rect_trans) = error(Photometry::Rectified);
    let (raw_rot, raw_trans) = error(Photometry::Raw);
    assert!(2.0 * rect_rot <= raw_rot, "{rect_rot} vs {raw_rot}");
    assert!(2.0 * rect_trans <= raw_trans, "{rect_trans} vs {raw_trans}");
}

#[test]
fn optimization_is_deterministic() {
    let sc = PairScenario::standard(1).unwrap();
    let obs = sc.observation(Photometry::Rectified).unwrap();
    let start = sc.perturbed(1.0, 0.05, 2);
    let a = optimize_pose(&obs, start, &PoseConfig::default()).unwrap();
    let b = optimize_pose(&obs, start, &PoseConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rejects_non_finite_start() {
    let sc = noiseless_pair(10, 16);
    let obs = sc.observation(Photometry::Raw).unwrap();
    let bad = PoseSE3::from_translation_axis_angle(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
    assert!(matches!(optimize_pose(&obs, bad, &PoseConfig::default()), Err(Error::Domain(_))));
}

#[test]
fn pyramid_must_fit_the_image() {
    let k = Intrinsics::centered(64, 48, 50.0);
    assert!(SceneObservation::new(k, flat(64, 48), flat(64, 48), vec![], vec![], 4).is_err());
    assert!(SceneObservation::new(k, flat(64, 48), flat(32, 48), vec![], vec![], 1).is_err());
    let bad = DepthPoint {
        u: 1.0,
        v: 1.0,
        inv_depth: -1.0,
    };
    assert!(SceneObservation::new(k, flat(64, 48), flat(64, 48), vec![bad], vec![], 1).is_err());
}
