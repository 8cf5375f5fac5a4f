//! Trajectory alignment and error metrics.
//!
//! Drift is measured by aligning the estimate to the reference separately on
//! a start segment and on an end segment and decomposing the discrepancy
//! between the two alignments. This approximates the loop-based alignment
//! error of the usual monocular benchmark without needing a loop.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::camera::PoseSE3;
use crate::error::{Error, Result};

/// Default timestamp association tolerance, seconds.
pub const ASSOCIATION_TOLERANCE: f64 = 0.02;

/// Timestamped camera-to-world poses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    /// Requires finite, strictly increasing timestamps.
    pub fn new(samples: Vec<(f64, PoseSE3)>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|(t, _)| !t.is_finite()) {
            return Err(Error::Data(format!("sample {i} has a non-finite timestamp")));
        }
        if let Some(i) = (1..samples.len()).find(|&i| samples[i].0 <= samples[i - 1].0) {
            return Err(Error::Data(format!(
                "timestamps must increase strictly: sample {i} at {} follows {}",
                samples[i].0,
                samples[i - 1].0
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, PoseSE3)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.samples.iter().map(|(_, p)| p.translation())
    }

    /// Total distance travelled.
    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }

    /// Applies `s` to every pose (left multiplication).
    pub fn transformed(&self, s: &Similarity) -> Self {
        Self {
            samples: self.samples.iter().map(|(t, p)| (*t, s.apply(p))).collect(),
        }
    }
}

/// Pairs `(i, j)` of estimate and reference samples whose timestamps are
/// nearest to each other and closer than `tolerance`.
pub fn associate(estimate: &Trajectory, reference: &Trajectory, tolerance: f64) -> Vec<(usize, usize)> {
    let refs = &reference.samples;
    let mut out = Vec::new();
    if refs.is_empty() {
        return out;
    }
    for (i, (t, _)) in estimate.samples.iter().enumerate() {
        let k = refs.partition_point(|(r, _)| r < t);
        let best = [k.checked_sub(1), (k < refs.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (refs[a].0 - t).abs().total_cmp(&(refs[b].0 - t).abs()));
        if let Some(j) = best {
            if (refs[j].0 - t).abs() <= tolerance {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    Rigid,
    /// Rigid plus a global scale, for scale-ambiguous monocular estimates.
    Similarity,
}

/// `x -> scale * R x + t`, acting on poses by moving the camera centre and
/// rotating the orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply(&self, pose: &PoseSE3) -> PoseSE3 {
        PoseSE3::from_quaternion(self.apply_point(&pose.translation()), self.rotation * pose.quaternion())
    }
}

/// Closed-form least-squares alignment (Umeyama) of `src` onto `dst`.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], mode: AlignMode) -> Result<Similarity> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::Alignment(format!("{n} source points but {} targets", dst.len())));
    }
    if n < 3 {
        return Err(Error::Alignment(format!("need at least 3 associated samples, got {n}")));
    }
    let inv = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() * inv;
    let mu_d = dst.iter().sum::<Vector3<f64>>() * inv;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
        spread += b * b.transpose();
    }
    cov *= inv;
    var_s *= inv;
    let sv = spread.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::Alignment("associated positions are collinear".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = match mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => {
            if !(var_s > 0.0) {
                return Err(Error::Alignment("estimate positions have no spread".into()));
            }
            (svd.singular_values.component_mul(&s.diagonal())).sum() / var_s
        }
    };
    let rotation = UnitQuaternion::from_matrix(&r);
    Ok(Similarity {
        rotation,
        translation: mu_d - scale * (rotation * mu_s),
        scale,
    })
}

fn associated_positions(
    estimate: &Trajectory,
    reference: &Trajectory,
    tolerance: f64,
) -> (Vec<(usize, usize)>, Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let pairs = associate(estimate, reference, tolerance);
    let src = pairs.iter().map(|&(i, _)| estimate.samples[i].1.translation()).collect();
    let dst = pairs.iter().map(|&(_, j)| reference.samples[j].1.translation()).collect();
    (pairs, src, dst)
}

/// Aligns `estimate` onto `reference` over timestamp-associated samples.
pub fn align_trajectories(
    estimate: &Trajectory,
    reference: &Trajectory,
    mode: AlignMode,
    tolerance: f64,
) -> Result<(Similarity, Trajectory)> {
    let (_, src, dst) = associated_positions(estimate, reference, tolerance);
    let s = umeyama(&src, &dst, mode)?;
    Ok((s, estimate.transformed(&s)))
}

/// Root mean square position difference over associated samples; no
/// alignment is applied.
pub fn ate_rmse(aligned: &Trajectory, reference: &Trajectory, tolerance: f64) -> Result<f64> {
    let (pairs, src, dst) = associated_positions(aligned, reference, tolerance);
    if pairs.is_empty() {
        return Err(Error::Alignment("no samples could be associated".into()));
    }
    let sum: f64 = src.iter().zip(&dst).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Segment settings for [`drift_errors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    /// Associated samples in the start and in the end segment.
    pub segment: usize,
    pub mode: AlignMode,
    pub tolerance: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            segment: 1,
            mode: AlignMode::Rigid,
            tolerance: ASSOCIATION_TOLERANCE,
        }
    }
}

/// Mean of per-sample alignments `T_ref * T_est^-1` over a segment. The
/// rotation mean is the normalized quaternion sum, sign-aligned to the first.
fn segment_alignment(pairs: &[(PoseSE3, PoseSE3)]) -> PoseSE3 {
    let mut q_sum = nalgebra::Vector4::zeros();
    let mut t_sum = Vector3::zeros();
    let mut first: Option<nalgebra::Vector4<f64>> = None;
    for (est, reference) in pairs {
        let a = *reference * est.inverse();
        let q = a.quaternion().coords;
        let f = *first.get_or_insert(q);
        q_sum += if q.dot(&f) < 0.0 { -q } else { q };
        t_sum += a.translation();
    }
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q_sum));
    PoseSE3::from_quaternion(t_sum / pairs.len() as f64, q)
}

/// Rotational drift in degrees and translational drift in percent of the
/// reference path length. In similarity mode the estimate is first scaled
/// by the globally fitted scale.
pub fn drift_errors(estimate: &Trajectory, reference: &Trajectory, config: &DriftConfig) -> Result<(f64, f64)> {
    let pairs = associate(estimate, reference, config.tolerance);
    let seg = config.segment.max(1);
    if pairs.len() < 2 * seg && pairs.len() < 2 {
        return Err(Error::Alignment(format!("{} associated samples, drift needs two segments", pairs.len())));
    }
    let seg = seg.min(pairs.len() / 2).max(1);
    let scale = match config.mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => align_trajectories(estimate, reference, AlignMode::Similarity, config.tolerance)?.0.scale,
    };
    let scaled = |p: &PoseSE3| PoseSE3::from_quaternion(scale * p.translation(), p.quaternion());
    let collect = |range: &[(usize, usize)]| -> Vec<(PoseSE3, PoseSE3)> {
        range
            .iter()
            .map(|&(i, j)| (scaled(&estimate.samples[i].1), reference.samples[j].1))
            .collect()
    };
    let start = segment_alignment(&collect(&pairs[..seg]));
    let end = segment_alignment(&collect(&pairs[pairs.len() - seg..]));
    let drift = end * start.inverse();
    let length = reference.path_length();
    let trans = if length > 0.0 {
        100.0 * drift.translation().norm() / length
    } else {
        0.0
    };
    Ok((drift.angle().to_degrees(), trans))
}

/// Per-run summary written by the `eval` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub ate_rmse: f64,
    pub rot_drift_deg: f64,
    pub trans_drift_pct: f64,
}

/// Aligns, then computes ATE and drift.
pub fn evaluate_run(estimate: &Trajectory, reference: &Trajectory, mode: AlignMode, tolerance: f64) -> Result<RunMetrics> {
    let (_, aligned) = align_trajectories(estimate, reference, mode, tolerance)?;
    let ate = ate_rmse(&aligned, reference, tolerance)?;
    let (rot, trans) = drift_errors(
        estimate,
        reference,
        &DriftConfig {
            mode,
            tolerance,
            ..DriftConfig::default()
        },
    )?;
    Ok(RunMetrics {
        ate_rmse: ate,
        rot_drift_deg: rot,
        trans_drift_pct: trans,
    })
}

/// Cumulative error curve: for each distinct error value (ascending), the
/// number of runs at or below it.
pub fn cumulative_curve(errors: &[f64]) -> Vec<(f64, usize)> {
    let mut sorted: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == *e => last.1 = i + 1,
            _ => out.push((*e, i + 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spiral(n: usize) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    let pos = Vector3::new(t.cos(), t.sin(), 0.3 * t);
                    (t, PoseSE3::from_translation_axis_angle(pos, Vector3::new(0.0, 0.1 * t, 0.05 * t)))
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_similarity(rng: &mut ChaCha8Rng) -> Similarity {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Similarity {
            rotation: UnitQuaternion::from_scaled_axis(axis),
            translation: Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            scale: rng.random_range(0.5..2.0),
        }
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let p = PoseSE3::identity();
        assert!(Trajectory::new(vec![(0.0, p), (0.0, p)]).is_err());
        assert!(Trajectory::new(vec![(1.0, p), (0.5, p)]).is_err());
    }

    #[test]
    fn association_picks_nearest_within_tolerance() {
        let p = PoseSE3::identity();
        let a = Trajectory::new(vec![(0.0, p), (1.0, p), (2.005, p), (3.5, p)]).unwrap();
        let b = Trajectory::new(vec![(0.01, p), (0.99, p), (2.0, p), (3.0, p)]).unwrap();
        assert_eq!(associate(&a, &b, 0.02), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn identical_trajectories_align_to_identity() {
        let t = spiral(30);
        let (s, aligned) = align_trajectories(&t, &t, AlignMode::Rigid, ASSOCIATION_TOLERANCE).unwrap();
        assert!(s.translation.norm() < 1e-12 && s.rotation.angle() < 1e-7);
        assert!(ate_rmse(&aligned, &t, ASSOCIATION_TOLERANCE).unwrap() < 1e-12);
        let (rot, trans) = drift_errors(&t, &t, &DriftConfig::default()).unwrap();
        assert!(rot < 1e-9 && trans < 1e-9);
    }

    #[test]
    fn recovers_a_pure_offset() {
        let reference = spiral(30);
        let shifted = reference.transformed(&Similarity {
            translation: Vector3::new(-1.0, 0.0, 0.0),
            ..Similarity::identity()
        });
        let (s, aligned) = align_trajectories(&shifted, &reference, AlignMode::Rigid, 0.02).unwrap();
        assert!((s.translation - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(ate_rmse(&aligned, &reference, 0.02).unwrap() < 1e-12);
        // Without alignment the error is the offset itself.
        assert!((ate_rmse(&shifted, &reference, 0.02).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverts_random_similarities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reference = spiral(40);
        for _ in 0..20 {
            let s = random_similarity(&mut rng);
            let est = reference.transformed(&s);
            let (_, aligned) = align_trajectories(&est, &reference, AlignMode::Similarity, 0.02).unwrap();
            assert!(ate_rmse(&aligned, &reference, 0.02).unwrap() < 1e-9);
        }
    }

    #[test]
    fn collinear_or_short_inputs_are_rejected() {
        let line = Trajectory::new(
            (0..10)
                .map(|i| (i as f64, PoseSE3::from_translation_axis_angle(Vector3::x() * i as f64, Vector3::zeros())))
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            align_trajectories(&line, &line, AlignMode::Rigid, 0.02),
            Err(Error::Alignment(_))
        ));
        let short = Trajectory::new(spiral(2).samples().to_vec()).unwrap();
        assert!(align_trajectories(&short, &short, AlignMode::Rigid, 0.02).is_err());
    }

    #[test]
    fn ate_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reference = spiral(50);
        let noisy = Trajectory::new(
            reference
                .samples()
                .iter()
                .map(|(t, p)| {
                    let d = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                    (*t, PoseSE3::from_quaternion(p.translation() + d, p.quaternion()))
                })
                .collect(),
        )
        .unwrap();
        let mut sum = 0.0;
        for i in 0..50 {
            let a = noisy.samples()[i].1.translation();
            let b = reference.samples()[i].1.translation();
            sum += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
        }
        let direct = (sum / 50.0).sqrt();
        assert!((ate_rmse(&noisy, &reference, 0.02).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn final_rotation_shows_up_as_rotational_drift() {
        let reference = spiral(30);
        let mut samples = reference.samples().to_vec();
        let (t, last) = *samples.last().unwrap();
        let turned = PoseSE3::from_quaternion(
            last.translation(),
            last.quaternion() * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 5f64.to_radians()),
        );
        *samples.last_mut().unwrap() = (t, turned);
        let est = Trajectory::new(samples).unwrap();
        let (rot, trans) = drift_errors(&est, &reference, &DriftConfig::default()).unwrap();
        assert!((rot - 5.0).abs() < 1e-6, "{rot}");
        assert!(trans.is_finite());
    }

    #[test]
    fn global_scale_is_not_drift_under_similarity() {
        let reference = spiral(30);
        let scaled = reference.transformed(&Similarity {
            scale: 1.02,
            ..Similarity::identity()
        });
        let cfg = DriftConfig {
            mode: AlignMode::Similarity,
            ..DriftConfig::default()
        };
        let (rot, trans) = drift_errors(&scaled, &reference, &cfg).unwrap();
        assert!(rot < 1e-6 && trans < 1e-6, "{rot} {trans}");
        let metrics = evaluate_run(&scaled, &reference, AlignMode::Similarity, 0.02).unwrap();
        assert!(metrics.ate_rmse < 1e-9);
    }

    #[test]
    fn cumulative_curve_counts_runs() {
        assert_eq!(cumulative_curve(&[0.3, 0.1, 0.3, 0.2]), vec![(0.1, 1), (0.2, 2), (0.3, 4)]);
        assert!(cumulative_curve(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn ate_is_invariant_under_a_common_rigid_motion(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reference = spiral(25);
            let est = reference.transformed(&Similarity { scale: 1.0, ..random_similarity(&mut rng) });
            let noisy = Trajectory::new(est.samples().iter().enumerate().map(|(i, (t, p))| {
                let d = Vector3::new((i as f64 * 1.7).sin(), (i as f64 * 0.3).cos(), 0.0) * 0.05;
                (*t, PoseSE3::from_quaternion(p.translation() + d, p.quaternion()))
            }).collect()).unwrap();
            let g = Similarity { scale: 1.0, ..random_similarity(&mut rng) };
            let before = ate_rmse(&noisy, &reference, 0.02).unwrap();
            let after = ate_rmse(&noisy.transformed(&g), &reference.transformed(&g), 0.02).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn alignment_beats_other_rigid_transforms(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reference = spiral(25);
            let est = Trajectory::new(reference.samples().iter().enumerate().map(|(i, (t, p))| {
                let d = Vector3::new((i as f64).sin(), (i as f64 * 2.1).cos(), (i as f64 * 0.7).sin()) * 0.1;
                (*t, PoseSE3::from_quaternion(p.translation() + d, p.quaternion()))
            }).collect()).unwrap();
            let (best, aligned) = align_trajectories(&est, &reference, AlignMode::Rigid, 0.02).unwrap();
            let optimum = ate_rmse(&aligned, &reference, 0.02).unwrap();
            for _ in 0..5 {
                let mut other = random_similarity(&mut rng);
                other.scale = 1.0;
                other.rotation = best.rotation * UnitQuaternion::from_scaled_axis(other.rotation.scaled_axis() * 0.01);
                other.translation = best.translation + other.translation * 0.01;
                let rmse = ate_rmse(&est.transformed(&other), &reference, 0.02).unwrap();
                prop_assert!(rmse >= optimum - 1e-12);
            }
        }
    }
}
