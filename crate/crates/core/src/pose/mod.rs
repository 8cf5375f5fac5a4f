//! Joint photometric-geometric pose refinement.
//!
//! A reference image with known sparse inverse depths is aligned to a target
//! image. The energy mixes two normalized robust terms,
//!
//! ```text
//! E(xi) = sum rho_p(e_p) / (n_p s_p^2) + K * sum rho_g(|e_g|) / (n_g s_g^2)
//! ```
//!
//! where `e_p` are intensity differences over the sparse pattern around each
//! point and `e_g` are keypoint reprojection errors. `K` comes from
//! [`utility_k`]. `n_p` counts individual pattern residuals; the geometric
//! Huber penalty acts on the norm of each keypoint's 2-vector.
//!
//! Poses map reference-camera coordinates into the target camera.

mod optimize;
pub mod scenario;

use nalgebra::{Matrix2x6, Matrix6, Point3, Vector2, Vector6};

use crate::camera::{Intrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::photometry::{rectify_frame, CalibrationSnapshot, Frame, IrradianceImage, SPARSE_PATTERN};
use crate::robust::{huber, huber_derivative};

pub use optimize::{optimize_pose, IterationRecord, PoseConfig, PoseOutcome, PoseReport};

/// Pyramid level and the current number of inlier keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidContext {
    /// 0 is the finest level.
    pub level: usize,
    pub inliers: usize,
}

/// Weight of the geometric term: `5 e^(-2l) / (1 + e^((30 - N_g) / 4))`.
pub fn utility_k(ctx: PyramidContext) -> f64 {
    let l = ctx.level as f64;
    let n = ctx.inliers as f64;
    5.0 * (-2.0 * l).exp() / (1.0 + ((30.0 - n) / 4.0).exp())
}

/// Residual counts and variances normalizing the two energy terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub n_p: usize,
    pub n_g: usize,
    /// Photometric variance, intensity levels squared.
    pub var_p: f64,
    /// Geometric variance, pixels squared.
    pub var_g: f64,
}

impl ResidualStats {
    pub fn new(n_p: usize, n_g: usize, var_p: f64, var_g: f64) -> Result<Self> {
        let ok = |n: usize, v: f64| v.is_finite() && (n == 0 || v > 0.0) && v >= 0.0;
        if !ok(n_p, var_p) || !ok(n_g, var_g) {
            return Err(Error::Domain(format!(
                "variances must be positive for non-empty terms (var_p {var_p}, var_g {var_g})"
            )));
        }
        Ok(Self { n_p, n_g, var_p, var_g })
    }
}

/// A point of the reference image with known inverse depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPoint {
    pub u: f64,
    pub v: f64,
    pub inv_depth: f64,
}

/// A reference keypoint with known inverse depth and its observed position
/// in the target image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub inv_depth: f64,
    pub observed: (f64, f64),
}

impl Keypoint {
    fn point(&self, k: &Intrinsics) -> Point3<f64> {
        k.backproject(self.u, self.v, 1.0 / self.inv_depth)
    }
}

/// Everything the pose energy looks at. Images are stored as pyramids;
/// intensities are in 8-bit level units (see [`intensity_image`]).
#[derive(Debug, Clone)]
pub struct SceneObservation {
    intrinsics: Intrinsics,
    reference: Vec<IrradianceImage>,
    target: Vec<IrradianceImage>,
    points: Vec<DepthPoint>,
    keypoints: Vec<Keypoint>,
}

fn pyramid(base: IrradianceImage, levels: usize) -> Vec<IrradianceImage> {
    let mut out = vec![base];
    for _ in 1..levels {
        let last = out.last().expect("non-empty pyramid");
        out.push(IrradianceImage {
            values: last.values.downsample(),
            valid: last.valid.downsample_mask(),
        });
    }
    out
}

impl SceneObservation {
    /// Builds `levels` pyramid levels of both images.
    pub fn new(
        intrinsics: Intrinsics,
        reference: IrradianceImage,
        target: IrradianceImage,
        points: Vec<DepthPoint>,
        keypoints: Vec<Keypoint>,
        levels: usize,
    ) -> Result<Self> {
        let dims = (intrinsics.width, intrinsics.height);
        for (name, img) in [("reference", &reference), ("target", &target)] {
            if (img.width(), img.height()) != dims {
                return Err(Error::Data(format!(
                    "{name} image is {}x{}, intrinsics expect {}x{}",
                    img.width(),
                    img.height(),
                    dims.0,
                    dims.1
                )));
            }
        }
        if levels == 0 || dims.0 >> (levels - 1) < 8 || dims.1 >> (levels - 1) < 8 {
            return Err(Error::Domain(format!("{levels} pyramid levels do not fit a {}x{} image", dims.0, dims.1)));
        }
        let depths = points.iter().map(|p| p.inv_depth).chain(keypoints.iter().map(|k| k.inv_depth));
        if let Some(d) = depths.into_iter().find(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Data(format!("inverse depth {d} is not positive")));
        }
        Ok(Self {
            intrinsics,
            reference: pyramid(reference, levels),
            target: pyramid(target, levels),
            points,
            keypoints,
        })
    }

    pub fn levels(&self) -> usize {
        self.reference.len()
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn points(&self) -> &[DepthPoint] {
        &self.points
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    /// Same observation with the keypoints removed or replaced.
    pub fn with_keypoints(&self, keypoints: Vec<Keypoint>) -> Self {
        Self {
            keypoints,
            ..self.clone()
        }
    }

    /// Same observation without photometric points.
    pub fn with_points(&self, points: Vec<DepthPoint>) -> Self {
        Self { points, ..self.clone() }
    }
}

/// Converts a frame to level units. Without a snapshot the raw intensities
/// are used. With one, the frame is rectified and rescaled by
/// `255 * reference_exposure` so that rectified values stay comparable to
/// 8-bit levels. Saturated pixels are masked either way.
pub fn intensity_image(
    frame: &Frame,
    snapshot: Option<&CalibrationSnapshot>,
    reference_exposure: f64,
) -> Result<IrradianceImage> {
    match snapshot {
        Some(s) => {
            let mut out = rectify_frame(frame, s)?;
            let scale = 255.0 * reference_exposure;
            out.values = out.values.map(|v| v * scale);
            Ok(out)
        }
        None => {
            let valid = frame.image.map(|m| crate::photometry::is_unsaturated(m as f64));
            Ok(IrradianceImage {
                values: frame.image.to_f64(),
                valid,
            })
        }
    }
}

/// Residual values together with how many candidates were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals<T> {
    pub values: Vec<T>,
    pub dropped: usize,
}

/// Derivative of the projection of camera point `p` with respect to a left
/// increment `(v, w)` applied to it.
#[inline]
fn projection_jacobian(fx: f64, fy: f64, p: &Point3<f64>) -> Matrix2x6<f64> {
    let iz = 1.0 / p.z;
    let (x, y) = (p.x * iz, p.y * iz);
    Matrix2x6::new(
        fx * iz,
        0.0,
        -fx * x * iz,
        -fx * x * y,
        fx * (1.0 + x * x),
        -fx * y,
        0.0,
        fy * iz,
        -fy * y * iz,
        -fy * (1.0 + y * y),
        fy * x * y,
        fy * x,
    )
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Terms {
    pub photo: Vec<f64>,
    pub photo_jac: Vec<Vector6<f64>>,
    pub photo_dropped: usize,
    pub geo: Vec<Vector2<f64>>,
    pub geo_jac: Vec<Matrix2x6<f64>>,
    pub geo_dropped: usize,
}

impl Terms {
    pub fn inliers(&self, delta_g: f64) -> usize {
        self.geo.iter().filter(|e| e.norm() < delta_g).count()
    }
}

pub(crate) fn photometric_terms(obs: &SceneObservation, pose: &PoseSE3, level: usize, jac: bool, out: &mut Terms) {
    let k = obs.intrinsics.at_level(level);
    let s = (1usize << level) as f64;
    let reference = &obs.reference[level];
    let target = &obs.target[level];
    for p in &obs.points {
        let (ul, vl) = ((p.u + 0.5) / s - 0.5, (p.v + 0.5) / s - 0.5);
        let depth = 1.0 / p.inv_depth;
        for &(dx, dy) in &SPARSE_PATTERN {
            let (x, y) = (ul + dx, vl + dy);
            if !reference.valid.sample_valid(x, y) {
                out.photo_dropped += 1;
                continue;
            }
            let i_ref = reference.values.sample(x, y).expect("valid implies inside");
            let q = pose.transform(&k.backproject(x, y, depth));
            let Some((xt, yt)) = k.project(&q) else {
                out.photo_dropped += 1;
                continue;
            };
            if !target.valid.sample_valid(xt, yt) {
                out.photo_dropped += 1;
                continue;
            }
            let (i_t, gx, gy) = target.values.sample_with_gradient(xt, yt).expect("valid implies inside");
            out.photo.push(i_t - i_ref);
            if jac {
                let j = projection_jacobian(k.fx, k.fy, &q);
                out.photo_jac.push((Vector2::new(gx, gy).transpose() * j).transpose());
            }
        }
    }
}

pub(crate) fn geometric_terms(obs: &SceneObservation, pose: &PoseSE3, jac: bool, out: &mut Terms) {
    let k = &obs.intrinsics;
    for kp in &obs.keypoints {
        let q = pose.transform(&kp.point(k));
        let Some((x, y)) = k.project(&q) else {
            out.geo_dropped += 1;
            continue;
        };
        out.geo.push(Vector2::new(x - kp.observed.0, y - kp.observed.1));
        if jac {
            out.geo_jac.push(projection_jacobian(k.fx, k.fy, &q));
        }
    }
}

pub(crate) fn evaluate(obs: &SceneObservation, pose: &PoseSE3, level: usize, jac: bool) -> Terms {
    let mut t = Terms::default();
    photometric_terms(obs, pose, level, jac, &mut t);
    geometric_terms(obs, pose, jac, &mut t);
    t
}

/// Pattern residuals `I_target(warp(p)) - I_ref(p)` at the finest level.
/// Samples that fall outside the target or on masked pixels are dropped.
pub fn photometric_residuals(obs: &SceneObservation, pose: &PoseSE3) -> Result<Residuals<f64>> {
    photometric_residuals_at(obs, pose, 0)
}

/// [`photometric_residuals`] on pyramid level `level`.
pub fn photometric_residuals_at(obs: &SceneObservation, pose: &PoseSE3, level: usize) -> Result<Residuals<f64>> {
    check_level(obs, level)?;
    let mut t = Terms::default();
    photometric_terms(obs, pose, level, false, &mut t);
    if t.photo.is_empty() {
        return Err(Error::EmptyResidual(format!(
            "all {} photometric samples left the target image",
            t.photo_dropped
        )));
    }
    Ok(Residuals {
        values: t.photo,
        dropped: t.photo_dropped,
    })
}

/// Predicted minus observed keypoint positions, in pixels. Keypoints that
/// end up behind the target camera are dropped.
pub fn geometric_residuals(obs: &SceneObservation, pose: &PoseSE3) -> Result<Residuals<Vector2<f64>>> {
    if obs.keypoints.is_empty() {
        return Err(Error::Data("no keypoints".into()));
    }
    let mut t = Terms::default();
    geometric_terms(obs, pose, false, &mut t);
    Ok(Residuals {
        values: t.geo,
        dropped: t.geo_dropped,
    })
}

fn check_level(obs: &SceneObservation, level: usize) -> Result<()> {
    if level >= obs.levels() {
        return Err(Error::Domain(format!("level {level} beyond the {}-level pyramid", obs.levels())));
    }
    Ok(())
}

/// Robust thresholds of the two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberThresholds {
    /// Intensity levels.
    pub photometric: f64,
    /// Pixels.
    pub geometric: f64,
}

impl Default for HuberThresholds {
    fn default() -> Self {
        Self {
            photometric: 9.0,
            geometric: 3.0,
        }
    }
}

pub(crate) fn energy_of(t: &Terms, stats: &ResidualStats, k: f64, delta: HuberThresholds) -> f64 {
    let mut e = 0.0;
    if stats.n_p > 0 {
        let sum: f64 = t.photo.iter().map(|&r| huber(r, delta.photometric)).sum();
        e += sum / (stats.n_p as f64 * stats.var_p);
    }
    if stats.n_g > 0 {
        let sum: f64 = t.geo.iter().map(|r| huber(r.norm(), delta.geometric)).sum();
        e += k * sum / (stats.n_g as f64 * stats.var_g);
    }
    e
}

/// Gradient and Gauss-Newton approximation of the Hessian (IRLS weights).
pub(crate) fn normal_equations(
    t: &Terms,
    stats: &ResidualStats,
    k: f64,
    delta: HuberThresholds,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    if stats.n_p > 0 {
        let norm = 1.0 / (stats.n_p as f64 * stats.var_p);
        for (&r, j) in t.photo.iter().zip(&t.photo_jac) {
            let w = crate::robust::huber_weight(r, delta.photometric) * norm;
            h += w * j * j.transpose();
            g += huber_derivative(r, delta.photometric) * norm * j;
        }
    }
    if stats.n_g > 0 {
        let norm = k / (stats.n_g as f64 * stats.var_g);
        for (e, j) in t.geo.iter().zip(&t.geo_jac) {
            let w = crate::robust::huber_weight(e.norm(), delta.geometric) * norm;
            h += w * j.transpose() * j;
            g += w * j.transpose() * e;
        }
    }
    (h, g)
}

fn checked_terms(
    obs: &SceneObservation,
    pose: &PoseSE3,
    stats: &ResidualStats,
    ctx: PyramidContext,
    jac: bool,
) -> Result<Terms> {
    check_level(obs, ctx.level)?;
    let t = evaluate(obs, pose, ctx.level, jac);
    if stats.n_p == 0 && stats.n_g == 0 {
        return Err(Error::UndefinedEnergy("both residual counts are zero".into()));
    }
    if t.photo.len() != stats.n_p || t.geo.len() != stats.n_g {
        return Err(Error::Data(format!(
            "stats count ({}, {}) but the pose yields ({}, {}) residuals",
            stats.n_p,
            stats.n_g,
            t.photo.len(),
            t.geo.len()
        )));
    }
    Ok(t)
}

/// Joint energy at `pose` on pyramid level `ctx.level`, with the geometric
/// term weighted by `utility_k(ctx)`.
pub fn joint_energy(
    obs: &SceneObservation,
    pose: &PoseSE3,
    stats: &ResidualStats,
    ctx: PyramidContext,
    delta: HuberThresholds,
) -> Result<f64> {
    let t = checked_terms(obs, pose, stats, ctx, false)?;
    Ok(energy_of(&t, stats, utility_k(ctx), delta))
}

/// Analytic gradient of [`joint_energy`] with respect to a left increment
/// `xi = (v, w)`, i.e. the derivative of `E(retract(pose, xi))` at zero.
pub fn joint_gradient(
    obs: &SceneObservation,
    pose: &PoseSE3,
    stats: &ResidualStats,
    ctx: PyramidContext,
    delta: HuberThresholds,
) -> Result<Vector6<f64>> {
    let t = checked_terms(obs, pose, stats, ctx, true)?;
    Ok(normal_equations(&t, stats, utility_k(ctx), delta).1)
}

/// Residual counts a pose produces on a level, with the given variances.
pub fn stats_at(
    obs: &SceneObservation,
    pose: &PoseSE3,
    level: usize,
    var_p: f64,
    var_g: f64,
) -> Result<ResidualStats> {
    check_level(obs, level)?;
    let t = evaluate(obs, pose, level, false);
    ResidualStats::new(t.photo.len(), t.geo.len(), var_p, var_g)
}

/// Inlier count `N_g` at `pose`.
pub fn geometric_inliers(obs: &SceneObservation, pose: &PoseSE3, delta_g: f64) -> usize {
    let mut t = Terms::default();
    geometric_terms(obs, pose, false, &mut t);
    t.inliers(delta_g)
}

#[cfg(test)]
mod tests;
