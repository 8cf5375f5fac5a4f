//! Reference/target frame pairs cut from a synthetic sequence, with known
//! depth, ground-truth relative pose and noisy keypoint observations.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::{intensity_image, DepthPoint, Keypoint, SceneObservation};
use crate::camera::PoseSE3;
use crate::error::{Error, Result};
use crate::photometry::{is_unsaturated, CalibrationSnapshot, Frame};
use crate::synth::{generate_scene, SceneSpec, SyntheticScene};
use crate::tracker::TrackerConfig;

/// How the two images are presented to the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Photometry {
    /// Raw 8-bit intensities: response, vignette and exposure uncorrected.
    Raw,
    /// Rectified with the scene's true calibration.
    Rectified,
}

/// Where the observed keypoint positions in the target come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeypointSource {
    /// Corners tracked from the reference into the target image with a
    /// forward-backward check.
    Tracked,
    /// Ground-truth projections plus Gaussian noise of this many pixels.
    Projected { noise: f64 },
}

/// Point and keypoint sampling for a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    /// One photometric point per `cell x cell` block (strongest gradient).
    pub cell: usize,
    /// Gradient magnitude (levels per pixel) a point must exceed.
    pub min_gradient: f64,
    pub max_keypoints: usize,
    pub keypoints: KeypointSource,
    pub levels: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            cell: 6,
            min_gradient: 4.0,
            max_keypoints: 150,
            keypoints: KeypointSource::Projected { noise: 0.3 },
            levels: 4,
        }
    }
}

/// A frame pair from a synthetic scene.
#[derive(Debug, Clone)]
pub struct PairScenario {
    pub scene: SyntheticScene,
    pub reference: usize,
    pub target: usize,
    pub config: PairConfig,
    seed: u64,
}

/// Frames rendered for the standard pair; the pair is (10, 16).
const STANDARD_FRAMES: usize = 20;

impl PairScenario {
    /// The standard desk-scale pair: default scene (gamma 2.2 response,
    /// vignetting, noise) seeded with `seed`, frames 10 and 16, whose
    /// exposures differ by roughly a factor of two.
    pub fn standard(seed: u64) -> Result<Self> {
        let spec = SceneSpec {
            frames: STANDARD_FRAMES,
            seed,
            ..SceneSpec::default()
        };
        Self::new(generate_scene(&spec)?, 10, 16, PairConfig::default(), seed)
    }

    pub fn new(scene: SyntheticScene, reference: usize, target: usize, config: PairConfig, seed: u64) -> Result<Self> {
        if reference >= scene.len() || target >= scene.len() {
            return Err(Error::Domain(format!(
                "frames ({reference}, {target}) outside a {}-frame scene",
                scene.len()
            )));
        }
        Ok(Self {
            scene,
            reference,
            target,
            config,
            seed,
        })
    }

    /// Reference-to-target camera transform.
    pub fn truth(&self) -> PoseSE3 {
        self.scene.relative_pose(self.reference, self.target)
    }

    pub fn frames(&self) -> (Frame, Frame) {
        (self.scene.render_frame(self.reference), self.scene.render_frame(self.target))
    }

    /// True calibration of the scene.
    pub fn true_calibration(&self) -> CalibrationSnapshot {
        CalibrationSnapshot::trusted(self.scene.response.clone(), self.scene.vignette)
    }

    /// Builds the observation. Points and keypoints depend only on the raw
    /// reference frame, so both photometric modes share them.
    pub fn observation(&self, photometry: Photometry) -> Result<SceneObservation> {
        let (reference, target) = self.frames();
        let snapshot = self.true_calibration();
        let calib = match photometry {
            Photometry::Raw => None,
            Photometry::Rectified => Some(&snapshot),
        };
        let e_ref = reference.exposure.exposure;
        let ref_img = intensity_image(&reference, calib, e_ref)?;
        let tgt_img = intensity_image(&target, calib, e_ref)?;
        SceneObservation::new(
            self.scene.intrinsics,
            ref_img,
            tgt_img,
            self.points(&reference),
            self.keypoints(&reference, &target),
            self.config.levels,
        )
    }

    fn points(&self, frame: &Frame) -> Vec<DepthPoint> {
        select_points(frame, self.config.cell, self.config.min_gradient, |u, v| {
            self.scene.depth_at(self.reference, u, v)
        })
    }

    fn keypoints(&self, reference: &Frame, target: &Frame) -> Vec<Keypoint> {
        let tracker = TrackerConfig::default();
        let corners = tracker.detect_corners(&reference.image, self.config.max_keypoints);
        let k = self.scene.intrinsics;
        let observed: Vec<Option<(f64, f64)>> = match self.config.keypoints {
            KeypointSource::Tracked => {
                return tracked_keypoints(reference, target, self.config.max_keypoints, |u, v| {
                    self.scene.depth_at(self.reference, u, v)
                })
            }
            KeypointSource::Projected { noise } => {
                let truth = self.truth();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6b65_7970_6f69_6e74);
                let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
                corners
                    .iter()
                    .map(|&(u, v)| {
                        let z = self.scene.depth_at(self.reference, u, v);
                        let (x, y) = k.project(&truth.transform(&k.backproject(u, v, z)))?;
                        let (nx, ny) = if noise > 0.0 {
                            (normal.sample(&mut rng), normal.sample(&mut rng))
                        } else {
                            (0.0, 0.0)
                        };
                        let (x, y) = (x + nx, y + ny);
                        let inside = x >= 0.0 && y >= 0.0 && x <= (k.width - 1) as f64 && y <= (k.height - 1) as f64;
                        inside.then_some((x, y))
                    })
                    .collect()
            }
        };
        corners
            .iter()
            .zip(observed)
            .filter_map(|(&(u, v), obs)| {
                Some(Keypoint {
                    u,
                    v,
                    inv_depth: 1.0 / self.scene.depth_at(self.reference, u, v),
                    observed: obs?,
                })
            })
            .collect()
    }

    /// Mean depth of the photometric points in the reference camera.
    pub fn mean_depth(&self) -> f64 {
        let (reference, _) = self.frames();
        let pts = self.points(&reference);
        pts.iter().map(|p| 1.0 / p.inv_depth).sum::<f64>() / pts.len().max(1) as f64
    }

    /// Ground truth composed with a rotation of `degrees` about a random
    /// axis and a translation of `translation` (scene units) in a random
    /// direction.
    pub fn perturbed(&self, degrees: f64, translation: f64, seed: u64) -> PoseSE3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let delta = PoseSE3::from_translation_axis_angle(
            Vector3::from(dir) * translation,
            Vector3::from(axis) * degrees.to_radians(),
        );
        delta * self.truth()
    }
}

/// Rotation error in degrees and translation error in scene units.
pub fn pose_error(estimate: &PoseSE3, truth: &PoseSE3) -> (f64, f64) {
    let d = estimate.inverse() * *truth;
    (
        d.angle().to_degrees(),
        (estimate.translation() - truth.translation()).norm(),
    )
}

/// One point per `cell x cell` block: the unsaturated pixel with the largest
/// central-difference gradient above `min_gradient`, with depth from `depth`.
pub fn select_points(frame: &Frame, cell: usize, min_gradient: f64, depth: impl Fn(f64, f64) -> f64) -> Vec<DepthPoint> {
    let img = frame.image.to_f64();
    let (w, h) = (img.width(), img.height());
    let cell = cell.max(1);
    let border = 4;
    let mut out = Vec::new();
    for by in (border..h - border).step_by(cell) {
        for bx in (border..w - border).step_by(cell) {
            let mut best: Option<(f64, usize, usize)> = None;
            for y in by..(by + cell).min(h - border) {
                for x in bx..(bx + cell).min(w - border) {
                    if !is_unsaturated(img.get(x, y)) {
                        continue;
                    }
                    let gx = 0.5 * (img.get(x + 1, y) - img.get(x - 1, y));
                    let gy = 0.5 * (img.get(x, y + 1) - img.get(x, y - 1));
                    let g = gx.hypot(gy);
                    if g > min_gradient && best.is_none_or(|b| g > b.0) {
                        best = Some((g, x, y));
                    }
                }
            }
            if let Some((_, x, y)) = best {
                let (u, v) = (x as f64, y as f64);
                let z = depth(u, v);
                if z.is_finite() && z > 0.0 {
                    out.push(DepthPoint { u, v, inv_depth: 1.0 / z });
                }
            }
        }
    }
    out
}

/// Corners of `reference` tracked into `target` (forward-backward checked).
pub fn tracked_keypoints(
    reference: &Frame,
    target: &Frame,
    max_count: usize,
    depth: impl Fn(f64, f64) -> f64,
) -> Vec<Keypoint> {
    let tracker = TrackerConfig::default();
    let corners = tracker.detect_corners(&reference.image, max_count);
    let tracked = tracker.track_points_checked(&reference.image, &target.image, &corners);
    corners
        .iter()
        .zip(tracked)
        .filter_map(|(&(u, v), obs)| {
            let z = depth(u, v);
            (z.is_finite() && z > 0.0).then_some(Keypoint {
                u,
                v,
                inv_depth: 1.0 / z,
                observed: obs?,
            })
        })
        .collect()
}
