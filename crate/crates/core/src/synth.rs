//! Ground-truth image sequences.
//!
//! The camera moves inside a textured box ("room"); every viewing ray exits
//! through exactly one face, so depth is known in closed form for every
//! pixel. Each frame is rendered as `M = round(f(e * V(r) * L) + noise)` with
//! the forward response `f` obtained by inverting the ground-truth table.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::camera::{Intrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image};
use crate::photometry::{is_unsaturated, ExposureRecord, Frame, InverseResponse, RadialGeometry, VignetteModel};
use crate::tracker::CorrespondencePair;

/// Radiance pattern painted on the room faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Texture {
    /// Multi-octave value noise; `base_frequency` in cycles per scene unit.
    ValueNoise { octaves: u32, base_frequency: f64 },
    /// Alternating squares of side `square` (scene units).
    Checkerboard { square: f64 },
    /// Uniform radiance.
    Constant(f64),
}

/// Family used to build the ground-truth inverse response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseFamily {
    Identity,
    /// `f^-1(M) = (M / 255)^gamma`
    Gamma(f64),
}

impl ResponseFamily {
    pub fn inverse_response(&self) -> InverseResponse {
        match *self {
            ResponseFamily::Identity => InverseResponse::identity(),
            ResponseFamily::Gamma(g) => InverseResponse::gamma(g),
        }
    }
}

/// Camera motion over the sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryShape {
    Static,
    /// Hand-held style oscillation: rotation amplitude in degrees about each
    /// axis and translation amplitude in scene units.
    Wobble { rotation_deg: f64, translation: f64 },
}

/// Axis-aligned room the camera moves in. The camera starts at the origin
/// looking down `+z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomBox {
    pub half_width: f64,
    pub half_height: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for RoomBox {
    fn default() -> Self {
        Self {
            half_width: 1.6,
            half_height: 1.2,
            near: -1.0,
            far: 3.0,
        }
    }
}

/// Everything needed to generate a scene deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub frames: usize,
    pub frame_rate: f64,
    pub texture: Texture,
    /// Radiance range mapped onto the texture.
    pub radiance_range: (f64, f64),
    /// Exposure range in milliseconds; the schedule sweeps it multiplicatively.
    pub exposure_range: (f64, f64),
    /// Frames per full exposure sweep (low, high, low).
    pub exposure_period: f64,
    /// Standard deviation of the per-frame log-exposure jitter.
    pub exposure_jitter: f64,
    pub response: ResponseFamily,
    pub vignette: VignetteModel,
    pub trajectory: TrajectoryShape,
    /// Gaussian noise added before quantization, in intensity levels.
    pub noise_sigma: f64,
    pub room: RoomBox,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            focal: 260.0,
            frames: 200,
            frame_rate: 30.0,
            texture: Texture::ValueNoise {
                octaves: 4,
                base_frequency: 2.5,
            },
            radiance_range: (0.01, 0.12),
            exposure_range: (1.0, 8.0),
            exposure_period: 50.0,
            exposure_jitter: 0.02,
            response: ResponseFamily::Gamma(2.2),
            vignette: VignetteModel::new(-0.25, -0.1, -0.05).expect("valid default vignette"),
            trajectory: TrajectoryShape::Wobble {
                rotation_deg: 8.0,
                translation: 0.1,
            },
            noise_sigma: 1.0,
            room: RoomBox::default(),
            seed: 0,
        }
    }
}

/// Maximum fraction of pixels allowed to exceed unit irradiance per frame.
pub const MAX_SATURATED_FRACTION: f64 = 0.05;

/// A fully determined synthetic sequence.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub intrinsics: Intrinsics,
    /// Camera-to-world pose of every frame.
    pub poses: Vec<PoseSE3>,
    pub exposures: Vec<ExposureRecord>,
    pub response: InverseResponse,
    pub vignette: VignetteModel,
    face_offsets: [(f64, f64); 6],
    /// Fraction of pixels with `e * V * L > 1`, per frame.
    pub saturated_fraction: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, salt: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(salt ^ splitmix64((ix as u64) ^ splitmix64(iy as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, salt: u64, u: f64, v: f64) -> f64 {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (fade(u - x0), fade(v - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, salt, ix, iy);
    let b = lattice(seed, salt, ix + 1, iy);
    let c = lattice(seed, salt, ix, iy + 1);
    let d = lattice(seed, salt, ix + 1, iy + 1);
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// Stream id for per-row noise generators.
fn noise_stream(seed: u64, frame: u64, row: usize) -> u64 {
    splitmix64(seed ^ splitmix64(frame.wrapping_mul(0x1000_0000_01B3) ^ row as u64))
}

/// Validates a spec and builds its scene: trajectory, exposure schedule and
/// texture layout all derive from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let (e_lo, e_hi) = spec.exposure_range;
    if !(e_lo > 0.0) || !(e_hi >= e_lo) || !e_hi.is_finite() {
        return Err(Error::Data(format!(
            "exposure range must be positive and ordered, got [{e_lo}, {e_hi}]"
        )));
    }
    let (l_lo, l_hi) = spec.radiance_range;
    if !(l_lo >= 0.0) || !(l_hi >= l_lo) {
        return Err(Error::Data(format!("invalid radiance range [{l_lo}, {l_hi}]")));
    }
    if spec.width < crate::photometry::MIN_FRAME_SIDE || spec.height < crate::photometry::MIN_FRAME_SIDE {
        return Err(Error::Data(format!("image size {}x{} too small", spec.width, spec.height)));
    }
    if spec.frames == 0 || !(spec.frame_rate > 0.0) || !(spec.focal > 0.0) {
        return Err(Error::Data("frames, frame rate and focal must be positive".into()));
    }
    if !(spec.noise_sigma >= 0.0) || !(spec.exposure_jitter >= 0.0) {
        return Err(Error::Data("noise and jitter must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut face_offsets = [(0.0, 0.0); 6];
    for off in face_offsets.iter_mut() {
        *off = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    }
    let phases: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));

    let poses = (0..spec.frames)
        .map(|i| trajectory_pose(&spec.trajectory, i as f64 / spec.frame_rate, &phases))
        .collect::<Vec<_>>();

    let jitter = Normal::new(0.0, spec.exposure_jitter.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Data(e.to_string()))?;
    let ratio_log = (e_hi / e_lo).ln();
    let mut exposures = Vec::with_capacity(spec.frames);
    for i in 0..spec.frames {
        let s = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / spec.exposure_period).cos();
        let mut log_e = e_lo.ln() + s * ratio_log;
        if spec.exposure_jitter > 0.0 {
            log_e += jitter.sample(&mut rng);
        }
        let e = log_e.exp().clamp(e_lo, e_hi);
        exposures.push(ExposureRecord::new(i as u64, i as f64 / spec.frame_rate, e)?);
    }

    let mut scene = SyntheticScene {
        spec: spec.clone(),
        intrinsics: Intrinsics::centered(spec.width, spec.height, spec.focal),
        poses,
        exposures,
        response: spec.response.inverse_response(),
        vignette: spec.vignette,
        face_offsets,
        saturated_fraction: Vec::new(),
    };

    let fractions: Vec<f64> = (0..spec.frames)
        .into_par_iter()
        .map(|i| scene.saturated_fraction_of(i))
        .collect();
    if let Some((i, f)) = fractions
        .iter()
        .enumerate()
        .find(|(_, &f)| f > MAX_SATURATED_FRACTION)
    {
        return Err(Error::Data(format!(
            "frame {i}: {:.1}% of pixels have exposure * vignette * radiance > 1 (limit {:.0}%); \
             lower the radiance range or the maximum exposure",
            100.0 * f,
            100.0 * MAX_SATURATED_FRACTION
        )));
    }
    scene.saturated_fraction = fractions;
    Ok(scene)
}

fn trajectory_pose(shape: &TrajectoryShape, t: f64, phases: &[f64; 6]) -> PoseSE3 {
    match *shape {
        TrajectoryShape::Static => PoseSE3::identity(),
        TrajectoryShape::Wobble {
            rotation_deg,
            translation,
        } => {
            let a = rotation_deg.to_radians();
            let w = |period: f64, k: usize| (std::f64::consts::TAU * t / period + phases[k]).sin();
            let rot = Vector3::new(0.6 * a * w(3.3, 0), a * w(4.1, 1), 1.2 * a * w(5.7, 2));
            let trans = translation * Vector3::new(w(4.7, 3), 0.5 * w(3.9, 4), 0.5 * w(6.1, 5));
            PoseSE3::from_translation_axis_angle(trans, rot)
        }
    }
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn geometry(&self) -> RadialGeometry {
        RadialGeometry::new(self.spec.width, self.spec.height, self.intrinsics.cx, self.intrinsics.cy)
    }

    /// Casts the ray through pixel `(u, v)` of a camera at `pose`
    /// (camera-to-world). Returns radiance and camera-frame depth.
    pub fn trace(&self, pose: &PoseSE3, u: f64, v: f64) -> (f64, f64) {
        let k = &self.intrinsics;
        let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir = pose.isometry().rotation * dir_cam;
        let origin = pose.translation();
        let room = &self.spec.room;
        let lo = [-room.half_width, -room.half_height, room.near];
        let hi = [room.half_width, room.half_height, room.far];
        let mut best = (f64::INFINITY, 0usize);
        for axis in 0..3 {
            let d = dir[axis];
            let (t, face) = if d > 0.0 {
                ((hi[axis] - origin[axis]) / d, 2 * axis + 1)
            } else if d < 0.0 {
                ((lo[axis] - origin[axis]) / d, 2 * axis)
            } else {
                continue;
            };
            if t < best.0 {
                best = (t, face);
            }
        }
        let (t, face) = best;
        let hit = origin + dir * t;
        let (a, b) = match face / 2 {
            0 => (hit.z, hit.y),
            1 => (hit.x, hit.z),
            _ => (hit.x, hit.y),
        };
        let (oa, ob) = self.face_offsets[face];
        (self.radiance(face as u64, a + oa, b + ob), t)
    }

    fn radiance(&self, face: u64, a: f64, b: f64) -> f64 {
        let (lo, hi) = self.spec.radiance_range;
        match self.spec.texture {
            Texture::Constant(value) => value,
            Texture::Checkerboard { square } => {
                let parity = ((a / square).floor() as i64 + (b / square).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    lo
                } else {
                    hi
                }
            }
            Texture::ValueNoise {
                octaves,
                base_frequency,
            } => {
                let mut sum = 0.0;
                let mut norm = 0.0;
                let mut amp = 1.0;
                let mut freq = base_frequency;
                for o in 0..octaves as u64 {
                    sum += amp * value_noise(self.spec.seed, face * 64 + o, a * freq, b * freq);
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                let n = (0.5 + 1.8 * (sum / norm - 0.5)).clamp(0.0, 1.0);
                lo + (hi - lo) * n
            }
        }
    }

    /// Radiance seen by each pixel of frame `index`.
    pub fn radiance_image(&self, index: usize) -> Image<f64> {
        let pose = self.poses[index];
        Image::from_fn(self.spec.width, self.spec.height, |x, y| {
            self.trace(&pose, x as f64, y as f64).0
        })
    }

    /// Camera-frame depth of each pixel of frame `index`.
    pub fn depth_image(&self, index: usize) -> Image<f64> {
        let pose = self.poses[index];
        Image::from_fn(self.spec.width, self.spec.height, |x, y| {
            self.trace(&pose, x as f64, y as f64).1
        })
    }

    /// Depth of the surface seen through pixel `(u, v)` of frame `index`.
    pub fn depth_at(&self, index: usize, u: f64, v: f64) -> f64 {
        self.trace(&self.poses[index], u, v).1
    }

    /// World point seen through pixel `(u, v)` of frame `index`.
    pub fn surface_point(&self, index: usize, u: f64, v: f64) -> Point3<f64> {
        let z = self.depth_at(index, u, v);
        self.poses[index].transform(&self.intrinsics.backproject(u, v, z))
    }

    /// Camera-to-camera transform mapping frame `from` coordinates into frame `to`.
    pub fn relative_pose(&self, from: usize, to: usize) -> PoseSE3 {
        self.poses[to].inverse() * self.poses[from]
    }

    fn saturated_fraction_of(&self, index: usize) -> f64 {
        let e = self.exposures[index].exposure;
        let geo = self.geometry();
        let pose = self.poses[index];
        let mut total = 0usize;
        let mut over = 0usize;
        for y in (0..self.spec.height).step_by(2) {
            for x in (0..self.spec.width).step_by(2) {
                let (l, _) = self.trace(&pose, x as f64, y as f64);
                let v = self.vignette.eval_unchecked(geo.radius(x as f64, y as f64));
                total += 1;
                if e * v * l > 1.0 {
                    over += 1;
                }
            }
        }
        over as f64 / total as f64
    }

    /// Renders frame `index` with its scheduled exposure.
    pub fn render_frame(&self, index: usize) -> Frame {
        self.render_with_exposure(index, self.exposures[index].exposure)
    }

    /// Renders the camera pose of frame `index` with an overriding exposure.
    pub fn render_with_exposure(&self, index: usize, exposure: f64) -> Frame {
        let image = self.render_image(&self.poses[index], exposure, index as u64);
        let rec = ExposureRecord {
            exposure,
            ..self.exposures[index]
        };
        Frame::with_geometry(image, rec, self.geometry()).expect("scene frames are valid")
    }

    /// Exact correspondences between rendered frames `a` and `b` of this
    /// scene: pixels of `a` on a grid of `step` pixels, projected into `b`
    /// through the true geometry and sampled bilinearly in both. The room is
    /// convex, so nothing is occluded; samples leaving the image or reading a
    /// saturated pixel are skipped.
    pub fn ground_truth_pairs(&self, a: &Frame, index_a: usize, b: &Frame, index_b: usize, step: usize) -> Vec<CorrespondencePair> {
        let k = &self.intrinsics;
        let to_b = self.relative_pose(index_a, index_b);
        let usable = |f: &Frame, x: f64, y: f64| {
            f.image
                .footprint(x, y)
                .filter(|fp| fp.iter().all(|&m| is_unsaturated(m as f64)))
                .and_then(|_| f.image.sample(x, y))
        };
        let mut out = Vec::new();
        for y in (0..self.spec.height).step_by(step.max(1)) {
            for x in (0..self.spec.width).step_by(step.max(1)) {
                let (u, v) = (x as f64, y as f64);
                let p = k.backproject(u, v, self.depth_at(index_a, u, v));
                let Some((xb, yb)) = k.project(&to_b.transform(&p)) else {
                    continue;
                };
                let (Some(m1), Some(m2)) = (usable(a, u, v), usable(b, xb, yb)) else {
                    continue;
                };
                out.push(CorrespondencePair {
                    frame1: a.id(),
                    frame2: b.id(),
                    m1,
                    m2,
                    r1: a.radius(u, v),
                    r2: b.radius(xb, yb),
                    e1: a.exposure.exposure,
                    e2: b.exposure.exposure,
                });
            }
        }
        out
    }

    /// Renders an arbitrary camera pose. `noise_key` selects the noise stream.
    pub fn render_image(&self, pose: &PoseSE3, exposure: f64, noise_key: u64) -> GrayImage {
        let (w, h) = (self.spec.width, self.spec.height);
        let geo = self.geometry();
        let sigma = self.spec.noise_sigma;
        let mut data = vec![0u8; w * h];
        data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_stream(self.spec.seed, noise_key, y));
            let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
            for (x, px) in row.iter_mut().enumerate() {
                let (l, _) = self.trace(pose, x as f64, y as f64);
                let v = self.vignette.eval_unchecked(geo.radius(x as f64, y as f64));
                let mut m = self.response.forward(exposure * v * l);
                if sigma > 0.0 {
                    m += normal.sample(&mut rng);
                }
                *px = quantize(m);
            }
        });
        Image::from_vec(w, h, data)
    }
}

/// Round half away from zero, clamp to `[0, 255]`.
#[inline]
pub fn quantize(m: f64) -> u8 {
    m.round().clamp(0.0, 255.0) as u8
}

/// Planar checkerboard image with squares of `square` pixels whose corner
/// grid starts at `(offset, offset)`; intensities `dark` and `bright`.
pub fn checkerboard_image(width: usize, height: usize, square: usize, offset: usize, dark: u8, bright: u8) -> GrayImage {
    Image::from_fn(width, height, |x, y| {
        let cx = (x as i64 - offset as i64).div_euclid(square as i64);
        let cy = (y as i64 - offset as i64).div_euclid(square as i64);
        if (cx + cy).rem_euclid(2) == 0 {
            dark
        } else {
            bright
        }
    })
}
