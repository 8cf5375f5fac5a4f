//! Sparse corner tracking and correspondence-pair extraction.
//!
//! Corners are scored with the minimum eigenvalue of the 3x3 structure
//! tensor and tracked with pyramidal Lucas-Kanade on 8x8 patches. The patch
//! model carries an affine brightness term (gain and bias) because
//! consecutive frames are captured with different exposures.
//!
//! Frame-to-frame tracking drifts. [`SequenceTracker`] therefore refines each
//! chained estimate against the patch where the point was anchored, and moves
//! the anchor forward once it is `anchor_span` frames old.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Image};
use crate::photometry::{is_unsaturated, ExposureRecord, Frame, PATTERN_CENTER, SPARSE_PATTERN};

/// Tracker parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Minimum distance between two detections, in pixels.
    pub nms_radius: f64,
    /// Detections must score above this fraction of the frame's best score.
    pub quality_level: f64,
    /// Pixels closer than this to the border are not detected.
    pub border: usize,
    pub pyramid_levels: usize,
    /// Patch side length in pixels.
    pub patch_size: usize,
    pub max_iterations: usize,
    /// Mean absolute patch residual (intensity levels) above which a point is lost.
    pub loss_threshold: f64,
    /// Forward-backward disagreement (pixels) above which a point is lost.
    pub max_fb_error: f64,
    /// Frames a point is refined against the same anchor patch; 0 disables
    /// anchor refinement.
    pub anchor_span: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            nms_radius: 8.0,
            quality_level: 0.01,
            border: 8,
            pyramid_levels: 4,
            patch_size: 8,
            max_iterations: 30,
            loss_threshold: 12.0,
            max_fb_error: 0.5,
            anchor_span: 15,
        }
    }
}

/// Scores below this are treated as flat regardless of the frame maximum.
const MIN_CORNER_SCORE: f64 = 1e-3;
const CONVERGENCE_STEP: f64 = 0.01;

fn min_eigen_scores(image: &Image<f64>) -> Image<f64> {
    let (w, h) = (image.width(), image.height());
    let mut gxx = Image::filled(w, h, 0.0);
    let mut gxy = Image::filled(w, h, 0.0);
    let mut gyy = Image::filled(w, h, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = 0.5 * (image.get(x + 1, y) - image.get(x - 1, y));
            let gy = 0.5 * (image.get(x, y + 1) - image.get(x, y - 1));
            gxx.set(x, y, gx * gx);
            gxy.set(x, y, gx * gy);
            gyy.set(x, y, gy * gy);
        }
    }
    let mut score = Image::filled(w, h, 0.0);
    for y in 2..h.saturating_sub(2) {
        for x in 2..w.saturating_sub(2) {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let (px, py) = (x + dx - 1, y + dy - 1);
                    a += gxx.get(px, py);
                    b += gxy.get(px, py);
                    c += gyy.get(px, py);
                }
            }
            let half_diff = 0.5 * (a - c);
            score.set(x, y, 0.5 * (a + c) - (half_diff * half_diff + b * b).sqrt());
        }
    }
    score
}

fn parabola_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

impl TrackerConfig {
    /// Corner positions sorted by descending score, at most `max_count`,
    /// separated by at least `nms_radius`. Ties keep scan order.
    pub fn detect_corners(&self, image: &GrayImage, max_count: usize) -> Vec<(f64, f64)> {
        self.detect_corners_avoiding(image, max_count, &[])
    }

    /// Like [`detect_corners`](Self::detect_corners) but also keeps
    /// `nms_radius` away from `existing` points.
    pub fn detect_corners_avoiding(&self, image: &GrayImage, max_count: usize, existing: &[(f64, f64)]) -> Vec<(f64, f64)> {
        if max_count == 0 {
            return Vec::new();
        }
        let (w, h) = (image.width(), image.height());
        let margin = self.border.max(3);
        if w <= 2 * margin || h <= 2 * margin {
            return Vec::new();
        }
        let score = min_eigen_scores(&image.to_f64());
        let best = score.as_slice().iter().cloned().fold(0.0, f64::max);
        let threshold = (self.quality_level * best).max(MIN_CORNER_SCORE);
        let mut candidates = Vec::new();
        for y in margin..h - margin {
            for x in margin..w - margin {
                let s = score.get(x, y);
                if s <= threshold {
                    continue;
                }
                let is_max = (0..3).all(|dy| {
                    (0..3).all(|dx| {
                        let (px, py) = (x + dx - 1, y + dy - 1);
                        (px, py) == (x, y) || score.get(px, py) <= s
                    })
                });
                if is_max {
                    candidates.push((s, x, y));
                }
            }
        }
        // Stable sort keeps scan order among equal scores.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        let r2 = self.nms_radius * self.nms_radius;
        let mut accepted: Vec<(f64, f64)> = Vec::new();
        for (_, x, y) in candidates {
            let (fx, fy) = (x as f64, y as f64);
            let clear = |p: &(f64, f64)| (p.0 - fx).powi(2) + (p.1 - fy).powi(2) >= r2;
            if accepted.iter().all(clear) && existing.iter().all(clear) {
                accepted.push((fx, fy));
                if accepted.len() == max_count {
                    break;
                }
            }
        }
        accepted
            .into_iter()
            .map(|(fx, fy)| {
                let (x, y) = (fx as usize, fy as usize);
                let ox = parabola_offset(score.get(x - 1, y), score.get(x, y), score.get(x + 1, y));
                let oy = parabola_offset(score.get(x, y - 1), score.get(x, y), score.get(x, y + 1));
                (fx + ox, fy + oy)
            })
            .collect()
    }

    fn pyramid(&self, image: &GrayImage) -> Vec<Image<f64>> {
        let mut levels = vec![image.to_f64()];
        while levels.len() < self.pyramid_levels {
            let last = levels.last().unwrap();
            if last.width() / 2 < self.patch_size + 4 || last.height() / 2 < self.patch_size + 4 {
                break;
            }
            levels.push(last.downsample());
        }
        levels
    }

    /// Tracks each point from `prev` into `next`; `None` marks a lost point.
    pub fn track_points(&self, prev: &GrayImage, next: &GrayImage, points: &[(f64, f64)]) -> Vec<Option<(f64, f64)>> {
        let prev_pyr = self.pyramid(prev);
        let next_pyr = self.pyramid(next);
        points
            .iter()
            .map(|&p| self.track_one(&prev_pyr, &next_pyr, p))
            .collect()
    }

    /// Tracks forward and back again; points whose round trip misses the
    /// start by more than `max_fb_error` are dropped.
    pub fn track_points_checked(&self, prev: &GrayImage, next: &GrayImage, points: &[(f64, f64)]) -> Vec<Option<(f64, f64)>> {
        let prev_pyr = self.pyramid(prev);
        let next_pyr = self.pyramid(next);
        points
            .iter()
            .map(|&p| {
                let q = self.track_one(&prev_pyr, &next_pyr, p)?;
                let back = self.track_one(&next_pyr, &prev_pyr, q)?;
                ((back.0 - p.0).hypot(back.1 - p.1) <= self.max_fb_error).then_some(q)
            })
            .collect()
    }

    fn track_one(&self, prev: &[Image<f64>], next: &[Image<f64>], p: (f64, f64)) -> Option<(f64, f64)> {
        let levels = prev.len().min(next.len());
        let half = (self.patch_size as f64 - 1.0) / 2.0;
        let offsets: Vec<f64> = (0..self.patch_size).map(|i| i as f64 - half).collect();
        let (mut dx, mut dy) = (0.0, 0.0);
        let (mut gain, mut bias) = (1.0, 0.0);
        for level in (0..levels).rev() {
            let s = 0.5f64.powi(level as i32);
            let at = ((p.0 + 0.5) * s - 0.5, (p.1 + 0.5) * s - 0.5);
            let mut state = [dx, dy, gain, bias];
            let ok = self.refine_level(&prev[level], &next[level], at, &offsets, &mut state);
            if ok {
                [dx, dy, gain, bias] = state;
            } else if level == 0 {
                return None;
            }
            // Coarse levels where the patch does not fit are skipped.
            if level > 0 {
                dx *= 2.0;
                dy *= 2.0;
            }
        }
        let q = (p.0 + dx, p.1 + dy);
        let base = &next[0];
        let inside = q.0 - half >= 0.0
            && q.1 - half >= 0.0
            && q.0 + half <= (base.width() - 1) as f64
            && q.1 + half <= (base.height() - 1) as f64;
        // Residual of the final iterate at the finest level.
        let final_abs = {
            let mut sum = 0.0;
            let tpl = &prev[0];
            for &oy in &offsets {
                for &ox in &offsets {
                    let v = base.sample(q.0 + ox, q.1 + oy)?;
                    let t = tpl.sample(p.0 + ox, p.1 + oy)?;
                    sum += (v - (gain * t + bias)).abs();
                }
            }
            sum / (offsets.len() * offsets.len()) as f64
        };
        (inside && final_abs <= self.loss_threshold).then_some(q)
    }
}

impl TrackerConfig {
    /// Re-solves the full-resolution alignment of the patch at `anchor` in
    /// `tpl` against `img`, starting from `guess`. Rejected when the
    /// refinement wanders off the guess or the patch residual is too large.
    fn refine_against(&self, tpl: &Image<f64>, img: &Image<f64>, anchor: (f64, f64), guess: (f64, f64)) -> Option<(f64, f64)> {
        let half = (self.patch_size as f64 - 1.0) / 2.0;
        let offsets: Vec<f64> = (0..self.patch_size).map(|i| i as f64 - half).collect();
        let mut state = [guess.0 - anchor.0, guess.1 - anchor.1, 1.0, 0.0];
        if !self.refine_level(tpl, img, anchor, &offsets, &mut state) {
            return None;
        }
        let q = (anchor.0 + state[0], anchor.1 + state[1]);
        if (q.0 - guess.0).hypot(q.1 - guess.1) > 1.0 {
            return None;
        }
        let mut sum = 0.0;
        for &oy in &offsets {
            for &ox in &offsets {
                let v = img.sample(q.0 + ox, q.1 + oy)?;
                let t = tpl.sample(anchor.0 + ox, anchor.1 + oy)?;
                sum += (v - (state[2] * t + state[3])).abs();
            }
        }
        (sum / (offsets.len() * offsets.len()) as f64 <= self.loss_threshold).then_some(q)
    }

    /// Gauss-Newton on `(dx, dy, gain, bias)` at one pyramid level. Returns
    /// false if the patch leaves the image or the system is degenerate.
    fn refine_level(&self, tpl: &Image<f64>, img: &Image<f64>, at: (f64, f64), offsets: &[f64], state: &mut [f64; 4]) -> bool {
        let mut template = Vec::with_capacity(offsets.len() * offsets.len());
        for &oy in offsets {
            for &ox in offsets {
                match tpl.sample(at.0 + ox, at.1 + oy) {
                    Some(v) => template.push(v),
                    None => return false,
                }
            }
        }
        let [mut dx, mut dy, mut gain, mut bias] = *state;
        for _ in 0..self.max_iterations {
            let mut h = Matrix4::<f64>::zeros();
            let mut g = Vector4::<f64>::zeros();
            let mut k = 0;
            for &oy in offsets {
                for &ox in offsets {
                    let Some((v, gx, gy)) = img.sample_with_gradient(at.0 + dx + ox, at.1 + dy + oy) else {
                        return false;
                    };
                    let t = template[k];
                    k += 1;
                    let r = v - (gain * t + bias);
                    let jac = Vector4::new(gx, gy, -t, -1.0);
                    h += jac * jac.transpose();
                    g += jac * r;
                }
            }
            let Some(chol) = h.cholesky() else {
                return false;
            };
            let step = chol.solve(&(-g));
            dx += step[0];
            dy += step[1];
            gain += step[2];
            bias += step[3];
            if !(gain > 0.0) || !dx.is_finite() || !dy.is_finite() {
                return false;
            }
            if step[0].hypot(step[1]) < CONVERGENCE_STEP {
                break;
            }
        }
        *state = [dx, dy, gain, bias];
        true
    }
}

/// Corner detection with default parameters.
pub fn detect_corners(frame: &Frame, max_count: usize) -> Vec<(f64, f64)> {
    TrackerConfig::default().detect_corners(&frame.image, max_count)
}

/// Pyramidal tracking with default parameters.
pub fn track_points(prev: &Frame, next: &Frame, points: &[(f64, f64)]) -> Vec<Option<(f64, f64)>> {
    TrackerConfig::default().track_points(&prev.image, &next.image, points)
}

/// Intensity and radius at one point of the sampling pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSample {
    pub intensity: f64,
    pub radius: f64,
}

/// One observation of a tracked point.
///
/// Besides the point itself, the observation keeps the sparse pattern around
/// it. The tracker aligns whole patches, so every pattern point is a
/// correspondence of its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub frame_id: u64,
    pub x: f64,
    pub y: f64,
    /// Bilinear-sampled intensity.
    pub intensity: f64,
    /// Normalized radius.
    pub radius: f64,
    /// Samples at [`SPARSE_PATTERN`]; `None` where the sample leaves the
    /// image or reads a saturated pixel.
    pub pattern: [Option<PatternSample>; 8],
}

impl Observation {
    /// Samples intensity and radius from `frame`; `None` outside the image.
    pub fn sample(frame: &Frame, x: f64, y: f64) -> Option<Self> {
        let intensity = frame.image.sample(x, y)?;
        let pattern = SPARSE_PATTERN.map(|(dx, dy)| {
            let (px, py) = (x + dx, y + dy);
            let footprint = frame.image.footprint(px, py)?;
            if !footprint.iter().all(|&m| is_unsaturated(m as f64)) {
                return None;
            }
            Some(PatternSample {
                intensity: frame.image.sample(px, py)?,
                radius: frame.radius(px, py),
            })
        });
        Some(Self {
            frame_id: frame.id(),
            x,
            y,
            intensity,
            radius: frame.radius(x, y),
            pattern,
        })
    }

    /// True when the centre sample is usable.
    pub fn unsaturated(&self) -> bool {
        self.pattern[PATTERN_CENTER].is_some()
    }
}

/// Observations of one point in increasing frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub observations: Vec<Observation>,
}

/// Collection of tracks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    /// Builds tracks from raw `(track_id, frame_id, x, y)` rows, recomputing
    /// intensity and radius from `frames`. Tracks with fewer than two
    /// observations are dropped.
    pub fn from_rows(rows: &[(u64, u64, f64, f64)], frames: &BTreeMap<u64, Frame>) -> Result<Self> {
        let mut grouped: BTreeMap<u64, Vec<Observation>> = BTreeMap::new();
        for (i, &(track_id, frame_id, x, y)) in rows.iter().enumerate() {
            let frame = frames
                .get(&frame_id)
                .ok_or_else(|| Error::Data(format!("row {}: unknown frame {frame_id}", i + 1)))?;
            let obs = Observation::sample(frame, x, y).ok_or_else(|| {
                Error::Data(format!("row {}: ({x}, {y}) outside frame {frame_id}", i + 1))
            })?;
            grouped.entry(track_id).or_default().push(obs);
        }
        let mut tracks = Vec::new();
        for (id, mut observations) in grouped {
            observations.sort_by_key(|o| o.frame_id);
            if observations.windows(2).any(|w| w[0].frame_id == w[1].frame_id) {
                return Err(Error::Data(format!("track {id} observes a frame twice")));
            }
            if observations.len() >= 2 {
                tracks.push(Track { id, observations });
            }
        }
        Ok(Self { tracks })
    }

    /// Flattens back into `(track_id, frame_id, x, y)` rows.
    pub fn rows(&self) -> Vec<(u64, u64, f64, f64)> {
        self.tracks
            .iter()
            .flat_map(|t| t.observations.iter().map(move |o| (t.id, o.frame_id, o.x, o.y)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Incremental tracker over a frame sequence.
#[derive(Debug, Clone)]
pub struct SequenceTracker {
    pub config: TrackerConfig,
    /// Number of simultaneously tracked points.
    pub max_tracks: usize,
    tracks: Vec<Track>,
    /// Indices into `tracks` of the points alive in the last frame.
    active: Vec<usize>,
    /// Anchor `(frame_id, x, y)` per track.
    anchors: Vec<(u64, f64, f64)>,
    /// Recent frames as floating-point images, oldest first.
    recent: VecDeque<(u64, Image<f64>)>,
    last: Option<Frame>,
    next_id: u64,
}

impl SequenceTracker {
    pub fn new(config: TrackerConfig, max_tracks: usize) -> Self {
        Self {
            config,
            max_tracks,
            tracks: Vec::new(),
            active: Vec::new(),
            anchors: Vec::new(),
            recent: VecDeque::new(),
            last: None,
            next_id: 0,
        }
    }

    /// Tracks live points into `frame` and tops them up with new detections.
    pub fn push(&mut self, frame: &Frame) -> Result<()> {
        if let Some(last) = &self.last {
            if frame.id() <= last.id() {
                return Err(Error::Sequence(format!(
                    "frame {} after frame {}",
                    frame.id(),
                    last.id()
                )));
            }
            let points: Vec<(f64, f64)> = self
                .active
                .iter()
                .map(|&i| {
                    let o = self.tracks[i].observations.last().unwrap();
                    (o.x, o.y)
                })
                .collect();
            let tracked = self.config.track_points_checked(&last.image, &frame.image, &points);
            let current = frame.image.to_f64();
            let mut alive = Vec::with_capacity(self.active.len());
            for (&i, q) in self.active.iter().zip(tracked) {
                let q = q.and_then(|q| self.anchored(i, &current, q));
                if let Some(obs) = q.and_then(|(x, y)| Observation::sample(frame, x, y)) {
                    self.tracks[i].observations.push(obs);
                    alive.push(i);
                }
            }
            self.active = alive;
            // Anchors that reached the end of their span move to this frame.
            for &i in &self.active {
                let o = self.tracks[i].observations.last().unwrap();
                if self.anchors[i].0 + self.config.anchor_span as u64 <= frame.id() {
                    self.anchors[i] = (o.frame_id, o.x, o.y);
                }
            }
        }
        if self.active.len() < self.max_tracks {
            let existing: Vec<(f64, f64)> = self
                .active
                .iter()
                .map(|&i| {
                    let o = self.tracks[i].observations.last().unwrap();
                    (o.x, o.y)
                })
                .collect();
            let fresh = self.config.detect_corners_avoiding(
                &frame.image,
                self.max_tracks - self.active.len(),
                &existing,
            );
            for (x, y) in fresh {
                if let Some(obs) = Observation::sample(frame, x, y) {
                    self.active.push(self.tracks.len());
                    self.anchors.push((obs.frame_id, obs.x, obs.y));
                    self.tracks.push(Track {
                        id: self.next_id,
                        observations: vec![obs],
                    });
                    self.next_id += 1;
                }
            }
        }
        if self.config.anchor_span > 0 {
            self.recent.push_back((frame.id(), frame.image.to_f64()));
            while self.recent.len() > self.config.anchor_span {
                self.recent.pop_front();
            }
        }
        self.last = Some(frame.clone());
        Ok(())
    }

    /// Refines a chained estimate against the track's anchor patch. Falls
    /// back to the chained estimate when the anchor is unavailable; a failed
    /// refinement loses the point.
    fn anchored(&self, track: usize, current: &Image<f64>, q: (f64, f64)) -> Option<(f64, f64)> {
        if self.config.anchor_span == 0 {
            return Some(q);
        }
        let (fid, ax, ay) = self.anchors[track];
        let Some((_, tpl)) = self.recent.iter().find(|(id, _)| *id == fid) else {
            return Some(q);
        };
        self.config.refine_against(tpl, current, (ax, ay), q)
    }

    /// Tracks spanning at least two frames.
    pub fn track_set(&self) -> TrackSet {
        TrackSet {
            tracks: self
                .tracks
                .iter()
                .filter(|t| t.observations.len() >= 2)
                .cloned()
                .collect(),
        }
    }

    /// Tracks whose latest observation is in the most recent frame.
    pub fn live_tracks(&self) -> impl Iterator<Item = &Track> {
        self.active.iter().map(move |&i| &self.tracks[i])
    }
}

/// Which radius relation a pair must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// `|r1 - r2| < rho`: the vignette cancels.
    SameRadius,
    /// `|r1 - r2| >= rho`: the vignette ratio is exposed.
    RadialMotion,
    /// Every pair regardless of radius.
    Any,
}

/// Two observations of one scene point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    pub frame1: u64,
    pub frame2: u64,
    pub m1: f64,
    pub m2: f64,
    pub r1: f64,
    pub r2: f64,
    pub e1: f64,
    pub e2: f64,
}

/// Rules for turning tracks into correspondence pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSelector {
    pub mode: PairMode,
    /// Same-radius threshold on normalized radius.
    pub rho: f64,
    /// Largest frame-id gap between the two observations.
    pub max_gap: u64,
}

impl PairSelector {
    pub fn new(mode: PairMode) -> Self {
        Self {
            mode,
            rho: 0.02,
            max_gap: 15,
        }
    }

    /// True when the centres of `(a, b)` form an admissible pair.
    pub fn accepts(&self, a: &Observation, b: &Observation) -> bool {
        if b.frame_id <= a.frame_id || b.frame_id - a.frame_id > self.max_gap {
            return false;
        }
        a.unsaturated() && b.unsaturated() && self.admits(a.radius, b.radius)
    }

    fn admits(&self, r1: f64, r2: f64) -> bool {
        let dr = (r1 - r2).abs();
        match self.mode {
            PairMode::SameRadius => dr < self.rho,
            PairMode::RadialMotion => dr >= self.rho,
            PairMode::Any => true,
        }
    }

    /// All admissible pairs, one per pattern point usable in both
    /// observations, ordered by track, then observation, then pattern point.
    pub fn extract(&self, tracks: &TrackSet, exposures: &[ExposureRecord]) -> Result<Vec<CorrespondencePair>> {
        self.extract_filtered(tracks.tracks.iter(), exposures, None)
    }

    /// Admissible pairs whose second observation lies in `frame_id`.
    pub fn extract_ending_at<'a>(
        &self,
        tracks: impl Iterator<Item = &'a Track>,
        exposures: &[ExposureRecord],
        frame_id: u64,
    ) -> Result<Vec<CorrespondencePair>> {
        self.extract_filtered(tracks, exposures, Some(frame_id))
    }

    fn extract_filtered<'a>(
        &self,
        tracks: impl Iterator<Item = &'a Track>,
        exposures: &[ExposureRecord],
        ending_at: Option<u64>,
    ) -> Result<Vec<CorrespondencePair>> {
        let lookup: BTreeMap<u64, f64> = exposures.iter().map(|e| (e.frame_id, e.exposure)).collect();
        let exposure_of = |id: u64| {
            lookup
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Data(format!("no exposure record for frame {id}")))
        };
        let mut pairs = Vec::new();
        for track in tracks {
            for obs in &track.observations {
                exposure_of(obs.frame_id)?;
            }
            let obs = &track.observations;
            for j in 0..obs.len() {
                if ending_at.is_some_and(|f| obs[j].frame_id != f) {
                    continue;
                }
                for i in 0..j {
                    let (a, b) = (&obs[i], &obs[j]);
                    if b.frame_id <= a.frame_id || b.frame_id - a.frame_id > self.max_gap {
                        continue;
                    }
                    for (pa, pb) in a.pattern.iter().zip(&b.pattern) {
                        let (Some(pa), Some(pb)) = (pa, pb) else {
                            continue;
                        };
                        if !self.admits(pa.radius, pb.radius) {
                            continue;
                        }
                        pairs.push(CorrespondencePair {
                            frame1: a.frame_id,
                            frame2: b.frame_id,
                            m1: pa.intensity,
                            m2: pb.intensity,
                            r1: pa.radius,
                            r2: pb.radius,
                            e1: exposure_of(a.frame_id)?,
                            e2: exposure_of(b.frame_id)?,
                        });
                    }
                }
            }
        }
        Ok(pairs)
    }
}

/// Pairs under `mode` with default thresholds.
pub fn extract_pairs(tracks: &TrackSet, exposures: &[ExposureRecord], mode: PairMode) -> Result<Vec<CorrespondencePair>> {
    PairSelector::new(mode).extract(tracks, exposures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::checkerboard_image;

    fn frame(image: GrayImage, id: u64) -> Frame {
        Frame::new(image, ExposureRecord::new(id, id as f64, 1.0).unwrap()).unwrap()
    }

    fn smooth_texture(w: usize, h: usize, shift: f64) -> GrayImage {
        Image::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64 - shift, y as f64);
            let v = 120.0 + 50.0 * (x * 0.21).sin() * (y * 0.17).cos() + 40.0 * ((x + 2.0 * y) * 0.09).sin();
            v.round().clamp(0.0, 255.0) as u8
        })
    }

    #[test]
    fn constant_frame_has_no_corners() {
        let f = frame(Image::filled(64, 64, 90), 0);
        assert!(detect_corners(&f, 50).is_empty());
    }

    #[test]
    fn checkerboard_corners_found() {
        let img = checkerboard_image(96, 80, 16, 8, 30, 220);
        let corners = TrackerConfig::default().detect_corners(&img, 100);
        assert!(!corners.is_empty());
        for &(x, y) in &corners {
            // True corners sit between pixels offset + 16k - 1 and offset + 16k.
            let nearest = |v: f64| {
                let k = ((v - 7.5) / 16.0).round();
                7.5 + 16.0 * k
            };
            assert!((x - nearest(x)).abs() <= 1.0 && (y - nearest(y)).abs() <= 1.0, "({x}, {y})");
        }
    }

    #[test]
    fn detection_is_deterministic_and_sorted() {
        let img = smooth_texture(80, 64, 0.0);
        let cfg = TrackerConfig::default();
        let a = cfg.detect_corners(&img, 30);
        let b = cfg.detect_corners(&img, 30);
        assert_eq!(a, b);
        assert!(a.len() <= 30);
        for (i, p) in a.iter().enumerate() {
            for q in &a[i + 1..] {
                assert!((p.0 - q.0).hypot(p.1 - q.1) >= cfg.nms_radius - 1.0);
            }
        }
    }

    #[test]
    fn zero_motion_tracks_in_place() {
        let img = smooth_texture(96, 80, 0.0);
        let f = frame(img, 0);
        let pts = detect_corners(&f, 20);
        assert!(!pts.is_empty());
        for (p, q) in pts.iter().zip(track_points(&f, &f, &pts)) {
            let q = q.expect("tracked");
            assert!((q.0 - p.0).abs() < 1e-6 && (q.1 - p.1).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_recovered() {
        let a = frame(smooth_texture(120, 96, 0.0), 0);
        let b = frame(smooth_texture(120, 96, 3.0), 1);
        let pts: Vec<_> = detect_corners(&a, 30)
            .into_iter()
            .filter(|p| p.0 < 100.0)
            .collect();
        let out = track_points(&a, &b, &pts);
        let mut tracked = 0;
        for (p, q) in pts.iter().zip(out) {
            if let Some(q) = q {
                tracked += 1;
                assert!((q.0 - p.0 - 3.0).abs() <= 0.5 && (q.1 - p.1).abs() <= 0.5, "{p:?} -> {q:?}");
            }
        }
        assert!(tracked * 10 >= pts.len() * 8);
    }

    #[test]
    fn brightness_change_tolerated() {
        let a = smooth_texture(120, 96, 0.0);
        let b = smooth_texture(120, 96, 2.0).map(|m| ((m as f64) * 1.15 + 4.0).round().min(255.0) as u8);
        let cfg = TrackerConfig::default();
        let pts: Vec<_> = cfg.detect_corners(&a, 30).into_iter().filter(|p| p.0 < 100.0).collect();
        let out = cfg.track_points(&a, &b, &pts);
        let ok = out.iter().zip(&pts).filter(|(q, p)| q.is_some_and(|q| (q.0 - p.0 - 2.0).abs() < 0.5)).count();
        assert!(ok * 10 >= pts.len() * 8);
    }

    #[test]
    fn fully_shifted_out_of_view_is_lost() {
        let a = frame(smooth_texture(96, 80, 0.0), 0);
        let b = frame(Image::filled(96, 80, 0), 1);
        let pts = detect_corners(&a, 20);
        assert!(track_points(&a, &b, &pts).iter().all(|q| q.is_none()));
    }

    #[test]
    fn forward_backward_consistency() {
        let cfg = TrackerConfig::default();
        let a = smooth_texture(120, 96, 0.0);
        let b = smooth_texture(120, 96, 1.7);
        let pts: Vec<_> = cfg.detect_corners(&a, 30).into_iter().filter(|p| p.0 < 100.0).collect();
        let fwd = cfg.track_points(&a, &b, &pts);
        for (p, q) in pts.iter().zip(fwd) {
            if let Some(q) = q {
                if let Some(back) = cfg.track_points(&b, &a, &[q])[0] {
                    assert!((back.0 - p.0).hypot(back.1 - p.1) < 0.5);
                }
            }
        }
    }

    fn obs(frame_id: u64, intensity: f64, radius: f64) -> Observation {
        Observation {
            frame_id,
            x: 0.0,
            y: 0.0,
            intensity,
            radius,
            pattern: std::array::from_fn(|k| {
                (k == PATTERN_CENTER && is_unsaturated(intensity)).then_some(PatternSample { intensity, radius })
            }),
        }
    }

    fn exposures(n: u64) -> Vec<ExposureRecord> {
        (0..n).map(|i| ExposureRecord::new(i, i as f64, 1.0 + i as f64).unwrap()).collect()
    }

    #[test]
    fn same_radius_rule() {
        let constant = TrackSet {
            tracks: vec![Track {
                id: 0,
                observations: vec![obs(0, 100.0, 0.4), obs(1, 120.0, 0.4)],
            }],
        };
        let pairs = extract_pairs(&constant, &exposures(2), PairMode::SameRadius).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].e1, pairs[0].e2), (1.0, 2.0));
        let moving = TrackSet {
            tracks: vec![Track {
                id: 0,
                observations: vec![obs(0, 100.0, 0.4), obs(1, 120.0, 0.7)],
            }],
        };
        assert!(extract_pairs(&moving, &exposures(2), PairMode::SameRadius).unwrap().is_empty());
        assert_eq!(extract_pairs(&moving, &exposures(2), PairMode::RadialMotion).unwrap().len(), 1);
    }

    #[test]
    fn saturated_and_missing_exposure() {
        let t = TrackSet {
            tracks: vec![Track {
                id: 0,
                observations: vec![obs(0, 252.0, 0.4), obs(1, 120.0, 0.4), obs(2, 100.0, 0.4)],
            }],
        };
        let pairs = extract_pairs(&t, &exposures(3), PairMode::Any).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].frame1, pairs[0].frame2), (1, 2));
        assert!(matches!(extract_pairs(&t, &exposures(2), PairMode::Any), Err(Error::Data(_))));
    }
}
