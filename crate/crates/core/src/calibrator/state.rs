//! Sequential calibration state machine.
//!
//! Phases advance strictly forward: response, then vignette, then exposure
//! validation, then frozen. Pairs are pooled from the first frame on; the
//! phase decides which estimator consumes them. In the validating phase every
//! frame contributes one pass/fail verdict. Once the window is full both
//! estimates are refreshed from the grown pools. If enough verdicts passed
//! and the refreshed estimates pass the same frame pairs as well, the
//! refreshed snapshot is frozen; otherwise the window restarts.

use std::collections::VecDeque;
use std::fmt;

use crate::calibrator::crf::{check_exposure_diversity, CrfEstimator};
use crate::calibrator::validation::{validate_exposure, ValidationReport};
use crate::calibrator::vignette::VignetteEstimator;
use crate::error::{Error, Result};
use crate::photometry::{CalibrationSnapshot, ExposureRecord, Frame, InverseResponse, VignetteModel};
use crate::tracker::{CorrespondencePair, PairMode, PairSelector, Track};

/// Calibration phase, ordered by progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    CollectingCrf,
    CollectingVignette,
    Validating,
    Frozen,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::CollectingCrf => "collecting-crf",
            Phase::CollectingVignette => "collecting-vignette",
            Phase::Validating => "validating",
            Phase::Frozen => "frozen",
        })
    }
}

/// Thresholds of the online calibrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratorConfig {
    pub crf: CrfEstimator,
    pub vignette: VignetteEstimator,
    /// Same-radius threshold on normalized radius.
    pub rho: f64,
    /// Largest frame gap of a correspondence pair.
    pub max_gap: u64,
    /// Relative validation error that counts as a pass.
    pub epsilon: f64,
    /// Number of frame pairs in the validation window.
    pub window: usize,
    /// Fraction of passing frame pairs needed to freeze.
    pub pass_fraction: f64,
    /// Frame pairs with fewer correspondences are not validated.
    pub min_validation_points: usize,
}

impl Default for CalibratorConfig {
    fn default() -> Self {
        Self {
            crf: CrfEstimator::default(),
            vignette: VignetteEstimator::default(),
            rho: 0.02,
            max_gap: 15,
            epsilon: 0.02,
            window: 30,
            pass_fraction: 0.9,
            min_validation_points: 20,
        }
    }
}

impl CalibratorConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::Config(what.into())) };
        check(self.rho > 0.0 && self.rho < 1.0, "rho must lie in (0, 1)")?;
        check(self.epsilon > 0.0 && self.epsilon < 1.0, "epsilon must lie in (0, 1)")?;
        check(self.window >= 1, "window must be at least 1")?;
        check(
            self.pass_fraction > 0.0 && self.pass_fraction <= 1.0,
            "pass fraction must lie in (0, 1]",
        )?;
        check(self.max_gap >= 1, "max gap must be at least 1")?;
        check(self.min_validation_points >= 1, "validation needs at least one point")?;
        check(
            self.vignette.min_coverage > 0.0 && self.vignette.min_coverage <= 1.0,
            "radial coverage must lie in (0, 1]",
        )?;
        check(self.crf.smoothness > 0.0, "smoothness must be positive")?;
        Ok(())
    }

    fn selector(&self) -> PairSelector {
        PairSelector {
            mode: PairMode::Any,
            rho: self.rho,
            max_gap: self.max_gap,
        }
    }
}

/// Why the current phase has not advanced yet.
#[derive(Debug, Clone, PartialEq)]
pub enum Blocker {
    NotReady(String),
    Unobservable(String),
}

/// Online calibration state. Exactly one owner advances it.
#[derive(Debug, Clone)]
pub struct CalibrationState {
    config: CalibratorConfig,
    phase: Phase,
    same_radius: Vec<CorrespondencePair>,
    radial: Vec<CorrespondencePair>,
    exposures: Vec<ExposureRecord>,
    response: Option<InverseResponse>,
    vignette: Option<VignetteModel>,
    /// Recent verdicts with the frame pair each was computed on.
    window: VecDeque<(bool, Vec<CorrespondencePair>)>,
    last_report: Option<ValidationReport>,
    snapshot: Option<CalibrationSnapshot>,
    blocker: Option<Blocker>,
    log: Vec<String>,
    refinements: usize,
}

impl CalibrationState {
    pub fn new(config: CalibratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            phase: Phase::CollectingCrf,
            same_radius: Vec::new(),
            radial: Vec::new(),
            exposures: Vec::new(),
            response: None,
            vignette: None,
            window: VecDeque::new(),
            last_report: None,
            snapshot: None,
            blocker: None,
            log: Vec::new(),
            refinements: 0,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn config(&self) -> &CalibratorConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Option<&CalibrationSnapshot> {
        self.snapshot.as_ref()
    }

    pub fn response(&self) -> Option<&InverseResponse> {
        self.response.as_ref()
    }

    pub fn vignette(&self) -> Option<&VignetteModel> {
        self.vignette.as_ref()
    }

    pub fn last_report(&self) -> Option<&ValidationReport> {
        self.last_report.as_ref()
    }

    pub fn blocker(&self) -> Option<&Blocker> {
        self.blocker.as_ref()
    }

    pub fn pair_count(&self) -> usize {
        self.same_radius.len() + self.radial.len()
    }

    pub fn same_radius_pairs(&self) -> &[CorrespondencePair] {
        &self.same_radius
    }

    pub fn radial_pairs(&self) -> &[CorrespondencePair] {
        &self.radial
    }

    /// Number of times a full window refreshed the estimates.
    pub fn refinements(&self) -> usize {
        self.refinements
    }

    /// Progress lines, one per accepted frame.
    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Consumes one frame together with the tracks observed up to it. Only
    /// pairs whose second observation lies in `frame` are added.
    ///
    /// A frozen state ignores further frames.
    pub fn feed_frame<'a>(&mut self, frame: &Frame, tracks: impl IntoIterator<Item = &'a Track>) -> Result<Phase> {
        if self.phase == Phase::Frozen {
            return Ok(self.phase);
        }
        if let Some(last) = self.exposures.last() {
            if frame.id() <= last.frame_id {
                return Err(Error::Sequence(format!(
                    "frame {} arrived after frame {}",
                    frame.id(),
                    last.frame_id
                )));
            }
        }
        self.exposures.push(frame.exposure);

        let pairs = self
            .config
            .selector()
            .extract_ending_at(tracks.into_iter(), &self.exposures, frame.id())?;
        for p in &pairs {
            if (p.r1 - p.r2).abs() < self.config.rho {
                self.same_radius.push(*p);
            } else {
                self.radial.push(*p);
            }
        }

        if self.phase == Phase::CollectingCrf {
            match self.config.crf.estimate(&self.same_radius) {
                Ok(ir) => {
                    self.response = Some(ir);
                    self.phase = Phase::CollectingVignette;
                    self.blocker = None;
                }
                Err(e) => self.block(e)?,
            }
        }
        if self.phase == Phase::CollectingVignette {
            let ir = self.response.as_ref().expect("response set before vignette phase");
            match self.config.vignette.estimate(&self.radial, ir) {
                Ok(v) => {
                    self.vignette = Some(v);
                    self.phase = Phase::Validating;
                    self.blocker = None;
                }
                Err(e) => self.block(e)?,
            }
        }
        let mut k_err = f64::NAN;
        if self.phase == Phase::Validating {
            if let Some((report, group)) = self.validate_frame(&pairs)? {
                k_err = report.relative_error;
                self.window.push_back((report.relative_error < self.config.epsilon, group));
                if self.window.len() > self.config.window {
                    self.window.pop_front();
                }
                let rate = self.pass_rate();
                self.last_report = Some(ValidationReport {
                    window_pass_rate: Some(rate),
                    ..report
                });
                if self.window.len() == self.config.window {
                    let passed = rate >= self.config.pass_fraction;
                    self.refine()?;
                    if passed {
                        self.try_freeze()?;
                    } else {
                        self.window.clear();
                    }
                }
            }
        }
        let line = format!("phase={} pairs={} k_err={k_err:.6}", self.phase, self.pair_count());
        log::info!("frame={} {line}", frame.id());
        self.log.push(line);
        Ok(self.phase)
    }

    fn block(&mut self, e: Error) -> Result<()> {
        match e {
            Error::NotReady(msg) => self.blocker = Some(Blocker::NotReady(msg)),
            Error::Unobservable(msg) => self.blocker = Some(Blocker::Unobservable(msg)),
            other => return Err(other),
        }
        Ok(())
    }

    fn pass_rate(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|(p, _)| *p).count() as f64 / self.window.len() as f64
    }

    /// Re-validates the window's frame pairs with the current estimates and
    /// freezes if enough of them still pass. Clears the window otherwise.
    fn try_freeze(&mut self) -> Result<()> {
        let (Some(ir), Some(v)) = (self.response.clone(), self.vignette) else {
            self.window.clear();
            return Ok(());
        };
        let mut last = None;
        let mut passes = 0;
        for (_, group) in &self.window {
            let report = validate_exposure(group, &ir, &v)?;
            if report.relative_error < self.config.epsilon {
                passes += 1;
            }
            last = Some(report);
        }
        let rate = passes as f64 / self.window.len() as f64;
        let Some(report) = last else {
            return Ok(());
        };
        let report = ValidationReport {
            window_pass_rate: Some(rate),
            ..report
        };
        self.last_report = Some(report);
        if rate >= self.config.pass_fraction {
            self.snapshot = Some(CalibrationSnapshot::frozen(ir, v, report));
            self.phase = Phase::Frozen;
        } else {
            self.window.clear();
        }
        Ok(())
    }

    /// Validates the earlier frame that shares enough points with the new
    /// one and differs most in exposure.
    fn validate_frame(&self, pairs: &[CorrespondencePair]) -> Result<Option<(ValidationReport, Vec<CorrespondencePair>)>> {
        let mut best: Option<(f64, u64)> = None;
        let mut frames: Vec<u64> = pairs.iter().map(|p| p.frame1).collect();
        frames.sort_unstable();
        frames.dedup();
        for f in frames {
            let group: Vec<&CorrespondencePair> = pairs.iter().filter(|p| p.frame1 == f).collect();
            if group.len() < self.config.min_validation_points {
                continue;
            }
            let spread = (group[0].e1 / group[0].e2).ln().abs();
            if best.is_none_or(|(s, _)| spread >= s) {
                best = Some((spread, f));
            }
        }
        let Some((_, f)) = best else {
            return Ok(None);
        };
        let group: Vec<CorrespondencePair> = pairs.iter().filter(|p| p.frame1 == f).copied().collect();
        let report = validate_exposure(&group, self.response.as_ref().unwrap(), self.vignette.as_ref().unwrap())?;
        Ok(Some((report, group)))
    }

    /// Re-estimates both models from everything pooled so far. The window is
    /// kept so the caller can re-check it.
    fn refine(&mut self) -> Result<()> {
        self.refinements += 1;
        match self.config.crf.estimate(&self.same_radius) {
            Ok(ir) => self.response = Some(ir),
            Err(e) => return self.block(e),
        }
        match self.config.vignette.estimate(&self.radial, self.response.as_ref().unwrap()) {
            Ok(v) => self.vignette = Some(v),
            Err(e) => return self.block(e),
        }
        Ok(())
    }

    /// Final verdict once the input is exhausted.
    pub fn finish(&self) -> Result<CalibrationSnapshot> {
        if let Some(s) = &self.snapshot {
            return Ok(s.clone());
        }
        // A constant exposure schedule is reported even before enough pairs exist.
        check_exposure_diversity(&self.same_radius)?;
        match &self.blocker {
            Some(Blocker::Unobservable(msg)) => Err(Error::Unobservable(msg.clone())),
            Some(Blocker::NotReady(msg)) => Err(Error::NotReady(format!(
                "sequence ended in phase {}: {msg}",
                self.phase
            ))),
            None => Err(Error::NotReady(format!(
                "sequence ended in phase {} before validation passed (window pass rate {:.2})",
                self.phase,
                self.pass_rate()
            ))),
        }
    }
}
