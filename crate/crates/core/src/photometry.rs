//! Image formation model, calibration parameter types and frame
//! rectification.
//!
//! A pixel with scene radiance `L` at normalized radius `r`, captured with
//! exposure `e`, records the intensity `M = f(e * V(r) * L)`. Calibration
//! recovers `f^-1` as a lookup table and `V` as an even polynomial; both are
//! only defined up to ratios, so the table is pinned to `0` at intensity 0 and
//! `1` at intensity 255.

use crate::calibrator::ValidationReport;
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image};

/// Lowest intensity treated as unsaturated.
pub const SATURATION_LOW: u8 = 5;
/// Highest intensity treated as unsaturated.
pub const SATURATION_HIGH: u8 = 250;

/// True when an intensity (possibly fractional) lies inside the range where
/// the ratio model holds.
#[inline]
pub fn is_unsaturated(m: f64) -> bool {
    m >= SATURATION_LOW as f64 && m <= SATURATION_HIGH as f64
}

/// Sparse eight-point sampling pattern around a point, as `(dx, dy)`.
pub const SPARSE_PATTERN: [(f64, f64); 8] = [
    (0.0, -2.0),
    (-1.0, -1.0),
    (1.0, -1.0),
    (-2.0, 0.0),
    (0.0, 0.0),
    (2.0, 0.0),
    (-1.0, 1.0),
    (0.0, 2.0),
];

/// Index of the centre in [`SPARSE_PATTERN`].
pub const PATTERN_CENTER: usize = 4;

/// Monotone map from 8-bit intensity to normalized irradiance.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseResponse {
    lut: [f64; 256],
}

impl InverseResponse {
    /// Validates monotonicity and the `lut[0] = 0`, `lut[255] = 1` pinning.
    pub fn new(lut: [f64; 256]) -> Result<Self> {
        if lut.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("response contains non-finite values".into()));
        }
        if lut[0] != 0.0 || lut[255] != 1.0 {
            return Err(Error::InvalidModel(format!(
                "response must satisfy lut[0] = 0 and lut[255] = 1, got {} and {}",
                lut[0], lut[255]
            )));
        }
        if let Some(i) = (1..256).find(|&i| lut[i] < lut[i - 1]) {
            return Err(Error::InvalidModel(format!(
                "response decreases between intensities {} and {i}",
                i - 1
            )));
        }
        Ok(Self { lut })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let lut: [f64; 256] = values.try_into().map_err(|_| {
            Error::InvalidModel(format!("response needs 256 entries, got {}", values.len()))
        })?;
        Self::new(lut)
    }

    pub fn identity() -> Self {
        Self::gamma(1.0)
    }

    /// `lut[M] = (M / 255)^gamma`.
    pub fn gamma(gamma: f64) -> Self {
        assert!(gamma > 0.0, "gamma must be positive");
        let mut lut = [0.0; 256];
        for (m, v) in lut.iter_mut().enumerate() {
            *v = (m as f64 / 255.0).powf(gamma);
        }
        lut[0] = 0.0;
        lut[255] = 1.0;
        Self { lut }
    }

    pub fn lut(&self) -> &[f64; 256] {
        &self.lut
    }

    /// Normalized irradiance for a possibly fractional intensity, linearly
    /// interpolated between table entries.
    pub fn eval(&self, m: f64) -> Result<f64> {
        if !(0.0..=255.0).contains(&m) {
            return Err(Error::Domain(format!("intensity {m} outside [0, 255]")));
        }
        Ok(self.eval_unchecked(m))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, m: f64) -> f64 {
        let i = (m.floor() as usize).min(254);
        let t = m - i as f64;
        if t == 0.0 {
            self.lut[i]
        } else {
            (1.0 - t) * self.lut[i] + t * self.lut[i + 1]
        }
    }

    /// Forward response: the fractional intensity whose interpolated inverse
    /// equals `irradiance`. Inputs are clamped to `[0, 1]`; on flat stretches
    /// the smallest such intensity is returned.
    pub fn forward(&self, irradiance: f64) -> f64 {
        if irradiance.is_nan() || irradiance <= 0.0 {
            return 0.0;
        }
        if irradiance >= 1.0 {
            return 255.0;
        }
        let j = self.lut.partition_point(|&v| v <= irradiance);
        let lo = self.lut[j - 1];
        let hi = self.lut[j];
        (j - 1) as f64 + (irradiance - lo) / (hi - lo)
    }
}

/// Radial attenuation `V(r) = 1 + a2 r^2 + a4 r^4 + a6 r^6` on `r in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VignetteModel {
    coefficients: [f64; 3],
}

/// Radii used to check the attenuation-only invariant.
const VIGNETTE_CHECK_SAMPLES: usize = 1000;

impl VignetteModel {
    /// Builds a model, requiring `0 < V(r) <= 1` on `[0, 1]`.
    pub fn new(a2: f64, a4: f64, a6: f64) -> Result<Self> {
        let model = Self {
            coefficients: [a2, a4, a6],
        };
        if model.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("non-finite vignette coefficient".into()));
        }
        for i in 0..=VIGNETTE_CHECK_SAMPLES {
            let r = i as f64 / VIGNETTE_CHECK_SAMPLES as f64;
            let v = model.eval_unchecked(r);
            if v <= 0.0 {
                return Err(Error::InvalidModel(format!("V({r}) = {v} is not positive")));
            }
            if v > 1.0 + 1e-12 {
                return Err(Error::InvalidModel(format!("V({r}) = {v} exceeds 1")));
            }
        }
        Ok(model)
    }

    pub fn unit() -> Self {
        Self {
            coefficients: [0.0; 3],
        }
    }

    pub fn coefficients(&self) -> [f64; 3] {
        self.coefficients
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("radius {r} outside [0, 1]")));
        }
        let v = self.eval_unchecked(r);
        if v <= 0.0 {
            return Err(Error::InvalidModel(format!("V({r}) = {v} is not positive")));
        }
        Ok(v)
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        let s = r * r;
        let [a2, a4, a6] = self.coefficients;
        1.0 + s * (a2 + s * (a4 + s * a6))
    }
}

/// Per-frame exposure metadata. `exposure` is the complete exposure factor
/// (time times gain) in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureRecord {
    pub frame_id: u64,
    pub timestamp: f64,
    pub exposure: f64,
}

impl ExposureRecord {
    pub fn new(frame_id: u64, timestamp: f64, exposure: f64) -> Result<Self> {
        if !(exposure > 0.0) || !exposure.is_finite() {
            return Err(Error::Data(format!(
                "frame {frame_id}: exposure must be positive, got {exposure}"
            )));
        }
        Ok(Self {
            frame_id,
            timestamp,
            exposure,
        })
    }
}

/// Normalized radius: distance to the principal point divided by the
/// distance from the principal point to the farthest image corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGeometry {
    pub width: usize,
    pub height: usize,
    pub cx: f64,
    pub cy: f64,
    norm: f64,
}

impl RadialGeometry {
    pub fn new(width: usize, height: usize, cx: f64, cy: f64) -> Self {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        let norm = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
            .iter()
            .map(|&(x, y): &(f64, f64)| (x - cx).hypot(y - cy))
            .fold(0.0, f64::max);
        Self {
            width,
            height,
            cx,
            cy,
            norm,
        }
    }

    /// Principal point at the image centre.
    pub fn centered(width: usize, height: usize) -> Self {
        Self::new(width, height, (width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0)
    }

    #[inline]
    pub fn radius(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx).hypot(y - self.cy) / self.norm).min(1.0)
    }
}

/// Minimum frame side length.
pub const MIN_FRAME_SIDE: usize = 16;

/// 8-bit grayscale image with its exposure metadata.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: GrayImage,
    pub exposure: ExposureRecord,
    pub geometry: RadialGeometry,
}

impl Frame {
    /// Frame with the principal point at the image centre.
    pub fn new(image: GrayImage, exposure: ExposureRecord) -> Result<Self> {
        let geometry = RadialGeometry::centered(image.width(), image.height());
        Self::with_geometry(image, exposure, geometry)
    }

    pub fn with_geometry(
        image: GrayImage,
        exposure: ExposureRecord,
        geometry: RadialGeometry,
    ) -> Result<Self> {
        if image.width() < MIN_FRAME_SIDE || image.height() < MIN_FRAME_SIDE {
            return Err(Error::Data(format!(
                "frame {} is {}x{}, minimum is {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}",
                exposure.frame_id,
                image.width(),
                image.height()
            )));
        }
        if geometry.width != image.width() || geometry.height != image.height() {
            return Err(Error::Data("radial geometry does not match image size".into()));
        }
        Ok(Self {
            image,
            exposure,
            geometry,
        })
    }

    pub fn id(&self) -> u64 {
        self.exposure.frame_id
    }

    pub fn radius(&self, x: f64, y: f64) -> f64 {
        self.geometry.radius(x, y)
    }
}

/// Rectified irradiance with a validity mask for saturated pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceImage {
    pub values: Image<f64>,
    pub valid: Image<bool>,
}

impl IrradianceImage {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }
}

/// A calibrated `(f^-1, V)` pair. Only frozen snapshots may rectify frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSnapshot {
    response: InverseResponse,
    vignette: VignetteModel,
    report: Option<ValidationReport>,
    frozen: bool,
}

impl CalibrationSnapshot {
    /// Snapshot published by the calibrator once validation passed.
    pub fn frozen(response: InverseResponse, vignette: VignetteModel, report: ValidationReport) -> Self {
        Self {
            response,
            vignette,
            report: Some(report),
            frozen: true,
        }
    }

    /// Externally supplied calibration (dataset files, ground truth) that is
    /// accepted without online validation.
    pub fn trusted(response: InverseResponse, vignette: VignetteModel) -> Self {
        Self {
            response,
            vignette,
            report: None,
            frozen: true,
        }
    }

    /// Estimates that have not passed validation yet.
    pub fn provisional(response: InverseResponse, vignette: VignetteModel) -> Self {
        Self {
            response,
            vignette,
            report: None,
            frozen: false,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn response(&self) -> &InverseResponse {
        &self.response
    }

    pub fn vignette(&self) -> &VignetteModel {
        &self.vignette
    }

    pub fn report(&self) -> Option<&ValidationReport> {
        self.report.as_ref()
    }
}

/// Inverts response and vignette and divides out the exposure:
/// `out = f^-1(M) / (e * V(r))`. Pixels outside `[5, 250]` are masked.
pub fn rectify_frame(frame: &Frame, snapshot: &CalibrationSnapshot) -> Result<IrradianceImage> {
    if !snapshot.is_frozen() {
        return Err(Error::State("cannot rectify with an unfrozen calibration".into()));
    }
    let e = frame.exposure.exposure;
    let (w, h) = (frame.image.width(), frame.image.height());
    let mut values = Image::filled(w, h, 0.0);
    let mut valid = Image::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let m = frame.image.get(x, y);
            let r = frame.radius(x as f64, y as f64);
            let v = snapshot.vignette.eval_unchecked(r);
            if v <= 0.0 {
                return Err(Error::InvalidModel(format!("V({r}) = {v} is not positive")));
            }
            values.set(x, y, snapshot.response.lut[m as usize] / (e * v));
            valid.set(x, y, is_unsaturated(m as f64));
        }
    }
    Ok(IrradianceImage { values, valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inverse_response_examples() {
        let id = InverseResponse::identity();
        assert!((id.eval(128.0).unwrap() - 128.0 / 255.0).abs() < 1e-15);
        assert_eq!(id.eval(255.0).unwrap(), 1.0);
        let g2 = InverseResponse::gamma(2.0);
        assert!((g2.eval(128.0).unwrap() - 0.25196).abs() < 5e-6);
        assert!(matches!(id.eval(-0.5), Err(Error::Domain(_))));
        assert!(matches!(id.eval(255.5), Err(Error::Domain(_))));
    }

    #[test]
    fn fractional_intensity_interpolates() {
        let g2 = InverseResponse::gamma(2.0);
        let a = g2.lut()[100];
        let b = g2.lut()[101];
        assert!((g2.eval(100.25).unwrap() - (0.75 * a + 0.25 * b)).abs() < 1e-15);
    }

    #[test]
    fn response_rejects_bad_tables() {
        let mut lut = *InverseResponse::identity().lut();
        lut[10] = lut[12];
        assert!(InverseResponse::new(lut).is_err());
        let mut lut = *InverseResponse::identity().lut();
        lut[255] = 0.99;
        assert!(InverseResponse::new(lut).is_err());
        assert!(InverseResponse::from_slice(&[0.0; 255]).is_err());
    }

    #[test]
    fn forward_inverts_lut() {
        let g = InverseResponse::gamma(2.2);
        for m in [0.0, 5.0, 17.5, 128.0, 200.25, 255.0] {
            let y = g.eval(m).unwrap();
            assert!((g.forward(y) - m).abs() < 1e-9, "m = {m}");
        }
        assert_eq!(g.forward(-1.0), 0.0);
        assert_eq!(g.forward(2.0), 255.0);
    }

    #[test]
    fn vignette_examples() {
        let v = VignetteModel::new(-0.3, 0.0, 0.0).unwrap();
        assert_eq!(v.eval(0.0).unwrap(), 1.0);
        assert!((v.eval(1.0).unwrap() - 0.7).abs() < 1e-15);
        let v = VignetteModel::new(-0.2, -0.1, 0.0).unwrap();
        assert!((v.eval(0.5).unwrap() - 0.94375).abs() < 1e-15);
        assert!(matches!(v.eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(v.eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn vignette_rejects_brightening_and_non_positive() {
        assert!(VignetteModel::new(0.1, 0.0, 0.0).is_err());
        assert!(VignetteModel::new(-1.0, 0.0, 0.0).is_err());
        assert!(VignetteModel::new(-0.9, -0.05, 0.0).is_ok());
    }

    #[test]
    fn radius_reaches_one_at_corners() {
        let g = RadialGeometry::centered(40, 30);
        assert_eq!(g.radius(g.cx, g.cy), 0.0);
        assert!((g.radius(0.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((g.radius(39.0, 29.0) - 1.0).abs() < 1e-15);
        let off = RadialGeometry::new(40, 30, 5.0, 5.0);
        assert!((off.radius(39.0, 29.0) - 1.0).abs() < 1e-15);
        assert!(off.radius(0.0, 0.0) < 1.0);
    }

    fn frame_of(image: GrayImage, exposure: f64) -> Frame {
        Frame::new(image, ExposureRecord::new(0, 0.0, exposure).unwrap()).unwrap()
    }

    #[test]
    fn identity_rectification_is_scaling() {
        let image = Image::from_fn(20, 16, |x, y| ((x * 13 + y * 7) % 256) as u8);
        let frame = frame_of(image.clone(), 1.0);
        let snap = CalibrationSnapshot::trusted(InverseResponse::identity(), VignetteModel::unit());
        let out = rectify_frame(&frame, &snap).unwrap();
        for y in 0..16 {
            for x in 0..20 {
                let m = image.get(x, y);
                assert_eq!(out.values.get(x, y), m as f64 / 255.0);
                assert_eq!(out.valid.get(x, y), (5..=250).contains(&m));
            }
        }
    }

    #[test]
    fn saturated_frame_fully_masked() {
        let frame = frame_of(Image::filled(16, 16, 255), 2.0);
        let snap = CalibrationSnapshot::trusted(InverseResponse::gamma(2.2), VignetteModel::unit());
        let out = rectify_frame(&frame, &snap).unwrap();
        assert!(out.valid.as_slice().iter().all(|v| !v));
        assert!(out.values.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn provisional_snapshot_cannot_rectify() {
        let frame = frame_of(Image::filled(16, 16, 100), 1.0);
        let snap = CalibrationSnapshot::provisional(InverseResponse::identity(), VignetteModel::unit());
        assert!(matches!(rectify_frame(&frame, &snap), Err(Error::State(_))));
    }

    #[test]
    fn small_frames_rejected() {
        let rec = ExposureRecord::new(0, 0.0, 1.0).unwrap();
        assert!(Frame::new(Image::filled(15, 40, 0), rec).is_err());
        assert!(ExposureRecord::new(0, 0.0, 0.0).is_err());
        assert!(ExposureRecord::new(0, 0.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn inverse_response_is_monotone(gamma in 0.3f64..4.0, a in 0.0f64..255.0, b in 0.0f64..255.0) {
            let ir = InverseResponse::gamma(gamma);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(ir.eval(lo).unwrap() <= ir.eval(hi).unwrap());
        }

        #[test]
        fn identity_preserves_ratios(m1 in 0u8..=255, m2 in 1u8..=255) {
            let ir = InverseResponse::identity();
            let ratio = ir.eval(m1 as f64).unwrap() / ir.eval(m2 as f64).unwrap();
            prop_assert!((ratio - m1 as f64 / m2 as f64).abs() < 1e-12);
        }
    }
}
