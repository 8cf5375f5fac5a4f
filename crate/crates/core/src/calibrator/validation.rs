//! Exposure validation statistic.

use crate::error::{Error, Result};
use crate::photometry::{InverseResponse, VignetteModel};
use crate::tracker::CorrespondencePair;

/// Outcome of validating one frame pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub frame1: u64,
    pub frame2: u64,
    /// Mean corrected irradiance ratio over the pair's correspondences.
    pub k: f64,
    /// Metadata exposure ratio `e1 / e2`.
    pub expected: f64,
    /// `|k - expected| / expected`.
    pub relative_error: f64,
    /// Number of terms that entered the mean.
    pub count: usize,
    /// Fraction of passing frame pairs in the validation window, when known.
    pub window_pass_rate: Option<f64>,
}

/// `k = mean( f^-1(m1) / f^-1(m2) * V(r2) / V(r1) )` over one frame pair.
///
/// Terms with `f^-1(m2) = 0` or a non-positive attenuation are skipped.
pub fn validate_exposure(
    pairs: &[CorrespondencePair],
    response: &InverseResponse,
    vignette: &VignetteModel,
) -> Result<ValidationReport> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Data("validation needs at least one pair".into()))?;
    if pairs
        .iter()
        .any(|p| p.frame1 != first.frame1 || p.frame2 != first.frame2)
    {
        return Err(Error::Data("validation pairs span more than one frame pair".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in pairs {
        let (Ok(g1), Ok(g2)) = (response.eval(p.m1), response.eval(p.m2)) else {
            continue;
        };
        let (Ok(v1), Ok(v2)) = (vignette.eval(p.r1), vignette.eval(p.r2)) else {
            continue;
        };
        if g2 <= 0.0 || v1 <= 0.0 || v2 <= 0.0 {
            continue;
        }
        sum += g1 / g2 * (v2 / v1);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data(format!(
            "every term of frame pair ({}, {}) was excluded",
            first.frame1, first.frame2
        )));
    }
    let k = sum / count as f64;
    let expected = first.e1 / first.e2;
    Ok(ValidationReport {
        frame1: first.frame1,
        frame2: first.frame2,
        k,
        expected,
        relative_error: (k - expected).abs() / expected,
        count,
        window_pass_rate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(m1: f64, m2: f64) -> CorrespondencePair {
        CorrespondencePair {
            frame1: 3,
            frame2: 4,
            m1,
            m2,
            r1: 0.2,
            r2: 0.6,
            e1: 2.0,
            e2: 1.0,
        }
    }

    #[test]
    fn exact_doubling() {
        let pairs: Vec<_> = (10..100).map(|m| pair(2.0 * m as f64, m as f64)).collect();
        let rep = validate_exposure(&pairs, &InverseResponse::identity(), &VignetteModel::unit()).unwrap();
        assert!((rep.k - 2.0).abs() < 1e-12);
        assert!(rep.relative_error < 1e-12);
        assert_eq!(rep.count, 90);
    }

    #[test]
    fn arithmetic_mean_of_terms() {
        let pairs = [pair(190.0, 100.0), pair(210.0, 100.0)];
        let rep = validate_exposure(&pairs, &InverseResponse::identity(), &VignetteModel::unit()).unwrap();
        assert!((rep.k - 2.0).abs() < 1e-12);
    }

    #[test]
    fn vignette_correction_applied() {
        let v = VignetteModel::new(-0.3, 0.0, 0.0).unwrap();
        // Same radiance seen at r1 and r2 with e1/e2 = 2.
        let g1 = 2.0 * v.eval(0.2).unwrap() * 0.3;
        let g2 = v.eval(0.6).unwrap() * 0.3;
        let pairs = [pair(255.0 * g1, 255.0 * g2)];
        let rep = validate_exposure(&pairs, &InverseResponse::identity(), &v).unwrap();
        assert!((rep.k - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_excluded() {
        let pairs = [pair(100.0, 0.0), pair(100.0, 50.0)];
        let rep = validate_exposure(&pairs, &InverseResponse::identity(), &VignetteModel::unit()).unwrap();
        assert_eq!(rep.count, 1);
        assert!(matches!(
            validate_exposure(&[pair(3.0, 0.0)], &InverseResponse::identity(), &VignetteModel::unit()),
            Err(Error::Data(_))
        ));
        assert!(validate_exposure(&[], &InverseResponse::identity(), &VignetteModel::unit()).is_err());
    }

    #[test]
    fn mixed_frame_pairs_rejected() {
        let mut other = pair(10.0, 5.0);
        other.frame2 = 9;
        assert!(validate_exposure(&[pair(10.0, 5.0), other], &InverseResponse::identity(), &VignetteModel::unit()).is_err());
    }
}
