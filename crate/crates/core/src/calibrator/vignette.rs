//! Vignette estimation from radially moving correspondences.
//!
//! With the response known, each pair gives
//! `ln V(r1) - ln V(r2) = ln(f^-1(m1) / f^-1(m2)) - ln(e1 / e2)`.
//! The coefficients are fitted by Gauss-Newton on this log-domain residual
//! with Huber reweighting; `V(0) = 1` holds by construction of the model.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::photometry::{InverseResponse, VignetteModel};
use crate::robust::{adaptive_threshold, huber_weight};
use crate::tracker::CorrespondencePair;

/// Number of radius bins used for the coverage test.
pub const COVERAGE_BINS: usize = 20;

/// Settings for [`VignetteEstimator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VignetteEstimator {
    pub min_pairs: usize,
    /// Fraction of `[0, 1]` (in radius bins) the pairs must touch.
    pub min_coverage: f64,
    pub huber_rounds: usize,
    pub huber_multiple: f64,
    pub max_iterations: usize,
}

impl Default for VignetteEstimator {
    fn default() -> Self {
        Self {
            min_pairs: 2000,
            min_coverage: 0.7,
            huber_rounds: 3,
            huber_multiple: 2.0,
            max_iterations: 30,
        }
    }
}

/// Fraction of radius bins touched by either end of some pair.
pub fn radial_coverage(pairs: &[CorrespondencePair]) -> f64 {
    let mut hit = [false; COVERAGE_BINS];
    for p in pairs {
        for r in [p.r1, p.r2] {
            let b = ((r * COVERAGE_BINS as f64) as usize).min(COVERAGE_BINS - 1);
            hit[b] = true;
        }
    }
    hit.iter().filter(|&&h| h).count() as f64 / COVERAGE_BINS as f64
}

#[inline]
fn basis(r: f64) -> Vector3<f64> {
    let s = r * r;
    Vector3::new(s, s * s, s * s * s)
}

#[inline]
fn attenuation(a: &Vector3<f64>, r: f64) -> f64 {
    1.0 + a.dot(&basis(r))
}

fn min_on_grid(a: &Vector3<f64>) -> f64 {
    (0..=200)
        .map(|i| attenuation(a, i as f64 / 200.0))
        .fold(f64::INFINITY, f64::min)
}

struct Sample {
    r1: f64,
    r2: f64,
    target: f64,
}

impl VignetteEstimator {
    pub fn estimate(&self, pairs: &[CorrespondencePair], response: &InverseResponse) -> Result<VignetteModel> {
        if pairs.is_empty() {
            return Err(Error::NotReady("no radial pairs".into()));
        }
        if pairs.iter().all(|p| (p.r1 - p.r2).abs() < 1e-9) {
            return Err(Error::Unobservable(
                "all pairs keep their radius; the vignette ratio is always 1".into(),
            ));
        }
        if pairs.len() < self.min_pairs {
            return Err(Error::NotReady(format!(
                "{} radial pairs, need {}",
                pairs.len(),
                self.min_pairs
            )));
        }
        let coverage = radial_coverage(pairs);
        if coverage < self.min_coverage {
            return Err(Error::Unobservable(format!(
                "radial coverage {:.0}% below the required {:.0}%",
                100.0 * coverage,
                100.0 * self.min_coverage
            )));
        }

        let samples: Vec<Sample> = pairs
            .iter()
            .filter_map(|p| {
                let g1 = response.eval(p.m1).ok()?;
                let g2 = response.eval(p.m2).ok()?;
                if g1 <= 0.0 || g2 <= 0.0 || !(p.e1 > 0.0 && p.e2 > 0.0) {
                    return None;
                }
                Some(Sample {
                    r1: p.r1.clamp(0.0, 1.0),
                    r2: p.r2.clamp(0.0, 1.0),
                    target: (g1 / g2).ln() - (p.e1 / p.e2).ln(),
                })
            })
            .collect();
        if samples.len() < self.min_pairs {
            return Err(Error::NotReady(format!(
                "{} usable radial pairs, need {}",
                samples.len(),
                self.min_pairs
            )));
        }

        let mut a = Vector3::zeros();
        let mut weights = vec![1.0; samples.len()];
        let mut hessian = Matrix3::identity();
        for round in 0..=self.huber_rounds {
            for _ in 0..self.max_iterations {
                let mut h = Matrix3::zeros();
                let mut g = Vector3::zeros();
                for (s, &w) in samples.iter().zip(&weights) {
                    let (v1, v2) = (attenuation(&a, s.r1), attenuation(&a, s.r2));
                    let r = v1.ln() - v2.ln() - s.target;
                    let j = basis(s.r1) / v1 - basis(s.r2) / v2;
                    h += w * j * j.transpose();
                    g += w * r * j;
                }
                hessian = h;
                let step = h
                    .cholesky()
                    .ok_or_else(|| Error::Unobservable("vignette normal equations are singular".into()))?
                    .solve(&(-g));
                let mut t = 1.0;
                while min_on_grid(&(a + t * step)) <= 1e-3 && t > 1e-6 {
                    t *= 0.5;
                }
                a += t * step;
                if (t * step).norm() < 1e-12 {
                    break;
                }
            }
            if round == self.huber_rounds {
                break;
            }
            let residuals: Vec<f64> = samples
                .iter()
                .map(|s| attenuation(&a, s.r1).ln() - attenuation(&a, s.r2).ln() - s.target)
                .collect();
            let delta = adaptive_threshold(&residuals, self.huber_multiple, 1e-12);
            for (w, r) in weights.iter_mut().zip(&residuals) {
                *w = huber_weight(*r, delta);
            }
        }
        let a = project_attenuating(a, &hessian);
        VignetteModel::new(a[0], a[1], a[2])
    }
}

/// Rounding slack when checking `V <= 1`.
const PEAK_TOLERANCE: f64 = 1e-13;

/// Projects coefficients onto `V(r) <= 1` on `[0, 1]` in the metric of
/// `hessian`, activating the most violated radius until feasible.
pub(crate) fn project_attenuating(a: Vector3<f64>, hessian: &Matrix3<f64>) -> Vector3<f64> {
    let h_inv = hessian
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .unwrap_or_else(Matrix3::identity);
    let mut active: Vec<Vector3<f64>> = Vec::new();
    let mut out = a;
    for _ in 0..3 {
        let (worst_s, worst) = peak_on_unit(&out);
        if worst <= PEAK_TOLERANCE {
            return out;
        }
        active.push(Vector3::new(worst_s, worst_s * worst_s, worst_s.powi(3)));
        // Equality-constrained projection of the original estimate.
        let k = active.len();
        let phi = nalgebra::DMatrix::from_fn(k, 3, |i, j| active[i][j]);
        let h = nalgebra::DMatrix::from_fn(3, 3, |i, j| h_inv[(i, j)]);
        let a_vec = nalgebra::DVector::from_column_slice(a.as_slice());
        let gram = &phi * &h * phi.transpose();
        let Some(gram_inv) = gram.try_inverse() else {
            return Vector3::zeros();
        };
        let correction = &h * phi.transpose() * gram_inv * (&phi * &a_vec);
        let projected = a_vec - correction;
        out = Vector3::new(projected[0], projected[1], projected[2]);
    }
    // Three independent active radii leave only the zero polynomial.
    if peak_on_unit(&out).1 > PEAK_TOLERANCE {
        Vector3::zeros()
    } else {
        out
    }
}

/// Largest value of `a1 s + a2 s^2 + a3 s^3` over `s` in `[0, 1]`, with its
/// location. Candidates are the ends and the stationary points.
fn peak_on_unit(a: &Vector3<f64>) -> (f64, f64) {
    let p = |s: f64| a.dot(&Vector3::new(s, s * s, s * s * s));
    let mut candidates = vec![0.0, 1.0];
    // a1 + 2 a2 s + 3 a3 s^2 = 0
    let (qa, qb, qc) = (3.0 * a[2], 2.0 * a[1], a[0]);
    if qa.abs() > 1e-300 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let root = disc.sqrt();
            candidates.push((-qb + root) / (2.0 * qa));
            candidates.push((-qb - root) / (2.0 * qa));
        }
    } else if qb.abs() > 1e-300 {
        candidates.push(-qc / qb);
    }
    candidates
        .into_iter()
        .filter(|s| (0.0..=1.0).contains(s))
        .map(|s| (s, p(s)))
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
}

/// Estimates the vignette with default settings.
pub fn estimate_vignette(pairs: &[CorrespondencePair], response: &InverseResponse) -> Result<VignetteModel> {
    VignetteEstimator::default().estimate(pairs, response)
}
