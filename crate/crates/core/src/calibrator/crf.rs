//! Inverse response estimation from same-radius correspondences.
//!
//! Each pair contributes the residual `g(m1) - (e1/e2) g(m2)`, linear in the
//! table entries `g`. The objective adds a second-difference smoothness term
//! and is solved under monotonicity with an active-set scheme: solve the
//! tied least-squares problem, pool adjacent violators, tie the pooled
//! levels and solve again until the solution is monotone. Reweighting rounds
//! wrap the whole solve: each residual is standardized by its intensity-noise
//! standard deviation under the current table, then Huber-weighted.
//!
//! The residuals are homogeneous in `g`, so the solve pins `g[0] = 0`, fixes
//! the scale with a support-weighted mean `sum(w g) = 1` and rescales to
//! `g[255] = 1` afterwards. Pinning a single level instead lets the data term
//! shrink the rest of the table towards zero around a spike.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::photometry::InverseResponse;
use crate::robust::{adaptive_threshold, huber_weight};
use crate::tracker::CorrespondencePair;

/// Exposure ratios closer to 1 than this (in log) carry no shape information.
pub const UNIT_RATIO_TOLERANCE: f64 = 1e-6;

/// Largest smoothness boost on sparsely observed levels.
const MAX_STIFFNESS: f64 = 1e3;

/// Settings for [`CrfEstimator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfEstimator {
    pub min_pairs: usize,
    /// Minimum number of distinct (rounded) intensity levels among the pairs.
    pub min_levels: usize,
    /// Smoothness weight relative to the mean diagonal of the data term.
    pub smoothness: f64,
    pub huber_rounds: usize,
    /// Huber threshold as a multiple of the median absolute residual.
    pub huber_multiple: f64,
}

impl Default for CrfEstimator {
    fn default() -> Self {
        Self {
            min_pairs: 2000,
            min_levels: 64,
            smoothness: 1e-3,
            huber_rounds: 3,
            huber_multiple: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Term {
    i1: usize,
    t1: f64,
    i2: usize,
    t2: f64,
    ratio: f64,
}

impl Term {
    fn new(p: &CorrespondencePair) -> Self {
        let split = |m: f64| {
            let i = (m.floor() as usize).min(254);
            (i, m - i as f64)
        };
        let (i1, t1) = split(p.m1);
        let (i2, t2) = split(p.m2);
        Self {
            i1,
            t1,
            i2,
            t2,
            ratio: p.e1 / p.e2,
        }
    }

    fn coefficients(&self) -> [(usize, f64); 4] {
        [
            (self.i1, 1.0 - self.t1),
            (self.i1 + 1, self.t1),
            (self.i2, -self.ratio * (1.0 - self.t2)),
            (self.i2 + 1, -self.ratio * self.t2),
        ]
    }

    fn residual(&self, g: &[f64]) -> f64 {
        self.coefficients().iter().map(|&(k, c)| c * g[k]).sum()
    }

    /// Residual standard deviation per unit of intensity noise.
    fn spread(&self, slope: &[f64]) -> f64 {
        let s1 = slope[self.i1] * (1.0 - self.t1) + slope[self.i1 + 1] * self.t1;
        let s2 = slope[self.i2] * (1.0 - self.t2) + slope[self.i2 + 1] * self.t2;
        (s1 * s1 + self.ratio * self.ratio * s2 * s2).sqrt()
    }
}

/// Local slope of the table, floored so flat stretches keep a finite weight.
fn slopes(g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let floor = 0.1 * (g[n - 1] - g[0]).abs() / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            ((g[hi] - g[lo]) / (hi - lo) as f64).max(floor)
        })
        .collect()
}

/// Checks shared by the estimator and the online state machine.
pub(crate) fn check_exposure_diversity(pairs: &[CorrespondencePair]) -> Result<()> {
    if !pairs.is_empty() && pairs.iter().all(|p| (p.e1 / p.e2).ln().abs() <= UNIT_RATIO_TOLERANCE) {
        return Err(Error::Unobservable(
            "all correspondence pairs share the same exposure; the response shape is unconstrained".into(),
        ));
    }
    Ok(())
}

impl CrfEstimator {
    pub fn estimate(&self, pairs: &[CorrespondencePair]) -> Result<InverseResponse> {
        if pairs.is_empty() {
            return Err(Error::NotReady("no same-radius pairs".into()));
        }
        check_exposure_diversity(pairs)?;
        if pairs.len() < self.min_pairs {
            return Err(Error::NotReady(format!(
                "{} same-radius pairs, need {}",
                pairs.len(),
                self.min_pairs
            )));
        }
        let mut seen = [false; 256];
        for p in pairs {
            if !(0.0..=255.0).contains(&p.m1) || !(0.0..=255.0).contains(&p.m2) || !(p.e1 > 0.0 && p.e2 > 0.0) {
                return Err(Error::Data("pair with out-of-range intensity or exposure".into()));
            }
            seen[p.m1.round() as usize] = true;
            seen[p.m2.round() as usize] = true;
        }
        let levels = seen.iter().filter(|&&s| s).count();
        if levels < self.min_levels {
            return Err(Error::NotReady(format!(
                "pairs span {levels} intensity levels, need {}",
                self.min_levels
            )));
        }

        let terms: Vec<Term> = pairs.iter().map(Term::new).collect();
        let mut weights = vec![1.0; terms.len()];
        let mut g = Vec::new();
        for round in 0..=self.huber_rounds {
            let (normal, support) = self.normal_matrix(&terms, &weights);
            g = monotone_solve(&normal, &support)?;
            if round == self.huber_rounds {
                break;
            }
            let slope = slopes(&g);
            let spreads: Vec<f64> = terms.iter().map(|t| t.spread(&slope)).collect();
            let residuals: Vec<f64> = terms.iter().zip(&spreads).map(|(t, s)| t.residual(&g) / s).collect();
            let delta = adaptive_threshold(&residuals, self.huber_multiple, 1e-12);
            for ((w, r), s) in weights.iter_mut().zip(&residuals).zip(&spreads) {
                *w = huber_weight(*r, delta) / (s * s);
            }
        }

        let top = g[255];
        if !(top > 0.0) || !top.is_finite() {
            return Err(Error::Unobservable("response scale collapsed".into()));
        }
        let mut lut = [0.0; 256];
        for (dst, v) in lut.iter_mut().zip(&g) {
            *dst = (v / top).clamp(0.0, 1.0);
        }
        lut[0] = 0.0;
        lut[255] = 1.0;
        InverseResponse::new(lut)
    }

    /// Normal matrix of data plus smoothness, and the per-level support of
    /// the data term alone.
    fn normal_matrix(&self, terms: &[Term], weights: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let mut a = DMatrix::<f64>::zeros(256, 256);
        for (t, &w) in terms.iter().zip(weights) {
            let c = t.coefficients();
            for &(k, ck) in &c {
                for &(l, cl) in &c {
                    a[(k, l)] += w * ck * cl;
                }
            }
        }
        let support: Vec<f64> = (0..256).map(|i| a[(i, i)]).collect();
        // Sparsely observed levels get extra smoothness in proportion to how
        // thin their support is, so a handful of pairs at the ends of the
        // range cannot bend the extrapolated tail.
        let mean = a.trace() / 256.0;
        for j in 1..255 {
            let local = (support[j - 1] + support[j] + support[j + 1]) / 3.0;
            let stiffness = if local > 0.0 { (mean / local).clamp(1.0, MAX_STIFFNESS) } else { MAX_STIFFNESS };
            add_stencil(&mut a, &[(j - 1, 1.0), (j, -2.0), (j + 1, 1.0)], self.smoothness * mean * stiffness);
        }
        (a, support)
    }
}

fn add_stencil(a: &mut DMatrix<f64>, stencil: &[(usize, f64)], weight: f64) {
    for &(k, ck) in stencil {
        for &(l, cl) in stencil {
            a[(k, l)] += weight * ck * cl;
        }
    }
}

/// Minimizes `g^T A g` over non-decreasing `g` with `g[0] = 0` and
/// `sum(w g) = 1`.
///
/// The table is written as cumulative non-negative increments `d`, which
/// turns monotonicity into bounds. A primal active-set method then solves the
/// bound-constrained problem exactly: levels are tied to their predecessor
/// when an increment hits zero and released again when its multiplier turns
/// negative.
fn monotone_solve(a: &DMatrix<f64>, w: &[f64]) -> Result<Vec<f64>> {
    let m = a.nrows() - 1;
    // Q = L^T A L and c = L^T w over levels 1.., with L the cumulative sum.
    let mut b = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let mut acc = 0.0;
        for j in (0..m).rev() {
            acc += a[(i + 1, j + 1)];
            b[(i, j)] = acc;
        }
    }
    let mut q = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut acc = 0.0;
        for i in (0..m).rev() {
            acc += b[(i, j)];
            q[(i, j)] = acc;
        }
    }
    let mut c = DVector::<f64>::zeros(m);
    let mut acc = 0.0;
    for i in (0..m).rev() {
        acc += w[i + 1];
        c[i] = acc;
    }
    if !(c[0] > 0.0) {
        return Err(Error::Unobservable("no data constrains the response scale".into()));
    }

    let mut free = vec![true; m];
    let mut d = DVector::from_element(m, 1.0 / c.sum());
    for _ in 0..20 * m {
        let target = solve_free(&q, &c, &free)?;
        let blocked = (0..m).filter(|&i| free[i] && target[i] < 0.0);
        let step = blocked
            .map(|i| (d[i] / (d[i] - target[i]), i))
            .min_by(|x, y| x.0.total_cmp(&y.0));
        match step {
            Some((alpha, _)) => {
                d += (&target - &d) * alpha;
                for i in 0..m {
                    if free[i] && d[i] <= 1e-15 * d.amax() {
                        free[i] = false;
                        d[i] = 0.0;
                    }
                }
            }
            None => {
                d = target;
                let qd = &q * &d;
                // Multiplier of the scale constraint.
                let mu = d.dot(&qd);
                let tol = 1e-12 * qd.amax().max(mu * c.amax());
                let release = (0..m)
                    .filter(|&i| !free[i])
                    .map(|i| (qd[i] - mu * c[i], i))
                    .filter(|&(lambda, _)| lambda < -tol)
                    .min_by(|x, y| x.0.total_cmp(&y.0));
                match release {
                    Some((_, i)) => free[i] = true,
                    None => {
                        let mut g = Vec::with_capacity(m + 1);
                        g.push(0.0);
                        let mut acc = 0.0;
                        for v in d.iter() {
                            acc += v;
                            g.push(acc);
                        }
                        return Ok(g);
                    }
                }
            }
        }
    }
    Err(Error::Unobservable("monotone response solve did not settle".into()))
}

/// Minimizer of `d^T Q d` subject to `c^T d = 1` with the non-free entries
/// held at zero.
fn solve_free(q: &DMatrix<f64>, c: &DVector<f64>, free: &[bool]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |r, s| q[(idx[r], idx[s])]);
    let cf = DVector::from_fn(k, |r, _| c[idx[r]]);
    let y = match sub.clone().cholesky() {
        Some(ch) => ch.solve(&cf),
        None => sub
            .lu()
            .solve(&cf)
            .ok_or_else(|| Error::Unobservable("response system is singular".into()))?,
    };
    let scale = cf.dot(&y);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Unobservable("response scale is undetermined".into()));
    }
    let mut d = DVector::zeros(free.len());
    for (r, &i) in idx.iter().enumerate() {
        d[i] = y[r] / scale;
    }
    Ok(d)
}

/// Estimates the inverse response with default settings.
pub fn estimate_crf(pairs: &[CorrespondencePair]) -> Result<InverseResponse> {
    CrfEstimator::default().estimate(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pairs drawn directly from a known response: pick an irradiance and
    /// an exposure ratio, push both through the forward response.
    fn oracle_pairs(truth: &InverseResponse, n: usize, noise: f64, seed: u64) -> Vec<CorrespondencePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::with_capacity(n);
        while pairs.len() < n {
            let log_ratio = rng.random_range(-(8f64.ln())..8f64.ln());
            let e2 = 1.0;
            let e1 = log_ratio.exp();
            let y2: f64 = rng.random_range(0.0..1.0);
            let y1 = y2 * e1 / e2;
            let m1 = truth.forward(y1) + noise * rng.random_range(-1.0..1.0);
            let m2 = truth.forward(y2) + noise * rng.random_range(-1.0..1.0);
            if !(5.0..=250.0).contains(&m1) || !(5.0..=250.0).contains(&m2) {
                continue;
            }
            pairs.push(CorrespondencePair {
                frame1: 0,
                frame2: 1,
                m1,
                m2,
                r1: 0.5,
                r2: 0.5,
                e1,
                e2,
            });
        }
        pairs
    }

    fn max_error(a: &InverseResponse, b: &InverseResponse) -> f64 {
        a.lut().iter().zip(b.lut()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn recovers_identity() {
        let truth = InverseResponse::identity();
        let est = estimate_crf(&oracle_pairs(&truth, 5000, 0.5, 1)).unwrap();
        assert!(max_error(&est, &truth) < 0.02, "{}", max_error(&est, &truth));
    }

    #[test]
    fn recovers_gamma_22() {
        let truth = InverseResponse::gamma(2.2);
        let est = estimate_crf(&oracle_pairs(&truth, 5000, 0.5, 2)).unwrap();
        assert!(max_error(&est, &truth) < 0.02, "{}", max_error(&est, &truth));
    }

    #[test]
    fn noiseless_recovery_is_tight() {
        let truth = InverseResponse::gamma(1.8);
        let est = estimate_crf(&oracle_pairs(&truth, 4000, 0.0, 3)).unwrap();
        assert!(max_error(&est, &truth) < 2e-3, "{}", max_error(&est, &truth));
    }

    #[test]
    fn scale_of_exposures_is_irrelevant() {
        let truth = InverseResponse::gamma(2.2);
        let pairs = oracle_pairs(&truth, 3000, 0.5, 4);
        let scaled: Vec<_> = pairs
            .iter()
            .map(|p| CorrespondencePair {
                e1: p.e1 * 3.0,
                e2: p.e2 * 3.0,
                ..*p
            })
            .collect();
        let a = estimate_crf(&pairs).unwrap();
        let b = estimate_crf(&scaled).unwrap();
        assert!(max_error(&a, &b) < 1e-9);
    }

    #[test]
    fn constant_exposure_is_unobservable() {
        let pairs: Vec<_> = oracle_pairs(&InverseResponse::identity(), 3000, 0.5, 5)
            .into_iter()
            .map(|p| CorrespondencePair { e1: 2.0, e2: 2.0, ..p })
            .collect();
        assert!(matches!(estimate_crf(&pairs), Err(Error::Unobservable(_))));
    }

    #[test]
    fn too_few_pairs_not_ready() {
        let pairs = oracle_pairs(&InverseResponse::identity(), 100, 0.5, 6);
        assert!(matches!(estimate_crf(&pairs), Err(Error::NotReady(_))));
        assert!(matches!(estimate_crf(&[]), Err(Error::NotReady(_))));
    }

    #[test]
    fn narrow_intensity_span_not_ready() {
        let pairs: Vec<_> = (0..3000)
            .map(|i| CorrespondencePair {
                frame1: 0,
                frame2: 1,
                m1: 100.0 + (i % 20) as f64,
                m2: 90.0 + (i % 20) as f64,
                r1: 0.5,
                r2: 0.5,
                e1: 1.1,
                e2: 1.0,
            })
            .collect();
        assert!(matches!(estimate_crf(&pairs), Err(Error::NotReady(_))));
    }

    #[test]
    fn deterministic() {
        let pairs = oracle_pairs(&InverseResponse::gamma(2.2), 3000, 1.0, 7);
        assert_eq!(estimate_crf(&pairs).unwrap(), estimate_crf(&pairs).unwrap());
    }

    /// Exhaustive oracle: every pattern of tied increments, solved as an
    /// equality-constrained problem, keeping the best feasible one.
    fn brute_force(a: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
        let n = a.nrows();
        let m = n - 1;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << m) {
            // Free increments become basis columns of cumulative steps.
            let cols: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
            let basis = DMatrix::from_fn(n, cols.len(), |r, k| if r > cols[k] { 1.0 } else { 0.0 });
            let h = basis.transpose() * a * &basis;
            let cw = basis.transpose() * DVector::from_column_slice(w);
            let Some(y) = h.clone().lu().solve(&cw) else { continue };
            let coeff = y.clone() / cw.dot(&y);
            if coeff.iter().any(|&v| v < -1e-12) {
                continue;
            }
            let g = &basis * coeff;
            let energy = (g.transpose() * a * &g)[(0, 0)];
            if best.as_ref().is_none_or(|(e, _)| energy < *e) {
                best = Some((energy, g.iter().copied().collect()));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn active_set_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 6;
            let r = DMatrix::from_fn(n + 2, n, |_, _| rng.random_range(-1.0..1.0));
            let a = r.transpose() * r + DMatrix::identity(n, n) * 1e-3;
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let got = monotone_solve(&a, &w).unwrap();
            let want = brute_force(&a, &w);
            for (x, y) in got.iter().zip(&want) {
                assert!((x - y).abs() < 1e-8, "{got:?} vs {want:?}");
            }
            assert!(got.windows(2).all(|p| p[0] <= p[1]));
        }
    }
}
