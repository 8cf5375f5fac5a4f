//! Coarse-to-fine Levenberg-Marquardt on the joint energy.

use std::fmt;

use nalgebra::{Matrix6, Vector6};

use super::{energy_of, evaluate, normal_equations, utility_k, HuberThresholds, PyramidContext, ResidualStats, Terms};
use crate::camera::PoseSE3;
use crate::error::{Error, Result};

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseConfig {
    pub levels: usize,
    pub huber: HuberThresholds,
    /// Iterations per pyramid level.
    pub max_iterations: usize,
    /// Stop once an accepted step is shorter than this.
    pub min_step: f64,
    /// Damping retries (x10 each) before an iteration gives up.
    pub max_retries: usize,
    pub initial_damping: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            huber: HuberThresholds::default(),
            max_iterations: 50,
            min_step: 1e-8,
            max_retries: 5,
            initial_damping: 1e-4,
        }
    }
}

impl PoseConfig {
    pub fn validate(&self) -> Result<()> {
        let h = &self.huber;
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::Config(format!("pyramid levels must be in 1..=8, got {}", self.levels)));
        }
        if !(h.photometric > 0.0 && h.photometric.is_finite()) || !(h.geometric > 0.0 && h.geometric.is_finite()) {
            return Err(Error::Config("Huber thresholds must be positive".into()));
        }
        if self.max_iterations == 0 || !(self.min_step > 0.0) || !(self.initial_damping > 0.0) {
            return Err(Error::Config("iterations, step tolerance and damping must be positive".into()));
        }
        Ok(())
    }
}

/// One linearization of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub level: usize,
    pub iteration: usize,
    pub energy: f64,
    pub k: f64,
    pub inliers: usize,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "level {} iter {} energy {:.9e} K {:.9e} n_g {}",
            self.level, self.iteration, self.energy, self.k, self.inliers
        )
    }
}

/// Per-iteration trace plus the termination verdict.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseReport {
    pub iterations: Vec<IterationRecord>,
    /// False when the finest level ran out of damping retries or iterations
    /// before the step became negligible.
    pub converged: bool,
}

impl fmt::Display for PoseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for it in &self.iterations {
            writeln!(f, "{it}")?;
        }
        writeln!(f, "converged {}", self.converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseOutcome {
    pub pose: PoseSE3,
    pub stats: ResidualStats,
    pub report: PoseReport,
}

/// Steps this short count as converged even when no damping produced a decrease.
const NEGLIGIBLE_STEP: f64 = 1e-6;
/// Relative variance floor for terms whose inliers are all exact.
const VARIANCE_FLOOR: f64 = 1e-6;

fn inlier_variance(values: impl Iterator<Item = f64>, delta: f64, previous: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in values {
        if r.abs() < delta {
            sum += r * r;
            n += 1;
        }
    }
    if n == 0 {
        previous
    } else {
        (sum / n as f64).max(VARIANCE_FLOOR * delta * delta)
    }
}

enum LevelEnd {
    SmallStep,
    Stalled(f64),
    Exhausted,
    Empty,
}

/// Refines `initial` from the coarsest pyramid level to the finest. At every
/// iteration `K` is recomputed from the level and the current inlier count,
/// and the variances come from the previous iteration's inliers (starting at
/// the squared thresholds). If no damping gives a decrease the best pose so
/// far is returned with `converged = false`.
pub fn optimize_pose(obs: &super::SceneObservation, initial: PoseSE3, config: &PoseConfig) -> Result<PoseOutcome> {
    config.validate()?;
    if !initial.is_finite() {
        return Err(Error::Domain("initial pose is not finite".into()));
    }
    let levels = config.levels.min(obs.levels());
    let delta = config.huber;
    let mut pose = initial;
    let mut var_p = delta.photometric * delta.photometric;
    let mut var_g = delta.geometric * delta.geometric;
    let mut report = PoseReport::default();
    let mut last_stats = None;
    let mut converged = false;

    for level in (0..levels).rev() {
        let mut lambda = config.initial_damping;
        let mut end = LevelEnd::Exhausted;
        for iteration in 0..config.max_iterations {
            let terms = evaluate(obs, &pose, level, true);
            if terms.photo.is_empty() && terms.geo.is_empty() {
                end = LevelEnd::Empty;
                break;
            }
            let ctx = PyramidContext {
                level,
                inliers: terms.inliers(delta.geometric),
            };
            let k = utility_k(ctx);
            let stats = ResidualStats::new(terms.photo.len(), terms.geo.len(), var_p, var_g)?;
            let energy = energy_of(&terms, &stats, k, delta);
            report.iterations.push(IterationRecord {
                level,
                iteration,
                energy,
                k,
                inliers: ctx.inliers,
            });
            last_stats = Some(stats);
            log::debug!("{}", report.iterations.last().expect("just pushed"));

            let (h, g) = normal_equations(&terms, &stats, k, delta);
            let mut accepted: Option<(PoseSE3, Terms, f64)> = None;
            let mut tried = f64::INFINITY;
            for _ in 0..=config.max_retries {
                let step = damped_step(&h, &g, lambda);
                tried = step.norm();
                let candidate = pose.retract(&step);
                let t = evaluate(obs, &candidate, level, false);
                let cstats = ResidualStats {
                    n_p: t.photo.len(),
                    n_g: t.geo.len(),
                    ..stats
                };
                if (cstats.n_p > 0 || cstats.n_g > 0) && energy_of(&t, &cstats, k, delta) <= energy {
                    accepted = Some((candidate, t, tried));
                    lambda = (lambda * 0.1).max(1e-12);
                    break;
                }
                lambda *= 10.0;
            }
            let Some((candidate, t, step_norm)) = accepted else {
                end = LevelEnd::Stalled(tried);
                break;
            };
            pose = candidate;
            var_p = inlier_variance(t.photo.iter().copied(), delta.photometric, var_p);
            var_g = inlier_variance(t.geo.iter().map(|e| e.norm()), delta.geometric, var_g);
            if step_norm < config.min_step {
                end = LevelEnd::SmallStep;
                break;
            }
        }
        if level == 0 {
            converged = match end {
                LevelEnd::SmallStep => true,
                LevelEnd::Stalled(step) => step < NEGLIGIBLE_STEP,
                LevelEnd::Exhausted | LevelEnd::Empty => false,
            };
            if matches!(end, LevelEnd::Empty) {
                return Err(Error::UndefinedEnergy("no residual is visible at the finest level".into()));
            }
        }
    }
    let stats = last_stats.ok_or_else(|| Error::UndefinedEnergy("no residual is visible at any level".into()))?;
    report.converged = converged;
    if !converged {
        log::warn!("pose optimization did not converge");
    }
    Ok(PoseOutcome { pose, stats, report })
}

fn damped_step(h: &Matrix6<f64>, g: &Vector6<f64>, lambda: f64) -> Vector6<f64> {
    let mut a = *h;
    let scale = h.diagonal().max().max(1e-12);
    for i in 0..6 {
        a[(i, i)] += lambda * h[(i, i)].max(1e-9 * scale) + 1e-15 * scale;
    }
    match a.cholesky() {
        Some(c) => -c.solve(g),
        None => Vector6::zeros(),
    }
}
