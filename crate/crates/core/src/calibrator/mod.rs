//! Sequential photometric calibration: response, then vignette, then
//! exposure validation, then a frozen snapshot.

mod crf;
mod pipeline;
mod state;
mod validation;
mod vignette;

pub use crf::{estimate_crf, CrfEstimator, UNIT_RATIO_TOLERANCE};
pub use pipeline::{run_online, CalibrationOutcome};
pub use state::{Blocker, CalibrationState, CalibratorConfig, Phase};
pub use validation::{validate_exposure, ValidationReport};
pub(crate) use vignette::project_attenuating;
pub use vignette::{estimate_vignette, radial_coverage, VignetteEstimator, COVERAGE_BINS};
