//! Initial (nuisance) estimators: treatment mechanism, censoring survival and
//! the Fine-Gray subdistribution hazard model for the main-event CIF.

mod censoring;
mod fine_gray;
mod ipcw;
mod linalg;
mod partial;
mod propensity;

pub use censoring::{fit_censoring, CensoringKind, CensoringModel};
pub use fine_gray::{
    cross_validate_lambda, fine_gray_log_partial_likelihood, fine_gray_score, fit_fine_gray,
    predict_cif, FitOptions, Penalty, SubdistributionModel,
};
pub use ipcw::{compute_ipcw, IpcwWeights};
pub use propensity::{fit_propensity, PropensityModel};

use serde::{Deserialize, Serialize};

/// Bounds applied to every nuisance estimate consumed downstream. The
/// clever covariate divides by all three quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub propensity_lo: f64,
    pub propensity_hi: f64,
    pub censoring_floor: f64,
    pub cif_ceiling: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            propensity_lo: 0.01,
            propensity_hi: 0.99,
            censoring_floor: 0.05,
            cif_ceiling: 1.0 - 1e-8,
        }
    }
}
