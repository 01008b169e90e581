//! Targeting step: clever covariate, one-parameter fluctuations of the
//! subdistribution hazard, and plug-in CATE with influence-function inference.

mod bundle;
mod estimate;
mod pipeline;
mod state;
mod targeting;

pub use bundle::{estimates_csv, ModelBundle, SavedSubgroup, BUNDLE_FORMAT, BUNDLE_VERSION};
pub use estimate::{estimate_cate, influence_function, CateEstimate, InfluenceFunction};
pub use pipeline::{
    fit_censoring_model, fit_nuisances, fit_outcome_model, fit_subgroup, individual_effects, per_subgroup,
    pooled_design, prepare_targeting, run_tmle, FittedNuisances, InitialLearner, OutcomeModel, PipelineConfig,
    SubgroupFit,
};
pub use state::{TargetingInputs, TargetingState};
pub use targeting::{
    apply_fluctuation, clever_covariate, clever_value, martingale_terms, score_at_epsilon, solve_epsilon, solve_score,
    target, ScoreTerms, TargetingOptions, TargetingOutcome,
};
