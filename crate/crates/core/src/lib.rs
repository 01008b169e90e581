//! Targeted maximum likelihood estimation (TMLE) of conditional average
//! treatment effects for right-censored competing-risks data.
//!
//! The crate is organised bottom-up:
//!
//! - [`survival`]: observed-data records, cohort validation, subgroups and
//!   the counting-process bookkeeping shared by every estimator.
//! - [`nuisance`]: propensity, censoring and Fine-Gray subdistribution
//!   hazard models, plus inverse-probability-of-censoring weights.
//! - [`tmle`]: the targeting loop and the influence-function based
//!   inference for the subgroup CATE.
//! - [`learners`]: S- and T-learner comparators with bootstrap intervals.
//! - [`vim`]: variable importance for predictive and prognostic covariates.
//! - [`dgp`]: the simulation design, its misspecification scenarios and the
//!   closed-form true-effect oracle.
//! - [`harness`]: Monte Carlo orchestration and report writing.

pub mod design;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod learners;
pub mod nuisance;
pub mod stats;
pub mod survival;
pub mod tmle;
pub mod vim;

pub use error::{Error, Result};
