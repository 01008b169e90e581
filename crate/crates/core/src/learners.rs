//! S- and T-learner comparators on the Fine-Gray stack, with percentile
//! bootstrap intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{CensoringModel, SubdistributionModel};
use crate::stats::quantile_sorted;
use crate::survival::{SubgroupKey, SubjectRecord};
use crate::tmle::{fit_censoring_model, fit_outcome_model, CateEstimate, InitialLearner, OutcomeModel, PipelineConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearnerKind {
    SLearner,
    TLearner,
}

impl LearnerKind {
    fn initial(self) -> InitialLearner {
        match self {
            LearnerKind::SLearner => InitialLearner::S,
            LearnerKind::TLearner => InitialLearner::T,
        }
    }
}

/// Pooled Fine-Gray fit with `A` and `A x L` columns.
pub fn fit_s_learner(subjects: &[SubjectRecord], censoring: &CensoringModel, config: &PipelineConfig) -> Result<SubdistributionModel> {
    match fit_outcome_model(subjects, censoring, config, InitialLearner::S)? {
        OutcomeModel::Pooled(m) => Ok(m),
        OutcomeModel::PerArm(_) => unreachable!("pooled learner returns one model"),
    }
}

/// Per-arm Fine-Gray fits, control first.
pub fn fit_t_learner(
    subjects: &[SubjectRecord],
    censoring: &CensoringModel,
    config: &PipelineConfig,
) -> Result<[SubdistributionModel; 2]> {
    match fit_outcome_model(subjects, censoring, config, InitialLearner::T)? {
        OutcomeModel::PerArm(m) => Ok(*m),
        OutcomeModel::Pooled(_) => unreachable!("per-arm learner returns two models"),
    }
}

/// `mean_i F1(t0|1,L_i) - F1(t0|0,L_i)` under an outcome model.
pub fn plug_in_cate(model: &OutcomeModel, subjects: &[SubjectRecord], t0: f64) -> f64 {
    subjects
        .iter()
        .map(|s| model.cif(1, &s.covariates, t0) - model.cif(0, &s.covariates, t0))
        .sum::<f64>()
        / subjects.len() as f64
}

/// Learner CATE on `subjects`, fitting the censoring model for the IPCW
/// weights as configured.
pub fn learner_cate(kind: LearnerKind, subjects: &[SubjectRecord], config: &PipelineConfig) -> Result<f64> {
    if subjects.is_empty() {
        return Err(Error::EmptySubgroup(String::new()));
    }
    let censoring = fit_censoring_model(subjects, config)?;
    let model = fit_outcome_model(subjects, &censoring, config, kind.initial())?;
    Ok(plug_in_cate(&model, subjects, config.horizon))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 500,
            level: 0.95,
            seed: 1,
        }
    }
}

/// Percentile interval with the sorted replicate values.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    pub replicates: Vec<f64>,
}

const MAX_REDRAWS: usize = 10;

/// Percentile bootstrap of the learner CATE, resampling subjects with
/// replacement. Resamples with a single arm are redrawn.
pub fn bootstrap_ci(
    kind: LearnerKind,
    subjects: &[SubjectRecord],
    config: &PipelineConfig,
    opts: &BootstrapOptions,
) -> Result<BootstrapInterval> {
    if opts.replicates < 100 {
        return Err(Error::Bootstrap(format!("need at least 100 replicates, got {}", opts.replicates)));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Bootstrap(format!("level {} outside (0, 1)", opts.level)));
    }
    let n = subjects.len();
    let mut values = (0..opts.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = crate::dgp::replicate_rng(opts.seed, b);
            for _ in 0..=MAX_REDRAWS {
                let sample: Vec<SubjectRecord> = (0..n).map(|_| subjects[rng.random_range(0..n)].clone()).collect();
                let treated = sample.iter().filter(|s| s.treatment == 1).count();
                if treated == 0 || treated == n {
                    continue;
                }
                return learner_cate(kind, &sample, config);
            }
            Err(Error::Bootstrap(format!("replicate {b}: single-arm resample after {MAX_REDRAWS} redraws")))
        })
        .collect::<Result<Vec<f64>>>()?;
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - opts.level) / 2.0;
    Ok(BootstrapInterval {
        lo: quantile_sorted(&values, alpha),
        hi: quantile_sorted(&values, 1.0 - alpha),
        replicates: values,
    })
}

/// Learner estimate for one subgroup in the shared estimate layout: no
/// standard error, percentile interval when `bootstrap` is given (NaN
/// otherwise).
pub fn fit_learner_subgroup(
    kind: LearnerKind,
    subjects: &[SubjectRecord],
    key: SubgroupKey,
    label: String,
    config: &PipelineConfig,
    bootstrap: Option<&BootstrapOptions>,
) -> Result<CateEstimate> {
    if subjects.is_empty() {
        return Err(Error::EmptySubgroup(label));
    }
    let psi_hat = learner_cate(kind, subjects, config)?;
    let (ci_lo, ci_hi) = match bootstrap {
        Some(opts) => {
            let ci = bootstrap_ci(kind, subjects, config, opts)?;
            (ci.lo.min(psi_hat), ci.hi.max(psi_hat))
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(CateEstimate {
        subgroup: key,
        label,
        horizon: config.horizon,
        psi_hat,
        se: None,
        ci_lo,
        ci_hi,
        p_value: None,
        n_subgroup: subjects.len(),
        iterations: 0,
        converged: true,
    })
}
