//! Steps 1-3 within one subgroup: fit nuisances, target, estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::nuisance::{
    compute_ipcw, fit_censoring, fit_fine_gray, fit_propensity, CensoringKind, CensoringModel, FitOptions, Penalty,
    PropensityModel, SubdistributionModel, Truncation,
};
use crate::survival::{CohortDataset, SubgroupKey, SubjectRecord, TimeGrid};

use super::estimate::{estimate_cate, CateEstimate};
use super::state::{TargetingInputs, TargetingState};
use super::targeting::{target, TargetingOptions};

/// How the initial subdistribution hazard is modelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InitialLearner {
    /// One pooled model with `A` and `A x L` columns.
    S,
    /// One model per arm.
    T,
}

/// Covariate indices refer to the subject covariate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub horizon: f64,
    pub outcome_covariates: Vec<usize>,
    pub treatment_covariates: Vec<usize>,
    pub censoring_covariates: Vec<usize>,
    pub censoring_kind: CensoringKind,
    /// Include `A` in the Cox censoring model.
    pub censoring_treatment: bool,
    pub initial: InitialLearner,
    pub penalty: Penalty,
    pub truncation: Truncation,
    pub targeting: TargetingOptions,
    pub fit: FitOptions,
}

impl PipelineConfig {
    /// Every model conditions on `covariates`; Cox censoring with treatment,
    /// pooled unpenalized initial model.
    pub fn new(horizon: f64, covariates: Vec<usize>) -> Self {
        PipelineConfig {
            horizon,
            outcome_covariates: covariates.clone(),
            treatment_covariates: covariates.clone(),
            censoring_covariates: covariates,
            censoring_kind: CensoringKind::CoxPH,
            censoring_treatment: true,
            initial: InitialLearner::S,
            penalty: Penalty::None,
            truncation: Truncation::default(),
            targeting: TargetingOptions::default(),
            fit: FitOptions::default(),
        }
    }

    /// Drop covariate `k` from all three models.
    pub fn without_covariate(&self, k: usize) -> Self {
        let drop = |v: &[usize]| v.iter().copied().filter(|&j| j != k).collect();
        PipelineConfig {
            outcome_covariates: drop(&self.outcome_covariates),
            treatment_covariates: drop(&self.treatment_covariates),
            censoring_covariates: drop(&self.censoring_covariates),
            ..self.clone()
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            cif_ceiling: self.truncation.cif_ceiling,
            ..self.fit
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutcomeModel {
    Pooled(SubdistributionModel),
    PerArm(Box<[SubdistributionModel; 2]>),
}

impl OutcomeModel {
    /// Model used for arm 0 and arm 1.
    pub fn arms(&self) -> [&SubdistributionModel; 2] {
        match self {
            OutcomeModel::Pooled(m) => [m, m],
            OutcomeModel::PerArm(m) => [&m[0], &m[1]],
        }
    }

    /// Initial `F1(t | arm, x)`.
    pub fn cif(&self, arm: u8, x: &[f64], t: f64) -> f64 {
        self.arms()[usize::from(arm)].predict_cif(arm, x, t)
    }
}

/// The three fitted nuisance models of one subgroup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedNuisances {
    pub propensity: PropensityModel,
    pub censoring: CensoringModel,
    pub outcome: OutcomeModel,
}

fn varies(subjects: &[SubjectRecord], j: usize) -> bool {
    let mut it = subjects.iter().map(|s| s.covariates[j]);
    match it.next() {
        Some(first) => it.any(|v| v != first),
        None => false,
    }
}

fn varying(subjects: &[SubjectRecord], covs: &[usize]) -> Vec<usize> {
    covs.iter().copied().filter(|&j| varies(subjects, j)).collect()
}

/// Arm subsets of `subjects`, control first.
fn split_arms(subjects: &[SubjectRecord]) -> [Vec<SubjectRecord>; 2] {
    let mut arms = [Vec::new(), Vec::new()];
    for s in subjects {
        arms[s.arm()].push(s.clone());
    }
    arms
}

/// Pooled design with treatment interactions, dropping covariates that are
/// constant in the subgroup and interactions that are constant within an arm.
pub fn pooled_design(subjects: &[SubjectRecord], covariates: &[usize]) -> DesignSpec {
    let covs = varying(subjects, covariates);
    let arms = split_arms(subjects);
    let interactions = covs
        .iter()
        .copied()
        .filter(|&j| varies(&arms[0], j) && varies(&arms[1], j))
        .collect();
    DesignSpec {
        treatment: true,
        covariates: covs,
        interactions,
    }
}

/// Censoring model on the subgroup; falls back to Kaplan-Meier (`G = 1`)
/// when nothing is censored.
pub fn fit_censoring_model(subjects: &[SubjectRecord], config: &PipelineConfig) -> Result<CensoringModel> {
    let floor = config.truncation.censoring_floor;
    let design = DesignSpec {
        treatment: config.censoring_treatment,
        covariates: varying(subjects, &config.censoring_covariates),
        interactions: Vec::new(),
    };
    match fit_censoring(subjects, config.censoring_kind, &design, floor) {
        Err(Error::NoCensoringEvents) => fit_censoring(subjects, CensoringKind::KaplanMeier, &design, floor),
        other => other,
    }
}

/// Outcome model for the configured initial learner.
pub fn fit_outcome_model(
    subjects: &[SubjectRecord],
    censoring: &CensoringModel,
    config: &PipelineConfig,
    initial: InitialLearner,
) -> Result<OutcomeModel> {
    let opts = config.fit_options();
    match initial {
        InitialLearner::S => {
            let design = pooled_design(subjects, &config.outcome_covariates);
            Ok(OutcomeModel::Pooled(fit_fine_gray(subjects, censoring, &design, config.penalty, &opts)?))
        }
        InitialLearner::T => {
            let [control, treated] = split_arms(subjects);
            let fit = |arm: &[SubjectRecord]| {
                let design = DesignSpec::covariates(varying(arm, &config.outcome_covariates));
                fit_fine_gray(arm, censoring, &design, config.penalty, &opts)
            };
            Ok(OutcomeModel::PerArm(Box::new([fit(&control)?, fit(&treated)?])))
        }
    }
}

pub fn fit_nuisances(subjects: &[SubjectRecord], config: &PipelineConfig) -> Result<FittedNuisances> {
    let t = &config.truncation;
    let propensity = fit_propensity(
        subjects,
        &varying(subjects, &config.treatment_covariates),
        (t.propensity_lo, t.propensity_hi),
    )?;
    let censoring = fit_censoring_model(subjects, config)?;
    let outcome = fit_outcome_model(subjects, &censoring, config, config.initial)?;
    Ok(FittedNuisances {
        propensity,
        censoring,
        outcome,
    })
}

/// Result of the full pipeline in one subgroup.
#[derive(Clone, Debug)]
pub struct SubgroupFit {
    pub estimate: CateEstimate,
    /// Positions of the subgroup's subjects in the parent dataset.
    pub indices: Vec<usize>,
    /// Targeted `F1*(t0|1,L_i) - F1*(t0|0,L_i)` in `indices` order.
    pub effects: Vec<f64>,
    pub nuisances: FittedNuisances,
    /// Plug-in CATE of the initial (untargeted) model.
    pub initial_psi: f64,
    pub epsilons: Vec<f64>,
    pub initial_martingale_mean: f64,
    pub final_martingale_mean: f64,
}

/// Targeting ingredients of a subgroup from fitted nuisances.
pub fn prepare_targeting(
    subjects: &[SubjectRecord],
    nuisances: &FittedNuisances,
    config: &PipelineConfig,
) -> Result<(TargetingState, TargetingInputs)> {
    let grid = TimeGrid::from_subjects(subjects, config.horizon)?;
    let weights = compute_ipcw(subjects, &nuisances.censoring, &grid);
    let inputs = TargetingInputs::from_models(subjects, &grid, &nuisances.propensity, &nuisances.censoring, weights);
    let state = TargetingState::from_models(subjects, grid, nuisances.outcome.arms(), config.truncation.cif_ceiling);
    Ok((state, inputs))
}

/// Fit, target and estimate within one subgroup given as its subjects.
pub fn fit_subgroup(
    subjects: &[SubjectRecord],
    key: SubgroupKey,
    label: String,
    config: &PipelineConfig,
) -> Result<SubgroupFit> {
    if subjects.is_empty() {
        return Err(Error::EmptySubgroup(label));
    }
    let nuisances = fit_nuisances(subjects, config)?;
    let (state, inputs) = prepare_targeting(subjects, &nuisances, config)?;
    let initial_psi = (0..state.n()).map(|i| state.effect(i)).sum::<f64>() / state.n() as f64;
    let outcome = target(state, &inputs, &config.targeting)?;
    let estimate = estimate_cate(&outcome.state, &inputs, key, label, outcome.converged)?;
    let effects = (0..outcome.state.n()).map(|i| outcome.state.effect(i)).collect();
    Ok(SubgroupFit {
        estimate,
        indices: Vec::new(),
        effects,
        nuisances,
        initial_psi,
        epsilons: outcome.epsilons,
        initial_martingale_mean: outcome.initial_martingale_mean,
        final_martingale_mean: outcome.final_martingale_mean,
    })
}

/// Run `f` on every subgroup of `data` in parallel; results follow subgroup
/// order.
pub fn per_subgroup<T: Send>(
    data: &CohortDataset,
    f: impl Fn(&[SubjectRecord], SubgroupKey, String) -> Result<T> + Sync,
) -> Vec<(Vec<usize>, Result<T>)> {
    let groups: Vec<(&SubgroupKey, &Vec<usize>)> = data.subgroups().iter().collect();
    groups
        .into_par_iter()
        .map(|(key, idx)| {
            let subjects: Vec<SubjectRecord> = idx.iter().map(|&i| data.subjects()[i].clone()).collect();
            (idx.clone(), f(&subjects, key.clone(), data.subgroup_label(key)))
        })
        .collect()
}

/// TMLE in every subgroup of `data`; the first failure aborts.
pub fn run_tmle(data: &CohortDataset, config: &PipelineConfig) -> Result<Vec<SubgroupFit>> {
    per_subgroup(data, |s, key, label| fit_subgroup(s, key, label, config))
        .into_iter()
        .map(|(indices, fit)| fit.map(|f| SubgroupFit { indices, ..f }))
        .collect()
}

/// Per-subject targeted effects in dataset order.
pub fn individual_effects(n: usize, fits: &[SubgroupFit]) -> Vec<f64> {
    let mut tau = vec![f64::NAN; n];
    for fit in fits {
        for (&i, &e) in fit.indices.iter().zip(&fit.effects) {
            tau[i] = e;
        }
    }
    tau
}
