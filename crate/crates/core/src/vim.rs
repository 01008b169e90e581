//! Variable importance: relative change in the variance of individual
//! targeted effects when a predictive variable no longer defines subgroups,
//! and change in subgroup CATE when a prognostic variable is dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::population_variance;
use crate::survival::{CohortDataset, SubgroupKey};
use crate::tmle::{fit_subgroup, individual_effects, per_subgroup, run_tmle, PipelineConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VimKind {
    Predictive,
    Prognostic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VimEntry {
    pub variable: String,
    /// Subgroup label, or "all".
    pub subgroup: String,
    pub value: f64,
    /// `var(tau)` for predictive entries, the full-model CATE for prognostic ones.
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VimReport {
    pub kind: VimKind,
    pub entries: Vec<VimEntry>,
}

fn effect_variance(data: &CohortDataset, config: &PipelineConfig) -> Result<f64> {
    let fits = run_tmle(data, config)?;
    Ok(population_variance(&individual_effects(data.len(), &fits)))
}

fn check_predictive(data: &CohortDataset, j: usize) -> Result<()> {
    if !data.predictive_idx().contains(&j) {
        return Err(Error::InvalidData(format!("covariate {j} is not predictive")));
    }
    if data.predictive_idx().len() < 2 {
        return Err(Error::InvalidData("need at least two predictive variables".into()));
    }
    Ok(())
}

fn relative_change(full: f64, reduced: f64) -> Result<f64> {
    if full == 0.0 {
        return Err(Error::NoHeterogeneity);
    }
    Ok((full - reduced).abs() / full)
}

fn reduced_variance(data: &CohortDataset, config: &PipelineConfig, j: usize) -> Result<f64> {
    let keep = data.predictive_idx().iter().copied().filter(|&v| v != j).collect();
    effect_variance(&data.with_predictive(keep)?, &config.without_covariate(j))
}

/// `|var(tau) - var(tau_-j)| / var(tau)` for predictive covariate `j`.
pub fn vim_predictive(data: &CohortDataset, config: &PipelineConfig, j: usize) -> Result<f64> {
    check_predictive(data, j)?;
    let full = effect_variance(data, config)?;
    relative_change(full, reduced_variance(data, config, j)?)
}

/// `Psi_m(all L) - Psi_m(L without k)` within subgroup `key`.
pub fn vim_prognostic(data: &CohortDataset, config: &PipelineConfig, k: usize, key: &SubgroupKey) -> Result<f64> {
    let label = data.subgroup_label(key);
    let sub = data.subgroup_data(key)?;
    let full = fit_subgroup(sub.subjects(), key.clone(), label.clone(), config)?;
    let reduced = fit_subgroup(sub.subjects(), key.clone(), label, &config.without_covariate(k))?;
    Ok(full.estimate.psi_hat - reduced.estimate.psi_hat)
}

/// Predictive importance of every predictive covariate.
pub fn predictive_report(data: &CohortDataset, config: &PipelineConfig) -> Result<VimReport> {
    if data.predictive_idx().len() < 2 {
        return Err(Error::InvalidData("need at least two predictive variables".into()));
    }
    let full = effect_variance(data, config)?;
    let entries = data
        .predictive_idx()
        .par_iter()
        .map(|&j| {
            Ok(VimEntry {
                variable: data.covariate_names()[j].clone(),
                subgroup: "all".into(),
                value: relative_change(full, reduced_variance(data, config, j)?)?,
                baseline: full,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VimReport {
        kind: VimKind::Predictive,
        entries,
    })
}

/// Prognostic importance of each covariate in `covariates` in every subgroup.
pub fn prognostic_report(data: &CohortDataset, config: &PipelineConfig, covariates: &[usize]) -> Result<VimReport> {
    let full: Vec<(String, f64)> = per_subgroup(data, |s, key, label| {
        fit_subgroup(s, key, label.clone(), config).map(|f| (label, f.estimate.psi_hat))
    })
    .into_iter()
    .map(|(_, r)| r)
    .collect::<Result<_>>()?;
    let per_variable = covariates
        .par_iter()
        .map(|&k| {
            let reduced_config = config.without_covariate(k);
            let reduced: Vec<f64> = per_subgroup(data, |s, key, label| {
                fit_subgroup(s, key, label, &reduced_config).map(|f| f.estimate.psi_hat)
            })
            .into_iter()
            .map(|(_, r)| r)
            .collect::<Result<_>>()?;
            Ok(full
                .iter()
                .zip(reduced)
                .map(|((label, psi), r)| VimEntry {
                    variable: data.covariate_names()[k].clone(),
                    subgroup: label.clone(),
                    value: psi - r,
                    baseline: *psi,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VimReport {
        kind: VimKind::Prognostic,
        entries: per_variable.into_iter().flatten().collect(),
    })
}
