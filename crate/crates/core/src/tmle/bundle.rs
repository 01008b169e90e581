use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::Truncation;
use crate::survival::SubgroupKey;

use super::estimate::CateEstimate;
use super::pipeline::{FittedNuisances, PipelineConfig, SubgroupFit};

pub const BUNDLE_FORMAT: &str = "crtmle-models";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedSubgroup {
    pub key: SubgroupKey,
    pub label: String,
    pub nuisances: FittedNuisances,
}

/// Fitted models of every subgroup as a versioned JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub horizon: f64,
    pub covariate_names: Vec<String>,
    pub predictive: Vec<String>,
    pub truncation: Truncation,
    pub config: PipelineConfig,
    pub subgroups: Vec<SavedSubgroup>,
}

impl ModelBundle {
    pub fn new(covariate_names: Vec<String>, predictive: Vec<String>, config: &PipelineConfig, fits: &[SubgroupFit]) -> Self {
        ModelBundle {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            horizon: config.horizon,
            covariate_names,
            predictive,
            truncation: config.truncation,
            config: config.clone(),
            subgroups: fits
                .iter()
                .map(|f| SavedSubgroup {
                    key: f.estimate.subgroup.clone(),
                    label: f.estimate.label.clone(),
                    nuisances: f.nuisances.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: ModelBundle = serde_json::from_str(text)?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(Error::InvalidData(format!("not a model bundle: format `{}`", bundle.format)));
        }
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::InvalidData(format!(
                "model bundle version {} unsupported (expected {BUNDLE_VERSION})",
                bundle.version
            )));
        }
        Ok(bundle)
    }

    pub fn subgroup(&self, key: &SubgroupKey) -> Option<&SavedSubgroup> {
        self.subgroups.iter().find(|s| &s.key == key)
    }
}

fn cell(v: Option<f64>) -> String {
    v.filter(|x| !x.is_nan()).map(|x| x.to_string()).unwrap_or_default()
}

/// `subgroup,t0,psi,se,ci_lo,ci_hi,p,n,iters,converged`
pub fn estimates_csv(estimates: &[CateEstimate]) -> String {
    let mut out = String::from("subgroup,t0,psi,se,ci_lo,ci_hi,p,n,iters,converged\n");
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.label,
            e.horizon,
            e.psi_hat,
            cell(e.se),
            cell(Some(e.ci_lo)),
            cell(Some(e.ci_hi)),
            cell(e.p_value),
            e.n_subgroup,
            e.iterations,
            e.converged
        );
    }
    out
}
