use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_quantile, two_sided_p};
use crate::survival::SubgroupKey;

use super::state::{TargetingInputs, TargetingState};
use super::targeting::martingale_terms;

/// Plug-in CATE of one subgroup at one horizon with Wald inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateEstimate {
    pub subgroup: SubgroupKey,
    pub label: String,
    pub horizon: f64,
    pub psi_hat: f64,
    /// `None` for bootstrap intervals.
    pub se: Option<f64>,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: Option<f64>,
    pub n_subgroup: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl CateEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }

    /// Rejects `H0: psi = 0` at 5%.
    pub fn rejects_null(&self) -> bool {
        match self.p_value {
            Some(p) => p < 0.05,
            None => self.ci_lo > 0.0 || self.ci_hi < 0.0,
        }
    }
}

/// Influence function values `D_i` of a targeted state together with the
/// point estimate and per-subject effects.
#[derive(Clone, Debug)]
pub struct InfluenceFunction {
    pub psi_hat: f64,
    pub effects: Vec<f64>,
    pub martingale: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn influence_function(state: &TargetingState, inputs: &TargetingInputs) -> InfluenceFunction {
    let n = state.n();
    let effects: Vec<f64> = (0..n).map(|i| state.effect(i)).collect();
    let psi_hat = effects.iter().sum::<f64>() / n as f64;
    let martingale = martingale_terms(state, inputs);
    let values = martingale.iter().zip(&effects).map(|(m, e)| m + e - psi_hat).collect();
    InfluenceFunction {
        psi_hat,
        effects,
        martingale,
        values,
    }
}

/// Subgroup CATE from a targeted state: `psi = mean(F*(t0|1) - F*(t0|0))`,
/// `se = sqrt(mean(D^2) / n)`.
pub fn estimate_cate(
    state: &TargetingState,
    inputs: &TargetingInputs,
    subgroup: SubgroupKey,
    label: String,
    converged: bool,
) -> Result<CateEstimate> {
    let n = state.n();
    if n == 0 {
        return Err(Error::EmptySubgroup(label));
    }
    let eif = influence_function(state, inputs);
    let sigma2 = eif.values.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let se = (sigma2 / n as f64).sqrt();
    let z = normal_quantile(0.975);
    let p_value = if se > 0.0 {
        two_sided_p(eif.psi_hat / se)
    } else if eif.psi_hat == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(CateEstimate {
        subgroup,
        label,
        horizon: state.grid().horizon(),
        psi_hat: eif.psi_hat,
        se: Some(se),
        ci_lo: eif.psi_hat - z * se,
        ci_hi: eif.psi_hat + z * se,
        p_value: Some(p_value),
        n_subgroup: n,
        iterations: state.iteration,
        converged,
    })
}
