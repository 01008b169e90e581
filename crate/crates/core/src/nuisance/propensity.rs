use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::stats::expit;
use crate::survival::SubjectRecord;

use super::linalg::solve_spd;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
/// Coefficients beyond this magnitude are taken as separation.
const DIVERGENCE: f64 = 30.0;

/// Logistic model for `P(A = 1 | L)` with truncated predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub design: DesignSpec,
    /// Intercept first, then one per conditioning covariate.
    pub coefficients: Vec<f64>,
    pub bounds: (f64, f64),
    pub iterations: usize,
}

impl PropensityModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        let row = self.design.row(0, x);
        self.coefficients[0] + row.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Truncated `pi(1 | L)`.
    pub fn treated_probability(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x)).clamp(self.bounds.0, self.bounds.1)
    }

    /// Truncated `pi(a | L)`.
    pub fn probability(&self, arm: usize, x: &[f64]) -> f64 {
        let p1 = self.treated_probability(x);
        if arm == 1 {
            p1
        } else {
            (1.0 - p1).clamp(self.bounds.0, self.bounds.1)
        }
    }
}

fn log_likelihood(x: &[f64], y: &[f64], beta: &[f64], q: usize) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let eta: f64 = x[i * q..(i + 1) * q].iter().zip(beta).map(|(a, b)| a * b).sum();
            // y*eta - log(1 + e^eta), stable for large |eta|
            yi * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p())
        })
        .sum()
}

/// Logistic regression of treatment on `conditioning` covariates by
/// Newton-Raphson (max-norm score < 1e-8, at most 100 iterations).
pub fn fit_propensity(subjects: &[SubjectRecord], conditioning: &[usize], bounds: (f64, f64)) -> Result<PropensityModel> {
    let n = subjects.len();
    let treated = subjects.iter().filter(|s| s.treatment == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::ConstantTreatment);
    }
    let design = DesignSpec::covariates(conditioning.to_vec());
    let q = design.ncols() + 1;
    let mut x = vec![0.0; n * q];
    for (i, s) in subjects.iter().enumerate() {
        x[i * q] = 1.0;
        design.fill_row(0, &s.covariates, &mut x[i * q + 1..(i + 1) * q]);
    }
    let y: Vec<f64> = subjects.iter().map(|s| f64::from(s.treatment)).collect();

    let mut beta = vec![0.0; q];
    beta[0] = (treated as f64 / (n - treated) as f64).ln();
    let mut ll = log_likelihood(&x, &y, &beta, q);
    let mut iterations = 0;
    loop {
        let mut score = vec![0.0; q];
        let mut info = vec![0.0; q * q];
        for i in 0..n {
            let row = &x[i * q..(i + 1) * q];
            let mu = expit(row.iter().zip(&beta).map(|(a, b)| a * b).sum());
            let w = mu * (1.0 - mu);
            for a in 0..q {
                score[a] += (y[i] - mu) * row[a];
                for b in a..q {
                    info[a * q + b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                info[a * q + b] = info[b * q + a];
            }
        }
        if score.iter().all(|s| s.abs() < SCORE_TOL) {
            break;
        }
        if iterations >= MAX_ITER {
            return Err(Error::NonConvergence {
                what: "logistic regression",
                iterations,
                last: beta,
            });
        }
        let step = solve_spd(&info, q, &score).ok_or(Error::Separation)?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cll = log_likelihood(&x, &y, &cand, q);
            if cll >= ll - 1e-12 * ll.abs() || t < 1e-10 {
                beta = cand;
                ll = cll;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if beta.iter().any(|b| b.abs() > DIVERGENCE) {
            return Err(Error::Separation);
        }
    }
    Ok(PropensityModel {
        design,
        coefficients: beta,
        bounds,
        iterations,
    })
}
