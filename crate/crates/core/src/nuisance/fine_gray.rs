//! Fine-Gray proportional subdistribution hazards model fitted by maximizing
//! the IPCW-weighted log partial likelihood, optionally with an L1 penalty.
//!
//! The fitted CIF is `F1(t | a, l) = 1 - exp(-exp(x(a,l)'beta) Lambda10(t))`
//! with a Breslow baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::survival::{EventType, SubjectRecord, TimeGrid};

use super::censoring::CensoringModel;
use super::ipcw::compute_ipcw;
use super::partial::{RiskProblem, Tail};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Penalty {
    None,
    Fixed(f64),
    /// K-fold cross-validated partial likelihood over a log-spaced grid.
    CrossValidated { folds: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
    pub cif_ceiling: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            newton_tol: 1e-8,
            newton_max_iter: 100,
            lasso_tol: 1e-6,
            lasso_max_iter: 20_000,
            cif_ceiling: 1.0 - 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdistributionModel {
    pub design: DesignSpec,
    pub coefficients: Vec<f64>,
    /// Distinct main-event times of the fitting data.
    pub jump_times: Vec<f64>,
    /// Breslow increments of the baseline cumulative subdistribution hazard.
    pub jumps: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub cif_ceiling: f64,
    pub l1_penalty: f64,
    pub iterations: usize,
}

impl SubdistributionModel {
    pub fn linear_predictor(&self, treatment: u8, x: &[f64]) -> f64 {
        let row = self.design.row(treatment, x);
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn cumulative_baseline(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Baseline increment at each time of `grid` (0 where the model has no jump).
    pub fn jumps_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter()
            .map(|&t| match self.jump_times.binary_search_by(|s| s.total_cmp(&t)) {
                Ok(k) => self.jumps[k],
                Err(_) => 0.0,
            })
            .collect()
    }

    pub fn predict_cif(&self, treatment: u8, x: &[f64], t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let cum = self.linear_predictor(treatment, x).exp() * self.cumulative_baseline(t);
        (-(-cum).exp_m1()).min(self.cif_ceiling)
    }
}

/// `1 - exp(-exp(x(a,l)'beta) Lambda10(t))`, clipped to the model ceiling.
pub fn predict_cif(model: &SubdistributionModel, treatment: u8, x: &[f64], t: f64) -> f64 {
    model.predict_cif(treatment, x, t)
}

fn build_problem(subjects: &[SubjectRecord], cens: &CensoringModel, design: &DesignSpec) -> Result<RiskProblem> {
    let grid = TimeGrid::from_subjects(subjects, f64::MAX)?;
    if grid.is_empty() {
        return Err(Error::NoMainEvents);
    }
    let weights = compute_ipcw(subjects, cens, &grid);
    let kk = grid.len();
    let tails = (0..subjects.len())
        .filter_map(|i| {
            weights.tail(i, kk).map(|(start, w)| Tail {
                subject: i,
                start,
                weights: w,
            })
        })
        .collect();
    let times: Vec<f64> = subjects.iter().map(|s| s.time).collect();
    let is_event: Vec<bool> = subjects.iter().map(|s| s.event == EventType::Main).collect();
    let unit_len = (0..subjects.len()).map(|i| weights.unit_len(i)).collect();
    Ok(RiskProblem::new(
        design.matrix(subjects),
        design.ncols(),
        &times,
        &is_event,
        grid.times().to_vec(),
        unit_len,
        tails,
    ))
}

/// Weighted log partial likelihood at `beta`.
pub fn fine_gray_log_partial_likelihood(
    subjects: &[SubjectRecord],
    cens: &CensoringModel,
    design: &DesignSpec,
    beta: &[f64],
) -> Result<f64> {
    Ok(build_problem(subjects, cens, design)?.evaluate(beta, false).loglik)
}

/// Weighted partial-likelihood score at `beta`.
pub fn fine_gray_score(subjects: &[SubjectRecord], cens: &CensoringModel, design: &DesignSpec, beta: &[f64]) -> Result<Vec<f64>> {
    Ok(build_problem(subjects, cens, design)?.evaluate(beta, false).score)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Proximal gradient with backtracking on `-loglik/n + lambda |beta|_1`.
fn lasso(problem: &RiskProblem, lambda: f64, start: Vec<f64>, opts: &FitOptions) -> Result<(Vec<f64>, usize)> {
    let n = problem.n as f64;
    let mut beta = start;
    let mut step = 1.0;
    let mut ev = problem.evaluate(&beta, false);
    for iter in 0..opts.lasso_max_iter {
        let f = -ev.loglik / n;
        let grad: Vec<f64> = ev.score.iter().map(|s| -s / n).collect();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&grad)
                .map(|(b, g)| soft_threshold(b - step * g, step * lambda))
                .collect();
            let cev = problem.evaluate(&cand, false);
            let fc = -cev.loglik / n;
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((c, b), g) in cand.iter().zip(&beta).zip(&grad) {
                lin += g * (c - b);
                sq += (c - b) * (c - b);
            }
            if fc.is_finite() && fc <= f + lin + sq / (2.0 * step) + 1e-14 * f.abs() {
                accepted = Some((cand, cev));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cev)) = accepted else {
            return Err(Error::NonConvergence {
                what: "penalized subdistribution model",
                iterations: iter,
                last: beta,
            });
        };
        let change = cand.iter().zip(&beta).fold(0.0_f64, |m, (c, b)| m.max((c - b).abs()));
        beta = cand;
        ev = cev;
        if change < opts.lasso_tol {
            return Ok((beta, iter + 1));
        }
        step *= 1.5;
    }
    Err(Error::NonConvergence {
        what: "penalized subdistribution model",
        iterations: opts.lasso_max_iter,
        last: beta,
    })
}

fn solve(problem: &RiskProblem, lambda: f64, start: Vec<f64>, opts: &FitOptions) -> Result<(Vec<f64>, usize)> {
    if lambda > 0.0 {
        lasso(problem, lambda, start, opts)
    } else {
        problem.newton(start, opts.newton_tol, opts.newton_max_iter, "subdistribution model")
    }
}

/// Cross-validated penalty: returns the selected `lambda` and the
/// `(lambda, cvl)` path, where `cvl` is the Verweij-van Houwelingen
/// cross-validated partial likelihood.
pub fn cross_validate_lambda(
    subjects: &[SubjectRecord],
    cens: &CensoringModel,
    design: &DesignSpec,
    folds: usize,
    seed: u64,
    n_lambda: usize,
    opts: &FitOptions,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let full = build_problem(subjects, cens, design)?;
    let p = design.ncols();
    let n = subjects.len() as f64;
    let score0 = full.evaluate(&vec![0.0; p], false).score;
    let lambda_max = score0.iter().fold(0.0_f64, |m, s| m.max(s.abs())) / n;
    if lambda_max == 0.0 || p == 0 {
        return Ok((0.0, vec![(0.0, 0.0)]));
    }
    let ratio: f64 = 0.01;
    let lambdas: Vec<f64> = (0..n_lambda)
        .map(|i| lambda_max * ratio.powf(i as f64 / (n_lambda.max(2) - 1) as f64))
        .collect();

    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = folds.clamp(2, subjects.len());
    let mut cvl = vec![0.0; lambdas.len()];
    for f in 0..folds {
        let train: Vec<SubjectRecord> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % folds != f)
            .map(|(_, &i)| subjects[i].clone())
            .collect();
        let Ok(train_problem) = build_problem(&train, cens, design) else {
            continue;
        };
        let mut beta = vec![0.0; p];
        for (l, &lambda) in lambdas.iter().enumerate() {
            let (b, _) = lasso(&train_problem, lambda, beta, opts)?;
            let contribution = full.evaluate(&b, false).loglik - train_problem.evaluate(&b, false).loglik;
            cvl[l] += contribution;
            beta = b;
        }
    }
    let best = (0..lambdas.len())
        .max_by(|&a, &b| cvl[a].total_cmp(&cvl[b]))
        .expect("non-empty lambda grid");
    Ok((lambdas[best], lambdas.into_iter().zip(cvl).collect()))
}

/// Fit the Fine-Gray model on `subjects` with IPCW weights from `cens`.
pub fn fit_fine_gray(
    subjects: &[SubjectRecord],
    cens: &CensoringModel,
    design: &DesignSpec,
    penalty: Penalty,
    opts: &FitOptions,
) -> Result<SubdistributionModel> {
    let problem = build_problem(subjects, cens, design)?;
    let lambda = match penalty {
        Penalty::None => 0.0,
        Penalty::Fixed(l) => {
            if !(l >= 0.0) {
                return Err(Error::InvalidData(format!("penalty must be non-negative, got {l}")));
            }
            l
        }
        Penalty::CrossValidated { folds, seed } => cross_validate_lambda(subjects, cens, design, folds, seed, 20, opts)?.0,
    };
    let (beta, iterations) = solve(&problem, lambda, vec![0.0; design.ncols()], opts)?;
    let jumps = problem.breslow(&beta);
    let cumulative = jumps
        .iter()
        .scan(0.0, |acc, j| {
            *acc += j;
            Some(*acc)
        })
        .collect();
    Ok(SubdistributionModel {
        design: design.clone(),
        coefficients: beta,
        jump_times: problem.grid.clone(),
        jumps,
        cumulative,
        cif_ceiling: opts.cif_ceiling,
        l1_penalty: lambda,
        iterations,
    })
}
