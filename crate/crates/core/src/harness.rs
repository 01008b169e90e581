//! Monte Carlo orchestration: replicate simulation, per-subgroup estimation
//! against the oracle CATE, aggregation and report files.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{replicate_rng, scenario_pipeline, simulate_with, true_cate, Scenario, ScenarioConfig};
use crate::error::Result;
use crate::learners::{fit_learner_subgroup, LearnerKind};
use crate::survival::SubgroupKey;
use crate::tmle::{fit_subgroup, per_subgroup, CateEstimate, InitialLearner};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    Tmle(InitialLearner),
    Learner(LearnerKind),
}

impl Estimator {
    pub const DESK: [Estimator; 3] = [
        Estimator::Tmle(InitialLearner::S),
        Estimator::Learner(LearnerKind::SLearner),
        Estimator::Learner(LearnerKind::TLearner),
    ];

    pub fn parse(s: &str) -> Option<Estimator> {
        match s.to_ascii_lowercase().as_str() {
            "tmle" | "tmle+s" => Some(Estimator::Tmle(InitialLearner::S)),
            "tmle+t" => Some(Estimator::Tmle(InitialLearner::T)),
            "s" => Some(Estimator::Learner(LearnerKind::SLearner)),
            "t" => Some(Estimator::Learner(LearnerKind::TLearner)),
            _ => None,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Tmle(InitialLearner::S) => "TMLE+S",
            Estimator::Tmle(InitialLearner::T) => "TMLE+T",
            Estimator::Learner(LearnerKind::SLearner) => "S",
            Estimator::Learner(LearnerKind::TLearner) => "T",
        })
    }
}

/// One estimator on one subgroup of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: Scenario,
    pub n: usize,
    pub replicate: u64,
    pub estimator: Estimator,
    pub subgroup: String,
    pub t0: f64,
    pub truth: f64,
    /// `None` when the fit failed; `error` then holds the message.
    pub estimate: Option<CateEstimate>,
    pub error: Option<String>,
    /// Mean martingale term before and after targeting (TMLE only).
    pub martingale: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSummary {
    pub subgroup: String,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    pub rejection: Option<f64>,
    pub mean_iterations: f64,
    pub mean_truth: f64,
    pub used: usize,
    pub failures: usize,
    pub not_converged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub scenario: Scenario,
    pub estimator: Estimator,
    pub n: usize,
    pub replicates: usize,
    pub t0_quantile: f64,
    pub high_dim: bool,
    pub subgroups: Vec<SubgroupSummary>,
    /// More than 5% of replicates failed in some subgroup.
    pub unreliable: bool,
}

fn subgroup_labels(names: &[&str], key: &SubgroupKey) -> String {
    names
        .iter()
        .zip(&key.values)
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Estimate every subgroup of replicate `index` with every estimator.
pub fn run_replicate(config: &ScenarioConfig, estimators: &[Estimator], index: u64) -> Vec<ReplicateRecord> {
    let fail = |est: Estimator, subgroup: String, t0: f64, truth: f64, msg: String| ReplicateRecord {
        scenario: config.scenario,
        n: config.n,
        replicate: index,
        estimator: est,
        subgroup,
        t0,
        truth,
        estimate: None,
        error: Some(msg),
        martingale: None,
    };
    let mut rng = replicate_rng(config.seed, index);
    let prepared = simulate_with(config, &mut rng).and_then(|data| {
        let t0 = data
            .event_time_quantile(config.t0_quantile)
            .ok_or(crate::Error::NoMainEvents)?;
        let truth = true_cate(config, t0)?;
        Ok((data, t0, truth))
    });
    let (data, t0, truth) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let mut out = Vec::new();
            for &est in estimators {
                for v1 in [0.0, 1.0] {
                    for v2 in [0.0, 1.0] {
                        let label = subgroup_labels(&["V1", "V2"], &SubgroupKey { values: vec![v1, v2] });
                        out.push(fail(est, label, f64::NAN, f64::NAN, e.to_string()));
                    }
                }
            }
            return out;
        }
    };
    let mut out = Vec::new();
    for &est in estimators {
        let initial = match est {
            Estimator::Tmle(i) => i,
            Estimator::Learner(LearnerKind::SLearner) => InitialLearner::S,
            Estimator::Learner(LearnerKind::TLearner) => InitialLearner::T,
        };
        let pipeline = scenario_pipeline(config.scenario, config.high_dim, t0, initial);
        let results = per_subgroup(&data, |s, key, label| match est {
            Estimator::Tmle(_) => fit_subgroup(s, key, label, &pipeline)
                .map(|f| (f.estimate, Some((f.initial_martingale_mean, f.final_martingale_mean)))),
            Estimator::Learner(kind) => fit_learner_subgroup(kind, s, key, label, &pipeline, None).map(|e| (e, None)),
        });
        for ((key, _), (_, result)) in data.subgroups().iter().zip(results) {
            let label = data.subgroup_label(key);
            let psi = truth.get(key).unwrap_or(f64::NAN);
            match result {
                Ok((estimate, martingale)) => out.push(ReplicateRecord {
                    scenario: config.scenario,
                    n: config.n,
                    replicate: index,
                    estimator: est,
                    subgroup: label,
                    t0,
                    truth: psi,
                    estimate: Some(estimate),
                    error: None,
                    martingale,
                }),
                Err(e) => out.push(fail(est, label, t0, psi, e.to_string())),
            }
        }
    }
    out
}

/// Aggregate records (all of one scenario, estimator and `n`) in the order
/// given.
pub fn summarize(config: &ScenarioConfig, estimator: Estimator, replicates: usize, records: &[ReplicateRecord]) -> McSummary {
    let mut labels: Vec<String> = records.iter().map(|r| r.subgroup.clone()).collect();
    labels.sort();
    labels.dedup();
    let subgroups: Vec<SubgroupSummary> = labels
        .into_iter()
        .map(|label| {
            let rows: Vec<&ReplicateRecord> = records.iter().filter(|r| r.subgroup == label).collect();
            let ok: Vec<(&CateEstimate, f64)> = rows
                .iter()
                .filter_map(|r| r.estimate.as_ref().map(|e| (e, r.truth)))
                .collect();
            let m = ok.len() as f64;
            let errors: Vec<f64> = ok.iter().map(|(e, t)| e.psi_hat - t).collect();
            let bias = errors.iter().sum::<f64>() / m;
            let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
            let has_ci = matches!(estimator, Estimator::Tmle(_));
            SubgroupSummary {
                subgroup: label,
                bias,
                rmse,
                coverage: has_ci.then(|| ok.iter().filter(|(e, t)| e.covers(*t)).count() as f64 / m),
                rejection: has_ci.then(|| ok.iter().filter(|(e, _)| e.rejects_null()).count() as f64 / m),
                mean_iterations: ok.iter().map(|(e, _)| e.iterations as f64).sum::<f64>() / m,
                mean_truth: ok.iter().map(|(_, t)| t).sum::<f64>() / m,
                used: ok.len(),
                failures: rows.len() - ok.len(),
                not_converged: ok.iter().filter(|(e, _)| !e.converged).count(),
            }
        })
        .collect();
    let unreliable = subgroups
        .iter()
        .any(|s| s.failures as f64 > 0.05 * replicates as f64);
    McSummary {
        scenario: config.scenario,
        estimator,
        n: config.n,
        replicates,
        t0_quantile: config.t0_quantile,
        high_dim: config.high_dim,
        subgroups,
        unreliable,
    }
}

/// `b` replicates of `config` (its seed is the master seed), one summary
/// per estimator, plus the per-replicate records in replicate order.
pub fn run_mc(config: &ScenarioConfig, estimators: &[Estimator], b: usize) -> Result<(Vec<McSummary>, Vec<ReplicateRecord>)> {
    if b == 0 {
        return Err(crate::Error::InvalidData("need at least one replicate".into()));
    }
    // resolve the calibration once before fanning out
    config.resolved_lambda0()?;
    let records: Vec<ReplicateRecord> = (0..b as u64)
        .into_par_iter()
        .map(|r| run_replicate(config, estimators, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summaries = estimators
        .iter()
        .map(|&est| {
            let rows: Vec<ReplicateRecord> = records.iter().filter(|r| r.estimator == est).cloned().collect();
            summarize(config, est, b, &rows)
        })
        .collect();
    Ok((summaries, records))
}

/// Scenario grid of a Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McProfile {
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub scenarios: Vec<Scenario>,
    pub estimators: Vec<Estimator>,
}

impl McProfile {
    pub fn desk() -> Self {
        McProfile {
            sample_sizes: vec![1500],
            replicates: 200,
            scenarios: Scenario::ALL.to_vec(),
            estimators: Estimator::DESK.to_vec(),
        }
    }

    pub fn full() -> Self {
        McProfile {
            sample_sizes: vec![800, 1500, 3000],
            replicates: 500,
            ..Self::desk()
        }
    }
}

/// Every (scenario, n) cell of `profile` with `base` supplying seed, horizon
/// quantile and design variant.
pub fn run_profile(profile: &McProfile, base: &ScenarioConfig) -> Result<(Vec<McSummary>, Vec<ReplicateRecord>)> {
    let mut summaries = Vec::new();
    let mut records = Vec::new();
    for &scenario in &profile.scenarios {
        for &n in &profile.sample_sizes {
            let config = ScenarioConfig {
                scenario,
                n,
                ..base.clone()
            };
            let (s, r) = run_mc(&config, &profile.estimators, profile.replicates)?;
            summaries.extend(s);
            records.extend(r);
        }
    }
    Ok((summaries, records))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn coverage_csv(summaries: &[McSummary]) -> String {
    let mut out = String::from("scenario,subgroup,n,estimator,coverage,rejection,used,failures\n");
    for s in summaries.iter().filter(|s| matches!(s.estimator, Estimator::Tmle(_))) {
        for g in &s.subgroups {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.scenario,
                g.subgroup,
                s.n,
                s.estimator,
                opt(g.coverage),
                opt(g.rejection),
                g.used,
                g.failures
            );
        }
    }
    out
}

pub fn bias_rmse_csv(summaries: &[McSummary]) -> String {
    let mut out = String::from("estimator,scenario,subgroup,n,bias,rmse,used,failures\n");
    for s in summaries {
        for g in &s.subgroups {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.estimator, s.scenario, g.subgroup, s.n, g.bias, g.rmse, g.used, g.failures
            );
        }
    }
    out
}

pub fn summary_text(summaries: &[McSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let _ = writeln!(
            out,
            "{} {} n={} B={} t0=q{} {}{}",
            s.scenario,
            s.estimator,
            s.n,
            s.replicates,
            s.t0_quantile,
            if s.high_dim { "high-dim" } else { "low-dim" },
            if s.unreliable { " UNRELIABLE" } else { "" }
        );
        for g in &s.subgroups {
            let _ = write!(out, "  {:<12} bias {:+.4} rmse {:.4}", g.subgroup, g.bias, g.rmse);
            if let (Some(c), Some(r)) = (g.coverage, g.rejection) {
                let _ = write!(out, " coverage {:.3} rejection {:.3} iters {:.2}", c, r, g.mean_iterations);
            }
            let _ = writeln!(out, " failures {} not-converged {}", g.failures, g.not_converged);
        }
    }
    out
}

pub fn replicates_csv(records: &[ReplicateRecord]) -> String {
    let mut out =
        String::from("scenario,n,replicate,estimator,subgroup,t0,truth,psi,se,ci_lo,ci_hi,p,iters,converged,error\n");
    for r in records {
        let _ = match &r.estimate {
            Some(e) => writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},",
                r.scenario,
                r.n,
                r.replicate,
                r.estimator,
                r.subgroup,
                r.t0,
                r.truth,
                e.psi_hat,
                opt(e.se),
                e.ci_lo,
                e.ci_hi,
                opt(e.p_value),
                e.iterations,
                e.converged
            ),
            None => writeln!(
                out,
                "{},{},{},{},{},{},{},,,,,,,,\"{}\"",
                r.scenario,
                r.n,
                r.replicate,
                r.estimator,
                r.subgroup,
                r.t0,
                r.truth,
                r.error.as_deref().unwrap_or("").replace('"', "'")
            ),
        };
    }
    out
}

/// Write `coverage.csv`, `bias_rmse.csv`, `summary.txt` and, when
/// `records` is given, `replicates.csv` into `dir`.
pub fn emit_report(summaries: &[McSummary], records: Option<&[ReplicateRecord]>, dir: &Path) -> Result<()> {
    if summaries.is_empty() {
        return Err(crate::Error::InvalidData("no summaries to report".into()));
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("coverage.csv"), coverage_csv(summaries))?;
    fs::write(dir.join("bias_rmse.csv"), bias_rmse_csv(summaries))?;
    fs::write(dir.join("summary.txt"), summary_text(summaries))?;
    if let Some(r) = records {
        fs::write(dir.join("replicates.csv"), replicates_csv(r))?;
    }
    Ok(())
}
