//! Simulation design: two binary predictive covariates, four (or 28)
//! prognostic covariates, confounded binary treatment, and a two-cause
//! competing-risks outcome with Fine-Gray subdistribution hazards for the
//! main event.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::expit;
use crate::survival::{CohortDataset, EventType, SubgroupKey, SubjectRecord, DEFAULT_MAX_LEVELS};
use crate::tmle::{InitialLearner, PipelineConfig};

pub const P_MAIN: f64 = 0.7;
pub const TARGET_CENSORING: f64 = 0.25;
pub const ORACLE_DRAWS: usize = 1_000_000;
const CALIBRATION_DRAWS: usize = 100_000;
const CALIBRATION_SEED: u64 = 0x00C0_FFEE;
const ORACLE_SEED: u64 = 0x0DAC_1E5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4, Scenario::S5];

    /// (outcome, treatment, censoring) misspecified.
    pub fn misspecified(self) -> (bool, bool, bool) {
        match self {
            Scenario::S1 => (false, false, false),
            Scenario::S2 => (true, false, false),
            Scenario::S3 => (false, true, false),
            Scenario::S4 => (false, false, true),
            Scenario::S5 => (false, true, true),
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        match s.to_ascii_uppercase().as_str() {
            "S1" | "1" => Some(Scenario::S1),
            "S2" | "2" => Some(Scenario::S2),
            "S3" | "3" => Some(Scenario::S3),
            "S4" | "4" => Some(Scenario::S4),
            "S5" | "5" => Some(Scenario::S5),
            _ => None,
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Law of the competing-event time given `Y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompetingTime {
    /// Exponential with mean `exp(Y1 / 2)`.
    Mean,
    /// Exponential with rate `exp(Y1 / 2)`.
    Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub scenario: Scenario,
    pub high_dim: bool,
    pub t0_quantile: f64,
    pub seed: u64,
    /// Censoring rate scale; calibrated to 25% censoring when `None`.
    pub lambda0: Option<f64>,
    pub competing_time: CompetingTime,
    /// Remove every treatment term from `Y1`.
    pub null_effect: bool,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n: usize, seed: u64) -> Self {
        ScenarioConfig {
            n,
            scenario,
            high_dim: false,
            t0_quantile: 0.5,
            seed,
            lambda0: None,
            competing_time: CompetingTime::Mean,
            null_effect: false,
        }
    }

    pub fn n_prognostic(&self) -> usize {
        if self.high_dim {
            28
        } else {
            4
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let mut names = vec!["V1".to_string(), "V2".to_string()];
        names.extend((1..=self.n_prognostic()).map(|j| format!("L{j}")));
        names
    }

    /// Effective censoring scale.
    pub fn resolved_lambda0(&self) -> Result<f64> {
        match self.lambda0 {
            Some(l) => Ok(l),
            None => calibrated_lambda0(self.high_dim, self.competing_time),
        }
    }
}

/// Column of `L_j` (1-based) in the covariate vector.
#[inline]
pub fn l(j: usize) -> usize {
    j + 1
}

/// Prognostic part of `Y1`.
#[inline]
fn outcome_l(x: &[f64], high_dim: bool) -> f64 {
    if high_dim {
        -0.9 * x[l(1)] - 0.15 * x[l(2)] + 0.2 * x[l(9)] - 0.2 * x[l(10)]
    } else {
        -0.9 * x[l(1)] - 0.1 * x[l(2)]
    }
}

/// `Y1(a, v, L)` given the prognostic part.
#[inline]
fn y1(v1: f64, v2: f64, a: f64, lin_l: f64, null_effect: bool) -> f64 {
    let effect = if null_effect {
        0.0
    } else {
        (-0.8 * v1 + 0.6 * v2) * a + 0.5 * (a - 0.5)
    };
    0.2 * v1 + lin_l + effect
}

/// `F1(t | Y1) = 1 - {1 - p(1 - e^-t)}^exp(Y1)`.
pub fn true_cif(t: f64, y: f64) -> f64 {
    let base = (-P_MAIN * (-(-t).exp_m1())).ln_1p();
    -(y.exp() * base).exp_m1()
}

/// `P(cause 2 | Y1) = (1-p)^exp(Y1) = 1 - F1(inf | Y1)`.
pub fn competing_probability(y: f64) -> f64 {
    ((1.0 - P_MAIN).ln() * y.exp()).exp()
}

/// Main-event time with `F1(t | Y1) / F1(inf | Y1) = u`.
pub fn main_event_time(u: f64, y: f64) -> f64 {
    let f_inf = 1.0 - competing_probability(y);
    // 1 - p(1 - e^-t) = (1 - u F1(inf))^exp(-Y1)
    let inner = -((-u * f_inf).ln_1p() * (-y).exp()).exp_m1();
    -(-(inner / P_MAIN)).ln_1p()
}

fn treatment_lin(x: &[f64], high_dim: bool) -> f64 {
    let v = -0.2 * x[0] - 0.1 * x[1];
    if high_dim {
        v + 1.5 * x[l(1)] - 0.1 * x[l(2)] + 0.4 * x[l(3)] - 0.1 * x[l(9)] - 0.1 * x[l(10)]
    } else {
        v + 1.5 * x[l(1)] + 0.1 * x[l(3)]
    }
}

fn censoring_lin(x: &[f64], high_dim: bool) -> f64 {
    let v = 0.1 * x[0] - 0.2 * x[1] - 0.1 * x[l(1)];
    if high_dim {
        v + 0.1 * x[l(9)] - 0.1 * x[l(10)]
    } else {
        v + 0.05 * x[l(4)]
    }
}

/// One subject before censoring is applied.
struct Latent {
    covariates: Vec<f64>,
    treatment: u8,
    time: f64,
    cause: EventType,
    /// `exp(censoring linear predictor)`.
    cens_risk: f64,
    /// Unit exponential; `C = e / (lambda0 * cens_risk)`.
    cens_unit: f64,
}

fn draw_covariates<R: Rng>(rng: &mut R, high_dim: bool) -> Vec<f64> {
    let q = if high_dim { 28 } else { 4 };
    let n_binary = if high_dim { 8 } else { 1 };
    let mut x = Vec::with_capacity(2 + q);
    x.push(f64::from(u8::from(rng.random_bool(0.5))));
    x.push(f64::from(u8::from(rng.random_bool(0.5))));
    for j in 1..=q {
        if j <= n_binary {
            x.push(f64::from(u8::from(rng.random_bool(0.5))));
        } else {
            x.push(rng.sample(StandardNormal));
        }
    }
    x
}

fn draw_latent<R: Rng>(rng: &mut R, high_dim: bool, competing: CompetingTime, null_effect: bool) -> Latent {
    let x = draw_covariates(rng, high_dim);
    let a = u8::from(rng.random::<f64>() < expit(treatment_lin(&x, high_dim)));
    let y = y1(x[0], x[1], f64::from(a), outcome_l(&x, high_dim), null_effect);
    let u_cause: f64 = rng.random();
    let u_time: f64 = rng.random();
    let (time, cause) = if u_cause < competing_probability(y) {
        let unit: f64 = rng.sample(Exp1);
        let t = match competing {
            CompetingTime::Mean => unit * (0.5 * y).exp(),
            CompetingTime::Rate => unit / (0.5 * y).exp(),
        };
        (t, EventType::Competing)
    } else {
        (main_event_time(u_time, y), EventType::Main)
    };
    let cens_risk = censoring_lin(&x, high_dim).exp();
    let cens_unit: f64 = rng.sample(Exp1);
    Latent {
        covariates: x,
        treatment: a,
        time,
        cause,
        cens_risk,
        cens_unit,
    }
}

/// Independent stream for replicate `index` under `master` seed.
pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Draw a cohort of `config.n` subjects with `V1, V2` predictive.
pub fn simulate(config: &ScenarioConfig) -> Result<CohortDataset> {
    simulate_with(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

pub fn simulate_with<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> Result<CohortDataset> {
    if config.n < 100 {
        return Err(Error::InvalidData(format!("sample size {} below 100", config.n)));
    }
    let lambda0 = config.resolved_lambda0()?;
    let subjects = (0..config.n)
        .map(|i| {
            let lat = draw_latent(rng, config.high_dim, config.competing_time, config.null_effect);
            let c = lat.cens_unit / (lambda0 * lat.cens_risk);
            let (time, event) = if c < lat.time { (c, EventType::Censored) } else { (lat.time, lat.cause) };
            SubjectRecord {
                id: (i + 1).to_string(),
                time,
                event,
                treatment: lat.treatment,
                covariates: lat.covariates,
            }
        })
        .collect();
    let names = config.covariate_names();
    let prognostic = (2..names.len()).collect();
    CohortDataset::new(subjects, names, vec![0, 1], prognostic, DEFAULT_MAX_LEVELS)
}

fn censoring_share(latent: &[Latent], lambda0: f64) -> f64 {
    latent.iter().filter(|s| s.cens_unit / (lambda0 * s.cens_risk) < s.time).count() as f64 / latent.len() as f64
}

/// Bisection of `lambda0` over `[1e-4, 10]` on common random numbers so the
/// censoring share of `draws` subjects is within 0.005 of `target`.
pub fn calibrate_lambda0(target: f64, high_dim: bool, competing: CompetingTime, draws: usize, seed: u64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Unreachable(target));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent: Vec<Latent> = (0..draws).map(|_| draw_latent(&mut rng, high_dim, competing, false)).collect();
    let (mut lo, mut hi) = (1e-4_f64, 10.0_f64);
    if censoring_share(&latent, lo) > target + 0.005 || censoring_share(&latent, hi) < target - 0.005 {
        return Err(Error::Unreachable(target));
    }
    // geometric bisection: the share is monotone in lambda0
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if censoring_share(&latent, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda0 = (lo * hi).sqrt();
    if (censoring_share(&latent, lambda0) - target).abs() > 0.005 {
        return Err(Error::Unreachable(target));
    }
    Ok(lambda0)
}

/// `lambda0` giving 25% censoring, computed once per design variant.
pub fn calibrated_lambda0(high_dim: bool, competing: CompetingTime) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<(bool, CompetingTime), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&v) = cache.lock().expect("lambda0 cache poisoned").get(&(high_dim, competing)) {
        return Ok(v);
    }
    let v = calibrate_lambda0(TARGET_CENSORING, high_dim, competing, CALIBRATION_DRAWS, CALIBRATION_SEED)?;
    cache.lock().expect("lambda0 cache poisoned").insert((high_dim, competing), v);
    Ok(v)
}

/// Oracle CATE per subgroup at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueCate {
    pub horizon: f64,
    /// `(subgroup, psi, Monte Carlo standard error)` in subgroup order.
    pub values: Vec<(SubgroupKey, f64, f64)>,
    pub oracle_draws: usize,
}

impl TrueCate {
    pub fn get(&self, key: &SubgroupKey) -> Option<f64> {
        self.values.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| *v)
    }
}

/// Prognostic parts of `Y1` for `draws` independent `L` vectors.
pub fn oracle_sample(high_dim: bool, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| outcome_l(&draw_covariates(&mut rng, high_dim), high_dim))
        .collect()
}

fn cached_oracle_sample(high_dim: bool) -> &'static [f64] {
    static LOW: OnceLock<Vec<f64>> = OnceLock::new();
    static HIGH: OnceLock<Vec<f64>> = OnceLock::new();
    let cell = if high_dim { &HIGH } else { &LOW };
    cell.get_or_init(|| oracle_sample(high_dim, ORACLE_DRAWS, ORACLE_SEED))
}

/// `Psi_m = E_L[F1(t0|1,v_m,L) - F1(t0|0,v_m,L)]` over a given `L` sample.
pub fn true_cate_from_sample(sample: &[f64], t0: f64, null_effect: bool) -> TrueCate {
    let base = (-P_MAIN * (-(-t0).exp_m1())).ln_1p();
    let mut values = Vec::with_capacity(4);
    for v1 in [0.0, 1.0] {
        for v2 in [0.0, 1.0] {
            let shift1 = y1(v1, v2, 1.0, 0.0, null_effect).exp();
            let shift0 = y1(v1, v2, 0.0, 0.0, null_effect).exp();
            let (sum, sum_sq) = sample
                .par_iter()
                .map(|&lin| {
                    let e = lin.exp();
                    let d = (e * shift0 * base).exp() - (e * shift1 * base).exp();
                    (d, d * d)
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let m = sample.len() as f64;
            let mean = sum / m;
            let var = (sum_sq / m - mean * mean).max(0.0);
            values.push((SubgroupKey { values: vec![v1, v2] }, mean, (var / m).sqrt()));
        }
    }
    TrueCate {
        horizon: t0,
        values,
        oracle_draws: sample.len(),
    }
}

/// Oracle CATE with the cached 10^6-draw sample.
pub fn true_cate(config: &ScenarioConfig, t0: f64) -> Result<TrueCate> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidData(format!("horizon must be positive, got {t0}")));
    }
    Ok(true_cate_from_sample(cached_oracle_sample(config.high_dim), t0, config.null_effect))
}

/// Covariate sets of the outcome, treatment and censoring models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioDesigns {
    pub outcome: Vec<usize>,
    pub treatment: Vec<usize>,
    pub censoring: Vec<usize>,
}

/// Correct sets are the true covariates (all `L` when high-dimensional);
/// misspecification swaps `{L1,L2}->{L3,L4}` (outcome), `{L1,L3}->{L2,L4}`
/// (treatment) and `{L1,L4}->{L2,L3}` (censoring).
pub fn misspecified_designs(scenario: Scenario, high_dim: bool) -> ScenarioDesigns {
    let (mo, mt, mc) = scenario.misspecified();
    let pick = |wrong: bool, correct: [usize; 2], swap: [usize; 2]| -> Vec<usize> {
        if high_dim {
            let all = (1..=28).map(l);
            if wrong {
                all.filter(|&c| c != l(correct[0]) && c != l(correct[1])).collect()
            } else {
                all.collect()
            }
        } else if wrong {
            swap.iter().map(|&j| l(j)).collect()
        } else {
            correct.iter().map(|&j| l(j)).collect()
        }
    };
    ScenarioDesigns {
        outcome: pick(mo, [1, 2], [3, 4]),
        treatment: pick(mt, [1, 3], [2, 4]),
        censoring: pick(mc, [1, 4], [2, 3]),
    }
}

/// Pipeline configuration for a scenario at horizon `t0`.
pub fn scenario_pipeline(scenario: Scenario, high_dim: bool, t0: f64, initial: InitialLearner) -> PipelineConfig {
    let d = misspecified_designs(scenario, high_dim);
    PipelineConfig {
        outcome_covariates: d.outcome,
        treatment_covariates: d.treatment,
        censoring_covariates: d.censoring,
        initial,
        ..PipelineConfig::new(t0, Vec::new())
    }
}
