use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::survival::{EventType, SubjectRecord};

use super::partial::RiskProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CensoringKind {
    KaplanMeier,
    CoxPH,
}

/// Censoring survival `G(t | A, L) = P(C > t | A, L)`.
///
/// Kaplan-Meier: `values` holds the product-limit survival after each jump.
/// Cox: `values` holds the Breslow cumulative baseline hazard after each
/// jump and `G = exp(-Lambda0(t) exp(z'gamma))`. Either way, evaluations are
/// floored at `floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    pub kind: CensoringKind,
    pub design: DesignSpec,
    pub coefficients: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub floor: f64,
}

impl CensoringModel {
    /// `exp(z'gamma)`; 1 for Kaplan-Meier.
    pub fn risk_score(&self, treatment: u8, x: &[f64]) -> f64 {
        match self.kind {
            CensoringKind::KaplanMeier => 1.0,
            CensoringKind::CoxPH => {
                let z = self.design.row(treatment, x);
                z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>().exp()
            }
        }
    }

    fn step_value(&self, count: usize) -> f64 {
        if count == 0 {
            match self.kind {
                CensoringKind::KaplanMeier => 1.0,
                CensoringKind::CoxPH => 0.0,
            }
        } else {
            self.values[count - 1]
        }
    }

    /// Baseline curve at `t` (right-continuous): KM survival, or Cox
    /// cumulative baseline hazard.
    pub fn baseline(&self, t: f64) -> f64 {
        self.step_value(self.times.partition_point(|&s| s <= t))
    }

    /// Baseline curve just before `t`.
    pub fn baseline_left(&self, t: f64) -> f64 {
        self.step_value(self.times.partition_point(|&s| s < t))
    }

    /// Floored survival from a baseline value and a risk score.
    #[inline]
    pub fn survival_from(&self, baseline: f64, risk: f64) -> f64 {
        let g = match self.kind {
            CensoringKind::KaplanMeier => baseline,
            CensoringKind::CoxPH => (-baseline * risk).exp(),
        };
        g.max(self.floor)
    }

    pub fn survival(&self, treatment: u8, x: &[f64], t: f64) -> f64 {
        self.survival_from(self.baseline(t), self.risk_score(treatment, x))
    }

    /// `G(t- | a, L)`.
    pub fn survival_left(&self, treatment: u8, x: &[f64], t: f64) -> f64 {
        self.survival_from(self.baseline_left(t), self.risk_score(treatment, x))
    }
}

/// Fit the censoring distribution, treating `D~ = 0` as the event.
///
/// `design` is only used for the Cox model. Censoring at time 0 carries no
/// jump, so `G(0) = 1` always.
pub fn fit_censoring(subjects: &[SubjectRecord], kind: CensoringKind, design: &DesignSpec, floor: f64) -> Result<CensoringModel> {
    let mut times: Vec<f64> = subjects
        .iter()
        .filter(|s| s.event == EventType::Censored && s.time > 0.0)
        .map(|s| s.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    match kind {
        CensoringKind::KaplanMeier => {
            let mut sorted: Vec<f64> = subjects.iter().map(|s| s.time).collect();
            sorted.sort_by(f64::total_cmp);
            let mut censored: Vec<f64> = subjects
                .iter()
                .filter(|s| s.event == EventType::Censored)
                .map(|s| s.time)
                .collect();
            censored.sort_by(f64::total_cmp);
            let mut surv = 1.0;
            let mut values = Vec::with_capacity(times.len());
            for &c in &times {
                let at_risk = (sorted.len() - sorted.partition_point(|&s| s < c)) as f64;
                let d = (censored.partition_point(|&s| s <= c) - censored.partition_point(|&s| s < c)) as f64;
                surv *= 1.0 - d / at_risk;
                values.push(surv);
            }
            Ok(CensoringModel {
                kind,
                design: DesignSpec::default(),
                coefficients: Vec::new(),
                times,
                values,
                floor,
            })
        }
        CensoringKind::CoxPH => {
            if times.is_empty() {
                return Err(Error::NoCensoringEvents);
            }
            let p = design.ncols();
            let x = design.matrix(subjects);
            let obs: Vec<f64> = subjects.iter().map(|s| s.time).collect();
            let is_event: Vec<bool> = subjects
                .iter()
                .map(|s| s.event == EventType::Censored && s.time > 0.0)
                .collect();
            let unit_len: Vec<usize> = obs.iter().map(|&t| times.partition_point(|&g| g <= t)).collect();
            let problem = RiskProblem::new(x, p, &obs, &is_event, times.clone(), unit_len, Vec::new());
            let (gamma, _) = problem.newton(vec![0.0; p], 1e-8, 100, "censoring Cox model")?;
            let jumps = problem.breslow(&gamma);
            let values = jumps
                .iter()
                .scan(0.0, |acc, j| {
                    *acc += j;
                    Some(*acc)
                })
                .collect();
            Ok(CensoringModel {
                kind,
                design: design.clone(),
                coefficients: gamma,
                times,
                values,
                floor,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subj(time: f64, event: EventType, x: f64) -> SubjectRecord {
        SubjectRecord {
            id: String::new(),
            time,
            event,
            treatment: 0,
            covariates: vec![x],
        }
    }

    #[test]
    fn km_no_censoring_is_one() {
        let s = vec![subj(1.0, EventType::Main, 0.0), subj(2.0, EventType::Competing, 0.0)];
        let m = fit_censoring(&s, CensoringKind::KaplanMeier, &DesignSpec::default(), 0.05).unwrap();
        for t in [0.0, 0.5, 1.0, 5.0] {
            assert_eq!(m.survival(0, &[0.0], t), 1.0);
        }
    }

    #[test]
    fn km_hand_computed() {
        // censor times 1, 3; events 2, 4
        let s = vec![
            subj(1.0, EventType::Censored, 0.0),
            subj(2.0, EventType::Main, 0.0),
            subj(3.0, EventType::Censored, 0.0),
            subj(4.0, EventType::Competing, 0.0),
        ];
        let m = fit_censoring(&s, CensoringKind::KaplanMeier, &DesignSpec::default(), 0.05).unwrap();
        assert_eq!(m.survival(0, &[0.0], 0.0), 1.0);
        assert!((m.survival(0, &[0.0], 1.0) - 0.75).abs() < 1e-15);
        assert!((m.survival_left(0, &[0.0], 1.0) - 1.0).abs() < 1e-15);
        assert!((m.survival(0, &[0.0], 2.5) - 0.75).abs() < 1e-15);
        // at t=3 two subjects at risk, one censored
        assert!((m.survival(0, &[0.0], 3.0) - 0.375).abs() < 1e-15);
        assert!((m.survival(0, &[0.0], 10.0) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn cox_requires_censoring() {
        let s = vec![subj(1.0, EventType::Main, 0.0), subj(2.0, EventType::Main, 1.0)];
        assert!(matches!(
            fit_censoring(&s, CensoringKind::CoxPH, &DesignSpec::covariates(vec![0]), 0.05),
            Err(Error::NoCensoringEvents)
        ));
    }

    #[test]
    fn cox_floor_and_monotone() {
        let s: Vec<_> = (0..40)
            .map(|i| {
                let x = (i % 3) as f64;
                let ev = if i % 2 == 0 { EventType::Censored } else { EventType::Main };
                subj(1.0 + i as f64 * 0.1 + x * 0.37, ev, x)
            })
            .collect();
        let m = fit_censoring(&s, CensoringKind::CoxPH, &DesignSpec::covariates(vec![0]), 0.05).unwrap();
        let mut prev = 1.0;
        for k in 0..100 {
            let g = m.survival(0, &[2.0], k as f64 * 0.1);
            assert!(g <= prev + 1e-15 && g >= 0.05);
            prev = g;
        }
        assert_eq!(m.survival(0, &[1.0], 0.0), 1.0);
    }
}
