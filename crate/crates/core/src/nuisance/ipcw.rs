//! Inverse probability of censoring weights
//! `w_i(t) = 1(C_i >= T_i ^ t) G(t- | A_i, L_i) / G((T~_i ^ t)- | A_i, L_i)`
//! evaluated on a grid of main-event times.

use crate::survival::{EventType, SubjectRecord, TimeGrid};

use super::censoring::{CensoringKind, CensoringModel};

/// Source of `G(t_k- | A_i, L_i)` on the grid.
#[derive(Clone, Debug)]
enum GridSurvival {
    /// Marginal curve shared by every subject.
    Shared(Vec<f64>),
    /// `max(exp(-H_k r_i), floor)` with per-subject risk score.
    Proportional { cumhaz_left: Vec<f64>, risk: Vec<f64>, floor: f64 },
    /// Row-major `n x K` table.
    Dense(Vec<f64>),
}

/// Per-subject weight step functions on a [`TimeGrid`].
///
/// Subject `i` has weight 1 at every grid time `t_k <= T~_i`. Beyond that a
/// censored subject has weight 0, and an observed failure keeps the ratio
/// `G(t_k-) / G(T~_i-)`.
#[derive(Clone, Debug)]
pub struct IpcwWeights {
    grid: Vec<f64>,
    unit_len: Vec<usize>,
    event: Vec<EventType>,
    own_left: Vec<f64>,
    left: GridSurvival,
}

/// Weights for `subjects` under `cens`, conditional on each subject's own
/// treatment and covariates.
pub fn compute_ipcw(subjects: &[SubjectRecord], cens: &CensoringModel, grid: &TimeGrid) -> IpcwWeights {
    let times = grid.times().to_vec();
    let unit_len = subjects.iter().map(|s| grid.count_le(s.time)).collect();
    let event = subjects.iter().map(|s| s.event).collect();
    let own_left = subjects
        .iter()
        .map(|s| cens.survival_left(s.treatment, &s.covariates, s.time))
        .collect();
    let left = match cens.kind {
        CensoringKind::KaplanMeier => {
            GridSurvival::Shared(times.iter().map(|&t| cens.survival_from(cens.baseline_left(t), 1.0)).collect())
        }
        CensoringKind::CoxPH => GridSurvival::Proportional {
            cumhaz_left: times.iter().map(|&t| cens.baseline_left(t)).collect(),
            risk: subjects.iter().map(|s| cens.risk_score(s.treatment, &s.covariates)).collect(),
            floor: cens.floor,
        },
    };
    IpcwWeights {
        grid: times,
        unit_len,
        event,
        own_left,
        left,
    }
}

impl IpcwWeights {
    /// Weights from an arbitrary left-limit survival `g_left(i, t)`.
    pub fn from_fn(subjects: &[SubjectRecord], grid: &TimeGrid, g_left: impl Fn(usize, f64) -> f64) -> Self {
        let times = grid.times().to_vec();
        let k = times.len();
        let mut dense = vec![0.0; subjects.len() * k];
        for i in 0..subjects.len() {
            for (c, &t) in times.iter().enumerate() {
                dense[i * k + c] = g_left(i, t);
            }
        }
        IpcwWeights {
            unit_len: subjects.iter().map(|s| grid.count_le(s.time)).collect(),
            event: subjects.iter().map(|s| s.event).collect(),
            own_left: subjects.iter().enumerate().map(|(i, s)| g_left(i, s.time)).collect(),
            grid: times,
            left: GridSurvival::Dense(dense),
        }
    }

    pub fn len(&self) -> usize {
        self.event.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Number of grid points with `t_k <= T~_i`.
    pub fn unit_len(&self, i: usize) -> usize {
        self.unit_len[i]
    }

    #[inline]
    fn g_left(&self, i: usize, k: usize) -> f64 {
        match &self.left {
            GridSurvival::Shared(v) => v[k],
            GridSurvival::Proportional { cumhaz_left, risk, floor } => (-cumhaz_left[k] * risk[i]).exp().max(*floor),
            GridSurvival::Dense(d) => d[i * self.grid.len() + k],
        }
    }

    /// `w_i(t_k)`.
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        if k < self.unit_len[i] {
            return 1.0;
        }
        match self.event[i] {
            EventType::Censored => 0.0,
            EventType::Main | EventType::Competing => self.g_left(i, k) / self.own_left[i],
        }
    }

    /// `Y_i(t_k) w_i(t_k)`, which equals the subdistribution risk indicator
    /// times the weight.
    #[inline]
    pub fn at_risk_weight(&self, i: usize, k: usize) -> f64 {
        if k < self.unit_len[i] {
            1.0
        } else if self.event[i] == EventType::Competing {
            self.g_left(i, k) / self.own_left[i]
        } else {
            0.0
        }
    }

    /// Nonzero weights beyond `T~_i` up to grid index `end` (exclusive):
    /// only competing-event subjects have any.
    pub fn tail(&self, i: usize, end: usize) -> Option<(usize, Vec<f64>)> {
        let start = self.unit_len[i];
        if self.event[i] != EventType::Competing || start >= end {
            return None;
        }
        Some((start, (start..end).map(|k| self.at_risk_weight(i, k)).collect()))
    }
}
