use crate::nuisance::{CensoringModel, IpcwWeights, PropensityModel, SubdistributionModel};
use crate::survival::{EventType, SubjectRecord, TimeGrid};

/// Discrete hazard surfaces of one subgroup, per subject and per arm, on the
/// grid points at or before the horizon, with the CIF derived from them.
///
/// Layout of `hazard`/`cif`: `[(i * 2 + arm) * k0 + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetingState {
    grid: TimeGrid,
    k0: usize,
    n: usize,
    hazard: Vec<f64>,
    cif: Vec<f64>,
    cif_ceiling: f64,
    pub iteration: usize,
    pub last_epsilon: f64,
}

impl TargetingState {
    /// Build from raw hazard increments (layout as above, `n * 2 * k0`).
    pub fn from_hazards(grid: TimeGrid, n: usize, hazard: Vec<f64>, cif_ceiling: f64) -> Self {
        let k0 = grid.horizon_len();
        assert_eq!(hazard.len(), n * 2 * k0, "hazard surface has wrong size");
        assert!(hazard.iter().all(|h| *h >= 0.0 && h.is_finite()), "hazard increments must be finite and >= 0");
        let mut state = TargetingState {
            grid,
            k0,
            n,
            cif: vec![0.0; hazard.len()],
            hazard,
            cif_ceiling,
            iteration: 0,
            last_epsilon: f64::NAN,
        };
        state.recompute_cif();
        state
    }

    /// Initial surfaces from the fitted subdistribution model of each arm
    /// (the same model twice for a pooled fit).
    pub fn from_models(subjects: &[SubjectRecord], grid: TimeGrid, models: [&SubdistributionModel; 2], cif_ceiling: f64) -> Self {
        let k0 = grid.horizon_len();
        let horizon_grid = &grid.times()[..k0];
        let jumps = [models[0].jumps_on(horizon_grid), models[1].jumps_on(horizon_grid)];
        let n = subjects.len();
        let mut hazard = vec![0.0; n * 2 * k0];
        for (i, s) in subjects.iter().enumerate() {
            for arm in 0..2 {
                let risk = models[arm].linear_predictor(arm as u8, &s.covariates).exp();
                let base = (i * 2 + arm) * k0;
                for k in 0..k0 {
                    hazard[base + k] = risk * jumps[arm][k];
                }
            }
        }
        Self::from_hazards(grid, n, hazard, cif_ceiling)
    }

    fn recompute_cif(&mut self) {
        let k0 = self.k0;
        for block in 0..self.n * 2 {
            let mut cum = 0.0;
            for k in 0..k0 {
                cum += self.hazard[block * k0 + k];
                self.cif[block * k0 + k] = (-(-cum).exp_m1()).min(self.cif_ceiling);
            }
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Number of grid points at or before the horizon.
    pub fn horizon_len(&self) -> usize {
        self.k0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn hazard(&self, i: usize, arm: usize, k: usize) -> f64 {
        self.hazard[(i * 2 + arm) * self.k0 + k]
    }

    #[inline]
    pub fn cif(&self, i: usize, arm: usize, k: usize) -> f64 {
        self.cif[(i * 2 + arm) * self.k0 + k]
    }

    /// `F1(t0 | arm, L_i)`.
    pub fn cif_at_horizon(&self, i: usize, arm: usize) -> f64 {
        if self.k0 == 0 {
            0.0
        } else {
            self.cif(i, arm, self.k0 - 1)
        }
    }

    /// `F1(t0 | 1, L_i) - F1(t0 | 0, L_i)`.
    pub fn effect(&self, i: usize) -> f64 {
        self.cif_at_horizon(i, 1) - self.cif_at_horizon(i, 0)
    }

    /// Multiply every hazard increment by `factor(i, arm, k)` and rebuild
    /// the CIF.
    pub(crate) fn scale_hazards(&mut self, factor: impl Fn(usize, usize, usize) -> f64) {
        let k0 = self.k0;
        for i in 0..self.n {
            for arm in 0..2 {
                let base = (i * 2 + arm) * k0;
                for k in 0..k0 {
                    self.hazard[base + k] *= factor(i, arm, k);
                }
            }
        }
        self.recompute_cif();
    }
}

/// Fixed ingredients of the targeting step for one subgroup: observed data
/// on the grid, truncated propensities and censoring left-limits for both
/// arms, and IPCW weights at the observed arm.
#[derive(Clone, Debug)]
pub struct TargetingInputs {
    pub arm: Vec<usize>,
    /// Grid index of the subject's own main event when it is at or before
    /// the horizon.
    pub event_index: Vec<Option<usize>>,
    /// `pi(a | L_i)`, indexed `[i][a]`.
    pub propensity: Vec<[f64; 2]>,
    /// `G(t_k- | a, L_i)` with layout `[(i * 2 + a) * k0 + k]`.
    pub censoring_left: Vec<f64>,
    pub weights: IpcwWeights,
    k0: usize,
}

impl TargetingInputs {
    pub fn new(
        subjects: &[SubjectRecord],
        grid: &TimeGrid,
        propensity: Vec<[f64; 2]>,
        censoring_left: Vec<f64>,
        weights: IpcwWeights,
    ) -> Self {
        let k0 = grid.horizon_len();
        assert_eq!(censoring_left.len(), subjects.len() * 2 * k0);
        let event_index = subjects
            .iter()
            .map(|s| {
                if s.event != EventType::Main {
                    return None;
                }
                grid.index_of(s.time).filter(|&k| k < k0)
            })
            .collect();
        TargetingInputs {
            arm: subjects.iter().map(SubjectRecord::arm).collect(),
            event_index,
            propensity,
            censoring_left,
            weights,
            k0,
        }
    }

    /// Inputs from fitted nuisance models.
    pub fn from_models(
        subjects: &[SubjectRecord],
        grid: &TimeGrid,
        propensity: &PropensityModel,
        censoring: &CensoringModel,
        weights: IpcwWeights,
    ) -> Self {
        let k0 = grid.horizon_len();
        let baseline_left: Vec<f64> = grid.times()[..k0].iter().map(|&t| censoring.baseline_left(t)).collect();
        let mut left = vec![0.0; subjects.len() * 2 * k0];
        let mut pi = Vec::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            pi.push([propensity.probability(0, &s.covariates), propensity.probability(1, &s.covariates)]);
            for arm in 0..2 {
                let risk = censoring.risk_score(arm as u8, &s.covariates);
                let base = (i * 2 + arm) * k0;
                for k in 0..k0 {
                    left[base + k] = censoring.survival_from(baseline_left[k], risk);
                }
            }
        }
        Self::new(subjects, grid, pi, left, weights)
    }

    #[inline]
    pub fn censoring_left(&self, i: usize, arm: usize, k: usize) -> f64 {
        self.censoring_left[(i * 2 + arm) * self.k0 + k]
    }
}
