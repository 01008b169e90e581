use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::state::{TargetingInputs, TargetingState};

/// `h = sgn(a) / (pi G_) * (1 - F(t0)) / (1 - F(t))`.
#[inline]
pub fn clever_value(arm: usize, propensity: f64, censoring_left: f64, cif_horizon: f64, cif_t: f64) -> f64 {
    let sign = if arm == 1 { 1.0 } else { -1.0 };
    sign / (propensity * censoring_left) * (1.0 - cif_horizon) / (1.0 - cif_t)
}

/// Clever covariate of subject `i` under `arm` at grid index `k` (`k < k0`).
#[inline]
pub fn clever_covariate(state: &TargetingState, inputs: &TargetingInputs, i: usize, arm: usize, k: usize) -> f64 {
    clever_value(
        arm,
        inputs.propensity[i][arm],
        inputs.censoring_left(i, arm, k),
        state.cif_at_horizon(i, arm),
        state.cif(i, arm, k),
    )
}

/// Observed-arm pieces of the score: `sum dN h` and the compensator terms
/// `(w Y lambda h, h)` with nonzero hazard mass.
#[derive(Clone, Debug, Default)]
pub struct ScoreTerms {
    pub event_sum: f64,
    pub compensator: Vec<(f64, f64)>,
}

impl ScoreTerms {
    pub fn build(state: &TargetingState, inputs: &TargetingInputs) -> Self {
        let k0 = state.horizon_len();
        let mut terms = ScoreTerms::default();
        for i in 0..state.n() {
            let arm = inputs.arm[i];
            if let Some(k) = inputs.event_index[i] {
                terms.event_sum += clever_covariate(state, inputs, i, arm, k);
            }
            for k in 0..k0.min(inputs.weights.unit_len(i)) {
                let lambda = state.hazard(i, arm, k);
                if lambda > 0.0 {
                    let h = clever_covariate(state, inputs, i, arm, k);
                    terms.compensator.push((lambda * h, h));
                }
            }
            if let Some((start, tail)) = inputs.weights.tail(i, k0) {
                for (offset, w) in tail.into_iter().enumerate() {
                    let k = start + offset;
                    let lambda = state.hazard(i, arm, k);
                    if lambda > 0.0 && w > 0.0 {
                        let h = clever_covariate(state, inputs, i, arm, k);
                        terms.compensator.push((w * lambda * h, h));
                    }
                }
            }
        }
        terms
    }

    pub fn score(&self, epsilon: f64) -> f64 {
        self.event_sum - self.compensator.iter().map(|&(c, h)| c * (epsilon * h).exp()).sum::<f64>()
    }

    /// Score and its derivative in `epsilon`.
    pub fn score_and_slope(&self, epsilon: f64) -> (f64, f64) {
        let (mut comp, mut slope) = (0.0, 0.0);
        for &(c, h) in &self.compensator {
            let e = c * (epsilon * h).exp();
            comp += e;
            slope -= e * h;
        }
        (self.event_sum - comp, slope)
    }
}

/// Score of the fluctuation model at `epsilon`.
pub fn score_at_epsilon(state: &TargetingState, inputs: &TargetingInputs, epsilon: f64) -> f64 {
    ScoreTerms::build(state, inputs).score(epsilon)
}

/// Per-subject martingale part of the influence function,
/// `int_0^t0 h w dM` at the observed arm.
pub fn martingale_terms(state: &TargetingState, inputs: &TargetingInputs) -> Vec<f64> {
    let k0 = state.horizon_len();
    (0..state.n())
        .map(|i| {
            let arm = inputs.arm[i];
            let mut v = match inputs.event_index[i] {
                Some(k) => clever_covariate(state, inputs, i, arm, k),
                None => 0.0,
            };
            for k in 0..k0.min(inputs.weights.unit_len(i)) {
                let lambda = state.hazard(i, arm, k);
                if lambda > 0.0 {
                    v -= lambda * clever_covariate(state, inputs, i, arm, k);
                }
            }
            if let Some((start, tail)) = inputs.weights.tail(i, k0) {
                for (offset, w) in tail.into_iter().enumerate() {
                    let lambda = state.hazard(i, arm, start + offset);
                    if lambda > 0.0 && w > 0.0 {
                        v -= w * lambda * clever_covariate(state, inputs, i, arm, start + offset);
                    }
                }
            }
            v
        })
        .collect()
}

const SCORE_TOL: f64 = 1e-10;
const MAX_BRACKET: f64 = 64.0;

/// Root of the (decreasing) score by bracket expansion and safeguarded
/// Newton. `iteration` is only used to label the error.
pub fn solve_score(terms: &ScoreTerms, iteration: usize) -> Result<f64> {
    let s0 = terms.score(0.0);
    if s0 == 0.0 {
        return Ok(0.0);
    }
    let dir = s0.signum();
    let mut b = 1.0;
    let far = loop {
        let s = terms.score(dir * b);
        if s.is_nan() {
            return Err(Error::EpsilonUnbounded { iteration });
        }
        if s == 0.0 {
            return Ok(dir * b);
        }
        if s.signum() != dir {
            break dir * b;
        }
        if b >= MAX_BRACKET {
            return Err(Error::EpsilonUnbounded { iteration });
        }
        b *= 2.0;
    };
    // `near` keeps the sign of score(0), `far` the opposite sign.
    let (mut near, mut far) = (0.0, far);
    let mut x = 0.0;
    let mut best = (s0.abs(), 0.0);
    for _ in 0..500 {
        let (f, slope) = terms.score_and_slope(x);
        if f.abs() < best.0 {
            best = (f.abs(), x);
        }
        if f.abs() < SCORE_TOL {
            return Ok(x);
        }
        if f.signum() == dir {
            near = x;
        } else {
            far = x;
        }
        let (lo, hi) = if near < far { (near, far) } else { (far, near) };
        let newton = x - f / slope;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            break;
        }
        x = next;
    }
    // Floating-point limit: the closest evaluated point.
    Ok(best.1)
}

/// Maximum likelihood `epsilon` of the fluctuation model for `state`.
pub fn solve_epsilon(state: &TargetingState, inputs: &TargetingInputs) -> Result<f64> {
    solve_score(&ScoreTerms::build(state, inputs), state.iteration)
}

/// `lambda <- lambda exp(epsilon h)` for every subject, arm and grid time,
/// with `h` from the current state.
pub fn apply_fluctuation(state: &TargetingState, inputs: &TargetingInputs, epsilon: f64) -> TargetingState {
    assert!(epsilon.is_finite(), "fluctuation parameter must be finite");
    let mut next = state.clone();
    if epsilon != 0.0 {
        next.scale_hazards(|i, arm, k| (epsilon * clever_covariate(state, inputs, i, arm, k)).exp());
    }
    next.iteration += 1;
    next.last_epsilon = epsilon;
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetingOptions {
    /// Threshold on `|epsilon|`.
    pub s_n: f64,
    pub max_iter: usize,
    /// Stop after this many consecutive non-decreasing `|epsilon|`.
    pub cycle_guard: usize,
}

impl Default for TargetingOptions {
    fn default() -> Self {
        TargetingOptions {
            s_n: 1e-3,
            max_iter: 20,
            cycle_guard: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TargetingOutcome {
    pub state: TargetingState,
    pub converged: bool,
    pub epsilons: Vec<f64>,
    pub initial_martingale_mean: f64,
    pub final_martingale_mean: f64,
}

/// Iterate clever covariate -> epsilon -> fluctuation. Converged once
/// `|epsilon| <= s_n` and the mean martingale term is within
/// `10 s_n / sqrt(n)`.
pub fn target(initial: TargetingState, inputs: &TargetingInputs, opts: &TargetingOptions) -> Result<TargetingOutcome> {
    let n = initial.n().max(1) as f64;
    let bound = 10.0 * opts.s_n / n.sqrt();
    let initial_martingale_mean = crate::stats::mean(&martingale_terms(&initial, inputs));
    let mut state = initial;
    let mut epsilons = Vec::new();
    let mut converged = false;
    let mut stalls = 0;
    let mut final_mean = initial_martingale_mean;
    for iteration in 0..opts.max_iter {
        let eps = solve_score(&ScoreTerms::build(&state, inputs), iteration)?;
        state = apply_fluctuation(&state, inputs, eps);
        final_mean = crate::stats::mean(&martingale_terms(&state, inputs));
        if let Some(&prev) = epsilons.last() {
            let prev: f64 = prev;
            stalls = if eps.abs() >= prev.abs() { stalls + 1 } else { 0 };
        }
        epsilons.push(eps);
        if eps.abs() <= opts.s_n && final_mean.abs() <= bound {
            converged = true;
            break;
        }
        if stalls >= opts.cycle_guard {
            break;
        }
    }
    Ok(TargetingOutcome {
        state,
        converged,
        epsilons,
        initial_martingale_mean,
        final_martingale_mean: final_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::IpcwWeights;
    use crate::survival::{EventType, SubjectRecord, TimeGrid};

    fn subj(time: f64, event: EventType, a: u8) -> SubjectRecord {
        SubjectRecord {
            id: String::new(),
            time,
            event,
            treatment: a,
            covariates: vec![],
        }
    }

    #[test]
    fn clever_examples() {
        assert_eq!(clever_value(1, 0.5, 1.0, 0.3, 0.3), 2.0);
        assert!(clever_value(0, 0.3, 0.7, 0.4, 0.1) < 0.0);
        assert!(clever_value(1, 0.3, 0.7, 0.4, 0.1) > 0.0);
        assert!((clever_value(0, 0.25, 0.5, 0.6, 0.6) + 8.0).abs() < 1e-15);
    }

    fn one_subject(lambda: f64) -> (TargetingState, TargetingInputs) {
        let s = vec![subj(1.0, EventType::Main, 1)];
        let grid = TimeGrid::from_subjects(&s, 1.0).unwrap();
        let w = IpcwWeights::from_fn(&s, &grid, |_, _| 1.0);
        let state = TargetingState::from_hazards(grid.clone(), 1, vec![lambda, lambda], 1.0 - 1e-8);
        let inputs = TargetingInputs::new(&s, &grid, vec![[0.5, 0.5]], vec![1.0, 1.0], w);
        (state, inputs)
    }

    #[test]
    fn single_term_closed_form() {
        // t = t0 so h = 1/(pi G) = 2; score = h - lambda h e^{eps h}
        let (state, inputs) = one_subject(0.1);
        let eps = solve_epsilon(&state, &inputs).unwrap();
        let expected = (1.0_f64 / 0.1).ln() / 2.0;
        assert!((eps - expected).abs() < 1e-8, "{eps} vs {expected}");
        assert!(score_at_epsilon(&state, &inputs, eps).abs() < 1e-10);
    }

    #[test]
    fn fluctuation_arithmetic() {
        let (state, inputs) = one_subject(0.1);
        let next = apply_fluctuation(&state, &inputs, 0.5);
        assert!((next.hazard(0, 1, 0) - 0.1 * 1.0_f64.exp()).abs() < 1e-15);
        assert!((next.hazard(0, 0, 0) - 0.1 * (-1.0_f64).exp()).abs() < 1e-15);
        assert!((next.cif(0, 1, 0) - (1.0 - (-0.1 * 1.0_f64.exp()).exp())).abs() < 1e-15);
        let same = apply_fluctuation(&state, &inputs, 0.0);
        assert_eq!(same.hazard(0, 1, 0), state.hazard(0, 1, 0));
        assert_eq!(same.cif(0, 0, 0), state.cif(0, 0, 0));
    }

    #[test]
    fn zero_mass_is_unbounded() {
        let (state, inputs) = one_subject(0.0);
        assert!(matches!(
            solve_epsilon(&state, &inputs),
            Err(Error::EpsilonUnbounded { iteration: 0 })
        ));
    }

    #[test]
    fn already_solved_takes_one_iteration() {
        // lambda h = h, so score(0) = 0
        let (state, inputs) = one_subject(1.0);
        assert_eq!(score_at_epsilon(&state, &inputs, 0.0), 0.0);
        let out = target(state.clone(), &inputs, &TargetingOptions::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.state.iteration, 1);
        assert_eq!(out.epsilons, vec![0.0]);
        assert_eq!(out.state.cif(0, 1, 0), state.cif(0, 1, 0));
    }

    #[test]
    fn three_subject_toy_matches_direct_sum() {
        // grid: 1, 2 (main events); horizon 2
        let s = vec![
            subj(1.0, EventType::Main, 1),
            subj(1.5, EventType::Competing, 0),
            subj(2.0, EventType::Main, 0),
        ];
        let grid = TimeGrid::from_subjects(&s, 2.0).unwrap();
        let g = |_: usize, t: f64| (-0.2 * t).exp();
        let w = IpcwWeights::from_fn(&s, &grid, g);
        let hazard = vec![0.1, 0.2, 0.05, 0.1, 0.3, 0.1, 0.2, 0.2, 0.15, 0.25, 0.1, 0.1];
        let state = TargetingState::from_hazards(grid.clone(), 3, hazard.clone(), 1.0 - 1e-8);
        let pi = vec![[0.4, 0.6], [0.7, 0.3], [0.5, 0.5]];
        let mut left = vec![0.0; 12];
        for i in 0..3 {
            for a in 0..2 {
                for k in 0..2 {
                    left[(i * 2 + a) * 2 + k] = g(i, grid.times()[k]);
                }
            }
        }
        let inputs = TargetingInputs::new(&s, &grid, pi.clone(), left, w);
        let eps = 0.37;

        // direct oracle
        let lam = |i: usize, a: usize, k: usize| hazard[(i * 2 + a) * 2 + k];
        let cif = |i: usize, a: usize, k: usize| 1.0 - (-(0..=k).map(|j| lam(i, a, j)).sum::<f64>()).exp();
        let h = |i: usize, a: usize, k: usize| {
            let sign = if a == 1 { 1.0 } else { -1.0 };
            sign / (pi[i][a] * g(i, grid.times()[k])) * (1.0 - cif(i, a, 1)) / (1.0 - cif(i, a, k))
        };
        // subject 0: arm 1, event at k=0, at risk k=0 only
        // subject 1: arm 0, competing at 1.5: at risk at k=0 (w=1), k=1 w = G(2-)/G(1.5-)
        // subject 2: arm 0, event at k=1, at risk k=0,1
        let w1 = g(1, 2.0) / g(1, 1.5);
        let oracle = h(0, 1, 0) - lam(0, 1, 0) * h(0, 1, 0) * (eps * h(0, 1, 0)).exp()
            - lam(1, 0, 0) * h(1, 0, 0) * (eps * h(1, 0, 0)).exp()
            - w1 * lam(1, 0, 1) * h(1, 0, 1) * (eps * h(1, 0, 1)).exp()
            + h(2, 0, 1)
            - lam(2, 0, 0) * h(2, 0, 0) * (eps * h(2, 0, 0)).exp()
            - lam(2, 0, 1) * h(2, 0, 1) * (eps * h(2, 0, 1)).exp();
        assert!((score_at_epsilon(&state, &inputs, eps) - oracle).abs() < 1e-12);
        let mart: f64 = martingale_terms(&state, &inputs).iter().sum();
        assert!((mart - score_at_epsilon(&state, &inputs, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_clever_covariate_gives_zero_score() {
        let terms = ScoreTerms {
            event_sum: 0.0,
            compensator: vec![(0.0, 0.0), (0.0, 0.0)],
        };
        for eps in [-3.0, 0.0, 2.5] {
            assert_eq!(terms.score(eps), 0.0);
        }
    }
}
