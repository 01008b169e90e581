use crtmle::dgp::{replicate_rng, scenario_pipeline, simulate_with, Scenario, ScenarioConfig};
use crtmle::nuisance::IpcwWeights;
use crtmle::survival::{EventType, SubgroupKey, SubjectRecord, TimeGrid};
use crtmle::tmle::{
    apply_fluctuation, estimate_cate, fit_nuisances, fit_subgroup, prepare_targeting, run_tmle, score_at_epsilon,
    solve_score, target, InitialLearner, ModelBundle, ScoreTerms, TargetingInputs, TargetingState,
};
use crtmle::Error;
use proptest::prelude::*;

fn random_instance(
    times: &[(f64, u8, u8)],
    hazards: &[f64],
    pi: f64,
    horizon: f64,
) -> Option<(TargetingState, TargetingInputs)> {
    let subjects: Vec<SubjectRecord> = times
        .iter()
        .map(|&(t, e, a)| SubjectRecord {
            id: String::new(),
            time: t,
            event: EventType::from_code(e).unwrap(),
            treatment: a,
            covariates: vec![],
        })
        .collect();
    let grid = TimeGrid::from_subjects(&subjects, horizon).ok()?;
    let k0 = grid.horizon_len();
    if k0 == 0 {
        return None;
    }
    let n = subjects.len();
    let hazard: Vec<f64> = (0..n * 2 * k0).map(|j| hazards[j % hazards.len()]).collect();
    let weights = IpcwWeights::from_fn(&subjects, &grid, |i, t| (-0.05 * t * (1.0 + i as f64 % 3.0)).exp());
    let left: Vec<f64> = (0..n * 2 * k0).map(|j| 0.6 + 0.4 / (1.0 + (j % 7) as f64)).collect();
    let inputs = TargetingInputs::new(&subjects, &grid, vec![[1.0 - pi, pi]; n], left, weights);
    Some((TargetingState::from_hazards(grid, n, hazard, 1.0 - 1e-8), inputs))
}

fn cif_ok(state: &TargetingState) -> bool {
    (0..state.n()).all(|i| {
        (0..2).all(|a| {
            let mut prev = 0.0;
            (0..state.horizon_len()).all(|k| {
                let c = state.cif(i, a, k);
                let ok = c >= prev && c <= 1.0 - 1e-8;
                prev = c;
                ok
            })
        })
    })
}

fn instance_strategy() -> impl Strategy<Value = (Vec<(f64, u8, u8)>, Vec<f64>, f64, f64)> {
    (
        prop::collection::vec((0.05..5.0f64, 0u8..3, 0u8..2), 2..25),
        prop::collection::vec(0.0..0.4f64, 1..9),
        0.05..0.95f64,
        0.5..5.0f64,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solver_meets_tolerance(event_sum in 0.01..20.0f64, terms in prop::collection::vec((0.001..2.0f64, -4.0..4.0f64), 1..30)) {
        let st = ScoreTerms {
            event_sum,
            compensator: terms.iter().map(|&(c, h)| (c * h, h)).collect(),
        };
        if let Ok(eps) = solve_score(&st, 0) {
            prop_assert!(st.score(eps).abs() < 1e-10, "score {} at {eps}", st.score(eps));
        }
    }

    #[test]
    fn fluctuation_keeps_cif_monotone((times, hazards, pi, horizon) in instance_strategy(), eps in -3.0..3.0f64) {
        if let Some((state, inputs)) = random_instance(&times, &hazards, pi, horizon) {
            prop_assert!(cif_ok(&state));
            let next = apply_fluctuation(&state, &inputs, eps);
            prop_assert!(cif_ok(&next));
            let same = apply_fluctuation(&state, &inputs, 0.0);
            for i in 0..state.n() {
                for k in 0..state.horizon_len() {
                    prop_assert_eq!(same.hazard(i, 0, k), state.hazard(i, 0, k));
                }
            }
        }
    }

    #[test]
    fn score_decreasing((times, hazards, pi, horizon) in instance_strategy(), e1 in -2.0..2.0f64, d in 0.01..1.0f64) {
        if let Some((state, inputs)) = random_instance(&times, &hazards, pi, horizon) {
            let st = ScoreTerms::build(&state, &inputs);
            if st.compensator.iter().any(|&(c, h)| c * h > 0.0) {
                prop_assert!(score_at_epsilon(&state, &inputs, e1 + d) < score_at_epsilon(&state, &inputs, e1));
            }
        }
    }

    #[test]
    fn estimate_invariants((times, hazards, pi, horizon) in instance_strategy()) {
        if let Some((state, inputs)) = random_instance(&times, &hazards, pi, horizon) {
            if let Ok(out) = target(state, &inputs, &Default::default()) {
                let e = estimate_cate(&out.state, &inputs, SubgroupKey { values: vec![] }, "all".into(), out.converged).unwrap();
                let se = e.se.unwrap();
                prop_assert!(se >= 0.0);
                prop_assert!(e.ci_lo <= e.psi_hat && e.psi_hat <= e.ci_hi);
                prop_assert!((-1.0..=1.0).contains(&e.psi_hat));
                prop_assert!((0.0..=1.0).contains(&e.p_value.unwrap()));
            }
        }
    }
}

#[test]
fn empty_subgroup_is_error() {
    let grid = TimeGrid::from_subjects(&[], 1.0).unwrap();
    let state = TargetingState::from_hazards(grid.clone(), 0, vec![], 1.0 - 1e-8);
    let inputs = TargetingInputs::new(&[], &grid, vec![], vec![], IpcwWeights::from_fn(&[], &grid, |_, _| 1.0));
    let err = estimate_cate(&state, &inputs, SubgroupKey { values: vec![1.0] }, "V1=1".into(), true).unwrap_err();
    assert!(matches!(err, Error::EmptySubgroup(_)));
}

#[test]
fn null_effect_is_rarely_significant() {
    let mut config = ScenarioConfig::new(Scenario::S1, 1500, 31);
    config.null_effect = true;
    let (mut inside, mut total) = (0, 0);
    for r in 0..25 {
        let data = simulate_with(&config, &mut replicate_rng(31, r)).unwrap();
        let t0 = data.event_time_quantile(0.5).unwrap();
        let pipeline = scenario_pipeline(Scenario::S1, false, t0, InitialLearner::S);
        for fit in run_tmle(&data, &pipeline).unwrap() {
            total += 1;
            if fit.estimate.psi_hat.abs() < 3.0 * fit.estimate.se.unwrap() {
                inside += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total}");
}

#[test]
fn scenario_one_converges() {
    let config = ScenarioConfig::new(Scenario::S1, 3000, 41);
    let (mut converged, mut total) = (0, 0);
    for r in 0..100 {
        let data = simulate_with(&config, &mut replicate_rng(41, r)).unwrap();
        let t0 = data.event_time_quantile(0.5).unwrap();
        let pipeline = scenario_pipeline(Scenario::S1, false, t0, InitialLearner::S);
        for fit in run_tmle(&data, &pipeline).unwrap() {
            total += 1;
            converged += usize::from(fit.estimate.converged && fit.estimate.iterations <= 20);
        }
    }
    assert!(converged as f64 >= 0.99 * total as f64, "{converged}/{total}");
}

#[test]
fn misspecified_outcome_is_targeted() {
    let config = ScenarioConfig::new(Scenario::S2, 3000, 51);
    let (mut reduced, mut multi, mut total) = (0, 0, 0);
    for r in 0..10 {
        let data = simulate_with(&config, &mut replicate_rng(51, r)).unwrap();
        let t0 = data.event_time_quantile(0.5).unwrap();
        let pipeline = scenario_pipeline(Scenario::S2, false, t0, InitialLearner::S);
        for fit in run_tmle(&data, &pipeline).unwrap() {
            total += 1;
            reduced += usize::from(fit.final_martingale_mean.abs() < fit.initial_martingale_mean.abs());
            multi += usize::from(fit.estimate.iterations >= 2);
        }
    }
    assert_eq!(reduced, total);
    assert_eq!(multi, total);
}

#[test]
fn bundle_round_trip() {
    let config = ScenarioConfig::new(Scenario::S1, 600, 61);
    let data = simulate_with(&config, &mut replicate_rng(61, 0)).unwrap();
    let t0 = data.event_time_quantile(0.5).unwrap();
    let pipeline = scenario_pipeline(Scenario::S1, false, t0, InitialLearner::T);
    let fits = run_tmle(&data, &pipeline).unwrap();
    let bundle = ModelBundle::new(data.covariate_names().to_vec(), vec!["V1".into(), "V2".into()], &pipeline, &fits);
    let back = ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap();
    assert_eq!(back, bundle);

    // a reloaded model reproduces the initial state of its subgroup
    let key = &fits[2].estimate.subgroup;
    let sub = data.subgroup_data(key).unwrap();
    let saved = back.subgroup(key).unwrap();
    let refit = fit_nuisances(sub.subjects(), &pipeline).unwrap();
    assert_eq!(refit, saved.nuisances);
    let (state, _) = prepare_targeting(sub.subjects(), &saved.nuisances, &pipeline).unwrap();
    let direct = fit_subgroup(sub.subjects(), key.clone(), String::new(), &pipeline).unwrap();
    let initial = (0..state.n()).map(|i| state.effect(i)).sum::<f64>() / state.n() as f64;
    assert!((initial - direct.initial_psi).abs() < 1e-15);

    let bad = bundle.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
    assert!(ModelBundle::from_json(&bad).is_err());
}
