use crtmle::dgp::{simulate, Scenario, ScenarioConfig};
use crtmle::survival::{
    at_risk, counting_process, subdist_risk_indicator, CohortDataset, EventType, SubgroupKey, SubjectRecord, TimeGrid,
    DEFAULT_MAX_LEVELS,
};
use proptest::prelude::*;

fn subject(time: f64, code: u8, covariates: Vec<f64>) -> SubjectRecord {
    SubjectRecord {
        id: String::new(),
        time,
        event: EventType::from_code(code).unwrap(),
        treatment: 0,
        covariates,
    }
}

#[test]
fn simulated_cohort_has_four_subgroups() {
    let data = simulate(&ScenarioConfig::new(Scenario::S1, 3000, 7)).unwrap();
    let keys: Vec<Vec<f64>> = data.subgroups().keys().map(|k| k.values.clone()).collect();
    assert_eq!(keys, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
    let total: usize = data.subgroups().values().map(Vec::len).sum();
    assert_eq!(total, 3000);
    let label = data.subgroup_label(&SubgroupKey { values: vec![1.0, 0.0] });
    assert_eq!(label, "V1=1;V2=0");
}

#[test]
fn risk_set_examples() {
    assert_eq!(subdist_risk_indicator(&subject(5.0, 2, vec![]), 7.0), 1);
    assert_eq!(subdist_risk_indicator(&subject(5.0, 1, vec![]), 7.0), 0);
    assert_eq!(subdist_risk_indicator(&subject(5.0, 0, vec![]), 3.0), 1);

    let main = subject(2.0, 1, vec![]);
    assert_eq!((counting_process(&main, 3.0), at_risk(&main, 3.0)), (1, 0));
    assert_eq!(at_risk(&main, 2.0), 1);
    let comp = subject(2.0, 2, vec![]);
    for t in [0.0, 1.0, 2.0, 3.0, 100.0] {
        assert_eq!((counting_process(&comp, t), at_risk(&comp, t)), (0, 1));
    }
}

#[test]
fn grid_holds_distinct_main_times() {
    let s = vec![
        subject(3.0, 1, vec![]),
        subject(1.0, 1, vec![]),
        subject(1.0, 1, vec![]),
        subject(2.0, 2, vec![]),
        subject(4.0, 0, vec![]),
    ];
    let grid = TimeGrid::from_subjects(&s, 2.5).unwrap();
    assert_eq!(grid.times(), &[1.0, 3.0]);
    assert_eq!(grid.horizon_len(), 1);
    assert_eq!(grid.index_of(3.0), Some(1));
    assert_eq!(grid.index_of(2.0), None);
}

fn cohort() -> impl Strategy<Value = Vec<(f64, u8, u8, u8)>> {
    prop::collection::vec((0.0..10.0f64, 0u8..3, 0u8..3, 0u8..2), 1..60)
}

proptest! {
    #[test]
    fn every_subject_in_one_subgroup(rows in cohort()) {
        let subjects: Vec<SubjectRecord> = rows
            .iter()
            .map(|&(t, e, v, l)| subject(t, e, vec![f64::from(v), f64::from(l)]))
            .collect();
        let n = subjects.len();
        let data = CohortDataset::new(subjects, vec!["V".into(), "L".into()], vec![0], vec![1], DEFAULT_MAX_LEVELS).unwrap();
        let mut seen = vec![0; n];
        for (key, idx) in data.subgroups() {
            for &i in idx {
                seen[i] += 1;
                prop_assert_eq!(data.subjects()[i].covariates[0], key.values[0]);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn counting_process_identities(time in 0.0..10.0f64, code in 0u8..3, t in 0.0..12.0f64, dt in 1e-9..1.0f64) {
        let s = subject(time, code, vec![]);
        // Y(t) = 1 - N(t-)
        let n_left = u8::from(s.event == EventType::Main && s.time < t);
        prop_assert_eq!(at_risk(&s, t) + n_left, 1);
        prop_assert!(counting_process(&s, t) <= counting_process(&s, t + dt));
        match s.event {
            EventType::Main => prop_assert!(subdist_risk_indicator(&s, t) >= subdist_risk_indicator(&s, t + dt)),
            EventType::Competing if t > time => prop_assert_eq!(subdist_risk_indicator(&s, t), 1),
            _ => {}
        }
    }
}
