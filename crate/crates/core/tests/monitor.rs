use oocran_core::monitor::{
    AlarmRule, AlarmState, Metric, MetricSample, Monitor, Predicate, Scope, Selector, SeriesKey,
};
use proptest::prelude::*;

fn rule(hold_s: f64) -> AlarmRule {
    AlarmRule {
        rule_id: "r".into(),
        selector: Selector {
            scope: Scope::Ns,
            scope_id: None,
            metric: Metric::RbOccupied,
        },
        predicate: Predicate::Gt,
        threshold: 5.0,
        hold_s,
        clear_hold_s: Some(0.0),
        severity: "major".into(),
        webhook_token: "t".into(),
    }
}

/// Fire times: one per maximal breach run, `hold` seconds after it starts,
/// provided the run lasts that long.
fn fire_oracle(values: &[u32], hold: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if values[i] > 5 {
            let start = i;
            while i < values.len() && values[i] > 5 {
                i += 1;
            }
            if start + hold < i {
                out.push((start + hold) as f64);
            }
        } else {
            i += 1;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn fires_once_per_sustained_breach(
        values in prop::collection::vec(0u32..10, 1..200),
        hold in 0usize..40,
        batch in 1usize..20,
    ) {
        let mut m = Monitor::new();
        m.add_rule(rule(hold as f64)).unwrap();
        let key = SeriesKey::ns("ns-1", Metric::RbOccupied);
        let mut fired = Vec::new();
        // Evaluation cadence must not change the outcome.
        for (chunk_idx, chunk) in values.chunks(batch).enumerate() {
            for (j, v) in chunk.iter().enumerate() {
                let t = (chunk_idx * batch + j) as f64;
                m.ingest(MetricSample { key: key.clone(), t, value: *v as f64 }).unwrap();
            }
            let now = ((chunk_idx + 1) * batch - 1) as f64;
            fired.extend(m.evaluate(now, &|_, _| true).into_iter().map(|e| e.fired_at));
        }
        prop_assert_eq!(&fired, &fire_oracle(&values, hold));
        let firing = m.transitions().iter().filter(|t| t.to == AlarmState::Firing).count();
        prop_assert_eq!(firing, fired.len());
    }
}

#[test]
fn unbound_series_is_not_evaluated() {
    let mut m = Monitor::new();
    m.add_rule(rule(0.0)).unwrap();
    let key = SeriesKey::ns("ns-9", Metric::RbOccupied);
    m.ingest(MetricSample {
        key,
        t: 0.0,
        value: 9.0,
    })
    .unwrap();
    assert!(m.evaluate(0.0, &|_, _| false).is_empty());
    assert!(m.transitions().is_empty());
}
