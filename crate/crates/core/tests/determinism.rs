use oocran_core::sim::{run_scenario, Scenario};

#[test]
fn same_seed_same_bytes() {
    let mut s = Scenario::demo();
    s.load_jitter_rbs = 2;
    s.fault_rate = 0.05;
    let a = serde_json::to_vec(&run_scenario(&s).unwrap()).unwrap();
    let b = serde_json::to_vec(&run_scenario(&s).unwrap()).unwrap();
    assert_eq!(a, b);
    s.seed += 1;
    let c = serde_json::to_vec(&run_scenario(&s).unwrap()).unwrap();
    assert_ne!(a, c);
}
