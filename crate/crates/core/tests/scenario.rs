use oocran_core::catalog::{DescriptorRef, Flavor};
use oocran_core::fixtures;
use oocran_core::orchestrator::{Orchestrator, OrchestratorConfig};
use oocran_core::sim::{run_scenario, Scenario};

#[test]
fn occupancy_never_exceeds_capacity() {
    let mut s = Scenario::demo();
    s.load_jitter_rbs = 3;
    let r = run_scenario(&s).unwrap();
    let cap = r.trace("ns/ns-1/rb_capacity");
    let occ = r.trace("ns/ns-1/rb_occupied");
    assert_eq!(cap.len(), occ.len());
    for (c, o) in cap.iter().zip(occ) {
        assert_eq!(c[0], o[0]);
        assert!(
            o[1] <= c[1],
            "t={} occupied {} > capacity {}",
            c[0],
            o[1],
            c[1]
        );
    }
}

#[test]
fn reconfiguration_conserves_compute() {
    let catalog = fixtures::demo_catalog();
    let target = catalog
        .fetch_nsd(&DescriptorRef::new("lte-cell-5", "v1"))
        .unwrap();
    let mut want = Flavor::new(0, 0, 0);
    for m in &target.members {
        let f = catalog.fetch_vnfd(&m.vnfd).unwrap().flavor;
        want.vcpus += f.vcpus * m.replicas;
        want.ram_mb += f.ram_mb * m.replicas as u64;
        want.disk_gb += f.disk_gb * m.replicas as u64;
    }
    let mut o = Orchestrator::new(
        catalog,
        fixtures::testbed_inventory(),
        OrchestratorConfig::default(),
    )
    .unwrap();
    let ns = o.deploy(&DescriptorRef::new("lte-cell-1.4", "v1")).unwrap();
    o.advance(40);
    o.reconfigure(&ns, &target.reference()).unwrap();
    o.advance(80);
    let mut got = Flavor::new(0, 0, 0);
    for c in o.capacity() {
        got.vcpus += c.allocated.vcpus;
        got.ram_mb += c.allocated.ram_mb;
        got.disk_gb += c.allocated.disk_gb;
    }
    assert_eq!(got, want);
    let carriers: Vec<_> = o.infra().spectrum().assignments().collect();
    assert_eq!(carriers.len(), 1);
    assert_eq!(carriers[0].bw_hz, 5_000_000);
}

#[test]
fn tasks_run_back_to_back() {
    let r = run_scenario(&Scenario::demo()).unwrap();
    let running = r
        .first_state("ns-1", oocran_core::lifecycle::NsState::Running)
        .unwrap();
    // 3 allocations, carrier, 3 boots, 2 links under default durations.
    assert_eq!(running, 36.0);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(40))]

    #[test]
    fn teardown_finishes_before_rebuild_starts(
        boot in 1u32..30,
        stop in 1u32..20,
        other in 1u32..4,
    ) {
        let mut s = Scenario::demo();
        let d = &mut s.durations;
        d.boot_vnf = boot as f64;
        d.stop_vnf = stop as f64;
        d.allocate_compute = other as f64;
        d.free_compute = other as f64;
        d.link_vnfs = other as f64;
        d.unlink_vnfs = other as f64;
        d.assign_carrier = other as f64;
        d.release_carrier = other as f64;
        let mut o = Orchestrator::from_scenario(&s).unwrap();
        o.advance(420);
        let trigger = o.decisions().iter().find(|d| d.is_triggered()).map(|d| d.t);
        let Some(trigger) = trigger else { return Ok(()) };
        let after: Vec<_> = o
            .tasks(Some("ns-1"))
            .into_iter()
            .filter(|t| t.enqueued_at >= trigger)
            .collect();
        let teardown_end = after
            .iter()
            .filter(|t| t.command.op.kind().is_teardown())
            .map(|t| t.finished_at.unwrap())
            .fold(f64::MIN, f64::max);
        let build_start = after
            .iter()
            .filter(|t| !t.command.op.kind().is_teardown())
            .map(|t| t.started_at.unwrap())
            .fold(f64::MAX, f64::min);
        // Chained without gaps, so the first build may start at the instant
        // the last teardown ends.
        proptest::prop_assert!(teardown_end <= build_start, "{} > {}", teardown_end, build_start);
        let ns = o.instance("ns-1").unwrap();
        let w = ns.downtime_log.last().unwrap();
        proptest::prop_assert!(w.end.unwrap() - w.start > 0.0);
    }
}
