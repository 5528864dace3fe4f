//! Ties catalog, infrastructure, engine and monitor together on a
//! simulated clock.
//!
//! Each [`Orchestrator::step`] handles one tick at `now`: timed actions,
//! offered load, metric synthesis, alarm evaluation and in-process webhook
//! delivery, then every task start and completion due up to `now`, in time
//! order. The next task of an NS starts the instant the previous one ends.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogContents, CatalogError, DescriptorRef};
use crate::infra::{Durations, Infra, Inventory, InventoryError, NodeCapacity, Operation, Outcome};
use crate::lifecycle::{
    ActionDecision, Engine, EngineConfig, Event, LifecycleError, NsInstance, NsState,
};
use crate::monitor::{
    dispatch_webhook, AlarmEvent, AlarmRule, AlarmTransition, DeliveryRecord, Metric, MetricSample,
    Monitor, MonitorError, MonitorState, Scope, SeriesKey, WebhookPayload, WebhookTarget,
};
use crate::queue::{RetryPolicy, Task};
use crate::rf::{BandView, CarrierAssignment};
use crate::sim::{
    offered_load, Action, CarrierRecord, DowntimeRecord, LoadSegment, Scenario, ScenarioReport,
    TimedAction,
};
use crate::SimTime;

pub const CONTROLLER_ID: &str = "controller";

/// Resource use of the orchestrator host itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub cpu_pct: f64,
    pub ram_mb: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            cpu_pct: 1.0,
            ram_mb: 800.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub token: String,
    pub tick_s: f64,
    pub durations: Durations,
    pub retry: RetryPolicy,
    pub baseline: Baseline,
    pub seed: u64,
    pub load_jitter_rbs: u32,
    pub fault_rate: f64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            token: crate::fixtures::DEMO_TOKEN.into(),
            tick_s: 1.0,
            durations: Durations::default(),
            retry: RetryPolicy::default(),
            baseline: Baseline::default(),
            seed: 0,
            load_jitter_rbs: 0,
            fault_rate: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("unsupported snapshot version {0}")]
    SnapshotVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InFlight {
    task: Task,
    start: SimTime,
    due: SimTime,
}

/// Durable orchestrator state, written on shutdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub now: SimTime,
    pub config: OrchestratorConfig,
    pub catalog: CatalogContents,
    pub infra: Infra,
    pub engine: Engine,
    pub monitor: MonitorState,
    pub load: Vec<LoadSegment>,
    pub actions: Vec<TimedAction>,
}

const SNAPSHOT_VERSION: u32 = 1;

pub struct Orchestrator {
    catalog: Catalog,
    infra: Infra,
    engine: Engine,
    monitor: Monitor,
    config: OrchestratorConfig,
    load: Vec<LoadSegment>,
    actions: Vec<TimedAction>,
    now: SimTime,
    task_clock: SimTime,
    inflight: Vec<InFlight>,
    events: Vec<Event>,
    decisions: Vec<ActionDecision>,
    deliveries: Vec<DeliveryRecord>,
    carriers: Vec<CarrierRecord>,
    transitions_seen: usize,
    rng: ChaCha8Rng,
}

/// In-process webhook receiver: hands the payload straight to the engine.
struct Loopback<'a> {
    engine: &'a mut Engine,
    catalog: &'a Catalog,
    now: SimTime,
    decisions: Vec<ActionDecision>,
}

impl WebhookTarget for Loopback<'_> {
    fn deliver(&mut self, payload: &WebhookPayload) -> Result<String, String> {
        let event = AlarmEvent::try_from(payload).map_err(|e| e.to_string())?;
        let d = self.engine.handle_alarm(self.catalog, &event, self.now);
        let disposition = serde_json::to_value(&d.outcome)
            .ok()
            .and_then(|v| {
                v.get("decision")
                    .and_then(|d| d.as_str())
                    .map(str::to_string)
            })
            .unwrap_or_default();
        self.decisions.push(d);
        Ok(disposition)
    }
}

impl Orchestrator {
    pub fn new(
        catalog: Catalog,
        inventory: Inventory,
        config: OrchestratorConfig,
    ) -> Result<Self, OrchestratorError> {
        let infra = Infra::new(inventory)?;
        Ok(Self::assemble(catalog, infra, config))
    }

    fn assemble(catalog: Catalog, infra: Infra, config: OrchestratorConfig) -> Self {
        let engine = Engine::new(EngineConfig {
            token: config.token.clone(),
            durations: config.durations,
            retry: config.retry,
        });
        Self {
            catalog,
            infra,
            engine,
            monitor: Monitor::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            load: Vec::new(),
            actions: Vec::new(),
            now: 0.0,
            task_clock: 0.0,
            inflight: Vec::new(),
            events: Vec::new(),
            decisions: Vec::new(),
            deliveries: Vec::new(),
            carriers: Vec::new(),
            transitions_seen: 0,
        }
    }

    pub fn from_scenario(s: &Scenario) -> Result<Self, OrchestratorError> {
        let mut orch = Self::new(Catalog::new(), s.inventory.clone(), s.config())?;
        orch.load_scenario(s)?;
        Ok(orch)
    }

    /// Merge a scenario's descriptors and rules, and schedule its load and
    /// actions relative to the current time.
    pub fn load_scenario(&mut self, s: &Scenario) -> Result<(), OrchestratorError> {
        self.catalog.load_contents(CatalogContents {
            vnfds: s.vnfds.clone(),
            nsds: s.nsds.clone(),
        })?;
        for r in &s.alarm_rules {
            self.monitor.add_rule(r.clone())?;
        }
        let t0 = self.now;
        self.load = s
            .load_segments
            .iter()
            .map(|seg| LoadSegment {
                start_s: seg.start_s + t0,
                end_s: seg.end_s + t0,
                ..*seg
            })
            .collect();
        let mut actions: Vec<TimedAction> = s
            .actions
            .iter()
            .map(|a| TimedAction {
                t: a.t + t0,
                action: a.action.clone(),
            })
            .collect();
        actions.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.actions.extend(actions);
        self.actions.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(())
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn infra(&self) -> &Infra {
        &self.infra
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn capacity(&self) -> Vec<NodeCapacity> {
        self.infra.capacity_report()
    }

    pub fn spectrum(&self) -> Vec<BandView> {
        self.infra.spectrum().view()
    }

    pub fn instances(&self) -> Vec<NsInstance> {
        self.engine.instances().cloned().collect()
    }

    pub fn instance(&self, ns_id: &str) -> Option<NsInstance> {
        self.engine.instance(ns_id).cloned()
    }

    pub fn tasks(&self, ns_id: Option<&str>) -> Vec<Task> {
        self.engine.queue().tasks(ns_id)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn decisions(&self) -> &[ActionDecision] {
        &self.decisions
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    pub fn add_alarm_rule(&mut self, rule: AlarmRule) -> Result<(), MonitorError> {
        self.monitor.add_rule(rule)
    }

    pub fn deploy(&mut self, nsd: &DescriptorRef) -> Result<String, LifecycleError> {
        let r = self
            .engine
            .deploy_ns(&self.catalog, &self.infra, nsd, self.now);
        self.collect_events();
        r
    }

    pub fn reconfigure(&mut self, ns_id: &str, nsd: &DescriptorRef) -> Result<(), LifecycleError> {
        let r = self
            .engine
            .reconfigure_ns(&self.catalog, ns_id, nsd, self.now);
        self.collect_events();
        r
    }

    pub fn terminate(&mut self, ns_id: &str) -> Result<(), LifecycleError> {
        let r = self.engine.terminate_ns(ns_id, self.now);
        self.collect_events();
        r
    }

    /// Deliver an externally POSTed alarm.
    pub fn webhook(&mut self, payload: &WebhookPayload) -> Result<ActionDecision, MonitorError> {
        let event = AlarmEvent::try_from(payload)?;
        let d = self.engine.handle_alarm(&self.catalog, &event, self.now);
        self.decisions.push(d.clone());
        self.collect_events();
        Ok(d)
    }

    fn collect_events(&mut self) {
        self.events.extend(self.engine.drain_events());
    }

    /// Process the tick at `now`, then advance the clock by one tick.
    pub fn step(&mut self) {
        let t = self.now;
        self.apply_actions(t);
        let demand = self.demand(t);
        self.ingest_metrics(t, demand);
        self.evaluate_alarms(t);
        self.run_tasks(t);
        self.collect_events();
        self.now = t + self.config.tick_s;
    }

    pub fn advance(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }

    fn apply_actions(&mut self, t: SimTime) {
        let due = self.actions.iter().take_while(|a| a.t <= t).count();
        let actions: Vec<TimedAction> = self.actions.drain(..due).collect();
        for a in actions {
            let result = match &a.action {
                Action::Deploy { nsd } => self.deploy(nsd).map(|_| ()),
                Action::Reconfigure { ns_id, nsd } => self.reconfigure(ns_id, nsd),
                Action::Terminate { ns_id } => self.terminate(ns_id),
            };
            if let Err(e) = result {
                self.events.push(Event {
                    t,
                    ns_id: None,
                    kind: "action_error".into(),
                    from: None,
                    to: None,
                    reason: Some(e.to_string()),
                });
            }
        }
    }

    fn demand(&mut self, t: SimTime) -> u32 {
        let base = offered_load(&self.load, t);
        let j = self.config.load_jitter_rbs as i64;
        if j == 0 {
            return base;
        }
        (base as i64 + self.rng.gen_range(-j..=j)).max(0) as u32
    }

    fn ingest_metrics(&mut self, t: SimTime, demand: u32) {
        let baseline = self.config.baseline;
        let mut samples = vec![
            (
                SeriesKey::new(Scope::Node, CONTROLLER_ID, Metric::CpuPct),
                baseline.cpu_pct,
            ),
            (
                SeriesKey::new(Scope::Node, CONTROLLER_ID, Metric::RamMb),
                baseline.ram_mb,
            ),
        ];
        for ns in self.engine.instances() {
            if matches!(ns.state, NsState::Terminated | NsState::Defined) {
                continue;
            }
            samples.extend(ns_samples(ns, demand, baseline));
        }
        for (key, value) in samples {
            let key = key.expect("metric valid at scope");
            // Series advance one sample per tick, so ordering always holds.
            let _ = self.monitor.ingest(MetricSample { key, t, value });
        }
    }

    fn evaluate_alarms(&mut self, t: SimTime) {
        // An NS-wide rule applies to the services whose descriptor has a
        // policy referencing it.
        let mut bound: BTreeSet<(String, String)> = BTreeSet::new();
        for ns in self.engine.instances() {
            if let Ok(nsd) = self.catalog.fetch_nsd(&ns.nsd_ref) {
                for p in &nsd.policies {
                    bound.insert((p.alarm_rule_ref.clone(), ns.ns_id.clone()));
                }
            }
        }
        let is_bound = |rule: &AlarmRule, key: &SeriesKey| {
            rule.selector.scope_id.is_some()
                || key.scope != Scope::Ns
                || bound.contains(&(rule.rule_id.clone(), key.scope_id.clone()))
        };
        let fired = self.monitor.evaluate(t, &is_bound);

        let new: Vec<AlarmTransition> =
            self.monitor.transitions()[self.transitions_seen..].to_vec();
        self.transitions_seen = self.monitor.transitions().len();
        for tr in new {
            self.events.push(Event {
                t: tr.t,
                ns_id: (tr.series.scope == Scope::Ns).then(|| tr.series.scope_id.clone()),
                kind: "alarm".into(),
                from: Some(format!("{:?}", tr.from)),
                to: Some(format!("{:?}", tr.to)),
                reason: Some(format!("{} on {} = {}", tr.rule_id, tr.series, tr.value)),
            });
        }

        for event in fired {
            let mut target = Loopback {
                engine: &mut self.engine,
                catalog: &self.catalog,
                now: t,
                decisions: Vec::new(),
            };
            let record = dispatch_webhook(&event, &mut target);
            let decisions = target.decisions;
            self.decisions.extend(decisions);
            self.deliveries.push(record);
            self.collect_events();
        }
    }

    /// Start and finish every task due up to `until`, in time order.
    fn run_tasks(&mut self, until: SimTime) {
        let mut clock = self.task_clock.min(until);
        loop {
            for task in self.engine.queue().dispatch(clock) {
                self.engine.on_dispatch(&task, clock);
                let due = clock + task.command.duration_s;
                self.inflight.push(InFlight {
                    task,
                    start: clock,
                    due,
                });
            }
            let next_due = self.inflight.iter().map(|f| f.due).min_by(f64::total_cmp);
            let next_ready = self.engine.queue().next_ready_at().filter(|r| *r > clock);
            let next = match (next_due, next_ready) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => match a.or(b) {
                    Some(x) => x,
                    None => break,
                },
            };
            if next > until {
                break;
            }
            clock = next;
            let mut done: Vec<InFlight> = Vec::new();
            self.inflight.retain(|f| {
                if f.due <= clock {
                    done.push(f.clone());
                    false
                } else {
                    true
                }
            });
            done.sort_by(|a, b| {
                a.due
                    .total_cmp(&b.due)
                    .then(a.task.task_id.cmp(&b.task.task_id))
            });
            for f in done {
                let outcome = self.execute(&f);
                if outcome.is_done() {
                    self.log_carrier(
                        &f.task.command.op,
                        outcome.carrier.as_ref(),
                        outcome.completed_at,
                    );
                }
                let _ = self
                    .engine
                    .complete(&self.catalog, &self.infra, f.task.task_id, outcome);
            }
        }
        self.task_clock = until;
    }

    fn log_carrier(&mut self, op: &Operation, assigned: Option<&CarrierAssignment>, t: SimTime) {
        let (to, a) = match (op, assigned) {
            (Operation::AssignCarrier { .. }, Some(a)) => {
                self.carriers.push(CarrierRecord {
                    assignment: a.clone(),
                    assigned_at: t,
                    released_at: None,
                });
                ("assigned", a.clone())
            }
            (Operation::ReleaseCarrier { assignment_id }, _) => {
                let Some(rec) = self
                    .carriers
                    .iter_mut()
                    .rev()
                    .find(|r| r.assignment.assignment_id == *assignment_id)
                else {
                    return;
                };
                rec.released_at = Some(t);
                ("released", rec.assignment.clone())
            }
            _ => return,
        };
        self.events.push(Event {
            t,
            ns_id: Some(a.owner_ns_id.clone()),
            kind: "carrier".into(),
            from: None,
            to: Some(to.into()),
            reason: Some(format!(
                "{} Hz wide at {} Hz on {}",
                a.bw_hz, a.center_hz, a.frontend_id
            )),
        });
    }

    fn execute(&mut self, f: &InFlight) -> Outcome {
        if self.config.fault_rate > 0.0 && self.rng.gen::<f64>() < self.config.fault_rate {
            return Outcome::failed(f.task.task_id, f.due, "injected fault");
        }
        self.infra.apply(&f.task.command, f.start)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            now: self.now,
            config: self.config.clone(),
            catalog: self.catalog.contents(),
            infra: self.infra.clone(),
            engine: self.engine.clone(),
            monitor: self.monitor.state(),
            load: self.load.clone(),
            actions: self.actions.clone(),
        }
    }

    /// Rebuild from a snapshot. Descriptors go into `catalog` (which may be
    /// backed by a data dir); plans interrupted mid-flight are re-issued.
    pub fn restore(catalog: Catalog, snap: Snapshot) -> Result<Self, OrchestratorError> {
        if snap.version != SNAPSHOT_VERSION {
            return Err(OrchestratorError::SnapshotVersion(snap.version));
        }
        catalog.load_contents(snap.catalog)?;
        let mut orch = Self::assemble(catalog, snap.infra, snap.config);
        orch.engine = snap.engine;
        orch.monitor = Monitor::restore(snap.monitor)?;
        orch.transitions_seen = 0;
        orch.load = snap.load;
        orch.actions = snap.actions;
        orch.now = snap.now;
        orch.task_clock = snap.now;
        orch.engine
            .replan_after_restart(&orch.catalog, &orch.infra, snap.now);
        orch.collect_events();
        Ok(orch)
    }

    pub fn report(&self, s: &Scenario) -> ScenarioReport {
        let instances = self.instances();
        ScenarioReport {
            seed: s.seed,
            tick_s: s.tick_s,
            duration_s: s.duration_s,
            events: self.events.clone(),
            decisions: self.decisions.clone(),
            deliveries: self.deliveries.clone(),
            alarm_transitions: self.monitor.transitions().to_vec(),
            traces: self.monitor.store.export(),
            carriers: self.carriers.clone(),
            downtime: instances
                .iter()
                .flat_map(|ns| {
                    ns.downtime_log.iter().map(|w| DowntimeRecord {
                        ns_id: ns.ns_id.clone(),
                        start: w.start,
                        end: w.end,
                    })
                })
                .collect(),
            instances,
        }
    }
}

type Sample = (Result<SeriesKey, MonitorError>, f64);

/// Synthetic per-tick metrics of one NS under `demand` offered RBs.
pub fn ns_samples(ns: &NsInstance, demand: u32, baseline: Baseline) -> Vec<Sample> {
    let capacity = ns.rb_capacity();
    let occupied = demand.min(capacity);
    let active: Vec<_> = ns.active_vnfs().collect();
    let (cpu, ram) = if active.is_empty() {
        (baseline.cpu_pct, baseline.ram_mb)
    } else {
        (
            active.iter().map(|v| v.metric_model.cpu_at(occupied)).sum(),
            active.iter().map(|v| v.metric_model.ram_fixed_mb).sum(),
        )
    };
    let (bler, snr) = ns
        .radio_model()
        .map(|m| (m.bler_nominal, m.snr_nominal_db))
        .unwrap_or((0.0, 0.0));
    let id = ns.ns_id.as_str();
    let key = |m| SeriesKey::new(Scope::Ns, id, m);
    let mut out = vec![
        (key(Metric::RbCapacity), capacity as f64),
        (key(Metric::RbOccupied), occupied as f64),
        (key(Metric::LoadDemandRbs), demand as f64),
        (key(Metric::CpuPct), cpu),
        (key(Metric::RamMb), ram),
        (key(Metric::Bler), bler),
        (key(Metric::SnrDb), snr),
    ];
    for v in active {
        out.push((
            SeriesKey::new(Scope::Vnf, v.vnf_id.as_str(), Metric::CpuPct),
            v.metric_model.cpu_at(occupied),
        ));
        out.push((
            SeriesKey::new(Scope::Vnf, v.vnf_id.as_str(), Metric::RamMb),
            v.metric_model.ram_fixed_mb,
        ));
    }
    out
}
