//! NS/VNF lifecycle engine.
//!
//! Turns deploy, reconfigure and terminate intents into task plans on the
//! [`TaskQueue`], advances instance state from driver outcomes, and decides
//! what to do with incoming alarms. Reconfiguration is stop-and-redeploy:
//! the whole old service is torn down and freed before the target is
//! placed and built.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    Catalog, CatalogError, DescriptorRef, Flavor, MetricModel, NsDescriptor, PolicyAction,
    RadioProfile, RadioRole, Violation, VnfDescriptor,
};
use crate::infra::{self, Command, CommandKind, ComputeNode, Durations, Infra, Operation, Outcome};
use crate::monitor::{AlarmEvent, Scope};
use crate::queue::{Completion, RetryPolicy, Task, TaskId, TaskQueue};
use crate::rf::CarrierAssignment;
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NsState {
    Defined,
    Deploying,
    Running,
    Reconfiguring,
    Terminating,
    Terminated,
    Error,
}

impl NsState {
    pub fn is_terminal(self) -> bool {
        self == NsState::Terminated
    }
}

impl fmt::Display for NsState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The legal NS transition graph.
pub fn legal_transition(from: NsState, to: NsState) -> bool {
    use NsState::*;
    match (from, to) {
        (Defined, Deploying)
        | (Deploying, Running)
        | (Running, Reconfiguring)
        | (Reconfiguring, Running)
        | (Running, Terminating)
        | (Deploying, Terminating)
        | (Error, Terminating)
        | (Terminating, Terminated) => true,
        (from, Error) => !from.is_terminal() && from != Error,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VnfState {
    Pending,
    Building,
    Active,
    Stopping,
    Stopped,
    Failed,
}

impl fmt::Display for VnfState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub node_id: String,
    pub flavor: Flavor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfInstance {
    pub vnf_id: String,
    pub member_id: String,
    pub replica: u32,
    pub vnfd: DescriptorRef,
    pub state: VnfState,
    pub placement: Option<Placement>,
    pub flavor: Flavor,
    pub config: Option<RadioProfile>,
    pub metric_model: MetricModel,
    pub booted: bool,
}

impl VnfInstance {
    pub fn role(&self) -> Option<RadioRole> {
        self.config.map(|c| c.role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DowntimeWindow {
    pub start: SimTime,
    pub end: Option<SimTime>,
}

impl DowntimeWindow {
    pub fn length(&self) -> Option<f64> {
        self.end.map(|e| e - self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Building,
    /// Teardown planned (or waiting for the in-flight task to finish).
    TearingDown {
        planned: bool,
        rebuild_to: Option<DescriptorRef>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsInstance {
    pub ns_id: String,
    pub nsd_ref: DescriptorRef,
    pub state: NsState,
    pub vnf_instances: Vec<VnfInstance>,
    pub carrier_refs: Vec<CarrierAssignment>,
    pub links_up: Vec<String>,
    pub created_at: SimTime,
    pub state_changed_at: SimTime,
    pub downtime_log: Vec<DowntimeWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub phase: Phase,
    pub generation: u32,
    /// The descriptor being built; differs from `nsd_ref` mid-reconfiguration.
    pub building: Option<DescriptorRef>,
}

impl NsInstance {
    /// Resource blocks the radio can currently schedule (0 when no eNB is Active).
    pub fn rb_capacity(&self) -> u32 {
        self.vnf_instances
            .iter()
            .filter(|v| v.state == VnfState::Active && v.role() == Some(RadioRole::Enb))
            .filter_map(|v| v.config.and_then(|c| c.bandwidth()))
            .map(|b| b.resource_blocks())
            .sum()
    }

    pub fn active_vnfs(&self) -> impl Iterator<Item = &VnfInstance> {
        self.vnf_instances
            .iter()
            .filter(|v| v.state == VnfState::Active)
    }

    pub fn radio_model(&self) -> Option<&MetricModel> {
        self.vnf_instances
            .iter()
            .find(|v| v.role() == Some(RadioRole::Enb))
            .map(|v| &v.metric_model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ns_id: Option<String>,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum DecisionOutcome {
    Triggered { action: String },
    Suppressed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub t: SimTime,
    pub rule_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ns_id: Option<String>,
    #[serde(flatten)]
    pub outcome: DecisionOutcome,
}

impl ActionDecision {
    pub fn is_triggered(&self) -> bool {
        matches!(self.outcome, DecisionOutcome::Triggered { .. })
    }

    pub fn suppressed_reason(&self) -> Option<&str> {
        match &self.outcome {
            DecisionOutcome::Suppressed { reason } => Some(reason),
            DecisionOutcome::Triggered { .. } => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error("network service {0} not found")]
    NotFound(String),
    #[error("network service {ns_id} is {state}; {intent} not allowed")]
    IllegalState {
        ns_id: String,
        state: NsState,
        intent: &'static str,
    },
    #[error("validation failed: {}", .0.iter().map(|v| v.0.as_str()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaskRef {
    ns_id: String,
    op: Operation,
    teardown: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EngineConfig {
    pub token: String,
    pub durations: Durations,
    pub retry: RetryPolicy,
}

/// Single writer of NS and VNF state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Engine {
    config: EngineConfig,
    instances: BTreeMap<String, NsInstance>,
    queue: TaskQueue,
    tasks: BTreeMap<TaskId, TaskRef>,
    cooldowns: BTreeMap<(String, String), SimTime>,
    next_ns: u64,
    plan_seq: u64,
    #[serde(skip)]
    events: Vec<Event>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            queue: TaskQueue::new(config.retry),
            config,
            instances: BTreeMap::new(),
            tasks: BTreeMap::new(),
            cooldowns: BTreeMap::new(),
            next_ns: 1,
            plan_seq: 0,
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.queue
    }

    pub fn instance(&self, ns_id: &str) -> Option<&NsInstance> {
        self.instances.get(ns_id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &NsInstance> {
        self.instances.values()
    }

    /// Events emitted since the last drain, in order.
    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    fn get(&self, ns_id: &str) -> Result<&NsInstance, LifecycleError> {
        self.instances
            .get(ns_id)
            .ok_or_else(|| LifecycleError::NotFound(ns_id.to_string()))
    }

    fn transition(&mut self, ns_id: &str, to: NsState, now: SimTime, reason: Option<String>) {
        let ns = self.instances.get_mut(ns_id).expect("known ns");
        let from = ns.state;
        assert!(
            legal_transition(from, to),
            "illegal transition {from} -> {to} for {ns_id}"
        );
        ns.state = to;
        ns.state_changed_at = now;
        if to == NsState::Error {
            ns.reason = reason.clone();
        }
        self.events.push(Event {
            t: now,
            ns_id: Some(ns_id.to_string()),
            kind: "ns_state".into(),
            from: Some(from.to_string()),
            to: Some(to.to_string()),
            reason,
        });
    }

    fn set_vnf_state(&mut self, ns_id: &str, vnf_id: &str, to: VnfState, now: SimTime) {
        let ns = self.instances.get_mut(ns_id).expect("known ns");
        let Some(v) = ns.vnf_instances.iter_mut().find(|v| v.vnf_id == vnf_id) else {
            return;
        };
        if v.state == to {
            return;
        }
        let from = v.state;
        v.state = to;
        self.events.push(Event {
            t: now,
            ns_id: Some(ns_id.to_string()),
            kind: "vnf_state".into(),
            from: Some(from.to_string()),
            to: Some(to.to_string()),
            reason: Some(vnf_id.to_string()),
        });
    }

    fn fail(&mut self, ns_id: &str, now: SimTime, reason: String) {
        self.queue.cancel_pending(ns_id, now);
        let ns = self.instances.get_mut(ns_id).expect("known ns");
        ns.phase = Phase::Idle;
        ns.building = None;
        let pending: Vec<String> = ns
            .vnf_instances
            .iter()
            .filter(|v| v.state == VnfState::Pending)
            .map(|v| v.vnf_id.clone())
            .collect();
        for v in pending {
            self.set_vnf_state(ns_id, &v, VnfState::Failed, now);
        }
        self.transition(ns_id, NsState::Error, now, Some(reason));
    }

    fn enqueue(&mut self, ns_id: &str, op: Operation, teardown: bool, now: SimTime) -> TaskId {
        self.plan_seq += 1;
        let kind = op.kind();
        let cmd = Command {
            command_id: 0,
            ns_id: ns_id.to_string(),
            duration_s: self.config.durations.of(kind),
            op: op.clone(),
        };
        let key = format!("{ns_id}:{}:{kind:?}", self.plan_seq);
        let id = self.queue.enqueue(ns_id, cmd, &key, now);
        self.tasks.insert(
            id,
            TaskRef {
                ns_id: ns_id.to_string(),
                op,
                teardown,
            },
        );
        id
    }

    /// Nodes with the allocations of not-yet-executed allocate tasks applied,
    /// so concurrent plans don't double-book capacity.
    fn effective_nodes(&self, infra: &Infra) -> Vec<ComputeNode> {
        let mut nodes = infra.nodes().to_vec();
        for (id, t) in &self.tasks {
            let Operation::AllocateCompute {
                vnf_id,
                node_id,
                flavor,
            } = &t.op
            else {
                continue;
            };
            let live = self.queue.get(*id).is_some_and(|t| {
                matches!(
                    t.state,
                    crate::queue::TaskState::Queued | crate::queue::TaskState::Running
                )
            });
            if live {
                if let Some(n) = nodes.iter_mut().find(|n| &n.node_id == node_id) {
                    n.allocations.insert(vnf_id.clone(), *flavor);
                }
            }
        }
        nodes
    }

    pub fn deploy_ns(
        &mut self,
        catalog: &Catalog,
        infra: &Infra,
        nsd_ref: &DescriptorRef,
        now: SimTime,
    ) -> Result<String, LifecycleError> {
        let nsd = catalog.fetch_nsd(nsd_ref)?;
        let violations = catalog.validate_nsd(&nsd);
        if !violations.is_empty() {
            return Err(LifecycleError::Validation(violations));
        }
        let ns_id = format!("ns-{}", self.next_ns);
        self.next_ns += 1;
        self.instances.insert(
            ns_id.clone(),
            NsInstance {
                ns_id: ns_id.clone(),
                nsd_ref: nsd_ref.clone(),
                state: NsState::Defined,
                vnf_instances: Vec::new(),
                carrier_refs: Vec::new(),
                links_up: Vec::new(),
                created_at: now,
                state_changed_at: now,
                downtime_log: Vec::new(),
                reason: None,
                phase: Phase::Idle,
                generation: 0,
                building: None,
            },
        );
        self.events.push(Event {
            t: now,
            ns_id: Some(ns_id.clone()),
            kind: "ns_state".into(),
            from: None,
            to: Some(NsState::Defined.to_string()),
            reason: Some(nsd_ref.to_string()),
        });
        self.transition(&ns_id, NsState::Deploying, now, None);
        self.start_build(catalog, infra, &ns_id, &nsd, now);
        Ok(ns_id)
    }

    pub fn terminate_ns(&mut self, ns_id: &str, now: SimTime) -> Result<(), LifecycleError> {
        let state = self.get(ns_id)?.state;
        if !matches!(
            state,
            NsState::Running | NsState::Error | NsState::Deploying
        ) {
            return Err(LifecycleError::IllegalState {
                ns_id: ns_id.to_string(),
                state,
                intent: "terminate",
            });
        }
        self.queue.cancel_pending(ns_id, now);
        self.transition(ns_id, NsState::Terminating, now, None);
        let ns = self.instances.get_mut(ns_id).unwrap();
        ns.building = None;
        ns.phase = Phase::TearingDown {
            planned: false,
            rebuild_to: None,
        };
        if self.queue.running_for(ns_id).is_none() {
            self.start_teardown(ns_id, now);
            if self.queue.is_idle(ns_id) {
                // Nothing was ever acquired.
                self.finish_termination(ns_id, now);
            }
        }
        Ok(())
    }

    pub fn reconfigure_ns(
        &mut self,
        catalog: &Catalog,
        ns_id: &str,
        target: &DescriptorRef,
        now: SimTime,
    ) -> Result<(), LifecycleError> {
        let ns = self.get(ns_id)?;
        if ns.state != NsState::Running {
            return Err(LifecycleError::IllegalState {
                ns_id: ns_id.to_string(),
                state: ns.state,
                intent: "reconfigure",
            });
        }
        if *target == ns.nsd_ref {
            return Err(LifecycleError::Validation(vec![Violation(
                "target descriptor equals the current one".into(),
            )]));
        }
        let nsd = catalog.fetch_nsd(target)?;
        let violations = catalog.validate_nsd(&nsd);
        if !violations.is_empty() {
            return Err(LifecycleError::Validation(violations));
        }
        self.transition(
            ns_id,
            NsState::Reconfiguring,
            now,
            Some(format!("-> {target}")),
        );
        self.instances.get_mut(ns_id).unwrap().phase = Phase::TearingDown {
            planned: false,
            rebuild_to: Some(target.clone()),
        };
        self.start_teardown(ns_id, now);
        Ok(())
    }

    /// Enqueue the reverse of everything the NS currently holds.
    fn start_teardown(&mut self, ns_id: &str, now: SimTime) {
        let ns = &self.instances[ns_id];
        let mut ops = Vec::new();
        for l in &ns.links_up {
            ops.push(Operation::UnlinkVnfs { link_id: l.clone() });
        }
        for v in ns.vnf_instances.iter().filter(|v| v.booted) {
            ops.push(Operation::StopVnf {
                vnf_id: v.vnf_id.clone(),
            });
        }
        for c in &ns.carrier_refs {
            ops.push(Operation::ReleaseCarrier {
                assignment_id: c.assignment_id,
            });
        }
        for v in ns.vnf_instances.iter().filter(|v| v.placement.is_some()) {
            ops.push(Operation::FreeCompute {
                vnf_id: v.vnf_id.clone(),
            });
        }
        if let Phase::TearingDown { planned, .. } =
            &mut self.instances.get_mut(ns_id).unwrap().phase
        {
            *planned = true;
        }
        for op in ops {
            self.enqueue(ns_id, op, true, now);
        }
    }

    fn start_build(
        &mut self,
        catalog: &Catalog,
        infra: &Infra,
        ns_id: &str,
        nsd: &NsDescriptor,
        now: SimTime,
    ) {
        let resolved: Result<Vec<(String, VnfDescriptor, u32)>, CatalogError> = nsd
            .members
            .iter()
            .map(|m| {
                Ok((
                    m.member_id.clone(),
                    catalog.fetch_vnfd(&m.vnfd)?,
                    m.replicas,
                ))
            })
            .collect();
        let members = match resolved {
            Ok(m) => m,
            Err(e) => return self.fail(ns_id, now, e.to_string()),
        };
        let nodes = self.effective_nodes(infra);

        let ns = self.instances.get_mut(ns_id).unwrap();
        ns.phase = Phase::Building;
        ns.building = Some(nsd.reference());
        if ns.vnf_instances.is_empty() {
            ns.generation += 1;
            let generation = ns.generation;
            for (member_id, d, replicas) in &members {
                for r in 0..*replicas {
                    ns.vnf_instances.push(VnfInstance {
                        vnf_id: format!("{ns_id}.g{generation}.{member_id}.{r}"),
                        member_id: member_id.clone(),
                        replica: r,
                        vnfd: d.reference(),
                        state: VnfState::Pending,
                        placement: None,
                        flavor: d.flavor,
                        config: d.radio_profile,
                        metric_model: d.metric_model,
                        booted: false,
                    });
                }
            }
        }

        let unplaced: Vec<(String, Flavor)> = ns
            .vnf_instances
            .iter()
            .filter(|v| v.placement.is_none())
            .map(|v| (v.vnf_id.clone(), v.flavor))
            .collect();
        let demands: Vec<Flavor> = unplaced.iter().map(|(_, f)| *f).collect();
        let placement = match infra::place(&demands, &nodes) {
            Ok(p) => p,
            Err(e) => return self.fail(ns_id, now, e.to_string()),
        };

        let carrier_bw = if nsd.requires_frontend && ns.carrier_refs.is_empty() {
            let bw = ns
                .vnf_instances
                .iter()
                .find(|v| v.role() == Some(RadioRole::Enb))
                .and_then(|v| v.config.and_then(|c| c.bandwidth()))
                .map(|b| b.hz());
            match bw.map(|bw| infra.spectrum().plan_any(bw).map(|_| bw)) {
                Some(Ok(bw)) => Some(bw),
                Some(Err(e)) => {
                    return self.fail(ns_id, now, format!("NoSpectrum/NoFrontend: {e}"))
                }
                None => {
                    return self.fail(
                        ns_id,
                        now,
                        "NoSpectrum/NoFrontend: no radio bandwidth".into(),
                    )
                }
            }
        } else {
            None
        };

        let to_boot: Vec<String> = ns
            .vnf_instances
            .iter()
            .filter(|v| !v.booted)
            .map(|v| v.vnf_id.clone())
            .collect();
        let generation = ns.generation;
        let mut links = Vec::new();
        for l in &nsd.links {
            let link_id = format!("{ns_id}.g{generation}.{}-{}", l.endpoints.0, l.endpoints.1);
            if ns.links_up.contains(&link_id) {
                continue;
            }
            let vnf_ids = ns
                .vnf_instances
                .iter()
                .filter(|v| v.member_id == l.endpoints.0 || v.member_id == l.endpoints.1)
                .map(|v| v.vnf_id.clone())
                .collect();
            links.push(Operation::LinkVnfs { link_id, vnf_ids });
        }

        for ((vnf_id, flavor), node_id) in unplaced.into_iter().zip(placement) {
            self.enqueue(
                ns_id,
                Operation::AllocateCompute {
                    vnf_id,
                    node_id,
                    flavor,
                },
                false,
                now,
            );
        }
        if let Some(bw_hz) = carrier_bw {
            self.enqueue(ns_id, Operation::AssignCarrier { bw_hz }, false, now);
        }
        for vnf_id in to_boot {
            self.enqueue(ns_id, Operation::BootVnf { vnf_id }, false, now);
        }
        for op in links {
            self.enqueue(ns_id, op, false, now);
        }
        self.settle(catalog, infra, ns_id, now);
    }

    /// Called when the queue hands a task to the driver.
    pub fn on_dispatch(&mut self, task: &Task, now: SimTime) {
        let Some(r) = self.tasks.get(&task.task_id).cloned() else {
            return;
        };
        if let Operation::StopVnf { vnf_id } = &r.op {
            self.set_vnf_state(&r.ns_id, vnf_id, VnfState::Stopping, now);
            let ns = self.instances.get_mut(&r.ns_id).unwrap();
            let open = ns.downtime_log.last().is_some_and(|w| w.end.is_none());
            if ns.state == NsState::Reconfiguring && !open && ns.active_vnfs().next().is_none() {
                ns.downtime_log.push(DowntimeWindow {
                    start: now,
                    end: None,
                });
            }
        }
    }

    /// Route a driver outcome through the queue, then into NS state.
    pub fn complete(
        &mut self,
        catalog: &Catalog,
        infra: &Infra,
        task_id: TaskId,
        outcome: Outcome,
    ) -> Result<Completion, LifecycleError> {
        if !self.tasks.contains_key(&task_id) {
            return Err(LifecycleError::UnknownTask(task_id));
        }
        let completion = self
            .queue
            .complete(task_id, outcome)
            .map_err(|_| LifecycleError::UnknownTask(task_id))?;
        match &completion {
            Completion::Done(o) | Completion::Failed(o) => self.apply_outcome(catalog, infra, o)?,
            Completion::Retry { .. } => {}
        }
        Ok(completion)
    }

    /// Advance VNF and NS state for a final (done or retries-exhausted) outcome.
    pub fn apply_outcome(
        &mut self,
        catalog: &Catalog,
        infra: &Infra,
        outcome: &Outcome,
    ) -> Result<(), LifecycleError> {
        let r = self
            .tasks
            .get(&outcome.command_id)
            .cloned()
            .ok_or(LifecycleError::UnknownTask(outcome.command_id))?;
        let ns_id = r.ns_id.as_str();
        let now = outcome.completed_at;
        if !outcome.is_done() {
            let state = self.instances[ns_id].state;
            if state != NsState::Error && !state.is_terminal() {
                let reason = format!("{:?} failed: {}", r.op.kind(), outcome.detail);
                self.fail(ns_id, now, reason);
            }
            return Ok(());
        }

        match &r.op {
            Operation::AllocateCompute {
                vnf_id,
                node_id,
                flavor,
            } => {
                let ns = self.instances.get_mut(ns_id).unwrap();
                if let Some(v) = ns.vnf_instances.iter_mut().find(|v| &v.vnf_id == vnf_id) {
                    v.placement = Some(Placement {
                        node_id: node_id.clone(),
                        flavor: *flavor,
                    });
                }
                self.set_vnf_state(ns_id, vnf_id, VnfState::Building, now);
            }
            Operation::FreeCompute { vnf_id } => {
                let ns = self.instances.get_mut(ns_id).unwrap();
                if let Some(v) = ns.vnf_instances.iter_mut().find(|v| &v.vnf_id == vnf_id) {
                    v.placement = None;
                }
                self.set_vnf_state(ns_id, vnf_id, VnfState::Stopped, now);
            }
            Operation::BootVnf { vnf_id } => {
                let ns = self.instances.get_mut(ns_id).unwrap();
                if let Some(v) = ns.vnf_instances.iter_mut().find(|v| &v.vnf_id == vnf_id) {
                    v.booted = true;
                }
                self.set_vnf_state(ns_id, vnf_id, VnfState::Active, now);
                let ns = self.instances.get_mut(ns_id).unwrap();
                let all_active = ns.vnf_instances.iter().all(|v| v.state == VnfState::Active);
                if all_active {
                    if let Some(w) = ns.downtime_log.last_mut().filter(|w| w.end.is_none()) {
                        w.end = Some(now);
                    }
                }
            }
            Operation::StopVnf { vnf_id } => {
                let ns = self.instances.get_mut(ns_id).unwrap();
                if let Some(v) = ns.vnf_instances.iter_mut().find(|v| &v.vnf_id == vnf_id) {
                    v.booted = false;
                }
            }
            Operation::AssignCarrier { .. } => {
                if let Some(c) = &outcome.carrier {
                    self.instances
                        .get_mut(ns_id)
                        .unwrap()
                        .carrier_refs
                        .push(c.clone());
                }
            }
            Operation::ReleaseCarrier { assignment_id } => {
                self.instances
                    .get_mut(ns_id)
                    .unwrap()
                    .carrier_refs
                    .retain(|c| c.assignment_id != *assignment_id);
            }
            Operation::LinkVnfs { link_id, .. } => {
                self.instances
                    .get_mut(ns_id)
                    .unwrap()
                    .links_up
                    .push(link_id.clone());
            }
            Operation::UnlinkVnfs { link_id } => {
                self.instances
                    .get_mut(ns_id)
                    .unwrap()
                    .links_up
                    .retain(|l| l != link_id);
            }
        }
        self.settle(catalog, infra, ns_id, now);
        Ok(())
    }

    /// Move an idle NS to the next phase once its queue has drained.
    fn settle(&mut self, catalog: &Catalog, infra: &Infra, ns_id: &str, now: SimTime) {
        if !self.queue.is_idle(ns_id) {
            return;
        }
        let ns = &self.instances[ns_id];
        match ns.phase.clone() {
            Phase::Idle => {}
            Phase::Building => {
                let done = ns.vnf_instances.iter().all(|v| v.state == VnfState::Active);
                if !done {
                    return;
                }
                let target = ns.building.clone();
                let ns = self.instances.get_mut(ns_id).unwrap();
                ns.phase = Phase::Idle;
                if let Some(t) = target {
                    ns.nsd_ref = t;
                }
                ns.building = None;
                if matches!(ns.state, NsState::Deploying | NsState::Reconfiguring) {
                    self.transition(ns_id, NsState::Running, now, None);
                }
            }
            Phase::TearingDown { planned: false, .. } => self.start_teardown(ns_id, now),
            Phase::TearingDown {
                planned: true,
                rebuild_to,
            } => match rebuild_to {
                None => self.finish_termination(ns_id, now),
                Some(target) => {
                    let ns = self.instances.get_mut(ns_id).unwrap();
                    ns.vnf_instances.clear();
                    ns.links_up.clear();
                    match catalog.fetch_nsd(&target) {
                        Ok(nsd) => self.start_build(catalog, infra, ns_id, &nsd, now),
                        Err(e) => self.fail(ns_id, now, e.to_string()),
                    }
                }
            },
        }
    }

    fn finish_termination(&mut self, ns_id: &str, now: SimTime) {
        let ns = self.instances.get_mut(ns_id).unwrap();
        ns.vnf_instances.clear();
        ns.links_up.clear();
        ns.phase = Phase::Idle;
        self.transition(ns_id, NsState::Terminated, now, None);
    }

    pub fn handle_alarm(
        &mut self,
        catalog: &Catalog,
        event: &AlarmEvent,
        now: SimTime,
    ) -> ActionDecision {
        let decision = |ns_id: Option<String>, outcome| ActionDecision {
            t: now,
            rule_id: event.rule_id.clone(),
            ns_id,
            outcome,
        };
        let suppressed = |reason: &str| DecisionOutcome::Suppressed {
            reason: reason.to_string(),
        };

        let d = 'decide: {
            if event.token != self.config.token {
                break 'decide decision(None, suppressed("unauthorized"));
            }
            let ns_id = match event.series.scope {
                Scope::Ns => Some(event.series.scope_id.clone()),
                Scope::Vnf => event.series.scope_id.split('.').next().map(str::to_string),
                Scope::Node => None,
            };
            let Some(ns) = ns_id.as_deref().and_then(|id| self.instances.get(id)) else {
                break 'decide decision(ns_id, suppressed("no matching network service"));
            };
            let ns_id = ns.ns_id.clone();
            let Ok(nsd) = catalog.fetch_nsd(&ns.nsd_ref) else {
                break 'decide decision(Some(ns_id), suppressed("no matching policy"));
            };
            let Some(policy) = nsd
                .policies
                .iter()
                .find(|p| p.alarm_rule_ref == event.rule_id)
            else {
                break 'decide decision(Some(ns_id), suppressed("no matching policy"));
            };
            let cd_key = (ns_id.clone(), policy.rule_id.clone());
            if let Some(last) = self.cooldowns.get(&cd_key) {
                if now - last < policy.cooldown_s {
                    break 'decide decision(Some(ns_id), suppressed("cooldown"));
                }
            }
            if ns.state != NsState::Running {
                break 'decide decision(Some(ns_id), suppressed("illegal state"));
            }
            let outcome = match &policy.action {
                PolicyAction::NotifyOnly => DecisionOutcome::Triggered {
                    action: "notify_only".into(),
                },
                PolicyAction::ReconfigureTo { target } => {
                    match self.reconfigure_ns(catalog, &ns_id, target, now) {
                        Ok(()) => DecisionOutcome::Triggered {
                            action: format!("reconfigure_to {target}"),
                        },
                        Err(e) => DecisionOutcome::Suppressed {
                            reason: e.to_string(),
                        },
                    }
                }
            };
            if matches!(outcome, DecisionOutcome::Triggered { .. }) {
                self.cooldowns.insert(cd_key, now);
            }
            decision(Some(ns_id), outcome)
        };

        self.events.push(Event {
            t: now,
            ns_id: d.ns_id.clone(),
            kind: "decision".into(),
            from: None,
            to: None,
            reason: Some(match &d.outcome {
                DecisionOutcome::Triggered { action } => {
                    format!("{}: triggered {action}", d.rule_id)
                }
                DecisionOutcome::Suppressed { reason } => {
                    format!("{}: suppressed ({reason})", d.rule_id)
                }
            }),
        });
        d
    }

    /// Rebuild plans after a restart. In-flight commands never reached the
    /// infrastructure, so every NS resumes from its recorded holdings.
    pub fn replan_after_restart(&mut self, catalog: &Catalog, infra: &Infra, now: SimTime) {
        self.queue.clear_in_flight(now);
        self.tasks.clear();
        let ids: Vec<String> = self.instances.keys().cloned().collect();
        for ns_id in ids {
            let ns = self.instances.get_mut(&ns_id).unwrap();
            for v in ns.vnf_instances.iter_mut() {
                if v.state == VnfState::Stopping && v.booted {
                    v.state = VnfState::Active;
                }
            }
            match ns.phase.clone() {
                Phase::Idle => {}
                Phase::Building => {
                    let target = ns.building.clone().unwrap_or_else(|| ns.nsd_ref.clone());
                    match catalog.fetch_nsd(&target) {
                        Ok(nsd) => self.start_build(catalog, infra, &ns_id, &nsd, now),
                        Err(e) => self.fail(&ns_id, now, e.to_string()),
                    }
                }
                Phase::TearingDown { rebuild_to, .. } => {
                    ns.phase = Phase::TearingDown {
                        planned: false,
                        rebuild_to,
                    };
                    self.start_teardown(&ns_id, now);
                    self.settle(catalog, infra, &ns_id, now);
                }
            }
        }
    }

    /// Whether the task belongs to a teardown phase.
    pub fn is_teardown_task(&self, task_id: TaskId) -> Option<bool> {
        self.tasks.get(&task_id).map(|t| t.teardown)
    }

    pub fn task_kind(&self, task_id: TaskId) -> Option<CommandKind> {
        self.tasks.get(&task_id).map(|t| t.op.kind())
    }
}
