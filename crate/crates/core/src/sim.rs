//! Scenario files, synthetic radio load, and headless scenario runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{DescriptorRef, NsDescriptor, VnfDescriptor};
use crate::fixtures;
use crate::infra::{Durations, Inventory};
use crate::lifecycle::{ActionDecision, Event, NsInstance, NsState};
use crate::monitor::{AlarmRule, AlarmTransition, DeliveryRecord};
use crate::orchestrator::{Baseline, Orchestrator, OrchestratorConfig, OrchestratorError};
use crate::queue::RetryPolicy;
use crate::rf::CarrierAssignment;
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum LoadShape {
    Constant {
        rbs: f64,
    },
    /// Linear from `from_rbs` at the segment start to `to_rbs` at its end.
    Ramp {
        from_rbs: f64,
        to_rbs: f64,
    },
}

/// Offered load over `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSegment {
    pub start_s: f64,
    pub end_s: f64,
    #[serde(flatten)]
    pub shape: LoadShape,
}

impl LoadSegment {
    pub fn constant(start_s: f64, end_s: f64, rbs: f64) -> Self {
        Self {
            start_s,
            end_s,
            shape: LoadShape::Constant { rbs },
        }
    }

    pub fn ramp(start_s: f64, end_s: f64, from_rbs: f64, to_rbs: f64) -> Self {
        Self {
            start_s,
            end_s,
            shape: LoadShape::Ramp { from_rbs, to_rbs },
        }
    }

    fn value_at(&self, t: SimTime) -> f64 {
        match self.shape {
            LoadShape::Constant { rbs } => rbs,
            LoadShape::Ramp { from_rbs, to_rbs } => {
                let span = self.end_s - self.start_s;
                let frac = if span > 0.0 {
                    (t - self.start_s) / span
                } else {
                    1.0
                };
                from_rbs + (to_rbs - from_rbs) * frac
            }
        }
    }
}

/// Demanded resource blocks at `t`, rounded half up. Zero outside every segment.
pub fn offered_load(segments: &[LoadSegment], t: SimTime) -> u32 {
    segments
        .iter()
        .find(|s| s.start_s <= t && t < s.end_s)
        .map(|s| (s.value_at(t) + 0.5).floor().max(0.0) as u32)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Deploy { nsd: DescriptorRef },
    Reconfigure { ns_id: String, nsd: DescriptorRef },
    Terminate { ns_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub t: SimTime,
    #[serde(flatten)]
    pub action: Action,
}

fn default_tick() -> f64 {
    1.0
}

fn default_token() -> String {
    fixtures::DEMO_TOKEN.to_string()
}

/// A self-contained experiment: inventory, descriptors, alarm rules, load
/// profile and timed operator actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    pub duration_s: f64,
    #[serde(default = "fixtures::testbed_inventory")]
    pub inventory: Inventory,
    #[serde(default)]
    pub vnfds: Vec<VnfDescriptor>,
    #[serde(default)]
    pub nsds: Vec<NsDescriptor>,
    #[serde(default)]
    pub alarm_rules: Vec<AlarmRule>,
    #[serde(default)]
    pub durations: Durations,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default = "default_token")]
    pub token: String,
    #[serde(default)]
    pub load_segments: Vec<LoadSegment>,
    /// Uniform integer jitter added to the offered load.
    #[serde(default)]
    pub load_jitter_rbs: u32,
    /// Probability that a driver command fails.
    #[serde(default)]
    pub fault_rate: f64,
    #[serde(default)]
    pub actions: Vec<TimedAction>,
}

impl Scenario {
    /// Deploy a 1.4 MHz cell, ramp its load past the 5-RB threshold, let the
    /// alarm reconfigure it to 5 MHz, then saturate the wider carrier.
    pub fn demo() -> Self {
        let contents = fixtures::demo_contents();
        Self {
            seed: 7,
            tick_s: 1.0,
            duration_s: 420.0,
            inventory: fixtures::testbed_inventory(),
            vnfds: contents.vnfds,
            nsds: contents.nsds,
            alarm_rules: vec![fixtures::demo_alarm_rule()],
            durations: Durations::default(),
            retry: RetryPolicy::default(),
            baseline: Baseline::default(),
            token: fixtures::DEMO_TOKEN.into(),
            load_segments: vec![
                LoadSegment::constant(0.0, 120.0, 3.0),
                LoadSegment::ramp(120.0, 240.0, 3.0, 20.0),
                LoadSegment::constant(240.0, 300.0, 20.0),
                LoadSegment::constant(300.0, 421.0, 25.0),
            ],
            load_jitter_rbs: 0,
            fault_rate: 0.0,
            actions: vec![TimedAction {
                t: 0.0,
                action: Action::Deploy {
                    nsd: DescriptorRef::new("lte-cell-1.4", "v1"),
                },
            }],
        }
    }

    /// The controller alone: no services, no load.
    pub fn baseline() -> Self {
        Self {
            duration_s: 120.0,
            vnfds: Vec::new(),
            nsds: Vec::new(),
            alarm_rules: Vec::new(),
            load_segments: Vec::new(),
            actions: Vec::new(),
            ..Self::demo()
        }
    }

    pub fn config(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            token: self.token.clone(),
            tick_s: self.tick_s,
            durations: self.durations,
            retry: self.retry,
            baseline: self.baseline,
            seed: self.seed,
            load_jitter_rbs: self.load_jitter_rbs,
            fault_rate: self.fault_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowntimeRecord {
    pub ns_id: String,
    pub start: SimTime,
    pub end: Option<SimTime>,
}

/// One carrier over its lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierRecord {
    pub assignment: CarrierAssignment,
    pub assigned_at: SimTime,
    pub released_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub tick_s: f64,
    pub duration_s: f64,
    pub events: Vec<Event>,
    pub decisions: Vec<ActionDecision>,
    pub deliveries: Vec<DeliveryRecord>,
    pub alarm_transitions: Vec<AlarmTransition>,
    /// `scope/scope_id/metric` -> `[t, value]` samples.
    pub traces: BTreeMap<String, Vec<[f64; 2]>>,
    pub carriers: Vec<CarrierRecord>,
    pub downtime: Vec<DowntimeRecord>,
    pub instances: Vec<NsInstance>,
}

impl ScenarioReport {
    pub fn trace(&self, key: &str) -> &[[f64; 2]] {
        self.traces.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Time of the first transition of `ns_id` into `state`.
    pub fn first_state(&self, ns_id: &str, state: NsState) -> Option<SimTime> {
        let to = state.to_string();
        self.events
            .iter()
            .find(|e| {
                e.kind == "ns_state"
                    && e.ns_id.as_deref() == Some(ns_id)
                    && e.to.as_deref() == Some(&to)
            })
            .map(|e| e.t)
    }
}

/// Run a scenario to completion with no server.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, OrchestratorError> {
    let mut orch = Orchestrator::from_scenario(scenario)?;
    let ticks = (scenario.duration_s / scenario.tick_s).round() as u64;
    for _ in 0..=ticks {
        orch.step();
    }
    Ok(orch.report(scenario))
}
