//! Metric store, threshold-with-hold alarm rules and webhook delivery.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Ns,
    Vnf,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CpuPct,
    RamMb,
    Bler,
    SnrDb,
    RbOccupied,
    RbCapacity,
    LoadDemandRbs,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::CpuPct,
        Metric::RamMb,
        Metric::Bler,
        Metric::SnrDb,
        Metric::RbOccupied,
        Metric::RbCapacity,
        Metric::LoadDemandRbs,
    ];

    /// Scopes at which a metric may be recorded. Compute metrics exist
    /// everywhere; radio and load metrics only per NS.
    pub fn allowed_at(self, scope: Scope) -> bool {
        match self {
            Metric::CpuPct | Metric::RamMb => true,
            _ => scope == Scope::Ns,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::CpuPct => "cpu_pct",
            Metric::RamMb => "ram_mb",
            Metric::Bler => "bler",
            Metric::SnrDb => "snr_db",
            Metric::RbOccupied => "rb_occupied",
            Metric::RbCapacity => "rb_capacity",
            Metric::LoadDemandRbs => "load_demand_rbs",
        }
    }
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Ns => "ns",
            Scope::Vnf => "vnf",
            Scope::Node => "node",
        }
    }
}

impl FromStr for Scope {
    type Err = MonitorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ns" => Ok(Scope::Ns),
            "vnf" => Ok(Scope::Vnf),
            "node" => Ok(Scope::Node),
            _ => Err(MonitorError::UnknownName(s.to_string())),
        }
    }
}

impl FromStr for Metric {
    type Err = MonitorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MonitorError::UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub scope: Scope,
    pub scope_id: String,
    pub metric: Metric,
}

impl SeriesKey {
    pub fn new(
        scope: Scope,
        scope_id: impl Into<String>,
        metric: Metric,
    ) -> Result<Self, MonitorError> {
        if !metric.allowed_at(scope) {
            return Err(MonitorError::InvalidSeries { scope, metric });
        }
        Ok(Self {
            scope,
            scope_id: scope_id.into(),
            metric,
        })
    }

    pub fn ns(ns_id: &str, metric: Metric) -> Self {
        Self::new(Scope::Ns, ns_id, metric).expect("every metric is valid at ns scope")
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.scope.as_str(),
            self.scope_id,
            self.metric.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub key: SeriesKey,
    pub t: SimTime,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("sample at t={t} is not newer than the last sample ({last}) of {key}")]
    OutOfOrder {
        key: SeriesKey,
        t: SimTime,
        last: SimTime,
    },
    #[error("metric {metric:?} is not recorded at {scope:?} scope")]
    InvalidSeries { scope: Scope, metric: Metric },
    #[error("unknown name {0}")]
    UnknownName(String),
    #[error("unknown alarm rule {0}")]
    UnknownRule(String),
    #[error("invalid alarm rule {0}")]
    InvalidRule(String),
}

/// Append-only per-series arrays; range queries binary-search the time column.
#[derive(Debug, Default)]
pub struct TimeSeriesStore {
    series: RwLock<BTreeMap<SeriesKey, Vec<(SimTime, f64)>>>,
}

impl TimeSeriesStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(&self, sample: MetricSample) -> Result<(), MonitorError> {
        if !sample.key.metric.allowed_at(sample.key.scope) {
            return Err(MonitorError::InvalidSeries {
                scope: sample.key.scope,
                metric: sample.key.metric,
            });
        }
        let mut series = self.series.write();
        let points = series.entry(sample.key.clone()).or_default();
        if let Some(&(last, _)) = points.last() {
            if sample.t.partial_cmp(&last) != Some(std::cmp::Ordering::Greater) {
                return Err(MonitorError::OutOfOrder {
                    key: sample.key,
                    t: sample.t,
                    last,
                });
            }
        }
        points.push((sample.t, sample.value));
        Ok(())
    }

    pub fn query_range(&self, key: &SeriesKey, t0: SimTime, t1: SimTime) -> Vec<MetricSample> {
        let series = self.series.read();
        let Some(points) = series.get(key) else {
            return Vec::new();
        };
        let lo = points.partition_point(|(t, _)| *t < t0);
        let hi = points.partition_point(|(t, _)| *t <= t1);
        points[lo..hi.max(lo)]
            .iter()
            .map(|&(t, value)| MetricSample {
                key: key.clone(),
                t,
                value,
            })
            .collect()
    }

    /// Samples of `key` with `after < t <= until`.
    fn samples_between(
        &self,
        key: &SeriesKey,
        after: Option<SimTime>,
        until: SimTime,
    ) -> Vec<(SimTime, f64)> {
        let series = self.series.read();
        let Some(points) = series.get(key) else {
            return Vec::new();
        };
        let lo = after.map_or(0, |a| points.partition_point(|(t, _)| *t <= a));
        let hi = points.partition_point(|(t, _)| *t <= until);
        points[lo..hi.max(lo)].to_vec()
    }

    pub fn keys(&self) -> Vec<SeriesKey> {
        self.series.read().keys().cloned().collect()
    }

    pub fn points(&self, key: &SeriesKey) -> Vec<(SimTime, f64)> {
        self.series.read().get(key).cloned().unwrap_or_default()
    }

    /// Every series as `[[t, v], ...]`, keyed by `scope/scope_id/metric`.
    pub fn export(&self) -> BTreeMap<String, Vec<[f64; 2]>> {
        self.series
            .read()
            .iter()
            .map(|(k, pts)| (k.to_string(), pts.iter().map(|&(t, v)| [t, v]).collect()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Gt,
    Lt,
}

impl Predicate {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Predicate::Gt => value > threshold,
            Predicate::Lt => value < threshold,
        }
    }
}

/// Which series a rule watches. A missing `scope_id` matches every series
/// of that scope and metric (subject to the binding filter of the caller).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope_id: Option<String>,
    pub metric: Metric,
}

impl Selector {
    pub fn matches(&self, key: &SeriesKey) -> bool {
        key.scope == self.scope
            && key.metric == self.metric
            && self.scope_id.as_ref().is_none_or(|id| *id == key.scope_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRule {
    pub rule_id: String,
    pub selector: Selector,
    pub predicate: Predicate,
    pub threshold: f64,
    pub hold_s: f64,
    /// Defaults to `hold_s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clear_hold_s: Option<f64>,
    #[serde(default = "default_severity")]
    pub severity: String,
    pub webhook_token: String,
}

fn default_severity() -> String {
    "major".to_string()
}

impl AlarmRule {
    pub fn clear_hold(&self) -> f64 {
        self.clear_hold_s.unwrap_or(self.hold_s)
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        let ok = !self.rule_id.is_empty()
            && self.hold_s >= 0.0
            && self.clear_hold() >= 0.0
            && self.threshold.is_finite()
            && self.selector.metric.allowed_at(self.selector.scope);
        if ok {
            Ok(())
        } else {
            Err(MonitorError::InvalidRule(self.rule_id.clone()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmState {
    #[default]
    Clear,
    Pending,
    Firing,
}

/// Evaluation state of one rule against one series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlarmTracker {
    pub state: AlarmState,
    pub breach_since: Option<SimTime>,
    pub clear_since: Option<SimTime>,
    pub last_t: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmTransition {
    pub rule_id: String,
    pub series: SeriesKey,
    pub from: AlarmState,
    pub to: AlarmState,
    pub t: SimTime,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub rule_id: String,
    pub series: SeriesKey,
    pub value: f64,
    pub fired_at: SimTime,
    pub token: String,
}

impl AlarmTracker {
    /// Feed one sample; returns the transitions it caused, in order.
    pub fn step(
        &mut self,
        rule: &AlarmRule,
        t: SimTime,
        value: f64,
    ) -> Vec<(AlarmState, AlarmState)> {
        let mut out = Vec::new();
        let breach = rule.predicate.holds(value, rule.threshold);
        self.last_t = Some(t);
        let mut go = |me: &mut Self, to: AlarmState| {
            out.push((me.state, to));
            me.state = to;
        };
        match self.state {
            AlarmState::Clear if breach => {
                self.breach_since = Some(t);
                go(self, AlarmState::Pending);
                if rule.hold_s <= 0.0 {
                    self.clear_since = None;
                    go(self, AlarmState::Firing);
                }
            }
            AlarmState::Clear => {}
            AlarmState::Pending if breach => {
                let since = self.breach_since.unwrap_or(t);
                if t - since >= rule.hold_s {
                    self.clear_since = None;
                    go(self, AlarmState::Firing);
                }
            }
            AlarmState::Pending => {
                self.breach_since = None;
                go(self, AlarmState::Clear);
            }
            AlarmState::Firing if breach => {
                self.clear_since = None;
            }
            AlarmState::Firing => {
                let since = *self.clear_since.get_or_insert(t);
                if t - since >= rule.clear_hold() {
                    self.breach_since = None;
                    self.clear_since = None;
                    go(self, AlarmState::Clear);
                }
            }
        }
        out
    }
}

/// Rules plus per-series trackers over a shared store.
#[derive(Debug, Default)]
pub struct Monitor {
    pub store: TimeSeriesStore,
    rules: BTreeMap<String, AlarmRule>,
    trackers: BTreeMap<(String, SeriesKey), AlarmTracker>,
    transitions: Vec<AlarmTransition>,
}

/// Serializable rule and tracker state (the series data is not persisted).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub rules: Vec<AlarmRule>,
    pub trackers: Vec<(String, SeriesKey, AlarmTracker)>,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_rule(&mut self, rule: AlarmRule) -> Result<(), MonitorError> {
        rule.validate()?;
        self.rules.insert(rule.rule_id.clone(), rule);
        Ok(())
    }

    pub fn rule(&self, rule_id: &str) -> Option<&AlarmRule> {
        self.rules.get(rule_id)
    }

    pub fn rules(&self) -> impl Iterator<Item = &AlarmRule> {
        self.rules.values()
    }

    pub fn tracker(&self, rule_id: &str, key: &SeriesKey) -> Option<&AlarmTracker> {
        self.trackers.get(&(rule_id.to_string(), key.clone()))
    }

    pub fn transitions(&self) -> &[AlarmTransition] {
        &self.transitions
    }

    pub fn ingest(&self, sample: MetricSample) -> Result<(), MonitorError> {
        self.store.ingest(sample)
    }

    /// Run every rule over the samples that arrived since its last
    /// evaluation, for each matching series accepted by `bound`. Returns the
    /// alarm events of rules that entered Firing.
    pub fn evaluate(
        &mut self,
        now: SimTime,
        bound: &dyn Fn(&AlarmRule, &SeriesKey) -> bool,
    ) -> Vec<AlarmEvent> {
        let mut events = Vec::new();
        if self.rules.is_empty() {
            return events;
        }
        let keys = self.store.keys();
        for rule in self.rules.values() {
            for key in keys
                .iter()
                .filter(|k| rule.selector.matches(k) && bound(rule, k))
            {
                let tracker = self
                    .trackers
                    .entry((rule.rule_id.clone(), key.clone()))
                    .or_default();
                for (t, value) in self.store.samples_between(key, tracker.last_t, now) {
                    for (from, to) in tracker.step(rule, t, value) {
                        self.transitions.push(AlarmTransition {
                            rule_id: rule.rule_id.clone(),
                            series: key.clone(),
                            from,
                            to,
                            t,
                            value,
                        });
                        if to == AlarmState::Firing {
                            events.push(AlarmEvent {
                                rule_id: rule.rule_id.clone(),
                                series: key.clone(),
                                value,
                                fired_at: t,
                                token: rule.webhook_token.clone(),
                            });
                        }
                    }
                }
            }
        }
        events
    }

    pub fn state(&self) -> MonitorState {
        MonitorState {
            rules: self.rules.values().cloned().collect(),
            trackers: self
                .trackers
                .iter()
                .map(|((r, k), t)| (r.clone(), k.clone(), t.clone()))
                .collect(),
        }
    }

    pub fn restore(state: MonitorState) -> Result<Self, MonitorError> {
        let mut m = Self::new();
        for r in state.rules {
            m.add_rule(r)?;
        }
        for (r, k, t) in state.trackers {
            // Series data is gone, so evaluation resumes at the next sample.
            let t = AlarmTracker { last_t: None, ..t };
            m.trackers.insert((r, k), t);
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRef {
    pub scope: String,
    pub scope_id: String,
    pub metric: String,
}

/// The JSON document POSTed to a webhook target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookPayload {
    pub rule_id: String,
    pub series: SeriesRef,
    pub value: f64,
    pub state: String,
    pub t: f64,
    pub token: String,
}

impl From<&AlarmEvent> for WebhookPayload {
    fn from(e: &AlarmEvent) -> Self {
        Self {
            rule_id: e.rule_id.clone(),
            series: SeriesRef {
                scope: e.series.scope.as_str().to_string(),
                scope_id: e.series.scope_id.clone(),
                metric: e.series.metric.as_str().to_string(),
            },
            value: e.value,
            state: "firing".to_string(),
            t: e.fired_at,
            token: e.token.clone(),
        }
    }
}

impl TryFrom<&WebhookPayload> for AlarmEvent {
    type Error = MonitorError;
    fn try_from(p: &WebhookPayload) -> Result<Self, Self::Error> {
        if p.state != "firing" {
            return Err(MonitorError::UnknownName(p.state.clone()));
        }
        Ok(Self {
            rule_id: p.rule_id.clone(),
            series: SeriesKey::new(
                p.series.scope.parse()?,
                p.series.scope_id.clone(),
                p.series.metric.parse()?,
            )?,
            value: p.value,
            fired_at: p.t,
            token: p.token.clone(),
        })
    }
}

/// Receiver of webhook deliveries. `Ok` carries the receiver's response
/// disposition; `Err` is a transport failure.
pub trait WebhookTarget {
    fn deliver(&mut self, payload: &WebhookPayload) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub rule_id: String,
    pub t: SimTime,
    pub attempts: u32,
    pub delivered: bool,
    pub disposition: String,
}

/// POST the alarm to `target`, retrying once on transport failure.
pub fn dispatch_webhook(event: &AlarmEvent, target: &mut dyn WebhookTarget) -> DeliveryRecord {
    let payload = WebhookPayload::from(event);
    let mut attempts = 0;
    let mut last_err = String::new();
    while attempts < 2 {
        attempts += 1;
        match target.deliver(&payload) {
            Ok(disposition) => {
                return DeliveryRecord {
                    rule_id: event.rule_id.clone(),
                    t: event.fired_at,
                    attempts,
                    delivered: true,
                    disposition,
                }
            }
            Err(e) => last_err = e,
        }
    }
    DeliveryRecord {
        rule_id: event.rule_id.clone(),
        t: event.fired_at,
        attempts,
        delivered: false,
        disposition: last_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SeriesKey {
        SeriesKey::ns("ns-1", Metric::RbOccupied)
    }

    fn rule(hold_s: f64) -> AlarmRule {
        AlarmRule {
            rule_id: "rb-saturated".into(),
            selector: Selector {
                scope: Scope::Ns,
                scope_id: None,
                metric: Metric::RbOccupied,
            },
            predicate: Predicate::Gt,
            threshold: 5.0,
            hold_s,
            clear_hold_s: None,
            severity: "major".into(),
            webhook_token: "secret".into(),
        }
    }

    fn run(m: &mut Monitor, values: &[(f64, f64)]) -> Vec<AlarmEvent> {
        let mut events = Vec::new();
        for &(t, v) in values {
            m.ingest(MetricSample {
                key: key(),
                t,
                value: v,
            })
            .unwrap();
            events.extend(m.evaluate(t, &|_, _| true));
        }
        events
    }

    #[test]
    fn ingest_ordering() {
        let s = TimeSeriesStore::new();
        let sample = |t| MetricSample {
            key: key(),
            t,
            value: 1.0,
        };
        s.ingest(sample(1.0)).unwrap();
        assert!(matches!(
            s.ingest(sample(0.5)),
            Err(MonitorError::OutOfOrder { .. })
        ));
        assert!(matches!(
            s.ingest(sample(1.0)),
            Err(MonitorError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn scope_matrix() {
        assert!(SeriesKey::new(Scope::Vnf, "v", Metric::RbOccupied).is_err());
        assert!(SeriesKey::new(Scope::Node, "n", Metric::CpuPct).is_ok());
    }

    #[test]
    fn range_queries() {
        let s = TimeSeriesStore::new();
        assert!(s.query_range(&key(), 0.0, 10.0).is_empty());
        for t in 0..5 {
            s.ingest(MetricSample {
                key: key(),
                t: t as f64,
                value: t as f64,
            })
            .unwrap();
        }
        assert_eq!(
            s.query_range(&key(), f64::NEG_INFINITY, f64::INFINITY)
                .len(),
            5
        );
        let one = s.query_range(&key(), 2.0, 2.0);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].value, 2.0);
        assert!(s.query_range(&key(), 3.5, 3.6).is_empty());
    }

    #[test]
    fn hold_then_fire_once() {
        let mut m = Monitor::new();
        m.add_rule(rule(30.0)).unwrap();
        let values: Vec<(f64, f64)> = (0..=60).map(|t| (t as f64, 6.0)).collect();
        let events = run(&mut m, &values);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].fired_at, 30.0);
        assert_eq!(events[0].token, "secret");
    }

    #[test]
    fn short_breach_clears_without_event() {
        let mut m = Monitor::new();
        m.add_rule(rule(30.0)).unwrap();
        let mut values: Vec<(f64, f64)> = (0..20).map(|t| (t as f64, 6.0)).collect();
        values.push((20.0, 3.0));
        assert!(run(&mut m, &values).is_empty());
        let states: Vec<_> = m.transitions().iter().map(|t| (t.from, t.to)).collect();
        assert_eq!(
            states,
            vec![
                (AlarmState::Clear, AlarmState::Pending),
                (AlarmState::Pending, AlarmState::Clear)
            ]
        );
    }

    #[test]
    fn zero_hold_fires_immediately() {
        let mut m = Monitor::new();
        m.add_rule(rule(0.0)).unwrap();
        let events = run(&mut m, &[(0.0, 1.0), (1.0, 9.0)]);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].fired_at, 1.0);
    }

    #[test]
    fn firing_clears_after_clear_hold() {
        let mut m = Monitor::new();
        let mut r = rule(0.0);
        r.clear_hold_s = Some(3.0);
        m.add_rule(r).unwrap();
        let values = [
            (0.0, 9.0),
            (1.0, 1.0),
            (2.0, 9.0),
            (3.0, 1.0),
            (5.0, 1.0),
            (6.0, 1.0),
            (7.0, 9.0),
        ];
        let events = run(&mut m, &values);
        // re-breach at t=2 resets the clear timer; clear at t=6; new episode at t=7
        assert_eq!(
            events.iter().map(|e| e.fired_at).collect::<Vec<_>>(),
            vec![0.0, 7.0]
        );
    }

    struct Flaky(u32);
    impl WebhookTarget for Flaky {
        fn deliver(&mut self, _: &WebhookPayload) -> Result<String, String> {
            if self.0 > 0 {
                self.0 -= 1;
                Err("connection refused".into())
            } else {
                Ok("triggered".into())
            }
        }
    }

    #[test]
    fn webhook_retries_once() {
        let ev = AlarmEvent {
            rule_id: "r".into(),
            series: key(),
            value: 6.0,
            fired_at: 30.0,
            token: "t".into(),
        };
        let rec = dispatch_webhook(&ev, &mut Flaky(1));
        assert!(rec.delivered);
        assert_eq!(rec.attempts, 2);
        let rec = dispatch_webhook(&ev, &mut Flaky(5));
        assert!(!rec.delivered);
        assert_eq!(rec.attempts, 2);
        assert_eq!(rec.disposition, "connection refused");
    }

    #[test]
    fn webhook_payload_field_names() {
        let ev = AlarmEvent {
            rule_id: "r".into(),
            series: key(),
            value: 6.0,
            fired_at: 30.0,
            token: "t".into(),
        };
        let json = serde_json::to_value(WebhookPayload::from(&ev)).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "rule_id": "r",
                "series": {"scope": "ns", "scope_id": "ns-1", "metric": "rb_occupied"},
                "value": 6.0,
                "state": "firing",
                "t": 30.0,
                "token": "t"
            })
        );
        let back = AlarmEvent::try_from(&WebhookPayload::from(&ev)).unwrap();
        assert_eq!(back, ev);
    }
}
