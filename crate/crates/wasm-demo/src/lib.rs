//! JSON-in, JSON-out entry points for the browser page in `www/`.
//!
//! Each exported function has a plain Rust twin returning
//! `Result<String, String>` so the logic runs under native tests.

use std::collections::BTreeMap;

use oocran_core::fixtures;
use oocran_core::lifecycle::DowntimeWindow;
use oocran_core::rf::{Bandwidth, SpectrumPool};
use oocran_core::sim::{run_scenario, CarrierRecord, LoadShape, Scenario};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Knobs exposed on the page. Missing fields keep the stock demo values.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub threshold_rbs: f64,
    pub hold_s: f64,
    pub target_mhz: f64,
    pub peak_rbs: f64,
    pub boot_s: f64,
    pub stop_s: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            threshold_rbs: 5.0,
            hold_s: 30.0,
            target_mhz: 5.0,
            peak_rbs: 25.0,
            boot_s: 10.0,
            stop_s: 5.0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DemoResult {
    pub traces: BTreeMap<String, Vec<[f64; 2]>>,
    pub events: Vec<(f64, String, String)>,
    pub fired_at: Vec<f64>,
    pub downtime: Vec<DowntimeWindow>,
    pub carriers: Vec<CarrierRecord>,
}

/// The stock demo with the cell scaling to `target_mhz` on alarm.
pub fn demo_scenario(p: &DemoParams) -> Result<Scenario, String> {
    let target = Bandwidth::from_mhz(p.target_mhz).map_err(|e| e.to_string())?;
    let mut s = Scenario::demo();
    let big = fixtures::lte_cell_nsd(target, None);
    let small = fixtures::lte_cell_nsd(Bandwidth::Mhz1_4, Some(big.reference()));
    s.vnfds = vec![
        fixtures::enb_vnfd(Bandwidth::Mhz1_4),
        fixtures::channel_vnfd(),
        fixtures::ue_vnfd(),
    ];
    if target != Bandwidth::Mhz1_4 {
        s.vnfds.push(fixtures::enb_vnfd(target));
        s.nsds = vec![big, small];
    } else {
        s.nsds = vec![fixtures::lte_cell_nsd(Bandwidth::Mhz1_4, None)];
    }
    s.alarm_rules[0].threshold = p.threshold_rbs;
    s.alarm_rules[0].hold_s = p.hold_s;
    s.durations.boot_vnf = p.boot_s;
    s.durations.stop_vnf = p.stop_s;
    if let Some(last) = s.load_segments.last_mut() {
        last.shape = LoadShape::Constant { rbs: p.peak_rbs };
    }
    Ok(s)
}

pub fn run_demo_json(params: &str) -> Result<String, String> {
    let p: DemoParams = if params.trim().is_empty() {
        DemoParams::default()
    } else {
        serde_json::from_str(params).map_err(|e| e.to_string())?
    };
    let report = run_scenario(&demo_scenario(&p)?).map_err(|e| e.to_string())?;
    let keep = [
        "rb_capacity",
        "rb_occupied",
        "load_demand_rbs",
        "cpu_pct",
        "ram_mb",
    ];
    let traces = report
        .traces
        .iter()
        .filter_map(|(k, v)| {
            let metric = k.strip_prefix("ns/ns-1/")?;
            keep.contains(&metric)
                .then(|| (metric.to_string(), v.clone()))
        })
        .collect();
    let events = report
        .events
        .iter()
        .filter(|e| e.kind != "vnf_state")
        .map(|e| {
            let what = match (&e.from, &e.to) {
                (Some(f), Some(t)) => format!("{f} -> {t}"),
                (None, Some(t)) => t.clone(),
                _ => e.reason.clone().unwrap_or_default(),
            };
            (e.t, e.kind.clone(), what)
        })
        .collect();
    let result = DemoResult {
        traces,
        events,
        fired_at: report
            .alarm_transitions
            .iter()
            .filter(|t| t.to == oocran_core::monitor::AlarmState::Firing)
            .map(|t| t.t)
            .collect(),
        downtime: report
            .downtime
            .iter()
            .map(|d| DowntimeWindow {
                start: d.start,
                end: d.end,
            })
            .collect(),
        carriers: report.carriers,
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

/// Run the demo scenario with overrides; returns traces and events.
#[wasm_bindgen]
pub fn run_demo(params: &str) -> Result<String, JsError> {
    js(run_demo_json(params))
}

#[derive(Debug, Deserialize)]
pub struct CarrierRequest {
    pub frontend_id: String,
    pub bw_mhz: f64,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum PlanOutcome {
    Placed {
        center_hz: u64,
        bw_hz: u64,
        band_id: String,
        site_id: String,
    },
    Rejected {
        error: String,
    },
}

pub fn plan_spectrum_json(requests: &str) -> Result<String, String> {
    let reqs: Vec<CarrierRequest> = serde_json::from_str(requests).map_err(|e| e.to_string())?;
    let inv = fixtures::testbed_inventory();
    let mut pool = SpectrumPool::new(inv.bands, inv.frontends).map_err(|e| e.to_string())?;
    pool.set_one_carrier_per_frontend(false);
    let outcomes: Vec<PlanOutcome> = reqs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let placed = Bandwidth::from_mhz(r.bw_mhz)
                .map_err(|e| e.to_string())
                .and_then(|bw| {
                    let band = pool.bands()[0].band_id.clone();
                    pool.assign_carrier(&band, &r.frontend_id, bw.hz(), &format!("req-{i}"))
                        .map_err(|e| e.to_string())
                });
            match placed {
                Ok(a) => PlanOutcome::Placed {
                    center_hz: a.center_hz,
                    bw_hz: a.bw_hz,
                    band_id: a.band_id,
                    site_id: a.site_id,
                },
                Err(error) => PlanOutcome::Rejected { error },
            }
        })
        .collect();
    let band = &pool.bands()[0];
    let occupancy: BTreeMap<String, f64> = pool
        .sites()
        .into_iter()
        .map(|s| {
            let o = pool.occupancy(&band.band_id, &s);
            (s, o)
        })
        .collect();
    serde_json::to_string(&serde_json::json!({
        "band": { "band_id": band.band_id, "low_hz": band.low_hz, "high_hz": band.high_hz },
        "frontends": pool.frontends(),
        "outcomes": outcomes,
        "occupancy": occupancy,
    }))
    .map_err(|e| e.to_string())
}

/// Place carriers in request order on the testbed band, lowest free center first.
#[wasm_bindgen]
pub fn plan_spectrum(requests: &str) -> Result<String, JsError> {
    js(plan_spectrum_json(requests))
}

pub fn rb_grid_json(bw_mhz: f64) -> Result<String, String> {
    let cfg = Bandwidth::from_mhz(bw_mhz)
        .map_err(|e| e.to_string())?
        .rb_config();
    let occupied_hz = cfg.subcarriers as u64 * cfg.subcarrier_spacing_hz;
    serde_json::to_string(&serde_json::json!({
        "config": cfg,
        "occupied_hz": occupied_hz,
        "channel_hz": cfg.bandwidth.hz(),
        "guard_fraction": 1.0 - occupied_hz as f64 / cfg.bandwidth.hz() as f64,
    }))
    .map_err(|e| e.to_string())
}

/// Resource-block grid of an LTE channel bandwidth.
#[wasm_bindgen]
pub fn rb_grid(bw_mhz: f64) -> Result<String, JsError> {
    js(rb_grid_json(bw_mhz))
}
