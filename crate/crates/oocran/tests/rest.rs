mod common;

use common::{Server, TOKEN};
use reqwest::StatusCode;
use serde_json::{json, Value};

#[test]
fn health_and_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    assert_eq!(s.get_json("/healthz"), json!({ "status": "ok" }));
    let nsds = s.get_json("/nsds");
    assert_eq!(nsds.as_array().unwrap().len(), 2);

    let mut vnfd = s.get_json("/vnfds")[0].clone();
    let r = s.post("/vnfds", &vnfd);
    assert_eq!(r.status(), StatusCode::CONFLICT);
    vnfd["version"] = json!("v2");
    vnfd["flavor"]["vcpus"] = json!(0);
    let r = s.post("/vnfds", &vnfd);
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let body: Value = r.json().unwrap();
    assert!(!body["violations"].as_array().unwrap().is_empty());
    vnfd["flavor"]["vcpus"] = json!(1);
    assert_eq!(s.post("/vnfds", &vnfd).status(), StatusCode::CREATED);
    assert_eq!(
        s.post("/vnfds", &json!({"nope": 1})).status(),
        StatusCode::BAD_REQUEST
    );
}

#[test]
fn lifecycle_over_rest() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());

    let r = s.post("/ns", &json!({ "nsd": "lte-cell-1.4/v1" }));
    assert_eq!(r.status(), StatusCode::CREATED);
    let v: Value = r.json().unwrap();
    assert_eq!(v["state"], "Deploying");
    let id = v["ns_id"].as_str().unwrap().to_string();

    assert_eq!(
        s.post("/ns", &json!({ "nsd": "ghost/v1" })).status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        s.post("/ns", &json!({ "nsd": "no-slash" })).status(),
        StatusCode::BAD_REQUEST
    );
    assert_eq!(s.get("/ns/ns-99").status(), StatusCode::NOT_FOUND);

    s.tick(40);
    assert_eq!(s.get_json(&format!("/ns/{id}"))["state"], "Running");
    let tasks = s.get_json(&format!("/tasks?ns_id={id}"));
    assert_eq!(tasks.as_array().unwrap().len(), 9);
    assert!(tasks
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["state"] == "done"));

    let spectrum = s.get_json("/spectrum");
    assert_eq!(spectrum[0]["assignments"][0]["bw_hz"], 1_400_000);

    let q = s.get_json(&format!(
        "/metrics/query?scope=ns&scope_id={id}&metric=rb_capacity&t0=30&t1=39"
    ));
    let points = q["points"].as_array().unwrap();
    assert_eq!(points.len(), 10);
    assert_eq!(points.last().unwrap()[1], 6.0);
    assert_eq!(
        s.get(&format!(
            "/metrics/query?scope=vnf&scope_id={id}&metric=bler"
        ))
        .status(),
        StatusCode::BAD_REQUEST
    );

    let r = s.post(
        &format!("/ns/{id}/reconfigure"),
        &json!({ "nsd": "lte-cell-5/v1" }),
    );
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    assert_eq!(
        s.post(
            &format!("/ns/{id}/reconfigure"),
            &json!({ "nsd": "lte-cell-1.4/v1" })
        )
        .status(),
        StatusCode::CONFLICT
    );
    s.tick(60);
    let ns = s.get_json(&format!("/ns/{id}"));
    assert_eq!(ns["state"], "Running");
    assert_eq!(ns["nsd_ref"]["name"], "lte-cell-5");

    assert_eq!(
        s.delete(&format!("/ns/{id}")).status(),
        StatusCode::ACCEPTED
    );
    s.tick(40);
    assert_eq!(s.get_json(&format!("/ns/{id}"))["state"], "Terminated");
    let r = s.post(
        &format!("/ns/{id}/reconfigure"),
        &json!({ "nsd": "lte-cell-5/v1" }),
    );
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let infra = s.get_json("/infra");
    assert!(infra["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .all(|n| n["allocated"]["vcpus"] == 0));
}

#[test]
fn auth_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let r = s
        .http
        .post(format!("{}/ns", s.base))
        .json(&json!({ "nsd": "lte-cell-1.4/v1" }))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);

    let id = s
        .post("/ns", &json!({ "nsd": "lte-cell-1.4/v1" }))
        .json::<Value>()
        .unwrap()["ns_id"]
        .clone();
    s.tick(40);
    let payload = |token: &str| {
        json!({
            "rule_id": "rb-saturated",
            "series": { "scope": "ns", "scope_id": id, "metric": "rb_occupied" },
            "value": 7.0,
            "state": "firing",
            "t": 40.0,
            "token": token,
        })
    };
    let r = s.post("/alarms/webhook", &payload("wrong"));
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let r = s.post("/alarms/webhook", &payload(TOKEN));
    assert_eq!(r.status(), StatusCode::OK);
    let d: Value = r.json().unwrap();
    assert_eq!(d["decision"], "triggered");
    assert_eq!(
        s.get_json(&format!("/ns/{}", id.as_str().unwrap()))["state"],
        "Reconfiguring"
    );
}

#[test]
fn event_stream_mirrors_state_changes() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    // Open the live stream before anything happens.
    let live = s.get("/events");
    assert_eq!(live.headers()["content-type"], "application/x-ndjson");

    let id = s
        .post("/ns", &json!({ "nsd": "lte-cell-1.4/v1" }))
        .json::<Value>()
        .unwrap()["ns_id"]
        .as_str()
        .unwrap()
        .to_string();
    s.tick(40);
    s.delete(&format!("/ns/{id}"));
    s.tick(40);

    let history: Vec<Value> = s
        .get("/events?follow=false")
        .text()
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let states: Vec<&str> = history
        .iter()
        .filter(|e| e["kind"] == "ns_state")
        .map(|e| e["to"].as_str().unwrap())
        .collect();
    assert_eq!(
        states,
        [
            "Defined",
            "Deploying",
            "Running",
            "Terminating",
            "Terminated"
        ]
    );

    // The live connection saw the same lines in the same order.
    let mut reader = std::io::BufReader::new(live);
    for expected in &history {
        let mut line = String::new();
        std::io::BufRead::read_line(&mut reader, &mut line).unwrap();
        assert_eq!(&serde_json::from_str::<Value>(&line).unwrap(), expected);
    }
    assert_eq!(
        s.get_json(&format!("/ns/{id}"))["state"],
        states.last().unwrap().to_string()
    );
}

#[test]
fn scenario_load_drives_alarm() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let mut scenario: Value =
        serde_json::from_str(&std::fs::read_to_string(common::scenario_path("demo.json")).unwrap())
            .unwrap();
    scenario["alarm_rules"][0]["webhook_token"] = json!(TOKEN);
    assert_eq!(
        s.post("/sim/scenario", &scenario).status(),
        StatusCode::ACCEPTED
    );
    s.tick(240);
    let ns = s.get_json("/ns/ns-1");
    assert_eq!(ns["state"], "Running");
    assert_eq!(ns["nsd_ref"]["name"], "lte-cell-5");
}
