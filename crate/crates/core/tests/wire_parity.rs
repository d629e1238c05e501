//! Driving the box over the gateway leaves the same trail as driving it in process.

mod common;

use common::*;
use databox_core::demo::{self, OCCUPANCY_DEMO};
use databox_core::gateway::{Api, Client, Server};
use databox_core::ids::{AppId, HOUR_MS, MINUTE_MS};
use databox_core::runtime::{ExportDecision, ExportState};
use serde_json::{json, Value};
use std::sync::Arc;

const SEED: u64 = 21;

fn choices() -> databox_core::manifest::UserChoices {
    demo::occupancy_choices(alice(), HOUR_MS as u64, HOUR_MS as u64)
}

fn in_process() -> (String, Value) {
    let b = household(SEED, Some(MINUTE_MS));
    let app = AppId::new(OCCUPANCY_DEMO);
    b.publish(demo::occupancy_package()).unwrap();
    b.install(&app, &choices()).unwrap();
    b.run_until(T0 + 2 * HOUR_MS, 10 * MINUTE_MS).unwrap();
    for i in b.exports_for(&alice()).iter().filter(|i| i.state == ExportState::Staged) {
        b.decide_export(&i.item_id, ExportDecision::Approve, &alice()).unwrap();
    }
    b.run_until(T0 + 6 * HOUR_MS, 10 * MINUTE_MS).unwrap();
    for i in b.exports_for(&bob()).iter().filter(|i| i.state == ExportState::Staged) {
        b.decide_export(&i.item_id, ExportDecision::Deny, &bob()).unwrap();
    }
    let sla = b.installed_sla(&app).unwrap();
    b.withdraw(&sla.sla_id, &alice()).unwrap();
    (b.audit_dump(), serde_json::to_value(b.receipts()).unwrap())
}

fn decide_all(c: &mut Client, decision: &str) {
    let items = c.get("/exports").unwrap();
    for i in items.as_array().unwrap().iter().filter(|i| i["state"] == "staged") {
        c.post("/exports/decide", &json!({ "item_id": i["item_id"], "decision": decision })).unwrap();
    }
}

fn over_the_wire() -> (String, Value) {
    let (b, alice_key, bob_key) = household_with_keys(SEED, Some(MINUTE_MS));
    let server = Server::bind("127.0.0.1:0", Arc::new(Api::new(Arc::new(b)))).unwrap().spawn().unwrap();
    let mut a = Client::connect(server.addr).unwrap();
    a.login("alice", &alice_key).unwrap();
    a.post("/appstore/publish", &json!({ "package": demo::occupancy_package() })).unwrap();
    a.post("/apps/install", &json!({ "app": OCCUPANCY_DEMO, "choices": choices() })).unwrap();
    let every = 10 * MINUTE_MS;
    a.post("/clock/advance", &json!({ "to_ms": T0 + 2 * HOUR_MS, "every_ms": every })).unwrap();
    decide_all(&mut a, "approve");
    a.post("/clock/advance", &json!({ "to_ms": T0 + 6 * HOUR_MS, "every_ms": every })).unwrap();
    let mut b = Client::connect(server.addr).unwrap();
    b.login("bob", &bob_key).unwrap();
    decide_all(&mut b, "deny");
    let slas = a.get("/slas").unwrap();
    a.post("/slas/withdraw", &json!({ "sla_id": slas[0]["sla_id"] })).unwrap();
    let Value::String(dump) = a.get("/audit/dump").unwrap() else {
        panic!("audit dump is not line text");
    };
    let receipts = a.get("/receipts").unwrap();
    server.shutdown();
    (dump, receipts)
}

#[test]
fn gateway_and_in_process_runs_leave_identical_audit_trails() {
    let (local_dump, local_receipts) = in_process();
    let (wire_dump, wire_receipts) = over_the_wire();
    assert!(local_receipts.as_array().is_some_and(|r| !r.is_empty()));
    assert_eq!(local_receipts, wire_receipts);
    assert_eq!(local_dump.lines().count(), wire_dump.lines().count());
    assert!(local_dump == wire_dump, "audit dumps differ");
}
