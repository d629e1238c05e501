use super::*;
use crate::demo;
use crate::platform::{Databox, PlatformConfig};
use crate::processor::ProcessorStub;
use serde_json::json;
use std::sync::Arc;

const T0: i64 = 1_700_000_000_000;

fn api() -> Api {
    Api::new(Arc::new(Databox::new(PlatformConfig::virtual_at(5, T0)).unwrap()))
}

fn call(api: &Api, method: Method, target: &str, auth: Auth, body: serde_json::Value) -> Response {
    api.dispatch(&Request::new(method, target).with_auth(auth).with_json(&body))
}

fn session(api: &Api, user: &str, key: &str) -> Auth {
    let r = call(api, Method::Post, "/login", Auth::None, json!({ "user_id": user, "key": key }));
    Auth::Session(r.json_body().unwrap()["session"].as_str().unwrap().to_string())
}

/// Alice (owner) with her session, after the bootstrap account call.
fn bootstrapped() -> (Api, Auth) {
    let a = api();
    let r = call(&a, Method::Post, "/accounts", Auth::None, json!({ "name": "alice", "role": "owner" }));
    assert_eq!(r.status, 200);
    let key = r.json_body().unwrap()["key"].as_str().unwrap().to_string();
    let s = session(&a, "alice", &key);
    (a, s)
}

fn code(r: &Response) -> String {
    r.json_body().unwrap()["error"]["code"].as_str().unwrap_or_default().to_string()
}

#[test]
fn bootstrap_is_open_only_while_empty() {
    let (a, alice) = bootstrapped();
    let r = call(&a, Method::Post, "/accounts", Auth::None, json!({ "name": "mallory" }));
    assert_eq!(r.status, 401);
    let r = call(&a, Method::Post, "/accounts", alice, json!({ "name": "bob" }));
    assert_eq!(r.status, 200);
}

#[test]
fn credential_classes_do_not_cross() {
    let (a, alice) = bootstrapped();
    let token = Auth::Token("AAAA".into());
    assert_eq!(call(&a, Method::Get, "/me", token.clone(), json!({})).status, 403);
    let r = call(&a, Method::Post, "/data/query", alice, json!({}));
    assert_eq!((r.status, code(&r)), (403, "wrong-credential".into()));
    assert_eq!(call(&a, Method::Get, "/me", Auth::None, json!({})).status, 401);
    let r = call(&a, Method::Post, "/data/query", token, json!({}));
    assert_eq!((r.status, code(&r)), (401, "bad-token".into()));
    let r = call(&a, Method::Get, "/me", Auth::Session("nope".into()), json!({}));
    assert_eq!(r.status, 401);
}

#[test]
fn owner_routes_refuse_members() {
    let (a, alice) = bootstrapped();
    let r = call(&a, Method::Post, "/accounts", alice, json!({ "name": "bob" }));
    let key = r.json_body().unwrap()["key"].as_str().unwrap().to_string();
    let bob = session(&a, "bob", &key);
    let r = call(&a, Method::Post, "/clock/advance", bob, json!({ "by_ms": 1000 }));
    assert_eq!(r.status, 403);
}

#[test]
fn unknown_routes_and_methods() {
    let a = api();
    assert_eq!(call(&a, Method::Get, "/nope", Auth::None, json!({})).status, 404);
    assert_eq!(call(&a, Method::Delete, "/health", Auth::None, json!({})).status, 405);
    let bad = Request::new(Method::Post, "/login").with_json(&json!([1]));
    assert_eq!(a.dispatch(&bad).status, 400);
}

#[test]
fn missing_and_mistyped_params_are_422() {
    let (a, alice) = bootstrapped();
    let r = call(&a, Method::Post, "/sources", alice.clone(), json!({ "kind": "bulb" }));
    assert_eq!((r.status, code(&r)), (422, "invalid".into()));
    let r = call(&a, Method::Post, "/sources", alice, json!({ "id": "x", "kind": "teapot" }));
    assert_eq!(r.status, 422);
}

#[test]
fn query_string_numbers_are_typed() {
    let (a, alice) = bootstrapped();
    call(&a, Method::Post, "/sources", alice.clone(), json!({ "id": "bulb", "kind": "bulb" }));
    let r = call(&a, Method::Get, "/stores/audit?store_id=store-bulb&from=0&to=5", alice, json!({}));
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
}

/// Alice installs the sound app through the API and advances one minute.
fn sound_api() -> (Api, Auth) {
    let (a, alice) = sound_installed();
    let r = call(&a, Method::Post, "/clock/advance", alice.clone(), json!({ "by_ms": 60_000 }));
    assert_eq!(r.status, 200);
    (a, alice)
}

fn sound_installed() -> (Api, Auth) {
    let (a, alice) = bootstrapped();
    for (id, kind) in [("microphone", "microphone-level"), ("bulb-1", "bulb"), ("bulb-2", "bulb")] {
        let r = call(&a, Method::Post, "/sources", alice.clone(), json!({ "id": id, "kind": kind }));
        assert_eq!(r.status, 200);
    }
    let r = call(
        &a,
        Method::Post,
        "/sources/driver",
        alice.clone(),
        json!({ "store_id": "store-microphone", "seed": 1, "cadence_ms": 5000 }),
    );
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    let package = serde_json::to_value(demo::sound_lights_package()).unwrap();
    let r = call(&a, Method::Post, "/appstore/publish", alice.clone(), json!({ "package": package }));
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    let mut choices = serde_json::to_value(demo::sound_lights_choices(crate::ids::UserId::new("someone"), false)).unwrap();
    choices["user_id"] = json!("ignored");
    let r = call(&a, Method::Post, "/apps/install", alice.clone(), json!({ "app": "sound-lights", "choices": choices }));
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json_body().unwrap()["sla"]["user_id"], "alice");
    (a, alice)
}

#[test]
fn install_run_and_approve_over_the_api() {
    let (a, alice) = sound_api();
    let items = call(&a, Method::Get, "/exports", alice.clone(), json!({})).json_body().unwrap();
    let item = items[0]["item_id"].as_str().unwrap().to_string();
    let r = call(&a, Method::Post, "/exports/decide", alice.clone(), json!({ "item_id": item, "decision": "approve" }));
    assert_eq!(r.json_body().unwrap()["state"], "dispatched");
    let receipts = call(&a, Method::Get, "/receipts", alice.clone(), json!({})).json_body().unwrap();
    assert_eq!(receipts.as_array().unwrap().len(), 1);
    assert_eq!(receipts[0]["payload"], items[0]["payload"]);
    let trace = call(&a, Method::Get, "/apps/trace?app=sound-lights", alice.clone(), json!({}));
    assert_eq!(trace.status, 200);
    let dump = call(&a, Method::Get, "/audit/dump", alice, json!({}));
    assert_eq!(dump.headers.get("content-type").map(String::as_str), Some("application/jsonl"));
    assert!(String::from_utf8(dump.body).unwrap().lines().count() > 10);
}

#[test]
fn issued_tokens_work_only_on_data_routes() {
    let (a, alice) = sound_installed();
    let r = call(
        &a,
        Method::Post,
        "/apps/token",
        alice.clone(),
        json!({ "app": "sound-lights", "store_id": "store-microphone" }),
    );
    let wire = r.json_body().unwrap()["token"].as_str().unwrap().to_string();
    let token = Auth::Token(wire);
    let q = json!({ "store_id": "store-microphone", "spec": { "from": T0 - 60_000, "to": T0 } });
    let r = call(&a, Method::Post, "/data/query", token.clone(), q.clone());
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    let r = call(&a, Method::Post, "/data/query", token.clone(), q);
    assert_eq!(r.json_body().unwrap()["error"]["message"], "access denied: rate-exceeded");
    let other = json!({ "store_id": "store-bulb-1", "spec": { "from": T0, "to": T0 + 60_000 } });
    let r = call(&a, Method::Post, "/data/query", token.clone(), other);
    assert_eq!((r.status, code(&r)), (403, "denied".into()));
    assert_eq!(call(&a, Method::Get, "/slas", token, json!({})).status, 403);
}

#[test]
fn withdrawal_over_the_api_denies_later_tokens() {
    let (a, alice) = sound_api();
    let r = call(
        &a,
        Method::Post,
        "/apps/token",
        alice.clone(),
        json!({ "app": "sound-lights", "store_id": "store-microphone" }),
    );
    let token = Auth::Token(r.json_body().unwrap()["token"].as_str().unwrap().to_string());
    let slas = call(&a, Method::Get, "/slas", alice.clone(), json!({})).json_body().unwrap();
    let sla = slas[0]["sla_id"].clone();
    let r = call(&a, Method::Post, "/slas/withdraw", alice, json!({ "sla_id": sla }));
    assert_eq!(r.status, 200);
    let r = call(&a, Method::Get, "/data/check?store_id=store-microphone&action=query", token, json!({}));
    assert_eq!(r.json_body().unwrap()["decision"], "deny");
}

#[test]
fn tcp_round_trip_and_event_stream() {
    let (a, alice) = bootstrapped();
    let databox = a.databox.clone();
    let handle = Server::bind("127.0.0.1:0", Arc::new(a)).unwrap().spawn().unwrap();
    let Auth::Session(s) = alice.clone() else { unreachable!() };

    let events = Client::connect(handle.addr).unwrap().with_auth(Auth::Session(s));
    events.set_read_timeout(Some(std::time::Duration::from_secs(10))).unwrap();
    let events = events.events().unwrap();
    let mut c = Client::connect(handle.addr).unwrap().with_auth(alice);
    assert_eq!(c.get("/health").unwrap()["status"], "ok");
    let err = c.post("/sources", &json!({ "kind": "bulb" })).unwrap_err();
    assert!(matches!(err, ClientError::Api(ref e) if e.status == 422), "{err}");
    let bob = c.post("/accounts", &json!({ "name": "bob" })).unwrap();
    c.post("/sources", &json!({ "id": "bulb", "kind": "bulb", "co_owners": ["bob"] })).unwrap();
    let mut b = Client::connect(handle.addr).unwrap();
    b.login("bob", bob["key"].as_str().unwrap()).unwrap();
    let out = b
        .post("/stores/manage", &json!({ "store_id": "store-bulb", "op": { "op": "delete" } }))
        .unwrap();
    assert_eq!(out["outcome"], "pending-consent", "{out}");

    let mut events = events;
    let n = events.next().unwrap().unwrap();
    assert_eq!(n.user_id.as_str(), "alice");
    assert!(databox.notifier().all().iter().any(|m| m.notif_id == n.notif_id));
    handle.shutdown();
}

#[test]
fn remote_dispatcher_delivers_to_a_processor_server() {
    let stub = Arc::new(ProcessorStub::new());
    let proc = Server::bind("127.0.0.1:0", Arc::new(ProcessorService { stub: stub.clone() }))
        .unwrap()
        .spawn()
        .unwrap();
    let mut config = PlatformConfig::virtual_at(5, T0);
    config.dispatcher = Some(Arc::new(RemoteDispatcher::new(proc.addr)));
    let b = Databox::new(config).unwrap();
    b.create_account(None, "alice", crate::accounts::Role::Owner).unwrap();
    let alice = crate::ids::UserId::new("alice");
    let mic = b
        .add_source(&[alice.clone()], "microphone", crate::store::SourceKind::MicrophoneLevel, "")
        .unwrap();
    b.add_source(&[alice.clone()], "bulb-1", crate::store::SourceKind::Bulb, "").unwrap();
    b.add_source(&[alice.clone()], "bulb-2", crate::store::SourceKind::Bulb, "").unwrap();
    b.start_driver(&mic, crate::sim::SimProfile::new(crate::store::SourceKind::MicrophoneLevel, 1))
        .unwrap();
    b.publish(demo::sound_lights_package()).unwrap();
    b.install(&crate::ids::AppId::new(demo::SOUND_LIGHTS), &demo::sound_lights_choices(alice.clone(), false))
        .unwrap();
    b.advance_to(T0 + 60_000).unwrap();
    let item = b.exports_for(&alice).pop().unwrap();
    b.decide_export(&item.item_id, crate::runtime::ExportDecision::Approve, &alice)
        .unwrap();
    assert_eq!(stub.receipts().len(), 1);
    assert_eq!(stub.receipts()[0].payload, item.payload);
    proc.shutdown();
}
