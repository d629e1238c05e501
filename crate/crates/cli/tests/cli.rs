use databox_core::gateway::{Auth, Client};
use serde_json::{json, Value};
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

const T0: i64 = 1_700_000_000_000;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn databox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_databox"))
        .args(args)
        .env_remove("DATABOX_SESSION")
        .env_remove("DATABOX_ADDR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_of(o: &Output) -> Value {
    assert!(!o.status.success(), "expected failure, got {}", stdout(o));
    serde_json::from_slice(&o.stderr).expect("stderr carries a JSON error")
}

#[test]
fn validate_accepts_bundled_dirs_and_single_files() {
    for target in ["sound-lights", "apps/occupancy-demo", "apps/sound-lights/manifest.toml", "apps/sound-lights/flow.toml"] {
        let path = if target.contains('/') { root().join(target).display().to_string() } else { target.into() };
        let o = databox(&["validate", &path]);
        assert!(o.status.success(), "{target}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn validate_reports_manifest_violations_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(root().join("apps/sound-lights/manifest.toml")).unwrap();
    let broken: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with("controller"))
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.path().join("manifest.toml");
    std::fs::write(&path, broken).unwrap();
    let e = error_of(&databox(&["validate", path.to_str().unwrap()]));
    assert_eq!(e["error"]["code"], "invalid-manifest");
}

#[test]
fn unknown_package_fails_with_machine_readable_error() {
    let e = error_of(&databox(&["--json", "risk", "no-such-app"]));
    assert_eq!(e["error"]["code"], "package");
}

#[test]
fn risk_of_the_exporting_app_is_not_accredited() {
    let o = databox(&["--json", "risk", "sound-lights"]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["accredited"], false);
    assert_eq!(r["overall"], 3);
    let text = stdout(&databox(&["risk", "sound-lights"]));
    assert!(text.contains("not accredited") && text.contains("OFF-BOX"));
}

#[test]
fn scenario_twice_gives_identical_audit_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let script = root().join("scenarios/occupancy.toml");
    let mut dumps = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("audit-{i}.jsonl"));
        let o = databox(&["--json", "scenario", script.to_str().unwrap(), "--audit-out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(summary["receipts"], 1);
        dumps.push(std::fs::read(out).unwrap());
    }
    assert!(!dumps[0].is_empty());
    assert_eq!(dumps[0], dumps[1]);
}

struct Served {
    child: Child,
    addr: String,
    key: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(seed: u64) -> Served {
    let mut child = Command::new(env!("CARGO_BIN_EXE_databox"))
        .args(["serve", "--bind", "127.0.0.1:0", "--owner", "alice", "--bundled"])
        .args(["--seed", &seed.to_string(), "--virtual-start", &T0.to_string()])
        .env_remove("DATABOX_DATA_DIR")
        .env_remove("DATABOX_KEYRING")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let owner: Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    let listening: Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    Served {
        child,
        addr: listening["listening"].as_str().unwrap().to_string(),
        key: owner["key"].as_str().unwrap().to_string(),
    }
}

fn remote(s: &Served, session: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_databox"))
        .args(args)
        .env("DATABOX_ADDR", &s.addr)
        .env("DATABOX_SESSION", session)
        .output()
        .unwrap()
}

fn add_sound_sources(s: &Served, session: &str) {
    for (id, kind) in [("microphone", "microphone-level"), ("bulb-1", "bulb"), ("bulb-2", "bulb")] {
        let body = json!({ "id": id, "kind": kind }).to_string();
        let o = remote(s, session, &["call", "POST", "/sources", "--body", &body]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let driver = json!({ "store_id": "store-microphone", "seed": 1, "cadence_ms": 5000 }).to_string();
    assert!(remote(s, session, &["call", "POST", "/sources/driver", "--body", &driver]).status.success());
}

#[test]
fn remote_commands_drive_a_served_box() {
    let s = serve(21);
    let o = databox(&["login", "alice", &s.key, "--addr", &s.addr]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let session = stdout(&o).trim().to_string();

    add_sound_sources(&s, &session);
    let choices = root().join("scenarios/choices/sound-lights.json");
    let o = remote(&s, &session, &["--json", "install", "sound-lights", "--choices", choices.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let inst: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(inst["sla"]["user_id"], "alice");

    let o = remote(&s, &session, &["call", "POST", "/clock/advance", "--body", r#"{"by_ms":60000}"#]);
    assert!(o.status.success());
    let o = remote(&s, &session, &["--json", "exports"]);
    let items: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let id = items[0]["item_id"].as_str().unwrap().to_string();
    let o = remote(&s, &session, &["--json", "exports", "--approve", &id]);
    let decided: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(decided["state"], "dispatched");

    let o = remote(&s, &session, &["--json", "audit", "--store", "store-microphone", "--from", &T0.to_string(), "--to", &(T0 + 30_000).to_string()]);
    let records: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let n = records.as_array().unwrap().len();
    assert!(n > 0 && records.as_array().unwrap().iter().all(|r| r["time"].as_i64().unwrap() < T0 + 30_000), "{n}");

    let dump = stdout(&remote(&s, &session, &["audit"]));
    assert!(dump.lines().count() > n);

    let e = error_of(&remote(&s, "bogus", &["exports"]));
    assert_eq!(e["error"]["code"], "unauthenticated");
}

#[test]
fn cli_and_api_installs_give_identical_slas() {
    let choices = root().join("scenarios/choices/sound-lights.json");
    let via_cli = {
        let s = serve(33);
        let session = stdout(&databox(&["login", "alice", &s.key, "--addr", &s.addr])).trim().to_string();
        add_sound_sources(&s, &session);
        let o = remote(&s, &session, &["--json", "install", "sound-lights", "--choices", choices.to_str().unwrap()]);
        serde_json::from_str::<Value>(&stdout(&o)).unwrap()["sla"].clone()
    };
    let via_api = {
        let s = serve(33);
        let mut c = Client::connect(&s.addr).unwrap();
        let session = c.login("alice", &s.key).unwrap();
        add_sound_sources(&s, &session);
        let mut c = Client::connect(&s.addr).unwrap().with_auth(Auth::Session(session));
        let raw: Value = serde_json::from_str(&std::fs::read_to_string(&choices).unwrap()).unwrap();
        let mut choices = raw;
        choices["user_id"] = json!("alice");
        c.post("/apps/install", &json!({ "app": "sound-lights", "choices": choices })).unwrap()["sla"].clone()
    };
    assert_eq!(serde_json::to_vec(&via_cli).unwrap(), serde_json::to_vec(&via_api).unwrap());
}
