//! `databox`: developer checks, scripted runs, the gateway server and a gateway client.
//!
//! Failures exit with status 1 and print `{"error":{"code":..,"message":..}}` on stderr.

use clap::{Parser, Subcommand};
use databox_core::accounts::Role;
use databox_core::appstore::{check_package, Package};
use databox_core::gateway::{self, Api, Auth, Client, ClientError, Method, Request, Server};
use databox_core::manifest::{violations, Manifest, UserChoices};
use databox_core::runtime::Flow;
use databox_core::ids::Millis;
use databox_core::platform::{ClockMode, Databox, PlatformConfig};
use databox_core::risk::app_risk;
use databox_core::scenario::Script;
use databox_core::{demo, PlatformError};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "databox", version, about = "Personal data box: checks, scripted runs, server and client")]
struct Cli {
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a package, or a single manifest or flow file.
    Validate { package: String },
    /// Print the risk report of a package.
    Risk { package: String },
    /// Write the SDK stamp into a package directory.
    Stamp { dir: PathBuf },
    /// Run a scenario script on a virtual clock.
    Scenario {
        script: PathBuf,
        /// Also write the audit dump (JSON lines) here.
        #[arg(long)]
        audit_out: Option<PathBuf>,
    },
    /// Serve the gateway.
    Serve {
        #[arg(long, env = gateway::ENV_BIND, default_value = gateway::DEFAULT_BIND)]
        bind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = gateway::ENV_DATA_DIR)]
        data_dir: Option<PathBuf>,
        #[arg(long, env = gateway::ENV_KEYRING)]
        keyring: Option<PathBuf>,
        /// Run on a virtual clock starting here (ms since epoch); advance it with /clock/advance.
        #[arg(long)]
        virtual_start: Option<Millis>,
        /// Create this owner account at start and print its key.
        #[arg(long)]
        owner: Option<String>,
        /// Publish the bundled apps at start.
        #[arg(long)]
        bundled: bool,
    },
    /// Log in to a gateway and print the session id.
    Login { user: String, key: String, #[command(flatten)] remote: Remote },
    /// Publish a package to a gateway's app store.
    Publish { package: String, #[command(flatten)] remote: Remote },
    /// Install an app with choices from a JSON file.
    Install {
        app: String,
        #[arg(long)]
        choices: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
    /// Print audit records: one store, or every store (owner only).
    Audit {
        #[arg(long)]
        store: Option<String>,
        /// Start of the range (ms, inclusive); needs --store.
        #[arg(long, requires = "store")]
        from: Option<Millis>,
        /// End of the range (ms, exclusive); needs --store.
        #[arg(long, requires = "store")]
        to: Option<Millis>,
        #[command(flatten)]
        remote: Remote,
    },
    /// List export items, or decide one.
    Exports {
        #[arg(long, conflicts_with = "deny")]
        approve: Option<String>,
        #[arg(long)]
        deny: Option<String>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Send an arbitrary request, e.g. `call GET /apps`.
    Call {
        method: String,
        target: String,
        #[arg(long)]
        body: Option<String>,
        #[command(flatten)]
        remote: Remote,
    },
}

#[derive(clap::Args)]
struct Remote {
    #[arg(long, env = gateway::ENV_ADDR, default_value = gateway::DEFAULT_BIND)]
    addr: String,
    #[arg(long, env = gateway::ENV_SESSION)]
    session: Option<String>,
}

impl Remote {
    fn client(&self) -> Result<Client, Failure> {
        let c = Client::connect(&self.addr)?;
        Ok(match &self.session {
            Some(s) => c.with_auth(Auth::Session(s.clone())),
            None => c,
        })
    }
}

#[derive(Debug)]
struct Failure {
    code: String,
    message: String,
    detail: Option<Value>,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            detail: None,
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api(a) => Failure::new(&a.code, a.message),
            other => Failure::new("connection", other.to_string()),
        }
    }
}

impl From<PlatformError> for Failure {
    fn from(e: PlatformError) -> Self {
        Failure::new("platform", e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{out}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            let mut err = json!({ "code": f.code, "message": f.message });
            if let Some(d) = f.detail {
                err["detail"] = d;
            }
            eprintln!("{}", json!({ "error": err }));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<String, Failure> {
    let show = |v: &Value, text: String| if cli.json { v.to_string() } else { text };
    match &cli.command {
        Cmd::Validate { package } if Path::new(package).is_file() => validate_file(Path::new(package), &show),
        Cmd::Validate { package } => {
            let p = load_package(package)?;
            check_package(&p).map_err(|e| {
                let mut f = Failure::new("invalid-package", e.to_string());
                if let databox_core::appstore::PublishError::InvalidManifest(v) = &e {
                    f.detail = serde_json::to_value(v).ok();
                }
                f
            })?;
            let v = json!({ "app_id": p.app_id(), "valid": true, "verified": p.is_verified(), "hash": p.hash() });
            Ok(show(&v, format!("{}: valid{}", p.app_id(), if p.is_verified() { ", stamped" } else { ", unstamped" })))
        }
        Cmd::Risk { package } => {
            let p = load_package(package)?;
            let m = check_package(&p).map_err(|e| Failure::new("invalid-package", e.to_string()))?;
            let r = app_risk(&p.flow, m, p.is_verified());
            Ok(show(&serde_json::to_value(&r).expect("rating serializes"), r.report_text().trim_end().to_string()))
        }
        Cmd::Stamp { dir } => {
            let p = Package::load_dir(dir).map_err(|e| Failure::new("package", e.to_string()))?;
            let p = p.stamped();
            let stamp = format!("{}\n", p.sdk_stamp.as_deref().expect("just stamped"));
            std::fs::write(dir.join("sdk-stamp"), stamp).map_err(|e| Failure::new("io", e.to_string()))?;
            Ok(show(&json!({ "app_id": p.app_id(), "hash": p.hash() }), format!("stamped {}", p.app_id())))
        }
        Cmd::Scenario { script, audit_out } => {
            let s = Script::load(script).map_err(|e| Failure::new("script", e.to_string()))?;
            let base = script.parent().unwrap_or(Path::new("."));
            let out = s.run(base).map_err(|e| Failure::new("scenario", e.to_string()))?;
            if let Some(path) = audit_out {
                std::fs::write(path, &out.audit).map_err(|e| Failure::new("io", e.to_string()))?;
            }
            let mut v = serde_json::to_value(&out).expect("outcome serializes");
            v.as_object_mut().expect("object").remove("audit");
            let text = format!(
                "{}\nruns {}, exports dispatched {}, denied {}, staged {}, receipts {}",
                out.log.join("\n"),
                out.runs,
                out.exports_dispatched,
                out.exports_denied,
                out.exports_staged,
                out.receipts
            );
            Ok(show(&v, text))
        }
        Cmd::Serve {
            bind,
            seed,
            data_dir,
            keyring,
            virtual_start,
            owner,
            bundled,
        } => serve(bind, *seed, data_dir, keyring, *virtual_start, owner.as_deref(), *bundled).map(|()| String::new()),
        Cmd::Login { user, key, remote } => {
            let session = remote.client()?.login(user, key)?;
            Ok(show(&json!({ "session": session }), session))
        }
        Cmd::Publish { package, remote } => {
            let p = load_package(package)?;
            let v = remote.client()?.post("/appstore/publish", &json!({ "package": p }))?;
            let text = format!("published {} (risk {}, accredited {})", v["app_id"], v["risk"]["overall"], v["accredited"]);
            Ok(show(&v, text))
        }
        Cmd::Install { app, choices, remote } => {
            let text = std::fs::read_to_string(choices).map_err(|e| Failure::new("io", e.to_string()))?;
            let c = choices_value(&text)?;
            let v = remote.client()?.post("/apps/install", &json!({ "app": app, "choices": c }))?;
            let text = format!("installed {app}: {} ({} policies)", v["sla"]["sla_id"], v["policies"]);
            Ok(show(&v, text))
        }
        Cmd::Audit { store, from, to, remote } => {
            let mut c = remote.client()?;
            match store {
                Some(s) => {
                    let mut q = vec![("store_id", s.clone())];
                    q.extend(from.map(|f| ("from", f.to_string())));
                    q.extend(to.map(|t| ("to", t.to_string())));
                    let mut req = Request::new(Method::Get, "/stores/audit");
                    req.query = q.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                    let v = c.call(Method::Get, &req.target(), None)?;
                    let lines = v.as_array().map(|a| a.iter().map(Value::to_string).collect::<Vec<_>>().join("\n"));
                    Ok(show(&v, lines.unwrap_or_default()))
                }
                None => Ok(c.get("/audit/dump")?.as_str().unwrap_or_default().trim_end().to_string()),
            }
        }
        Cmd::Exports { approve, deny, remote } => {
            let mut c = remote.client()?;
            let decision = approve.as_ref().map(|i| (i, "approve")).or(deny.as_ref().map(|i| (i, "deny")));
            match decision {
                Some((item, d)) => {
                    let v = c.post("/exports/decide", &json!({ "item_id": item, "decision": d }))?;
                    Ok(show(&v, format!("{item}: {}", v["state"].as_str().unwrap_or("?"))))
                }
                None => {
                    let v = c.get("/exports")?;
                    let text = v
                        .as_array()
                        .map(|items| {
                            items
                                .iter()
                                .map(|i| format!("{} {} {} -> {}", i["item_id"], i["app_id"], i["state"], i["recipient"]))
                                .collect::<Vec<_>>()
                                .join("\n")
                        })
                        .unwrap_or_default();
                    Ok(show(&v, text))
                }
            }
        }
        Cmd::Call {
            method,
            target,
            body,
            remote,
        } => {
            let m = Method::parse(&method.to_ascii_uppercase())
                .ok_or_else(|| Failure::new("usage", format!("unknown method {method}")))?;
            let body: Option<Value> = body
                .as_deref()
                .map(serde_json::from_str)
                .transpose()
                .map_err(|e| Failure::new("usage", format!("body: {e}")))?;
            let v = remote.client()?.call(m, target, body.as_ref())?;
            Ok(match v {
                Value::String(s) => s.trim_end().to_string(),
                other => serde_json::to_string_pretty(&other).expect("json"),
            })
        }
    }
}

/// Validates a lone `manifest.toml` or `flow.toml`; the file name picks the parser.
fn validate_file(path: &Path, show: &dyn Fn(&Value, String) -> String) -> Result<String, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new("io", e.to_string()))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if name.contains("manifest") {
        let m = Manifest::parse(&text).map_err(|e| Failure::new("invalid-manifest", e.to_string()))?;
        let v = violations(&m);
        if !v.is_empty() {
            let mut f = Failure::new("invalid-manifest", format!("{} violation(s)", v.len()));
            f.detail = serde_json::to_value(&v).ok();
            return Err(f);
        }
        let out = json!({ "app_id": m.app_id, "kind": "manifest", "valid": true });
        Ok(show(&out, format!("{}: manifest valid", m.app_id)))
    } else {
        let flow = Flow::parse(&text).map_err(|e| Failure::new("invalid-flow", e.to_string()))?;
        let order = flow.validate().map_err(|e| Failure::new("invalid-flow", e.to_string()))?;
        let out = json!({ "app_id": flow.app_id, "kind": "flow", "valid": true, "order": order });
        Ok(show(&out, format!("{}: flow valid, {} nodes", flow.app_id, order.len())))
    }
}

/// A JSON or TOML choice vector; `user_id` may be omitted since the gateway
/// binds the install to the session user.
fn choices_value(text: &str) -> Result<Value, Failure> {
    let bad = |e: String| Failure::new("choices", e);
    let mut v: Value = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))?
    } else {
        let with_user = format!("user_id = \"session-user\"\n{text}");
        let parsed = UserChoices::parse(text).or_else(|_| UserChoices::parse(&with_user)).map_err(bad)?;
        serde_json::to_value(parsed).expect("choices serialize")
    };
    v.as_object_mut()
        .ok_or_else(|| bad("choices must be an object".into()))?
        .entry("user_id")
        .or_insert(json!("session-user"));
    Ok(v)
}

/// A bundled app name, or a package directory.
fn load_package(spec: &str) -> Result<Package, Failure> {
    if let Some(p) = demo::builtin(spec) {
        return Ok(p);
    }
    let dir = Path::new(spec);
    if !dir.is_dir() {
        return Err(Failure::new(
            "package",
            format!("{spec} is neither a directory nor one of {}", demo::BUILTIN_NAMES.join(", ")),
        ));
    }
    Package::load_dir(dir).map_err(|e| Failure::new("package", e.to_string()))
}

fn serve(
    bind: &str,
    seed: u64,
    data_dir: &Option<PathBuf>,
    keyring: &Option<PathBuf>,
    virtual_start: Option<Millis>,
    owner: Option<&str>,
    bundled: bool,
) -> Result<(), Failure> {
    let config = PlatformConfig {
        seed,
        clock: virtual_start.map_or(ClockMode::System, ClockMode::Virtual),
        data_dir: data_dir.clone(),
        keyring_path: keyring.clone().or_else(|| data_dir.as_ref().map(|d| d.join("keyring.json"))),
        dispatcher: None,
    };
    let databox = Arc::new(Databox::new(config)?);
    if let Some(name) = owner {
        let created = databox.create_account(None, name, Role::Owner)?;
        println!("{}", json!({ "owner": created.account.user_id, "key": created.key }));
    }
    if bundled {
        for name in demo::BUILTIN_NAMES {
            databox.publish(demo::builtin(name).expect("bundled app"))?;
        }
    }
    let server = Server::bind(bind, Arc::new(Api::new(databox))).map_err(|e| Failure::new("bind", e.to_string()))?;
    let addr = server.local_addr().map_err(|e| Failure::new("bind", e.to_string()))?;
    println!("{}", json!({ "listening": addr.to_string() }));
    server.serve().map_err(|e| Failure::new("io", e.to_string()))
}
