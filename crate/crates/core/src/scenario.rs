//! Scripted end-to-end runs on a virtual clock.
//!
//! A script names users, sources with optional simulated drivers, and a list of
//! steps. Running the same script twice yields byte-identical audit dumps.

use crate::accounts::Role;
use crate::appstore::Package;
use crate::demo;
use crate::ids::{AppId, Millis, UserId};
use crate::manifest::UserChoices;
use crate::platform::{Databox, PlatformConfig, PlatformError};
use crate::runtime::{ExportDecision, ExportState};
use crate::sim::{GeneratorParams, SimProfile};
use crate::store::SourceKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub seed: u64,
    pub start_ms: Millis,
    #[serde(default)]
    pub users: Vec<ScriptUser>,
    #[serde(default)]
    pub sources: Vec<ScriptSource>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptUser {
    pub name: String,
    #[serde(default = "member")]
    pub role: Role,
}

fn member() -> Role {
    Role::Member
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSource {
    pub id: String,
    pub kind: SourceKind,
    pub owners: Vec<String>,
    #[serde(default)]
    pub label: String,
    /// Attaches a simulated driver when present.
    #[serde(default)]
    pub driver: Option<ScriptDriver>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptDriver {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ten_seconds")]
    pub cadence_ms: Millis,
    #[serde(default)]
    pub household_seed: u64,
    #[serde(default)]
    pub params: GeneratorParams,
}

fn ten_seconds() -> Millis {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Step {
    /// Publishes a bundled app by name, or a package directory relative to the script.
    Publish {
        #[serde(default)]
        app: Option<String>,
        #[serde(default)]
        package: Option<PathBuf>,
    },
    Install { app: String, choices: UserChoices },
    /// Advances the clock to `start_ms + until_ms` in steps of `every_ms`.
    Run { until_ms: Millis, every_ms: Millis },
    /// Decides every staged export the user may decide on.
    ApproveExports { user: String },
    DenyExports { user: String },
    Rate { app: String, user: String, stars: u8 },
    Withdraw { app: String, user: String },
    Terminate { app: String },
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("script: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: PlatformError,
    },
    #[error("step {step}: {message}")]
    Invalid { step: usize, message: String },
    #[error(transparent)]
    Setup(#[from] PlatformError),
}

/// What a script run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub end_ms: Millis,
    pub runs: u64,
    pub exports_staged: usize,
    pub exports_dispatched: usize,
    pub exports_denied: usize,
    pub receipts: usize,
    pub notifications: usize,
    pub log: Vec<String>,
    /// Every audit record as JSON lines, ordered by store then sequence.
    pub audit: String,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        Script::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }

    /// Builds a fresh box from the script's setup section.
    pub fn setup(&self, config: PlatformConfig) -> Result<Databox, ScenarioError> {
        let b = Databox::new(config)?;
        let mut first: Option<UserId> = None;
        for u in &self.users {
            let created = b.create_account(first.as_ref(), &u.name, u.role)?;
            first.get_or_insert(created.account.user_id);
        }
        for s in &self.sources {
            let owners: Vec<UserId> = s.owners.iter().map(UserId::new).collect();
            let store = b.add_source(&owners, &s.id, s.kind, &s.label)?;
            if let Some(d) = &s.driver {
                let profile = SimProfile {
                    kind: s.kind,
                    seed: d.seed,
                    cadence_ms: d.cadence_ms,
                    household_seed: d.household_seed,
                    params: d.params.clone(),
                };
                b.start_driver(&store, profile)?;
            }
        }
        Ok(b)
    }

    pub fn run(&self, base: &Path) -> Result<Outcome, ScenarioError> {
        let b = self.setup(PlatformConfig::virtual_at(self.seed, self.start_ms))?;
        self.run_on(&b, base)
    }

    /// Executes the steps against an already set-up box.
    pub fn run_on(&self, b: &Databox, base: &Path) -> Result<Outcome, ScenarioError> {
        let mut log = Vec::new();
        let mut runs = 0u64;
        for (i, step) in self.steps.iter().enumerate() {
            let step_no = i + 1;
            let wrap = |source| ScenarioError::Step { step: step_no, source };
            match step {
                Step::Publish { app, package } => {
                    let p = match (app, package) {
                        (Some(name), None) => demo::builtin(name).ok_or_else(|| ScenarioError::Invalid {
                            step: step_no,
                            message: format!("no bundled app {name}"),
                        })?,
                        (None, Some(dir)) => Package::load_dir(&base.join(dir)).map_err(|e| ScenarioError::Invalid {
                            step: step_no,
                            message: e.to_string(),
                        })?,
                        _ => {
                            return Err(ScenarioError::Invalid {
                                step: step_no,
                                message: "publish needs exactly one of app or package".into(),
                            })
                        }
                    };
                    let l = b.publish(p).map_err(wrap)?;
                    log.push(format!(
                        "published {} risk {} {}",
                        l.app_id,
                        l.risk.overall,
                        if l.accredited { "accredited" } else { "not accredited" }
                    ));
                }
                Step::Install { app, choices } => {
                    let inst = b.install(&AppId::new(app), choices).map_err(wrap)?;
                    log.push(format!("installed {app} as {} with {} policies", inst.sla.sla_id, inst.policies));
                }
                Step::Run { until_ms, every_ms } => {
                    if *every_ms <= 0 {
                        return Err(ScenarioError::Invalid {
                            step: step_no,
                            message: "every_ms must be positive".into(),
                        });
                    }
                    let reports = b.run_until(self.start_ms + until_ms, *every_ms).map_err(wrap)?;
                    let n = reports.iter().filter(|(_, r)| r.run_id.is_some()).count() as u64;
                    runs += n;
                    log.push(format!("ran to +{until_ms} ms: {n} runs"));
                }
                Step::ApproveExports { user } | Step::DenyExports { user } => {
                    let decision = if matches!(step, Step::ApproveExports { .. }) {
                        ExportDecision::Approve
                    } else {
                        ExportDecision::Deny
                    };
                    let user = UserId::new(user);
                    let staged: Vec<_> = b
                        .exports_for(&user)
                        .into_iter()
                        .filter(|i| i.state == ExportState::Staged)
                        .collect();
                    for item in &staged {
                        let s = b.decide_export(&item.item_id, decision, &user).map_err(wrap)?;
                        log.push(format!("{} {}: {s:?}", item.item_id, decision_word(decision)));
                    }
                }
                Step::Rate { app, user, stars } => {
                    let s = b.rate(&AppId::new(app), &UserId::new(user), *stars).map_err(wrap)?;
                    log.push(format!("rated {app}: {:.2} from {}", s.mean(), s.count));
                }
                Step::Withdraw { app, user } => {
                    let sla = b.installed_sla(&AppId::new(app)).ok_or_else(|| ScenarioError::Invalid {
                        step: step_no,
                        message: format!("{app} is not installed"),
                    })?;
                    let r = b.withdraw(&sla.sla_id, &UserId::new(user)).map_err(wrap)?;
                    log.push(format!(
                        "withdrew {}: {} policies revoked, {} exports denied",
                        r.sla_id, r.revoked_policies, r.terminate.auto_denied
                    ));
                }
                Step::Terminate { app } => {
                    let r = b.terminate(&AppId::new(app)).map_err(wrap)?;
                    log.push(format!("terminated {app}: {} exports denied", r.auto_denied));
                }
            }
        }
        let items = b.export_items();
        let count = |s: ExportState| items.iter().filter(|i| i.state == s).count();
        Ok(Outcome {
            end_ms: b.now(),
            runs,
            exports_staged: count(ExportState::Staged),
            exports_dispatched: count(ExportState::Dispatched),
            exports_denied: count(ExportState::Denied),
            receipts: b.receipts().len(),
            notifications: b.notifier().all().len(),
            log,
            audit: b.audit_dump(),
        })
    }
}

fn decision_word(d: ExportDecision) -> &'static str {
    match d {
        ExportDecision::Approve => "approved",
        ExportDecision::Deny => "denied",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = r#"
seed = 3
start_ms = 1700000000000

[[users]]
name = "alice"
role = "owner"

[[sources]]
id = "microphone"
kind = "microphone-level"
owners = ["alice"]
driver = { seed = 1, cadence_ms = 5000 }

[[sources]]
id = "bulb-1"
kind = "bulb"
owners = ["alice"]

[[sources]]
id = "bulb-2"
kind = "bulb"
owners = ["alice"]

[[steps]]
action = "publish"
app = "sound-lights"

[[steps]]
action = "install"
app = "sound-lights"
choices = { user_id = "alice", report_period_ms = 600000, sources = { microphone = { store_id = "store-microphone", sample_period_ms = 60000 }, bulb-1 = { store_id = "store-bulb-1" }, bulb-2 = { store_id = "store-bulb-2" } } }

[[steps]]
action = "run"
until_ms = 1200000
every_ms = 60000

[[steps]]
action = "approve-exports"
user = "alice"

[[steps]]
action = "withdraw"
app = "sound-lights"
user = "alice"
"#;

    #[test]
    fn script_runs_and_replays_identically() {
        let s = Script::parse(SCRIPT).unwrap();
        let a = s.run(Path::new(".")).unwrap();
        let b = s.run(Path::new(".")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs, 20);
        assert_eq!(a.exports_dispatched, 2);
        assert_eq!(a.receipts, 2);
        assert!(a.audit.lines().count() > 240);
    }

    #[test]
    fn different_seed_changes_keys_but_not_shape() {
        let mut s = Script::parse(SCRIPT).unwrap();
        let a = s.run(Path::new(".")).unwrap();
        s.seed = 4;
        let b = s.run(Path::new(".")).unwrap();
        assert_eq!(a.audit.lines().count(), b.audit.lines().count());
        assert_eq!(a.runs, b.runs);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(Script::parse("start_ms = 0\nbogus = 1").is_err());
        let bad = "start_ms = 0\n[[steps]]\naction = \"explode\"";
        assert!(Script::parse(bad).is_err());
    }

    #[test]
    fn failing_step_is_numbered() {
        let text = "start_ms = 0\n[[steps]]\naction = \"terminate\"\napp = \"x\"\n[[steps]]\naction = \"publish\"\napp = \"nope\"";
        let err = Script::parse(text).unwrap().run(Path::new(".")).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { step: 2, .. }), "{err}");
    }
}
