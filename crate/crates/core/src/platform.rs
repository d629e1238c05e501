//! The assembled box: every engine wired together behind one API.
//!
//! All secrets (arbiter root, store keys, receipt key, login keys) derive from
//! the configured seed, and all timestamps come from the configured clock, so a
//! virtual-clock box replays identically.

use crate::accounts::{AccountError, Accounts, NewAccount, Role, UserAccount};
use crate::appstore::{check_package, AppStore, Listing, Package, PublishError, RateError, SearchFilter, Stars};
use crate::arbiter::{AccessRequest, AccessToken, Action, Arbiter, ArbiterError, Decision, DenyReason, RevokeScope};
use crate::clock::{Clock, SystemClock, VirtualClock};
use crate::ids::{AppId, ExportId, Millis, RunId, SlaId, SourceId, StoreId, UserId};
use crate::manifest::{compile, CompileError, ManifestEngine, ResolveError, Sla, SlaReceipt, UserChoices, WithdrawOutcome};
use crate::notify::{Notification, NotificationKind, Notifier, NotifyError};
use crate::processor::{ProcessorStub, Receipt};
use crate::runtime::{
    AppInfo, Datum, Dispatcher, ExportDecision, ExportError, ExportItem, ExportState, ProvenanceTrace,
    Runtime, RuntimeError, TerminateReport, TickReport,
};
use crate::sim::{self, Driver, SimError, SimProfile};
use crate::store::{
    AuditRecord, Command, DataSource, ManageOp, ManageOutcome, Principal, QueryResult, QuerySpec, RecordSchema,
    SourceKind, StoreConfig, StoreEngine, StoreError,
};
use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Account(#[from] AccountError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Publish(#[from] PublishError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Arbiter(#[from] ArbiterError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Notify(#[from] NotifyError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("app {0} is not in the app store")]
    UnknownApp(AppId),
    #[error("unknown SLA {0}")]
    UnknownSla(SlaId),
    #[error("app {0} is already installed")]
    AlreadyInstalled(AppId),
    #[error("{user} does not own store {store}")]
    NotOwner { user: UserId, store: StoreId },
    #[error("source {source_name} is declared as {declared}, store {store} holds {actual}")]
    KindMismatch {
        source_name: String,
        store: StoreId,
        declared: SourceKind,
        actual: SourceKind,
    },
    #[error("no simulator or schema for kind {0}")]
    NoSchema(SourceKind),
    #[error("access denied: {}", .0.as_str())]
    Denied(DenyReason),
    #[error("{0} may not act on this agreement")]
    NotParty(UserId),
    #[error("the clock is not virtual")]
    NotVirtual,
}

impl From<ExportError> for PlatformError {
    fn from(e: ExportError) -> Self {
        PlatformError::Runtime(RuntimeError::Export(e))
    }
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;

pub enum ClockMode {
    Virtual(Millis),
    System,
}

pub struct PlatformConfig {
    pub seed: u64,
    pub clock: ClockMode,
    pub data_dir: Option<PathBuf>,
    pub keyring_path: Option<PathBuf>,
    /// Where dispatched exports go; the built-in processor stub when absent.
    pub dispatcher: Option<Arc<dyn Dispatcher>>,
}

impl PlatformConfig {
    pub fn virtual_at(seed: u64, start: Millis) -> Self {
        Self {
            seed,
            clock: ClockMode::Virtual(start),
            data_dir: None,
            keyring_path: None,
            dispatcher: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Installation {
    pub app_id: AppId,
    pub sla: Sla,
    pub receipt: SlaReceipt,
    pub policies: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawReport {
    pub sla_id: SlaId,
    pub already_withdrawn: bool,
    pub revoked_policies: usize,
    pub terminate: TerminateReport,
}

pub struct Databox {
    clock: Arc<dyn Clock>,
    virtual_clock: Option<Arc<VirtualClock>>,
    arbiter: Arc<Arbiter>,
    stores: Arc<StoreEngine>,
    manifests: ManifestEngine,
    runtime: Runtime,
    appstore: AppStore,
    accounts: Accounts,
    notifier: Arc<Notifier>,
    processor: Arc<ProcessorStub>,
    drivers: Mutex<BTreeMap<StoreId, Arc<Driver>>>,
    installs: RwLock<BTreeMap<AppId, SlaId>>,
    install_lock: Mutex<()>,
}

/// Source id of an off-box app's communications store.
pub fn comms_source_id(app: &AppId) -> SourceId {
    SourceId::new(format!("comms-{app}"))
}

pub fn comms_schema() -> RecordSchema {
    RecordSchema::new("comms/v1", &[])
}

impl Databox {
    pub fn new(config: PlatformConfig) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut secret = || {
            let mut k = [0u8; 32];
            rng.fill_bytes(&mut k);
            k
        };
        let (root, receipt_key, store_seed, account_seed) = (secret(), secret(), secret(), secret());
        let (clock, virtual_clock): (Arc<dyn Clock>, _) = match config.clock {
            ClockMode::Virtual(t) => {
                let v = Arc::new(VirtualClock::new(t));
                (v.clone(), Some(v))
            }
            ClockMode::System => (Arc::new(SystemClock), None),
        };
        let arbiter = Arc::new(Arbiter::new(root));
        let stores = Arc::new(StoreEngine::new(
            arbiter.clone(),
            StoreConfig {
                dir: config.data_dir.map(|d| d.join("stores")),
                keyring_path: config.keyring_path,
            },
            store_seed,
        )?);
        let notifier = Arc::new(Notifier::new());
        let processor = Arc::new(ProcessorStub::new());
        let dispatcher = config
            .dispatcher
            .unwrap_or_else(|| processor.clone() as Arc<dyn Dispatcher>);
        Ok(Self {
            runtime: Runtime::new(stores.clone(), notifier.clone(), dispatcher),
            clock,
            virtual_clock,
            arbiter,
            stores,
            manifests: ManifestEngine::new(receipt_key),
            appstore: AppStore::new(),
            accounts: Accounts::new(account_seed),
            notifier,
            processor,
            drivers: Mutex::new(BTreeMap::new()),
            installs: RwLock::new(BTreeMap::new()),
            install_lock: Mutex::new(()),
        })
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    pub fn arbiter(&self) -> &Arc<Arbiter> {
        &self.arbiter
    }

    pub fn stores(&self) -> &Arc<StoreEngine> {
        &self.stores
    }

    pub fn manifests(&self) -> &ManifestEngine {
        &self.manifests
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn appstore(&self) -> &AppStore {
        &self.appstore
    }

    pub fn accounts(&self) -> &Accounts {
        &self.accounts
    }

    pub fn notifier(&self) -> &Arc<Notifier> {
        &self.notifier
    }

    pub fn processor(&self) -> &Arc<ProcessorStub> {
        &self.processor
    }

    fn require_user(&self, user: &UserId) -> Result<()> {
        if self.accounts.exists(user) {
            Ok(())
        } else {
            Err(PlatformError::UnknownUser(user.clone()))
        }
    }

    // ---- accounts and sources

    pub fn create_account(&self, by: Option<&UserId>, name: &str, role: Role) -> Result<NewAccount> {
        Ok(self.accounts.create(by, name, role)?)
    }

    pub fn accounts_list(&self) -> Vec<UserAccount> {
        self.accounts.list()
    }

    /// Registers a device source owned by `owners` (the first is the registering user).
    pub fn add_source(
        &self,
        owners: &[UserId],
        source_id: &str,
        kind: SourceKind,
        label: &str,
    ) -> Result<StoreId> {
        for o in owners {
            self.require_user(o)?;
        }
        let schema = sim::schema_for(kind).ok_or(PlatformError::NoSchema(kind))?;
        Ok(self.stores.create_store(
            DataSource {
                source_id: SourceId::new(source_id),
                kind,
                owner_ids: owners.iter().cloned().collect(),
                label: label.to_string(),
                schema_id: String::new(),
            },
            schema,
        )?)
    }

    /// Adds a co-owner to a store and tells them about it.
    pub fn share_source(&self, store: &StoreId, by: &UserId, with: &UserId) -> Result<()> {
        self.require_user(with)?;
        self.stores.add_owner(store, by, with.clone())?;
        self.notifier
            .notify(with, NotificationKind::SharingRequest, store.as_str(), self.now());
        Ok(())
    }

    pub fn start_driver(&self, store: &StoreId, profile: SimProfile) -> Result<()> {
        let driver = Driver::start(self.stores.clone(), profile, store, self.now())?;
        self.drivers.lock().insert(store.clone(), driver);
        Ok(())
    }

    pub fn stop_driver(&self, store: &StoreId) -> bool {
        match self.drivers.lock().remove(store) {
            Some(d) => {
                d.stop();
                true
            }
            None => false,
        }
    }

    pub fn driver(&self, store: &StoreId) -> Option<Arc<Driver>> {
        self.drivers.lock().get(store).cloned()
    }

    pub fn available_kinds(&self) -> BTreeSet<SourceKind> {
        self.stores
            .store_ids()
            .iter()
            .filter_map(|s| self.stores.kind(s))
            .filter(|k| SourceKind::DEVICE_KINDS.contains(k))
            .collect()
    }

    // ---- app store

    pub fn publish(&self, package: Package) -> Result<Listing> {
        Ok(self.appstore.publish(package, self.now())?)
    }

    pub fn search(&self, filter: &SearchFilter) -> Vec<Listing> {
        self.appstore.search(filter)
    }

    pub fn recommend(&self) -> Vec<Listing> {
        self.appstore.recommend(&self.available_kinds())
    }

    pub fn rate(&self, app: &AppId, user: &UserId, stars: u8) -> Result<Stars> {
        Ok(self.appstore.rate(app, user, stars)?)
    }

    // ---- consent and installation

    /// Configures the app's manifest with the user's choices, records the SLA, compiles
    /// and activates its policies, and loads the app.
    pub fn install(&self, app: &AppId, choices: &UserChoices) -> Result<Installation> {
        let _serial = self.install_lock.lock();
        let user = &choices.user_id;
        self.require_user(user)?;
        let package = self
            .appstore
            .package(app)
            .ok_or_else(|| PlatformError::UnknownApp(app.clone()))?;
        let manifest = check_package(&package)?.clone();
        if let Some(sla) = self.installs.read().get(app) {
            let running = self
                .runtime
                .status(app)
                .is_some_and(|s| s != crate::runtime::AppStatus::Terminated);
            if running && self.manifests.get(sla).is_some_and(|s| s.is_active()) {
                return Err(PlatformError::AlreadyInstalled(app.clone()));
            }
        }
        for (name, choice) in &choices.sources {
            let store = &choice.store_id;
            let owners = self
                .stores
                .owners(store)
                .ok_or_else(|| StoreError::UnknownStore(store.clone()))?;
            if !owners.contains(user) {
                return Err(PlatformError::NotOwner {
                    user: user.clone(),
                    store: store.clone(),
                });
            }
            let declared = manifest.source(name).and_then(|s| s.kind);
            let actual = self.stores.kind(store).expect("store exists");
            if let Some(declared) = declared.filter(|d| *d != actual) {
                return Err(PlatformError::KindMismatch {
                    source_name: name.clone(),
                    store: store.clone(),
                    declared,
                    actual,
                });
            }
        }
        let now = self.now();
        let comms = if manifest.off_box() {
            Some(self.comms_store(app, user)?)
        } else {
            None
        };
        let sla = self.manifests.approve(&manifest, choices, now, comms)?;
        let policies = compile(&sla)?;
        let count = policies.len();
        let activated = self
            .arbiter
            .register_policies(&sla, policies)
            .map_err(PlatformError::from)
            .and_then(|_| Ok(self.runtime.load_app(&package.flow, &manifest, &sla, now)?));
        if let Err(e) = activated {
            self.manifests.withdraw(&sla.sla_id, now);
            self.arbiter.revoke(&RevokeScope::Sla(sla.sla_id.clone()), now);
            return Err(e);
        }
        self.installs.write().insert(app.clone(), sla.sla_id.clone());
        self.appstore.record_install(app, user);
        let receipt = self.manifests.receipt(&sla.sla_id).expect("just approved");
        Ok(Installation {
            app_id: app.clone(),
            sla,
            receipt,
            policies: count,
        })
    }

    fn comms_store(&self, app: &AppId, user: &UserId) -> Result<StoreId> {
        let source_id = comms_source_id(app);
        let id = crate::store::store_id_for(&source_id);
        if self.stores.source(&id).is_some() {
            return Ok(id);
        }
        Ok(self.stores.create_store(
            DataSource {
                source_id,
                kind: SourceKind::Communications,
                owner_ids: [user.clone()].into_iter().collect(),
                label: format!("outbound log of {app}"),
                schema_id: String::new(),
            },
            comms_schema(),
        )?)
    }

    pub fn installed_sla(&self, app: &AppId) -> Option<Sla> {
        let id = self.installs.read().get(app).cloned()?;
        self.manifests.get(&id)
    }

    pub fn slas(&self) -> Vec<Sla> {
        self.manifests.all()
    }

    pub fn receipt(&self, sla: &SlaId) -> Result<SlaReceipt> {
        self.manifests
            .receipt(sla)
            .ok_or_else(|| PlatformError::UnknownSla(sla.clone()))
    }

    /// Withdraws consent: the SLA is closed, its policies revoked and the app terminated.
    pub fn withdraw(&self, sla_id: &SlaId, user: &UserId) -> Result<WithdrawReport> {
        let sla = self
            .manifests
            .get(sla_id)
            .ok_or_else(|| PlatformError::UnknownSla(sla_id.clone()))?;
        if &sla.user_id != user && !self.accounts.is_owner(user) {
            return Err(PlatformError::NotParty(user.clone()));
        }
        let now = self.now();
        let already = matches!(
            self.manifests.withdraw(sla_id, now),
            WithdrawOutcome::AlreadyWithdrawn(_)
        );
        let revoked = self.arbiter.revoke(&RevokeScope::Sla(sla_id.clone()), now);
        let terminate = self.runtime.terminate(&sla.app_id, now)?;
        if !already {
            self.notifier
                .notify(&sla.user_id, NotificationKind::ConsentWithdrawn, sla_id.as_str(), now);
        }
        Ok(WithdrawReport {
            sla_id: sla_id.clone(),
            already_withdrawn: already,
            revoked_policies: revoked + terminate.revoked_policies,
            terminate,
        })
    }

    pub fn terminate(&self, app: &AppId) -> Result<TerminateReport> {
        Ok(self.runtime.terminate(app, self.now())?)
    }

    // ---- time

    /// Moves the virtual clock to `t`, runs drivers up to it and ticks every app.
    pub fn advance_to(&self, t: Millis) -> Result<Vec<(AppId, TickReport)>> {
        let v = self.virtual_clock.as_ref().ok_or(PlatformError::NotVirtual)?;
        v.advance_to(t);
        self.step()
    }

    /// Runs drivers up to the current time and ticks every app.
    pub fn step(&self) -> Result<Vec<(AppId, TickReport)>> {
        let now = self.now();
        let drivers: Vec<Arc<Driver>> = self.drivers.lock().values().cloned().collect();
        for d in drivers {
            d.advance_to(now)?;
        }
        Ok(self.runtime.tick_all(now))
    }

    /// Advances in steps of `every` until `until` (inclusive of the last step).
    pub fn run_until(&self, until: Millis, every: Millis) -> Result<Vec<(AppId, TickReport)>> {
        let mut reports = Vec::new();
        let mut t = self.now();
        while t < until {
            t = (t + every.max(1)).min(until);
            reports.extend(self.advance_to(t)?);
        }
        Ok(reports)
    }

    // ---- exports and inspection

    pub fn exports_for(&self, user: &UserId) -> Vec<ExportItem> {
        self.runtime.exports().items_for(user)
    }

    pub fn export_items(&self) -> Vec<ExportItem> {
        self.runtime.exports().items()
    }

    pub fn decide_export(&self, item: &ExportId, decision: ExportDecision, user: &UserId) -> Result<ExportState> {
        Ok(self.runtime.decide_export(item, decision, user, self.now())?)
    }

    pub fn receipts(&self) -> Vec<Receipt> {
        self.processor.receipts()
    }

    pub fn app_info(&self, app: &AppId) -> Option<AppInfo> {
        self.runtime.info(app)
    }

    pub fn inspect(&self, app: &AppId, run: &RunId) -> Result<ProvenanceTrace> {
        Ok(self.runtime.inspect(app, run)?)
    }

    pub fn views(&self, app: &AppId) -> BTreeMap<crate::ids::NodeId, Datum> {
        self.runtime.views(app)
    }

    // ---- notifications

    pub fn notifications(&self, user: &UserId) -> Vec<Notification> {
        self.notifier.for_user(user)
    }

    pub fn acknowledge(&self, id: &crate::ids::NotificationId, user: &UserId) -> Result<bool> {
        Ok(self.notifier.acknowledge(id, user)?)
    }

    // ---- stores

    pub fn manage_store(&self, store: &StoreId, op: &ManageOp, user: &UserId) -> Result<ManageOutcome> {
        let now = self.now();
        let out = self.stores.manage(store, op, user, now)?;
        match &out {
            ManageOutcome::PendingConsent { awaiting } => {
                for u in awaiting {
                    self.notifier
                        .notify(u, NotificationKind::PendingDeleteConsent, store.as_str(), now);
                }
            }
            ManageOutcome::Deleted => {
                self.stop_driver(store);
            }
            ManageOutcome::Done => {}
        }
        Ok(out)
    }

    pub fn audit(&self, store: &StoreId, principal: &Principal, range: Option<(Millis, Millis)>) -> Result<Vec<AuditRecord>> {
        Ok(self.stores.read_audit(store, principal, range)?)
    }

    /// Every audit record of every store, one JSON object per line, ordered by store then sequence.
    pub fn audit_dump(&self) -> String {
        let mut out = String::new();
        for id in self.stores.all_store_ids() {
            for r in self
                .stores
                .read_audit(&id, &Principal::Auditor, None)
                .expect("auditor reads any store")
            {
                out.push_str(&serde_json::to_string(&r).expect("audit record serializes"));
                out.push('\n');
            }
        }
        out
    }

    /// A query made directly by an app holding a token, outside the flow runtime.
    pub fn app_query(&self, token: &AccessToken, store: &StoreId, spec: &QuerySpec) -> Result<QueryResult> {
        let now = self.now();
        self.stores.query(store, token, spec, now, None).map_err(|e| match e {
            StoreError::Denied { reason } => PlatformError::Denied(reason),
            other => other.into(),
        })
    }

    /// Mints a token for an installed app's container, on behalf of the user who installed it.
    pub fn issue_token(&self, app: &AppId, store: &StoreId, user: &UserId) -> Result<AccessToken> {
        let sla = self
            .installed_sla(app)
            .ok_or_else(|| PlatformError::UnknownApp(app.clone()))?;
        if &sla.user_id != user {
            return Err(PlatformError::NotParty(user.clone()));
        }
        Ok(self.arbiter.mint_token(app, store, self.now())?)
    }

    /// An actuation made directly by an app holding a token.
    pub fn app_actuate(&self, token: &AccessToken, store: &StoreId, command: Command) -> Result<u64> {
        self.stores
            .actuate(store, token, command, self.now())
            .map_err(|e| match e {
                StoreError::Denied { reason } => PlatformError::Denied(reason),
                other => other.into(),
            })
    }

    /// Read-only decision check for a token, without recording a grant.
    pub fn check_token(&self, token: &AccessToken, store: &StoreId, action: Action) -> Decision {
        self.arbiter.verify(
            token,
            &AccessRequest {
                store_id: store.clone(),
                action,
                now: self.now(),
                last_granted_time: None,
            },
        )
    }
}
