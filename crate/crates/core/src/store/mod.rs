//! Per-source isolated data stores.
//!
//! Every data source gets exactly one store with its own key, an encrypted
//! append-only record log, and an encrypted append-only audit log. Reads by
//! apps go through the arbiter; every operation, and every denial, leaves one
//! audit record.

mod audit;
pub mod frame;
mod keyring;
mod record;
mod schema;

pub use audit::{Actor, AuditAction, AuditDetail, AuditRecord};
pub use keyring::Keyring;
pub use record::{Aggregation, Command, CommsFrame, DataRecord, QueryResult, QuerySpec, RecordBody};
pub use schema::{DataSource, FieldDef, RecordSchema, ScalarType, SchemaError, SourceKind, Value};

use crate::arbiter::{AccessRequest, AccessToken, Action, Arbiter, Decision, DenyReason};
use crate::crypto::{KEY_LEN, NONCE_LEN};
use crate::ids::{AppId, Millis, SourceId, StoreId, UserId};
use frame::{FrameLog, LogKind};
use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("source {0} already has a store")]
    DuplicateSource(SourceId),
    #[error("unknown store {0}")]
    UnknownStore(StoreId),
    #[error("a data source needs at least one owner")]
    NoOwners,
    #[error("schema mismatch: {0}")]
    Schema(#[from] SchemaError),
    #[error("access denied: {}", .reason.as_str())]
    Denied { reason: DenyReason },
    #[error("store kind {0} does not support actuation")]
    UnsupportedActuation(SourceKind),
    #[error("{0} is not an owner of the store")]
    NotOwner(UserId),
    #[error("not authorized: {0}")]
    Unauthorized(String),
    #[error("store {0} already has a registered writer")]
    WriterAlreadyRegistered(StoreId),
    #[error("store {0} is not a communications store")]
    NotCommunications(StoreId),
    #[error("storage I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Who is writing records into a store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "kebab-case")]
pub enum Writer {
    Driver(SourceId),
    App(AppId),
    Platform,
}

impl Writer {
    fn actor(&self) -> Actor {
        match self {
            Writer::Driver(s) => Actor::Driver(s.clone()),
            Writer::App(a) => Actor::App(a.clone()),
            Writer::Platform => Actor::System,
        }
    }
}

/// Who is asking to read or manage a store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "kebab-case")]
pub enum Principal {
    User(UserId),
    Auditor,
    App(AppId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum ManageOp {
    Redact { from: Millis, to: Millis },
    Clear,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum ManageOutcome {
    Done,
    PendingConsent { awaiting: Vec<UserId> },
    Deleted,
}

#[derive(Debug, Clone, Default)]
pub struct StoreConfig {
    /// Directory for store and audit files; in-memory only when absent.
    pub dir: Option<PathBuf>,
    pub keyring_path: Option<PathBuf>,
}

struct DataState {
    source: DataSource,
    records: Vec<DataRecord>,
    next_seq: u64,
    log: FrameLog,
    writer: Option<Writer>,
    delete_approvals: Option<BTreeSet<UserId>>,
    deleted: bool,
}

struct AuditState {
    records: Vec<AuditRecord>,
    next_seq: u64,
    log: FrameLog,
}

struct Store {
    id: StoreId,
    schema: RecordSchema,
    key: [u8; KEY_LEN],
    data: RwLock<DataState>,
    audit: Mutex<AuditState>,
    nonces: Mutex<ChaCha20Rng>,
}

impl Store {
    fn nonce(&self) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        self.nonces.lock().fill_bytes(&mut n);
        n
    }

    fn kind(&self) -> SourceKind {
        self.data.read().source.kind
    }

    /// Caller must hold the data lock so the audit record is atomic with its operation.
    fn audit(
        &self,
        time: Millis,
        actor: Actor,
        action: AuditAction,
        detail: AuditDetail,
    ) -> Result<u64, StoreError> {
        let mut a = self.audit.lock();
        a.next_seq += 1;
        let rec = AuditRecord {
            audit_seq: a.next_seq,
            time,
            actor,
            action,
            store_id: self.id.clone(),
            detail,
        };
        let pt = serde_json::to_vec(&rec).expect("audit record serializes");
        let nonce = self.nonce();
        a.log.append(&self.key, &nonce, &pt)?;
        a.records.push(rec);
        Ok(a.next_seq)
    }

    fn push_record(&self, data: &mut DataState, timestamp: Millis, body: RecordBody) -> Result<u64, StoreError> {
        data.next_seq += 1;
        let rec = DataRecord {
            seq_no: data.next_seq,
            timestamp,
            body,
        };
        let pt = serde_json::to_vec(&rec).expect("record serializes");
        let nonce = self.nonce();
        data.log.append(&self.key, &nonce, &pt)?;
        data.records.push(rec);
        Ok(data.next_seq)
    }

    fn rewrite(&self, data: &mut DataState) -> Result<(), StoreError> {
        let frames: Vec<_> = data
            .records
            .iter()
            .map(|r| (self.nonce(), serde_json::to_vec(r).expect("record serializes")))
            .collect();
        data.log.rewrite(&self.key, frames.into_iter())?;
        Ok(())
    }
}

pub struct StoreEngine {
    arbiter: Arc<Arbiter>,
    config: StoreConfig,
    keyring: Mutex<Keyring>,
    rng: Mutex<ChaCha20Rng>,
    stores: RwLock<BTreeMap<StoreId, Arc<Store>>>,
    retired: RwLock<BTreeMap<StoreId, Arc<Store>>>,
}

pub fn store_id_for(source: &SourceId) -> StoreId {
    StoreId::new(format!("store-{source}"))
}

impl StoreEngine {
    pub fn new(arbiter: Arc<Arbiter>, config: StoreConfig, seed: [u8; 32]) -> Result<Self, StoreError> {
        if let Some(dir) = &config.dir {
            std::fs::create_dir_all(dir)?;
        }
        let keyring = Keyring::new(config.keyring_path.clone());
        Ok(Self {
            arbiter,
            config,
            keyring: Mutex::new(keyring),
            rng: Mutex::new(ChaCha20Rng::from_seed(seed)),
            stores: RwLock::new(BTreeMap::new()),
            retired: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn arbiter(&self) -> &Arc<Arbiter> {
        &self.arbiter
    }

    pub fn create_store(
        &self,
        mut source: DataSource,
        schema: RecordSchema,
    ) -> Result<StoreId, StoreError> {
        if source.owner_ids.is_empty() {
            return Err(StoreError::NoOwners);
        }
        schema.check()?;
        source.schema_id = schema.schema_id.clone();
        let id = store_id_for(&source.source_id);
        let mut stores = self.stores.write();
        if stores.contains_key(&id) || self.retired.read().contains_key(&id) {
            return Err(StoreError::DuplicateSource(source.source_id));
        }
        let (key, nonce_seed) = {
            let mut rng = self.rng.lock();
            let mut key = [0u8; KEY_LEN];
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut key);
            rng.fill_bytes(&mut seed);
            (key, seed)
        };
        let path = |ext: &str| {
            self.config
                .dir
                .as_ref()
                .map(|d| d.join(format!("{id}.{ext}")))
        };
        let data_log = FrameLog::create(LogKind::Data, id.as_str(), path("data"))?;
        let audit_log = FrameLog::create(LogKind::Audit, id.as_str(), path("audit"))?;
        self.keyring.lock().insert(id.clone(), key)?;
        let store = Store {
            id: id.clone(),
            schema,
            key,
            data: RwLock::new(DataState {
                source,
                records: Vec::new(),
                next_seq: 0,
                log: data_log,
                writer: None,
                delete_approvals: None,
                deleted: false,
            }),
            audit: Mutex::new(AuditState {
                records: Vec::new(),
                next_seq: 0,
                log: audit_log,
            }),
            nonces: Mutex::new(ChaCha20Rng::from_seed(nonce_seed)),
        };
        stores.insert(id.clone(), Arc::new(store));
        Ok(id)
    }

    fn live(&self, id: &StoreId) -> Result<Arc<Store>, StoreError> {
        self.stores
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownStore(id.clone()))
    }

    fn any(&self, id: &StoreId) -> Result<Arc<Store>, StoreError> {
        self.live(id).or_else(|_| {
            self.retired
                .read()
                .get(id)
                .cloned()
                .ok_or_else(|| StoreError::UnknownStore(id.clone()))
        })
    }

    /// Registers the single writer (driver or app) allowed to append to a store.
    pub fn register_writer(&self, id: &StoreId, writer: Writer) -> Result<(), StoreError> {
        let store = self.live(id)?;
        let mut data = store.data.write();
        if data.writer.is_some() {
            return Err(StoreError::WriterAlreadyRegistered(id.clone()));
        }
        if let Writer::Driver(src) = &writer {
            if src != &data.source.source_id {
                return Err(StoreError::Unauthorized(format!(
                    "driver for {src} cannot write to {id}"
                )));
            }
        }
        data.writer = Some(writer);
        Ok(())
    }

    pub fn unregister_writer(&self, id: &StoreId, writer: &Writer) {
        if let Ok(store) = self.live(id) {
            let mut data = store.data.write();
            if data.writer.as_ref() == Some(writer) {
                data.writer = None;
            }
        }
    }

    pub fn append(
        &self,
        id: &StoreId,
        writer: &Writer,
        timestamp: Millis,
        values: Vec<crate::store::Value>,
        now: Millis,
    ) -> Result<u64, StoreError> {
        let store = self.live(id)?;
        let mut data = store.data.write();
        if data.deleted {
            return Err(StoreError::UnknownStore(id.clone()));
        }
        if writer != &Writer::Platform && data.writer.as_ref() != Some(writer) {
            return Err(StoreError::Unauthorized(format!(
                "{writer:?} is not the registered writer of {id}"
            )));
        }
        let values = store.schema.conform(values)?;
        let seq = store.push_record(&mut data, timestamp, RecordBody::Values { values })?;
        store.audit(
            now,
            writer.actor(),
            AuditAction::Append,
            AuditDetail {
                seq_no: Some(seq),
                ..Default::default()
            },
        )?;
        Ok(seq)
    }

    fn deny(
        &self,
        store: &Store,
        token: &AccessToken,
        reason: DenyReason,
        now: Millis,
        action: Action,
    ) -> StoreError {
        let actor = token
            .first_caveat(crate::arbiter::CAVEAT_APP)
            .map(|a| Actor::App(AppId::new(a)))
            .unwrap_or(Actor::System);
        // An audit I/O failure would otherwise hide the denial itself.
        if let Err(e) = store.audit(
            now,
            actor,
            AuditAction::TokenDenied,
            AuditDetail {
                token: Some(token.fingerprint()),
                reason: Some(reason.as_str().to_string()),
                note: Some(action.as_str().to_string()),
                ..Default::default()
            },
        ) {
            return e;
        }
        StoreError::Denied { reason }
    }

    /// Token-authorized read. Rows come back in sequence order.
    pub fn query(
        &self,
        id: &StoreId,
        token: &AccessToken,
        spec: &QuerySpec,
        now: Millis,
        last_granted: Option<Millis>,
    ) -> Result<QueryResult, StoreError> {
        let store = self.live(id)?;
        let data = store.data.read();
        if data.deleted {
            return Err(StoreError::UnknownStore(id.clone()));
        }
        let req = AccessRequest {
            store_id: id.clone(),
            action: Action::Query,
            now,
            last_granted_time: last_granted,
        };
        let policy_id = match self.arbiter.authorize(token, &req) {
            Decision::Deny { reason } => return Err(self.deny(&store, token, reason, now, Action::Query)),
            Decision::Allow { policy_id } => policy_id,
        };
        let result = evaluate(&store.schema, &data.records, spec)?;
        store.audit(
            now,
            Actor::App(AppId::new(token.first_caveat(crate::arbiter::CAVEAT_APP).unwrap_or(""))),
            AuditAction::Query,
            AuditDetail {
                range: Some((spec.from, spec.to)),
                rows: Some(result.row_count()),
                policy_id: Some(policy_id),
                token: Some(token.fingerprint()),
                ..Default::default()
            },
        )?;
        Ok(result)
    }

    pub fn actuate(
        &self,
        id: &StoreId,
        token: &AccessToken,
        command: Command,
        now: Millis,
    ) -> Result<u64, StoreError> {
        let store = self.live(id)?;
        let mut data = store.data.write();
        if data.deleted {
            return Err(StoreError::UnknownStore(id.clone()));
        }
        if !data.source.kind.supports_actuation() {
            return Err(StoreError::UnsupportedActuation(data.source.kind));
        }
        let req = AccessRequest {
            store_id: id.clone(),
            action: Action::Actuate,
            now,
            last_granted_time: None,
        };
        let policy_id = match self.arbiter.authorize(token, &req) {
            Decision::Deny { reason } => return Err(self.deny(&store, token, reason, now, Action::Actuate)),
            Decision::Allow { policy_id } => policy_id,
        };
        let seq = store.push_record(&mut data, now, RecordBody::Actuation { command })?;
        store.audit(
            now,
            Actor::App(AppId::new(token.first_caveat(crate::arbiter::CAVEAT_APP).unwrap_or(""))),
            AuditAction::Actuate,
            AuditDetail {
                seq_no: Some(seq),
                policy_id: Some(policy_id),
                token: Some(token.fingerprint()),
                ..Default::default()
            },
        )?;
        Ok(seq)
    }

    /// Verifies an export-stage request against the communications store's policy,
    /// auditing a denial the same way a refused query is audited.
    pub fn check_export(
        &self,
        id: &StoreId,
        token: &AccessToken,
        now: Millis,
    ) -> Result<(), StoreError> {
        let store = self.live(id)?;
        let _data = store.data.read();
        let req = AccessRequest {
            store_id: id.clone(),
            action: Action::ExportStage,
            now,
            last_granted_time: None,
        };
        match self.arbiter.authorize(token, &req) {
            Decision::Allow { .. } => Ok(()),
            Decision::Deny { reason } => Err(self.deny(&store, token, reason, now, Action::ExportStage)),
        }
    }

    /// Writes one dispatched export frame to a communications store.
    pub fn record_export(
        &self,
        id: &StoreId,
        frame: CommsFrame,
        now: Millis,
    ) -> Result<u64, StoreError> {
        let store = self.live(id)?;
        let mut data = store.data.write();
        if data.source.kind != SourceKind::Communications {
            return Err(StoreError::NotCommunications(id.clone()));
        }
        let detail = AuditDetail {
            item_id: Some(frame.item_id.clone()),
            bytes: Some(frame.payload.len()),
            note: Some(frame.recipient.clone()),
            ..Default::default()
        };
        let actor = Actor::App(frame.app_id.clone());
        let seq = store.push_record(&mut data, now, RecordBody::Export { frame })?;
        store.audit(
            now,
            actor,
            AuditAction::Export,
            AuditDetail {
                seq_no: Some(seq),
                ..detail
            },
        )
    }

    /// Audits an export-queue transition (staged, approved, denied) on a communications store.
    pub fn record_export_event(
        &self,
        id: &StoreId,
        actor: Actor,
        action: AuditAction,
        detail: AuditDetail,
        now: Millis,
    ) -> Result<u64, StoreError> {
        debug_assert!(matches!(
            action,
            AuditAction::ExportStaged | AuditAction::ExportApproved | AuditAction::ExportDenied
        ));
        let store = self.live(id)?;
        let _data = store.data.read();
        store.audit(now, actor, action, detail)
    }

    pub fn manage(
        &self,
        id: &StoreId,
        op: &ManageOp,
        user: &UserId,
        now: Millis,
    ) -> Result<ManageOutcome, StoreError> {
        let store = self.live(id)?;
        let outcome = {
            let mut data = store.data.write();
            if data.deleted {
                return Err(StoreError::UnknownStore(id.clone()));
            }
            if !data.source.owner_ids.contains(user) {
                return Err(StoreError::NotOwner(user.clone()));
            }
            let actor = Actor::User(user.clone());
            match op {
                ManageOp::Redact { from, to } => {
                    let mut n = 0;
                    for r in data.records.iter_mut() {
                        if r.timestamp >= *from && r.timestamp < *to && r.values().is_some() {
                            r.body = RecordBody::Redacted;
                            n += 1;
                        }
                    }
                    store.rewrite(&mut data)?;
                    store.audit(
                        now,
                        actor,
                        AuditAction::Redact,
                        AuditDetail {
                            range: Some((*from, *to)),
                            rows: Some(n),
                            ..Default::default()
                        },
                    )?;
                    ManageOutcome::Done
                }
                ManageOp::Clear => {
                    let n = data.records.len();
                    data.records.clear();
                    store.rewrite(&mut data)?;
                    store.audit(
                        now,
                        actor,
                        AuditAction::Clear,
                        AuditDetail {
                            rows: Some(n),
                            ..Default::default()
                        },
                    )?;
                    ManageOutcome::Done
                }
                ManageOp::Delete => {
                    let owners = data.source.owner_ids.clone();
                    let approvals = data.delete_approvals.get_or_insert_with(BTreeSet::new);
                    approvals.insert(user.clone());
                    let awaiting: Vec<UserId> = owners.difference(approvals).cloned().collect();
                    if awaiting.is_empty() {
                        let n = data.records.len();
                        data.records.clear();
                        data.deleted = true;
                        data.writer = None;
                        data.log.remove_file()?;
                        store.audit(
                            now,
                            actor,
                            AuditAction::Delete,
                            AuditDetail {
                                rows: Some(n),
                                note: Some("committed".into()),
                                ..Default::default()
                            },
                        )?;
                        ManageOutcome::Deleted
                    } else {
                        store.audit(
                            now,
                            actor,
                            AuditAction::Delete,
                            AuditDetail {
                                note: Some(format!("pending: awaiting {} owner(s)", awaiting.len())),
                                ..Default::default()
                            },
                        )?;
                        ManageOutcome::PendingConsent { awaiting }
                    }
                }
            }
        };
        if outcome == ManageOutcome::Deleted {
            if let Some(s) = self.stores.write().remove(id) {
                self.retired.write().insert(id.clone(), s);
            }
        }
        Ok(outcome)
    }

    /// Audit records in `audit_seq` order, optionally limited to `[from, to)` by time.
    /// Deleted stores keep their audit log for owners and the auditor.
    pub fn read_audit(
        &self,
        id: &StoreId,
        who: &Principal,
        range: Option<(Millis, Millis)>,
    ) -> Result<Vec<AuditRecord>, StoreError> {
        let store = self.any(id)?;
        match who {
            Principal::Auditor => {}
            Principal::User(u) => {
                if !store.data.read().source.owner_ids.contains(u) {
                    return Err(StoreError::NotOwner(u.clone()));
                }
            }
            Principal::App(a) => {
                return Err(StoreError::Unauthorized(format!("app {a} cannot read audit logs")))
            }
        }
        let a = store.audit.lock();
        Ok(a
            .records
            .iter()
            .filter(|r| range.is_none_or(|(from, to)| r.time >= from && r.time < to))
            .cloned()
            .collect())
    }

    pub fn add_owner(&self, id: &StoreId, by: &UserId, new_owner: UserId) -> Result<(), StoreError> {
        let store = self.live(id)?;
        let mut data = store.data.write();
        if !data.source.owner_ids.contains(by) {
            return Err(StoreError::NotOwner(by.clone()));
        }
        data.source.owner_ids.insert(new_owner);
        Ok(())
    }

    pub fn source(&self, id: &StoreId) -> Option<DataSource> {
        self.live(id).ok().map(|s| s.data.read().source.clone())
    }

    pub fn schema(&self, id: &StoreId) -> Option<RecordSchema> {
        self.live(id).ok().map(|s| s.schema.clone())
    }

    pub fn kind(&self, id: &StoreId) -> Option<SourceKind> {
        self.live(id).ok().map(|s| s.kind())
    }

    pub fn owners(&self, id: &StoreId) -> Option<BTreeSet<UserId>> {
        self.any(id).ok().map(|s| s.data.read().source.owner_ids.clone())
    }

    pub fn store_ids(&self) -> Vec<StoreId> {
        self.stores.read().keys().cloned().collect()
    }

    /// Live and deleted stores; deleted ones still carry an audit log.
    pub fn all_store_ids(&self) -> Vec<StoreId> {
        let mut ids: Vec<StoreId> = self.store_ids();
        ids.extend(self.retired.read().keys().cloned());
        ids.sort();
        ids
    }

    pub fn is_deleted(&self, id: &StoreId) -> bool {
        self.retired.read().contains_key(id)
    }

    pub fn record_count(&self, id: &StoreId) -> usize {
        self.live(id).map(|s| s.data.read().records.len()).unwrap_or(0)
    }

    /// Every record, including actuation, export and redaction placeholders. Platform use only.
    pub fn snapshot(&self, id: &StoreId) -> Vec<DataRecord> {
        self.live(id)
            .map(|s| s.data.read().records.clone())
            .unwrap_or_default()
    }

    pub fn data_bytes(&self, id: &StoreId) -> Option<Vec<u8>> {
        self.live(id).ok().map(|s| s.data.read().log.bytes().to_vec())
    }

    pub fn audit_bytes(&self, id: &StoreId) -> Option<Vec<u8>> {
        self.any(id).ok().map(|s| s.audit.lock().log.bytes().to_vec())
    }

    pub fn data_path(&self, id: &StoreId) -> Option<PathBuf> {
        self.live(id)
            .ok()
            .and_then(|s| s.data.read().log.path().map(|p| p.to_path_buf()))
    }

    /// Test hook: the key a store encrypts with.
    pub fn key_of(&self, id: &StoreId) -> Option<[u8; KEY_LEN]> {
        self.keyring.lock().get(id).copied()
    }

    pub fn distinct_key_count(&self) -> usize {
        self.keyring.lock().distinct_keys()
    }
}

/// Applies a query spec to a store's records. Deterministic in its inputs.
pub fn evaluate(
    schema: &RecordSchema,
    records: &[DataRecord],
    spec: &QuerySpec,
) -> Result<QueryResult, StoreError> {
    let in_range = records
        .iter()
        .filter(|r| r.timestamp >= spec.from && r.timestamp < spec.to);
    Ok(match &spec.aggregation {
        Aggregation::None => {
            let rows: Vec<DataRecord> = match spec.max_rows {
                Some(n) => in_range.take(n).cloned().collect(),
                None => in_range.cloned().collect(),
            };
            QueryResult::Rows { rows }
        }
        Aggregation::Count => QueryResult::Count {
            count: in_range.filter(|r| r.values().is_some()).count(),
        },
        Aggregation::Mean { field } => {
            let idx = schema.field_index(field).ok_or_else(|| SchemaError::Type {
                field: field.clone(),
                expected: ScalarType::Real,
            })?;
            let xs: Vec<f64> = in_range
                .filter_map(|r| r.values().and_then(|v| v[idx].as_f64()))
                .collect();
            let value = if xs.is_empty() {
                None
            } else {
                Some(xs.iter().sum::<f64>() / xs.len() as f64)
            };
            QueryResult::Mean {
                value,
                rows: xs.len(),
            }
        }
    })
}
