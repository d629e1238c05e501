//! The export preview queue and dispatch to external processors.
//!
//! All stagings and decisions take one lock, so they observe a single total order.

use crate::arbiter::{AccessRequest, AccessToken, Action, Arbiter, DenyReason};
use crate::ids::{AppId, ExportId, Millis, SlaId, StoreId, UserId};
use crate::notify::{NotificationKind, Notifier};
use crate::store::{Actor, AuditAction, AuditDetail, CommsFrame, StoreEngine, StoreError};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

/// Delivers dispatched frames to the recipient's processor.
pub trait Dispatcher: Send + Sync {
    fn deliver(&self, frame: &CommsFrame) -> Result<(), String>;
}

/// Drops frames; for boxes with no processors attached.
pub struct NullDispatcher;

impl Dispatcher for NullDispatcher {
    fn deliver(&self, _frame: &CommsFrame) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportState {
    Staged,
    Approved,
    Dispatched,
    Denied,
}

impl ExportState {
    pub fn can_become(self, next: ExportState) -> bool {
        use ExportState::*;
        matches!(
            (self, next),
            (Staged, Approved) | (Approved, Dispatched) | (Staged, Denied)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportDecision {
    Approve,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportItem {
    pub item_id: ExportId,
    pub app_id: AppId,
    pub sla_id: SlaId,
    pub recipient: String,
    /// Canonical JSON of the result document; never raw rows unless pass-through is declared.
    pub payload: String,
    pub staged_at: Millis,
    pub state: ExportState,
    pub comms_store: StoreId,
    /// Users who may decide on the item: owners of every store the app reads.
    pub owners: BTreeSet<UserId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<UserId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<Millis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum StageOutcome {
    Staged { item_id: ExportId },
    Dispatched { item_id: ExportId },
    /// Delivery failed; the item is approved and can be retried.
    Undelivered { item_id: ExportId, error: String },
    /// The report period has not elapsed since the last accepted export.
    Deferred { until: Millis },
    Denied { reason: DenyReason },
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("unknown export item {0}")]
    Unknown(ExportId),
    #[error("{0} owns none of the stores this export draws on")]
    NotImplicated(UserId),
    #[error("export item {0} is not awaiting dispatch")]
    NotApproved(ExportId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// What the runtime supplies when an export node fires.
pub struct StageRequest<'a> {
    pub app_id: &'a AppId,
    pub sla_id: &'a SlaId,
    pub token: &'a AccessToken,
    pub comms_store: &'a StoreId,
    pub report_period_ms: Millis,
    pub preview_required: bool,
    pub recipient: &'a str,
    pub payload: String,
    pub owners: &'a BTreeSet<UserId>,
}

#[derive(Default)]
struct QueueState {
    items: BTreeMap<ExportId, ExportItem>,
    tokens: HashMap<ExportId, AccessToken>,
    last_accepted: HashMap<AppId, Millis>,
    denied: HashMap<AppId, u64>,
    next: u64,
}

pub struct ExportQueue {
    stores: Arc<StoreEngine>,
    notifier: Arc<Notifier>,
    dispatcher: Arc<dyn Dispatcher>,
    state: Mutex<QueueState>,
}

impl ExportQueue {
    pub fn new(stores: Arc<StoreEngine>, notifier: Arc<Notifier>, dispatcher: Arc<dyn Dispatcher>) -> Self {
        Self {
            stores,
            notifier,
            dispatcher,
            state: Mutex::new(QueueState::default()),
        }
    }

    fn arbiter(&self) -> &Arbiter {
        self.stores.arbiter()
    }

    pub fn stage(&self, req: StageRequest<'_>, now: Millis) -> Result<StageOutcome, ExportError> {
        let mut st = self.state.lock();
        match self.stores.check_export(req.comms_store, req.token, now) {
            Ok(()) => {}
            Err(StoreError::Denied { reason }) => return Ok(StageOutcome::Denied { reason }),
            Err(e) => return Err(e.into()),
        }
        if let Some(&last) = st.last_accepted.get(req.app_id) {
            if now - last < req.report_period_ms {
                return Ok(StageOutcome::Deferred {
                    until: last + req.report_period_ms,
                });
            }
        }
        st.next += 1;
        let item_id = ExportId::new(format!("x-{:05}", st.next));
        st.last_accepted.insert(req.app_id.clone(), now);
        let mut item = ExportItem {
            item_id: item_id.clone(),
            app_id: req.app_id.clone(),
            sla_id: req.sla_id.clone(),
            recipient: req.recipient.to_string(),
            payload: req.payload,
            staged_at: now,
            state: ExportState::Staged,
            comms_store: req.comms_store.clone(),
            owners: req.owners.clone(),
            decided_by: None,
            decided_at: None,
            note: None,
        };
        st.tokens.insert(item_id.clone(), req.token.clone());
        if req.preview_required {
            self.stores.record_export_event(
                req.comms_store,
                Actor::App(req.app_id.clone()),
                AuditAction::ExportStaged,
                AuditDetail {
                    item_id: Some(item_id.clone()),
                    bytes: Some(item.payload.len()),
                    note: Some(item.recipient.clone()),
                    ..Default::default()
                },
                now,
            )?;
            for owner in req.owners {
                self.notifier
                    .notify(owner, NotificationKind::ExportPreview, item_id.as_str(), now);
            }
            st.items.insert(item_id.clone(), item);
            return Ok(StageOutcome::Staged { item_id });
        }
        item.state = ExportState::Approved;
        let outcome = self.dispatch(&mut item, now)?;
        st.items.insert(item_id, item);
        Ok(outcome)
    }

    /// Delivers an approved item and writes it to the communications log.
    fn dispatch(&self, item: &mut ExportItem, now: Millis) -> Result<StageOutcome, ExportError> {
        debug_assert_eq!(item.state, ExportState::Approved);
        let frame = CommsFrame {
            item_id: item.item_id.clone(),
            app_id: item.app_id.clone(),
            recipient: item.recipient.clone(),
            payload: item.payload.clone(),
        };
        if let Err(error) = self.dispatcher.deliver(&frame) {
            item.note = Some(format!("delivery failed: {error}"));
            return Ok(StageOutcome::Undelivered {
                item_id: item.item_id.clone(),
                error,
            });
        }
        self.stores.record_export(&item.comms_store, frame, now)?;
        item.state = ExportState::Dispatched;
        item.note = None;
        Ok(StageOutcome::Dispatched {
            item_id: item.item_id.clone(),
        })
    }

    /// Applies a user's decision. The first decision wins; later ones return the settled state.
    pub fn decide(
        &self,
        item_id: &ExportId,
        decision: ExportDecision,
        user: &UserId,
        now: Millis,
    ) -> Result<ExportState, ExportError> {
        let mut st = self.state.lock();
        let token = st.tokens.get(item_id).cloned();
        let item = st
            .items
            .get_mut(item_id)
            .ok_or_else(|| ExportError::Unknown(item_id.clone()))?;
        if !item.owners.contains(user) {
            return Err(ExportError::NotImplicated(user.clone()));
        }
        if item.state != ExportState::Staged {
            return Ok(item.state);
        }
        item.decided_by = Some(user.clone());
        item.decided_at = Some(now);
        let still_allowed = token.is_some_and(|t| {
            let req = AccessRequest {
                store_id: item.comms_store.clone(),
                action: Action::ExportStage,
                now,
                last_granted_time: None,
            };
            self.arbiter().verify(&t, &req).is_allow()
        });
        let app = item.app_id.clone();
        match decision {
            ExportDecision::Approve if still_allowed => {
                self.audit_decision(item, Actor::User(user.clone()), AuditAction::ExportApproved, None, now)?;
                item.state = ExportState::Approved;
                self.dispatch(item, now)?;
            }
            _ => {
                let note = (decision == ExportDecision::Approve).then_some("access revoked");
                self.audit_decision(item, Actor::User(user.clone()), AuditAction::ExportDenied, note, now)?;
                item.state = ExportState::Denied;
                item.note = note.map(str::to_string);
                *st.denied.entry(app).or_default() += 1;
            }
        }
        Ok(st.items[item_id].state)
    }

    /// Retries delivery of an approved item whose earlier delivery failed.
    pub fn retry(&self, item_id: &ExportId, now: Millis) -> Result<StageOutcome, ExportError> {
        let mut st = self.state.lock();
        let item = st
            .items
            .get_mut(item_id)
            .ok_or_else(|| ExportError::Unknown(item_id.clone()))?;
        if item.state != ExportState::Approved {
            return Err(ExportError::NotApproved(item_id.clone()));
        }
        self.dispatch(item, now)
    }

    /// Denies every staged item of the app. Returns how many were denied.
    pub fn deny_all(&self, app: &AppId, note: &str, now: Millis) -> Result<usize, ExportError> {
        let mut st = self.state.lock();
        let ids: Vec<ExportId> = st
            .items
            .values()
            .filter(|i| &i.app_id == app && i.state == ExportState::Staged)
            .map(|i| i.item_id.clone())
            .collect();
        for id in &ids {
            let item = st.items.get_mut(id).expect("listed");
            self.audit_decision(item, Actor::System, AuditAction::ExportDenied, Some(note), now)?;
            item.state = ExportState::Denied;
            item.decided_at = Some(now);
            item.note = Some(note.to_string());
        }
        *st.denied.entry(app.clone()).or_default() += ids.len() as u64;
        Ok(ids.len())
    }

    fn audit_decision(
        &self,
        item: &ExportItem,
        actor: Actor,
        action: AuditAction,
        note: Option<&str>,
        now: Millis,
    ) -> Result<u64, StoreError> {
        self.stores.record_export_event(
            &item.comms_store,
            actor,
            action,
            AuditDetail {
                item_id: Some(item.item_id.clone()),
                note: note.map(str::to_string),
                ..Default::default()
            },
            now,
        )
    }

    pub fn item(&self, id: &ExportId) -> Option<ExportItem> {
        self.state.lock().items.get(id).cloned()
    }

    pub fn items(&self) -> Vec<ExportItem> {
        self.state.lock().items.values().cloned().collect()
    }

    pub fn items_for(&self, user: &UserId) -> Vec<ExportItem> {
        self.state
            .lock()
            .items
            .values()
            .filter(|i| i.owners.contains(user))
            .cloned()
            .collect()
    }

    pub fn denied_count(&self, app: &AppId) -> u64 {
        self.state.lock().denied.get(app).copied().unwrap_or(0)
    }
}
