//! User notifications with an in-process push channel.

use crate::ids::{Millis, NotificationId, UserId};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::sync::mpsc::{channel, Receiver, Sender};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NotificationKind {
    ExportPreview,
    SharingRequest,
    AppUpdate,
    DriverUpdate,
    ResourceContention,
    ConsentWithdrawn,
    AppSuspended,
    PendingDeleteConsent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub notif_id: NotificationId,
    pub user_id: UserId,
    pub kind: NotificationKind,
    /// Id of the object the notification is about (export item, app, store).
    pub payload_ref: String,
    pub created: Millis,
    pub acknowledged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NotifyError {
    #[error("unknown notification {0}")]
    Unknown(NotificationId),
    #[error("notification {0} belongs to another user")]
    NotYours(NotificationId),
}

#[derive(Default)]
struct State {
    items: Vec<Notification>,
    subscribers: Vec<(Option<UserId>, Sender<Notification>)>,
}

#[derive(Default)]
pub struct Notifier {
    state: Mutex<State>,
}

impl Notifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn notify(
        &self,
        user: &UserId,
        kind: NotificationKind,
        payload_ref: impl Into<String>,
        now: Millis,
    ) -> NotificationId {
        let mut s = self.state.lock();
        let n = Notification {
            notif_id: NotificationId::new(format!("n-{:06}", s.items.len() + 1)),
            user_id: user.clone(),
            kind,
            payload_ref: payload_ref.into(),
            created: now,
            acknowledged: false,
        };
        s.subscribers.retain(|(who, tx)| {
            who.as_ref().is_some_and(|w| w != user) || tx.send(n.clone()).is_ok()
        });
        let id = n.notif_id.clone();
        s.items.push(n);
        id
    }

    /// Marks the notification read. Returns whether this call changed it.
    pub fn acknowledge(&self, id: &NotificationId, user: &UserId) -> Result<bool, NotifyError> {
        let mut s = self.state.lock();
        let n = s
            .items
            .iter_mut()
            .find(|n| &n.notif_id == id)
            .ok_or_else(|| NotifyError::Unknown(id.clone()))?;
        if &n.user_id != user {
            return Err(NotifyError::NotYours(id.clone()));
        }
        Ok(!std::mem::replace(&mut n.acknowledged, true))
    }

    pub fn for_user(&self, user: &UserId) -> Vec<Notification> {
        self.state
            .lock()
            .items
            .iter()
            .filter(|n| &n.user_id == user)
            .cloned()
            .collect()
    }

    pub fn all(&self) -> Vec<Notification> {
        self.state.lock().items.clone()
    }

    pub fn count(&self, kind: NotificationKind) -> usize {
        self.state.lock().items.iter().filter(|n| n.kind == kind).count()
    }

    /// Receives every later notification for `user`, or for everyone when `None`.
    pub fn subscribe(&self, user: Option<UserId>) -> Receiver<Notification> {
        let (tx, rx) = channel();
        self.state.lock().subscribers.push((user, tx));
        rx
    }
}
