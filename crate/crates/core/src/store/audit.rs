use crate::ids::{AppId, ExportId, Millis, PolicyId, SourceId, StoreId, UserId};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "kebab-case")]
pub enum Actor {
    App(AppId),
    User(UserId),
    Driver(SourceId),
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditAction {
    Query,
    Append,
    Actuate,
    Export,
    Redact,
    Clear,
    Delete,
    TokenDenied,
    ExportStaged,
    ExportApproved,
    ExportDenied,
}

impl AuditAction {
    pub const ALL: [AuditAction; 11] = [
        AuditAction::Query,
        AuditAction::Append,
        AuditAction::Actuate,
        AuditAction::Export,
        AuditAction::Redact,
        AuditAction::Clear,
        AuditAction::Delete,
        AuditAction::TokenDenied,
        AuditAction::ExportStaged,
        AuditAction::ExportApproved,
        AuditAction::ExportDenied,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuditAction::Query => "query",
            AuditAction::Append => "append",
            AuditAction::Actuate => "actuate",
            AuditAction::Export => "export",
            AuditAction::Redact => "redact",
            AuditAction::Clear => "clear",
            AuditAction::Delete => "delete",
            AuditAction::TokenDenied => "token-denied",
            AuditAction::ExportStaged => "export-staged",
            AuditAction::ExportApproved => "export-approved",
            AuditAction::ExportDenied => "export-denied",
        }
    }
}

impl fmt::Display for AuditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structured summary of an audited operation. Absent fields are omitted on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditDetail {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(Millis, Millis)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_no: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<PolicyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<ExportId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub audit_seq: u64,
    pub time: Millis,
    pub actor: Actor,
    pub action: AuditAction,
    pub store_id: StoreId,
    pub detail: AuditDetail,
}
