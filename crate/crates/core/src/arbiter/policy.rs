use crate::ids::{AppId, Millis, PolicyId, SlaId, StoreId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Query,
    Actuate,
    ExportStage,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Query, Action::Actuate, Action::ExportStage];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Query => "query",
            Action::Actuate => "actuate",
            Action::ExportStage => "export-stage",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "query" => Ok(Action::Query),
            "actuate" => Ok(Action::Actuate),
            "export-stage" => Ok(Action::ExportStage),
            _ => Err(()),
        }
    }
}

pub fn encode_actions(actions: &BTreeSet<Action>) -> String {
    actions
        .iter()
        .map(|a| a.as_str())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn decode_actions(s: &str) -> Option<BTreeSet<Action>> {
    if s.is_empty() {
        return Some(BTreeSet::new());
    }
    s.split(',').map(|p| p.parse().ok()).collect()
}

/// Machine-readable enforcement form of one SLA grant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub policy_id: PolicyId,
    pub sla_id: SlaId,
    pub app_id: AppId,
    pub store_id: StoreId,
    pub actions: BTreeSet<Action>,
    /// Minimum spacing between granted queries; 0 when the policy grants no query.
    pub max_sample_period_ms: u64,
    /// Minimum spacing between export dispatches; present only for export-stage policies.
    pub max_report_period_ms: Option<u64>,
    pub expiry: Millis,
    pub revoked: bool,
}

impl Policy {
    pub fn is_active(&self, now: Millis) -> bool {
        !self.revoked && now < self.expiry
    }
}
