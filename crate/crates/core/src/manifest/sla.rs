//! User choices, the resulting agreement, and its compilation to policies.

use super::document::Manifest;
use super::validate::{validate_manifest, Violation};
use crate::arbiter::{Action, Policy};
use crate::crypto;
use crate::ids::{AppId, Millis, PolicyId, SlaId, StoreId, UserId, DAY_MS};
use crate::store::SourceKind;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_SLA_DURATION_MS: Millis = 30 * DAY_MS;

/// A user's configuration of a manifest. Only selected sources appear in `sources`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserChoices {
    pub user_id: UserId,
    #[serde(default)]
    pub sources: BTreeMap<String, SourceChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_period_ms: Option<u64>,
    /// Export preview gate; defaults on for off-box apps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview_required: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceChoice {
    pub store_id: StoreId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period_ms: Option<u64>,
}

impl UserChoices {
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub source: String,
    pub kind: SourceKind,
    pub store_id: StoreId,
    pub actions: BTreeSet<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportGrant {
    /// The app's communications store; dispatched exports are framed there.
    pub store_id: StoreId,
    pub report_period_ms: u64,
    pub recipients: Vec<String>,
}

/// An approved instance of a manifest: the consent record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sla {
    pub sla_id: SlaId,
    pub app_id: AppId,
    pub user_id: UserId,
    pub manifest_hash: String,
    pub grants: Vec<Grant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export: Option<ExportGrant>,
    pub preview_required: bool,
    pub approved_at: Millis,
    pub expires_at: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withdrawn_at: Option<Millis>,
}

impl Sla {
    pub fn is_active(&self) -> bool {
        self.withdrawn_at.is_none()
    }

    pub fn off_box(&self) -> bool {
        self.export.is_some()
    }

    pub fn grant(&self, source: &str) -> Option<&Grant> {
        self.grants.iter().find(|g| g.source == source)
    }

    pub fn store_ids(&self) -> impl Iterator<Item = &StoreId> {
        self.grants
            .iter()
            .map(|g| &g.store_id)
            .chain(self.export.iter().map(|e| &e.store_id))
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("sla serializes")
    }

    #[cfg(test)]
    pub(crate) fn for_tests(sla_id: SlaId, app_id: AppId, approved_at: Millis) -> Self {
        Self {
            sla_id,
            app_id,
            user_id: UserId::new("tester"),
            manifest_hash: String::new(),
            grants: Vec::new(),
            export: None,
            preview_required: false,
            approved_at,
            expires_at: approved_at + DEFAULT_SLA_DURATION_MS,
            withdrawn_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResolveError {
    #[error("manifest invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidManifest(Vec<Violation>),
    #[error("source {0} is not declared by the manifest")]
    UnknownSource(String),
    #[error("mandatory source {0} was deselected")]
    MandatoryDeselected(String),
    #[error("sample period {value} ms for {name} is not one of the offered choices")]
    SamplePeriodNotOffered { name: String, value: u64 },
    #[error("source {0} needs a sample period choice")]
    MissingSamplePeriod(String),
    #[error("report period {0} ms is not one of the offered choices")]
    ReportPeriodNotOffered(u64),
    #[error("off-box app needs a report period choice")]
    MissingReportPeriod,
    #[error("off-box app needs a communications store")]
    MissingCommsStore,
}

/// Platform-side inputs to resolution that the user does not choose.
#[derive(Debug, Clone)]
pub struct ResolveContext {
    pub sla_id: SlaId,
    pub now: Millis,
    pub comms_store: Option<StoreId>,
}

pub fn resolve_choices(
    manifest: &Manifest,
    choices: &UserChoices,
    ctx: &ResolveContext,
) -> Result<Sla, ResolveError> {
    validate_manifest(manifest).map_err(ResolveError::InvalidManifest)?;
    let short = manifest.short.as_ref().expect("validated");
    let condensed = manifest.condensed.as_ref().expect("validated");

    for name in choices.sources.keys() {
        if manifest.source(name).is_none() {
            return Err(ResolveError::UnknownSource(name.clone()));
        }
    }
    let mut grants = Vec::new();
    for declared in &short.sources {
        let Some(choice) = choices.sources.get(&declared.name) else {
            if !declared.optional {
                return Err(ResolveError::MandatoryDeselected(declared.name.clone()));
            }
            continue;
        };
        let sample_period_ms = if declared.wants(Action::Query) {
            let p = choice
                .sample_period_ms
                .ok_or_else(|| ResolveError::MissingSamplePeriod(declared.name.clone()))?;
            if !short.sample_period_choices.contains(&p) {
                return Err(ResolveError::SamplePeriodNotOffered {
                    name: declared.name.clone(),
                    value: p,
                });
            }
            Some(p)
        } else if let Some(p) = choice.sample_period_ms {
            return Err(ResolveError::SamplePeriodNotOffered {
                name: declared.name.clone(),
                value: p,
            });
        } else {
            None
        };
        grants.push(Grant {
            source: declared.name.clone(),
            kind: declared.kind.expect("validated"),
            store_id: choice.store_id.clone(),
            actions: declared.actions.iter().copied().collect(),
            sample_period_ms,
        });
    }

    let export = if short.off_box {
        let p = choices
            .report_period_ms
            .ok_or(ResolveError::MissingReportPeriod)?;
        if !short.report_period_choices.contains(&p) {
            return Err(ResolveError::ReportPeriodNotOffered(p));
        }
        Some(ExportGrant {
            store_id: ctx.comms_store.clone().ok_or(ResolveError::MissingCommsStore)?,
            report_period_ms: p,
            recipients: condensed.recipients.clone(),
        })
    } else {
        if let Some(p) = choices.report_period_ms {
            return Err(ResolveError::ReportPeriodNotOffered(p));
        }
        None
    };

    let duration = short
        .duration_ms
        .map(|d| d as Millis)
        .unwrap_or(DEFAULT_SLA_DURATION_MS);
    Ok(Sla {
        sla_id: ctx.sla_id.clone(),
        app_id: manifest.app_id.clone(),
        user_id: choices.user_id.clone(),
        manifest_hash: manifest.hash(),
        grants,
        preview_required: short.off_box && choices.preview_required.unwrap_or(true),
        export,
        approved_at: ctx.now,
        expires_at: ctx.now.saturating_add(duration),
        withdrawn_at: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("SLA {0} has been withdrawn")]
    Withdrawn(SlaId),
}

/// One policy per source grant, plus the export-stage policy for off-box agreements.
pub fn compile(sla: &Sla) -> Result<Vec<Policy>, CompileError> {
    if !sla.is_active() {
        return Err(CompileError::Withdrawn(sla.sla_id.clone()));
    }
    let mut out: Vec<Policy> = sla
        .grants
        .iter()
        .enumerate()
        .map(|(i, g)| Policy {
            policy_id: PolicyId::new(format!("{}/p{}", sla.sla_id, i)),
            sla_id: sla.sla_id.clone(),
            app_id: sla.app_id.clone(),
            store_id: g.store_id.clone(),
            actions: g.actions.clone(),
            max_sample_period_ms: g.sample_period_ms.unwrap_or(0),
            max_report_period_ms: None,
            expiry: sla.expires_at,
            revoked: false,
        })
        .collect();
    if let Some(e) = &sla.export {
        out.push(Policy {
            policy_id: PolicyId::new(format!("{}/export", sla.sla_id)),
            sla_id: sla.sla_id.clone(),
            app_id: sla.app_id.clone(),
            store_id: e.store_id.clone(),
            actions: [Action::ExportStage].into_iter().collect(),
            max_sample_period_ms: 0,
            max_report_period_ms: Some(e.report_period_ms),
            expiry: sla.expires_at,
            revoked: false,
        });
    }
    Ok(out)
}

/// Downloadable, MAC-signed copy of an agreement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaReceipt {
    pub sla: Sla,
    pub signature: String,
}

impl SlaReceipt {
    pub fn sign(sla: &Sla, key: &[u8]) -> Self {
        Self {
            sla: sla.clone(),
            signature: hex::encode(crypto::hmac(key, &sla.canonical_bytes())),
        }
    }

    pub fn verify(&self, key: &[u8]) -> bool {
        hex::decode(&self.signature)
            .map(|sig| crypto::hmac_verify(key, &self.sla.canonical_bytes(), &sig))
            .unwrap_or(false)
    }
}
