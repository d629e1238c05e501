//! The three-layer manifest document and its canonical form.

use crate::arbiter::Action;
use crate::crypto;
use crate::ids::AppId;
use crate::store::SourceKind;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_format")]
    pub format: u32,
    pub app_id: AppId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short: Option<ShortLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condensed: Option<CondensedLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legal: Option<LegalLayer>,
}

fn default_format() -> u32 {
    MANIFEST_FORMAT
}

/// Plain-language purpose, app information and the user-configurable choices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShortLayer {
    #[serde(default)]
    pub purpose: String,
    #[serde(default)]
    pub risk_summary: String,
    #[serde(default)]
    pub sources: Vec<DeclaredSource>,
    #[serde(default)]
    pub sample_period_choices: Vec<u64>,
    #[serde(default)]
    pub report_period_choices: Vec<u64>,
    #[serde(default)]
    pub off_box: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online_access_url: Option<String>,
    /// Agreement lifetime; the platform default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    /// Declares a raw pass-through process, allowing unprocessed rows to be exported.
    #[serde(default)]
    pub raw_pass_through: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredSource {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SourceKind>,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub optional: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl DeclaredSource {
    pub fn wants(&self, action: Action) -> bool {
        self.actions.contains(&action)
    }
}

/// The information a controller must furnish at collection time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CondensedLayer {
    #[serde(default)]
    pub controller: String,
    #[serde(default)]
    pub purposes: Vec<String>,
    #[serde(default)]
    pub legal_basis: String,
    #[serde(default)]
    pub recipients: Vec<String>,
    #[serde(default)]
    pub recipient_countries: Vec<String>,
    #[serde(default)]
    pub outside_eu_recipients: bool,
    /// Adequacy decision or safeguard relied on for transfers.
    #[serde(default)]
    pub transfer_note: String,
    #[serde(default)]
    pub retention: String,
    #[serde(default)]
    pub rights: String,
    #[serde(default)]
    pub withdrawal: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LegalLayer {
    #[serde(default)]
    pub terms: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestParseError {
    #[error("manifest TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Manifest {
    /// Parses TOML or JSON (detected by a leading `{`).
    pub fn parse(text: &str) -> Result<Self, ManifestParseError> {
        if text.trim_start().starts_with('{') {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(toml::from_str(text)?)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest is TOML-representable")
    }

    /// Canonical bytes: compact JSON in declaration order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("manifest serializes")
    }

    pub fn hash(&self) -> String {
        crypto::sha256_hex(&self.canonical_bytes())
    }

    pub fn off_box(&self) -> bool {
        self.short.as_ref().is_some_and(|s| s.off_box)
    }

    pub fn sources(&self) -> &[DeclaredSource] {
        self.short.as_ref().map(|s| s.sources.as_slice()).unwrap_or(&[])
    }

    pub fn source(&self, name: &str) -> Option<&DeclaredSource> {
        self.sources().iter().find(|s| s.name == name)
    }

    pub fn mandatory_kinds(&self) -> Vec<SourceKind> {
        self.sources()
            .iter()
            .filter(|s| !s.optional)
            .filter_map(|s| s.kind)
            .collect()
    }
}
