//! Node risk spectra, app risk aggregation and accreditation.
//!
//! Every node kind has a spectrum `[min, max]`. A node starts at `min`, each
//! triggered reason adds its delta, and the result is clamped to the spectrum.
//! Each reason is attributed to one factor (legal, technical, social); a factor's
//! level is the maximum level among the nodes carrying a reason for it, and the
//! overall level is the maximum factor. Nodes without a registered spectrum are
//! rated high as unverified code.
//!
//! Levels, deltas and attributions come from a versioned table shipped with the
//! crate (`risk_table.toml`) and can be replaced at runtime with
//! [`RiskTable::parse`].

use crate::ids::NodeId;
use crate::manifest::Manifest;
use crate::runtime::{Flow, FlowNode, FunctionRegistry, NodeKind};
use crate::store::SourceKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Level {
    #[default]
    None,
    Low,
    Medium,
    High,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::None, Level::Low, Level::Medium, Level::High];

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    fn from_clamped(x: i32) -> Level {
        Level::ALL[x.clamp(0, 3) as usize]
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Level {
    type Error = String;

    fn try_from(x: u8) -> Result<Self, String> {
        Level::ALL
            .get(x as usize)
            .copied()
            .ok_or_else(|| format!("risk level {x} out of range 0..=3"))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::None => "none",
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factor {
    Legal,
    Technical,
    Social,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Legal, Factor::Technical, Factor::Social];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonRule {
    pub factor: Factor,
    pub delta: i32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskTable {
    pub version: u32,
    pub high_rate_ms: u64,
    #[serde(default)]
    pub sensitive_kinds: Vec<SourceKind>,
    #[serde(default)]
    pub essential_kinds: Vec<SourceKind>,
    pub spectra: BTreeMap<String, (Level, Level)>,
    pub reasons: BTreeMap<String, ReasonRule>,
}

pub const REASON_CODES: [&str; 15] = [
    "SOURCE-ACCESS",
    "HIGH-DATA-RATE",
    "SENSITIVE-CATEGORY",
    "ON-BOX-PROCESSING",
    "RAW-PASS-THROUGH",
    "ON-BOX-DISPLAY",
    "ACTUATION",
    "ESSENTIAL-ACTUATION",
    "DERIVED-DATA",
    "OFF-BOX",
    "NON-EU-RECIPIENT",
    "NO-ACCESS-API",
    "MULTIPLE-RECIPIENTS",
    "UNVERIFIED-NODE",
    "UNVERIFIED-PACKAGE",
];

pub const NODE_KINDS: [&str; 6] = [
    "source",
    "process",
    "visualisation",
    "actuation",
    "export",
    "derived-store",
];

#[derive(Debug, thiserror::Error)]
pub enum RiskTableError {
    #[error("risk table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("risk table lacks reason {0}")]
    MissingReason(&'static str),
    #[error("risk table lacks a spectrum for {0}")]
    MissingSpectrum(&'static str),
    #[error("spectrum for {0} has min above max")]
    InvertedSpectrum(String),
}

impl RiskTable {
    pub fn parse(text: &str) -> Result<Self, RiskTableError> {
        let t: RiskTable = toml::from_str(text)?;
        for code in REASON_CODES {
            if !t.reasons.contains_key(code) {
                return Err(RiskTableError::MissingReason(code));
            }
        }
        for kind in NODE_KINDS {
            if !t.spectra.contains_key(kind) {
                return Err(RiskTableError::MissingSpectrum(kind));
            }
        }
        if let Some((k, _)) = t.spectra.iter().find(|(_, (lo, hi))| lo > hi) {
            return Err(RiskTableError::InvertedSpectrum(k.clone()));
        }
        Ok(t)
    }

    pub fn builtin() -> &'static RiskTable {
        static TABLE: OnceLock<RiskTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            RiskTable::parse(include_str!("risk_table.toml")).expect("shipped risk table is valid")
        })
    }

    fn reason(&self, code: &str, node: Option<&NodeId>) -> Reason {
        let rule = &self.reasons[code];
        Reason {
            code: code.to_string(),
            factor: rule.factor,
            text: rule.text.clone(),
            node: node.cloned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reason {
    pub code: String,
    pub factor: Factor,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRating {
    pub node: NodeId,
    pub kind: String,
    pub level: Level,
    /// `None` for unregistered kinds, which are rated high.
    pub spectrum: Option<(Level, Level)>,
    pub reasons: Vec<Reason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FactorRating {
    pub level: Level,
    pub reasons: Vec<Reason>,
}

/// Machine-readable risk report for an app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskRating {
    pub overall: Level,
    pub legal: FactorRating,
    pub technical: FactorRating,
    pub social: FactorRating,
    pub accredited: bool,
    pub verified: bool,
    /// Shields shown at a glance; one per overall level step.
    pub shields: u8,
    pub nodes: Vec<NodeRating>,
    pub package_reasons: Vec<Reason>,
    pub table_version: u32,
}

impl RiskRating {
    pub fn factor(&self, f: Factor) -> &FactorRating {
        match f {
            Factor::Legal => &self.legal,
            Factor::Technical => &self.technical,
            Factor::Social => &self.social,
        }
    }

    pub fn reason_codes(&self) -> Vec<&str> {
        let mut codes: Vec<&str> = self
            .nodes
            .iter()
            .flat_map(|n| n.reasons.iter())
            .chain(&self.package_reasons)
            .map(|r| r.code.as_str())
            .collect();
        codes.sort();
        codes.dedup();
        codes
    }

    /// Plain-text rendering of the report.
    pub fn report_text(&self) -> String {
        let mut out = format!(
            "overall: {} ({} shields){}\n",
            self.overall,
            self.shields,
            if self.accredited { ", accredited" } else { ", not accredited" }
        );
        for f in Factor::ALL {
            let r = self.factor(f);
            out.push_str(&format!("{f:?}: {}\n", r.level).to_lowercase());
            for reason in &r.reasons {
                let node = reason.node.as_ref().map(|n| format!(" [{n}]")).unwrap_or_default();
                out.push_str(&format!("  {}{}: {}\n", reason.code, node, reason.text));
            }
        }
        out
    }
}

/// Inputs besides the node itself that its rating depends on.
#[derive(Clone, Copy)]
pub struct RiskContext<'a> {
    pub manifest: &'a Manifest,
    pub registry: &'a FunctionRegistry,
    pub table: &'a RiskTable,
}

impl<'a> RiskContext<'a> {
    pub fn new(manifest: &'a Manifest) -> Self {
        Self {
            manifest,
            registry: crate::runtime::builtin_registry(),
            table: RiskTable::builtin(),
        }
    }
}

pub fn node_risk(node: &FlowNode, ctx: &RiskContext<'_>) -> NodeRating {
    let t = ctx.table;
    let id = Some(&node.id);
    let kind_name = node.kind.name();
    let unverified = |kind: String| NodeRating {
        node: node.id.clone(),
        kind,
        level: Level::High,
        spectrum: None,
        reasons: vec![t.reason("UNVERIFIED-NODE", id)],
    };
    let short = ctx.manifest.short.as_ref();
    let mut codes: Vec<&str> = Vec::new();
    match &node.kind {
        NodeKind::Source { source } => {
            let Some(declared) = ctx.manifest.source(source) else {
                return unverified(format!("source:{source}"));
            };
            codes.push("SOURCE-ACCESS");
            let min_period = short.and_then(|s| s.sample_period_choices.iter().min().copied());
            if min_period.is_some_and(|p| p < t.high_rate_ms) {
                codes.push("HIGH-DATA-RATE");
            }
            if declared.kind.is_some_and(|k| t.sensitive_kinds.contains(&k)) {
                codes.push("SENSITIVE-CATEGORY");
            }
        }
        NodeKind::Process { function, .. } => {
            if !ctx.registry.contains(function) {
                return unverified(format!("process:{function}"));
            }
            codes.push("ON-BOX-PROCESSING");
            if function == crate::runtime::PASS_THROUGH {
                codes.push("RAW-PASS-THROUGH");
            }
        }
        NodeKind::Visualisation { .. } => codes.push("ON-BOX-DISPLAY"),
        NodeKind::Actuation { source, .. } => {
            codes.push("ACTUATION");
            let kind = ctx.manifest.source(source).and_then(|s| s.kind);
            if kind.is_some_and(|k| t.essential_kinds.contains(&k)) {
                codes.push("ESSENTIAL-ACTUATION");
            }
        }
        NodeKind::DerivedStore { .. } => codes.push("DERIVED-DATA"),
        NodeKind::Export { .. } => {
            codes.push("OFF-BOX");
            let condensed = ctx.manifest.condensed.as_ref();
            if condensed.is_some_and(|c| c.outside_eu_recipients) {
                codes.push("NON-EU-RECIPIENT");
            }
            if short.is_none_or(|s| s.online_access_url.as_deref().is_none_or(str::is_empty)) {
                codes.push("NO-ACCESS-API");
            }
            if condensed.is_some_and(|c| c.recipients.len() > 1) {
                codes.push("MULTIPLE-RECIPIENTS");
            }
        }
    }
    let Some(&(lo, hi)) = t.spectra.get(kind_name) else {
        return unverified(kind_name.to_string());
    };
    let raw = lo as i32 + codes.iter().map(|c| t.reasons[*c].delta).sum::<i32>();
    let level = Level::from_clamped(raw).clamp(lo, hi);
    NodeRating {
        node: node.id.clone(),
        kind: kind_name.to_string(),
        level,
        spectrum: Some((lo, hi)),
        reasons: codes.iter().map(|c| t.reason(c, id)).collect(),
    }
}

/// Aggregates node ratings by maximum per factor.
pub fn app_risk(flow: &Flow, manifest: &Manifest, verified: bool) -> RiskRating {
    app_risk_with(flow, verified, &RiskContext::new(manifest))
}

pub fn app_risk_with(flow: &Flow, verified: bool, ctx: &RiskContext<'_>) -> RiskRating {
    let nodes: Vec<NodeRating> = flow.nodes.iter().map(|n| node_risk(n, ctx)).collect();
    let package_reasons = if verified {
        Vec::new()
    } else {
        vec![ctx.table.reason("UNVERIFIED-PACKAGE", None)]
    };
    let mut factors: BTreeMap<Factor, FactorRating> =
        Factor::ALL.iter().map(|f| (*f, FactorRating::default())).collect();
    let contributions = nodes
        .iter()
        .flat_map(|n| n.reasons.iter().map(move |r| (n.level, r)))
        .chain(package_reasons.iter().map(|r| (Level::High, r)));
    for (level, reason) in contributions {
        let f = factors.get_mut(&reason.factor).expect("all factors present");
        f.level = f.level.max(level);
        f.reasons.push(reason.clone());
    }
    let overall = factors.values().map(|f| f.level).max().unwrap_or_default();
    let mut take = |f| factors.remove(&f).expect("all factors present");
    let unverified_nodes = nodes.iter().any(|n| n.spectrum.is_none());
    RiskRating {
        overall,
        legal: take(Factor::Legal),
        technical: take(Factor::Technical),
        social: take(Factor::Social),
        accredited: accredited(flow, ctx.manifest, verified, unverified_nodes),
        verified,
        shields: overall.as_u8(),
        nodes,
        package_reasons,
        table_version: ctx.table.version,
    }
}

fn accredited(flow: &Flow, manifest: &Manifest, verified: bool, unverified_nodes: bool) -> bool {
    !flow.has_export() && !manifest.off_box() && verified && !unverified_nodes
}

/// True iff the app provably keeps data on the box: no export node, an on-box
/// manifest, SDK-verified, and every node registered.
pub fn accredit(flow: &Flow, manifest: &Manifest, verified: bool) -> bool {
    let ctx = RiskContext::new(manifest);
    let unverified_nodes = flow.nodes.iter().any(|n| node_risk(n, &ctx).spectrum.is_none());
    accredited(flow, manifest, verified, unverified_nodes)
}

#[cfg(test)]
mod tests;
