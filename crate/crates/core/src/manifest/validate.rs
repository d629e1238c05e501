use super::document::{Manifest, MANIFEST_FORMAT};
use crate::arbiter::Action;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    #[serde(rename = "FORMAT-UNSUPPORTED")]
    FormatUnsupported,
    #[serde(rename = "APP-ID-MISSING")]
    AppIdMissing,
    #[serde(rename = "LAYER-MISSING")]
    LayerMissing,
    #[serde(rename = "PURPOSE-MISSING")]
    PurposeMissing,
    #[serde(rename = "SOURCES-MISSING")]
    SourcesMissing,
    #[serde(rename = "SOURCE-NAME-DUPLICATE")]
    SourceNameDuplicate,
    #[serde(rename = "SOURCE-KIND-MISSING")]
    SourceKindMissing,
    #[serde(rename = "SOURCE-ACTIONS-MISSING")]
    SourceActionsMissing,
    #[serde(rename = "SOURCE-ACTION-INVALID")]
    SourceActionInvalid,
    #[serde(rename = "SAMPLE-CHOICES-MISSING")]
    SampleChoicesMissing,
    #[serde(rename = "REPORT-CHOICES-MISSING")]
    ReportChoicesMissing,
    #[serde(rename = "PERIOD-INVALID")]
    PeriodInvalid,
    #[serde(rename = "ART13-CONTROLLER-MISSING")]
    ControllerMissing,
    #[serde(rename = "ART13-PURPOSES-MISSING")]
    PurposesMissing,
    #[serde(rename = "ART13-LEGAL-BASIS-INVALID")]
    LegalBasisInvalid,
    #[serde(rename = "ART13-RECIPIENTS-MISSING")]
    RecipientsMissing,
    #[serde(rename = "ART13-COUNTRIES-MISSING")]
    CountriesMissing,
    #[serde(rename = "ART13-TRANSFER-NOTE-MISSING")]
    TransferNoteMissing,
    #[serde(rename = "ART13-RETENTION-MISSING")]
    RetentionMissing,
    #[serde(rename = "ART13-RIGHTS-MISSING")]
    RightsMissing,
    #[serde(rename = "ART13-WITHDRAWAL-MISSING")]
    WithdrawalMissing,
    #[serde(rename = "LEGAL-TERMS-MISSING")]
    LegalTermsMissing,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        use ViolationCode::*;
        match self {
            FormatUnsupported => "FORMAT-UNSUPPORTED",
            AppIdMissing => "APP-ID-MISSING",
            LayerMissing => "LAYER-MISSING",
            PurposeMissing => "PURPOSE-MISSING",
            SourcesMissing => "SOURCES-MISSING",
            SourceNameDuplicate => "SOURCE-NAME-DUPLICATE",
            SourceKindMissing => "SOURCE-KIND-MISSING",
            SourceActionsMissing => "SOURCE-ACTIONS-MISSING",
            SourceActionInvalid => "SOURCE-ACTION-INVALID",
            SampleChoicesMissing => "SAMPLE-CHOICES-MISSING",
            ReportChoicesMissing => "REPORT-CHOICES-MISSING",
            PeriodInvalid => "PERIOD-INVALID",
            ControllerMissing => "ART13-CONTROLLER-MISSING",
            PurposesMissing => "ART13-PURPOSES-MISSING",
            LegalBasisInvalid => "ART13-LEGAL-BASIS-INVALID",
            RecipientsMissing => "ART13-RECIPIENTS-MISSING",
            CountriesMissing => "ART13-COUNTRIES-MISSING",
            TransferNoteMissing => "ART13-TRANSFER-NOTE-MISSING",
            RetentionMissing => "ART13-RETENTION-MISSING",
            RightsMissing => "ART13-RIGHTS-MISSING",
            WithdrawalMissing => "ART13-WITHDRAWAL-MISSING",
            LegalTermsMissing => "LEGAL-TERMS-MISSING",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Dotted path of the offending field.
    pub path: String,
}

impl Violation {
    fn new(code: ViolationCode, path: impl Into<String>) -> Self {
        Self {
            code,
            path: path.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.code, self.path)
    }
}

fn blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Returns every violation found; an empty list means the manifest is valid.
pub fn violations(m: &Manifest) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();
    if m.format != MANIFEST_FORMAT {
        out.push(Violation::new(FormatUnsupported, "format"));
    }
    if blank(m.app_id.as_str()) {
        out.push(Violation::new(AppIdMissing, "app_id"));
    }

    let off_box = m.off_box();
    match &m.short {
        None => out.push(Violation::new(LayerMissing, "short")),
        Some(s) => {
            if blank(&s.purpose) {
                out.push(Violation::new(PurposeMissing, "short.purpose"));
            }
            if s.sources.is_empty() {
                out.push(Violation::new(SourcesMissing, "short.sources"));
            }
            let mut seen = BTreeSet::new();
            for (i, src) in s.sources.iter().enumerate() {
                let path = format!("short.sources[{i}]");
                if !seen.insert(src.name.as_str()) || blank(&src.name) {
                    out.push(Violation::new(SourceNameDuplicate, format!("{path}.name")));
                }
                if src.kind.is_none() {
                    out.push(Violation::new(SourceKindMissing, format!("{path}.kind")));
                }
                if src.actions.is_empty() {
                    out.push(Violation::new(SourceActionsMissing, format!("{path}.actions")));
                }
                if src.wants(Action::ExportStage) {
                    out.push(Violation::new(SourceActionInvalid, format!("{path}.actions")));
                }
            }
            let queries = s.sources.iter().any(|src| src.wants(Action::Query));
            if queries && s.sample_period_choices.is_empty() {
                out.push(Violation::new(SampleChoicesMissing, "short.sample_period_choices"));
            }
            if off_box && s.report_period_choices.is_empty() {
                out.push(Violation::new(ReportChoicesMissing, "short.report_period_choices"));
            }
            if s.sample_period_choices.contains(&0) {
                out.push(Violation::new(PeriodInvalid, "short.sample_period_choices"));
            }
            if s.report_period_choices.contains(&0) {
                out.push(Violation::new(PeriodInvalid, "short.report_period_choices"));
            }
        }
    }

    match &m.condensed {
        None => out.push(Violation::new(LayerMissing, "condensed")),
        Some(c) => {
            if blank(&c.controller) {
                out.push(Violation::new(ControllerMissing, "condensed.controller"));
            }
            if c.purposes.iter().all(|p| blank(p)) {
                out.push(Violation::new(PurposesMissing, "condensed.purposes"));
            }
            if c.legal_basis.trim() != "consent" {
                out.push(Violation::new(LegalBasisInvalid, "condensed.legal_basis"));
            }
            if off_box {
                if c.recipients.iter().all(|r| blank(r)) {
                    out.push(Violation::new(RecipientsMissing, "condensed.recipients"));
                }
                if c.recipient_countries.iter().all(|r| blank(r)) {
                    out.push(Violation::new(CountriesMissing, "condensed.recipient_countries"));
                }
                if blank(&c.transfer_note) {
                    out.push(Violation::new(TransferNoteMissing, "condensed.transfer_note"));
                }
            }
            if blank(&c.retention) {
                out.push(Violation::new(RetentionMissing, "condensed.retention"));
            }
            if blank(&c.rights) {
                out.push(Violation::new(RightsMissing, "condensed.rights"));
            }
            if blank(&c.withdrawal) {
                out.push(Violation::new(WithdrawalMissing, "condensed.withdrawal"));
            }
        }
    }

    match &m.legal {
        None => out.push(Violation::new(LayerMissing, "legal")),
        Some(l) if blank(&l.terms) => out.push(Violation::new(LegalTermsMissing, "legal.terms")),
        Some(_) => {}
    }
    out
}

pub fn validate_manifest(m: &Manifest) -> Result<(), Vec<Violation>> {
    let v = violations(m);
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
