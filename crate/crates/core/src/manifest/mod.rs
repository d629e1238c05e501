//! Manifests, consent resolution and policy compilation.
//!
//! A manifest is validated, configured by a user into an [`Sla`], and the
//! SLA is compiled into arbiter [`Policy`](crate::arbiter::Policy) values.
//! The engine keeps the approval state; enforcement state lives in the arbiter.

mod document;
mod sla;
mod validate;

pub use document::{
    CondensedLayer, DeclaredSource, LegalLayer, Manifest, ManifestParseError, ShortLayer,
    MANIFEST_FORMAT,
};
pub use sla::{
    compile, resolve_choices, CompileError, ExportGrant, Grant, ResolveContext, ResolveError,
    Sla, SlaReceipt, SourceChoice, UserChoices, DEFAULT_SLA_DURATION_MS,
};
pub use validate::{validate_manifest, violations, Violation, ViolationCode};

use crate::ids::{Millis, SlaId, StoreId};
use parking_lot::RwLock;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WithdrawOutcome {
    Withdrawn(Sla),
    AlreadyWithdrawn(Sla),
    Unknown,
}

pub struct ManifestEngine {
    receipt_key: [u8; 32],
    slas: RwLock<BTreeMap<SlaId, Sla>>,
    next_sla: RwLock<u64>,
}

impl ManifestEngine {
    pub fn new(receipt_key: [u8; 32]) -> Self {
        Self {
            receipt_key,
            slas: RwLock::new(BTreeMap::new()),
            next_sla: RwLock::new(0),
        }
    }

    pub fn next_sla_id(&self) -> SlaId {
        let mut n = self.next_sla.write();
        *n += 1;
        SlaId::new(format!("sla-{:04}", *n))
    }

    /// Resolves the user's choices and records the resulting agreement as approved.
    pub fn approve(
        &self,
        manifest: &Manifest,
        choices: &UserChoices,
        now: Millis,
        comms_store: Option<StoreId>,
    ) -> Result<Sla, ResolveError> {
        let ctx = ResolveContext {
            sla_id: self.next_sla_id(),
            now,
            comms_store,
        };
        let sla = resolve_choices(manifest, choices, &ctx)?;
        self.slas.write().insert(sla.sla_id.clone(), sla.clone());
        Ok(sla)
    }

    pub fn get(&self, id: &SlaId) -> Option<Sla> {
        self.slas.read().get(id).cloned()
    }

    pub fn all(&self) -> Vec<Sla> {
        self.slas.read().values().cloned().collect()
    }

    /// Marks the agreement withdrawn. Idempotent; the caller revokes and stops the app.
    pub fn withdraw(&self, id: &SlaId, now: Millis) -> WithdrawOutcome {
        let mut slas = self.slas.write();
        match slas.get_mut(id) {
            None => WithdrawOutcome::Unknown,
            Some(s) if s.withdrawn_at.is_some() => WithdrawOutcome::AlreadyWithdrawn(s.clone()),
            Some(s) => {
                s.withdrawn_at = Some(now.max(s.approved_at));
                WithdrawOutcome::Withdrawn(s.clone())
            }
        }
    }

    pub fn receipt(&self, id: &SlaId) -> Option<SlaReceipt> {
        self.get(id).map(|s| SlaReceipt::sign(&s, &self.receipt_key))
    }

    pub fn verify_receipt(&self, receipt: &SlaReceipt) -> bool {
        receipt.verify(&self.receipt_key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbiter::Action;
    use crate::demo;
    use crate::ids::UserId;

    fn choices(period: u64) -> UserChoices {
        let mut sources = BTreeMap::new();
        for (name, store) in [
            ("energy", "store-energy"),
            ("door", "store-door"),
            ("alarm", "store-alarm"),
            ("presence", "store-presence"),
        ] {
            sources.insert(
                name.to_string(),
                SourceChoice {
                    store_id: StoreId::new(store),
                    sample_period_ms: Some(period),
                },
            );
        }
        UserChoices {
            user_id: UserId::new("alice"),
            sources,
            report_period_ms: Some(demo::OCCUPANCY_REPORT_PERIODS[0]),
            preview_required: None,
        }
    }

    fn ctx() -> ResolveContext {
        ResolveContext {
            sla_id: SlaId::new("sla-1"),
            now: 1_000,
            comms_store: Some(StoreId::new("comms-occupancy-demo")),
        }
    }

    #[test]
    fn demo_manifests_validate() {
        assert_eq!(violations(&demo::occupancy_package().manifest.unwrap()), vec![]);
        assert_eq!(violations(&demo::sound_lights_package().manifest.unwrap()), vec![]);
    }

    #[test]
    fn off_box_without_recipients_is_flagged() {
        let mut m = demo::occupancy_package().manifest.unwrap();
        m.condensed.as_mut().unwrap().recipients.clear();
        let codes: Vec<_> = violations(&m).into_iter().map(|v| v.code).collect();
        assert_eq!(codes, vec![ViolationCode::RecipientsMissing]);
    }

    #[test]
    fn missing_legal_layer_is_flagged() {
        let mut m = demo::occupancy_package().manifest.unwrap();
        m.legal = None;
        let v = violations(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::LayerMissing);
        assert_eq!(v[0].path, "legal");
    }

    #[test]
    fn chosen_period_is_carried() {
        let m = demo::occupancy_package().manifest.unwrap();
        let sla = resolve_choices(&m, &choices(60_000), &ctx()).unwrap();
        assert!(sla.grants.iter().all(|g| g.sample_period_ms == Some(60_000)));
        assert!(sla.preview_required);
        assert_eq!(sla.expires_at, 1_000 + DEFAULT_SLA_DURATION_MS);
    }

    #[test]
    fn unoffered_period_is_rejected() {
        let m = demo::occupancy_package().manifest.unwrap();
        assert!(matches!(
            resolve_choices(&m, &choices(5_000), &ctx()),
            Err(ResolveError::SamplePeriodNotOffered { value: 5_000, .. })
        ));
    }

    #[test]
    fn mandatory_source_cannot_be_dropped() {
        let m = demo::occupancy_package().manifest.unwrap();
        let mut c = choices(60_000);
        c.sources.remove("door");
        assert_eq!(
            resolve_choices(&m, &c, &ctx()),
            Err(ResolveError::MandatoryDeselected("door".into()))
        );
    }

    #[test]
    fn optional_source_deselected_yields_no_grant() {
        let m = demo::sound_lights_package().manifest.unwrap();
        let c = demo::sound_lights_choices(UserId::new("alice"), false);
        let sla = resolve_choices(&m, &c, &ctx()).unwrap();
        assert!(sla.grant("microphone").is_some());
        assert!(sla.grant("kitchen-mic").is_none());
    }

    #[test]
    fn compile_adds_export_policy_only_when_off_box() {
        let m = demo::occupancy_package().manifest.unwrap();
        let sla = resolve_choices(&m, &choices(60_000), &ctx()).unwrap();
        let ps = compile(&sla).unwrap();
        assert_eq!(ps.len(), 5);
        let exporters: Vec<_> = ps
            .iter()
            .filter(|p| p.actions.contains(&Action::ExportStage))
            .collect();
        assert_eq!(exporters.len(), 1);
        assert_eq!(exporters[0].store_id, StoreId::new("comms-occupancy-demo"));

        let mut on_box = m.clone();
        let short = on_box.short.as_mut().unwrap();
        short.off_box = false;
        short.report_period_choices.clear();
        let mut c = choices(60_000);
        c.report_period_ms = None;
        let sla = resolve_choices(&on_box, &c, &ctx()).unwrap();
        assert!(!sla.preview_required);
        let ps = compile(&sla).unwrap();
        assert_eq!(ps.len(), 4);
        assert!(ps.iter().all(|p| !p.actions.contains(&Action::ExportStage)));
    }

    #[test]
    fn withdrawal_is_idempotent_and_blocks_compile() {
        let engine = ManifestEngine::new([3; 32]);
        let m = demo::occupancy_package().manifest.unwrap();
        let sla = engine
            .approve(&m, &choices(60_000), 10, Some(StoreId::new("comms")))
            .unwrap();
        assert!(matches!(engine.withdraw(&sla.sla_id, 20), WithdrawOutcome::Withdrawn(_)));
        let again = engine.withdraw(&sla.sla_id, 30);
        let WithdrawOutcome::AlreadyWithdrawn(s) = again else {
            panic!("expected terminal state")
        };
        assert_eq!(s.withdrawn_at, Some(20));
        assert_eq!(engine.withdraw(&SlaId::new("nope"), 1), WithdrawOutcome::Unknown);
        assert!(compile(&s).is_err());
    }

    #[test]
    fn receipt_signature_detects_edits() {
        let engine = ManifestEngine::new([3; 32]);
        let m = demo::occupancy_package().manifest.unwrap();
        let sla = engine
            .approve(&m, &choices(60_000), 10, Some(StoreId::new("comms")))
            .unwrap();
        let mut r = engine.receipt(&sla.sla_id).unwrap();
        assert!(engine.verify_receipt(&r));
        r.sla.grants[0].sample_period_ms = Some(1);
        assert!(!engine.verify_receipt(&r));
    }

    #[test]
    fn manifest_toml_round_trip_preserves_hash() {
        let m = demo::occupancy_package().manifest.unwrap();
        let back = Manifest::parse(&m.to_toml()).unwrap();
        assert_eq!(back.hash(), m.hash());
    }
}
