use super::*;
use crate::accounts::Role;
use crate::arbiter::RevokeScope;
use crate::demo;
use crate::ids::{DAY_MS, HOUR_MS, MINUTE_MS};
use crate::platform::{Databox, PlatformConfig};
use crate::sim::SimProfile;
use crate::store::{AuditAction, Principal};

const T0: Millis = 1_700_000_000_000;

fn alice() -> UserId {
    UserId::new("alice")
}

fn sound_box() -> (Databox, AppId) {
    let b = Databox::new(PlatformConfig::virtual_at(42, T0)).unwrap();
    b.create_account(None, "alice", Role::Owner).unwrap();
    let mic = b
        .add_source(&[alice()], "microphone", SourceKind::MicrophoneLevel, "living room")
        .unwrap();
    b.add_source(&[alice()], "bulb-1", SourceKind::Bulb, "lamp").unwrap();
    b.add_source(&[alice()], "bulb-2", SourceKind::Bulb, "hall").unwrap();
    b.start_driver(&mic, SimProfile::new(SourceKind::MicrophoneLevel, 1).with_cadence(5_000))
        .unwrap();
    b.publish(demo::sound_lights_package()).unwrap();
    let app = AppId::new(demo::SOUND_LIGHTS);
    b.install(&app, &demo::sound_lights_choices(alice(), false)).unwrap();
    (b, app)
}

#[test]
fn one_run_touches_every_node_in_topological_order() {
    let (b, app) = sound_box();
    let reports = b.advance_to(T0 + MINUTE_MS).unwrap();
    let (_, r) = &reports[0];
    assert_eq!(r.run_id.as_ref().unwrap().as_str(), "sound-lights/run-000001");
    assert_eq!((r.queries, r.actuations, r.derived_appends, r.staged), (1, 2, 1, 1));
    let trace = b.runtime().latest_trace(&app).unwrap();
    assert_eq!(trace.entries.len(), 9);
    let flow = demo::sound_lights_package().flow;
    let order = flow.validate().unwrap();
    assert!(trace.node_ids().into_iter().eq(order.iter()));
    assert_eq!(trace.entries[0].rows, Some(12));
}

#[test]
fn sources_wait_for_their_sample_period() {
    let (b, app) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let r = b.runtime().tick(&app, T0 + MINUTE_MS + 30_000).unwrap();
    assert_eq!(r.run_id, None);
    assert_eq!(r.queries, 0);
    let r = b.runtime().tick(&app, T0 + 2 * MINUTE_MS).unwrap();
    assert_eq!(r.queries, 1);
    assert_eq!(b.runtime().runs(&app).len(), 2);
}

#[test]
fn consecutive_windows_do_not_overlap() {
    let (b, app) = sound_box();
    for i in 1..=5 {
        b.advance_to(T0 + i * MINUTE_MS).unwrap();
    }
    let rows: usize = b
        .runtime()
        .traces(&app)
        .iter()
        .map(|t| t.entries[0].rows.unwrap())
        .sum();
    assert_eq!(rows, 60);
}

#[test]
fn exports_inside_the_report_period_are_deferred() {
    let (b, _) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let reports = b.advance_to(T0 + 2 * MINUTE_MS).unwrap();
    assert_eq!(reports[0].1.deferred, 1);
    let reports = b.run_until(T0 + 11 * MINUTE_MS, MINUTE_MS).unwrap();
    assert_eq!(reports.iter().map(|(_, r)| r.staged).sum::<usize>(), 1);
    assert_eq!(b.export_items().len(), 2);
}

#[test]
fn preview_then_approve_dispatches_exact_payload() {
    let (b, _) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let item = b.exports_for(&alice()).pop().unwrap();
    assert_eq!(item.state, ExportState::Staged);
    assert_eq!(b.notifier().count(NotificationKind::ExportPreview), 1);
    assert!(b.receipts().is_empty());
    let doc: ExportPayload = serde_json::from_str(&item.payload).unwrap();
    assert_eq!(doc.schema, EXPORT_SCHEMA);
    assert!(matches!(doc.result, Datum::Scalar { .. }));

    let s = b.decide_export(&item.item_id, ExportDecision::Approve, &alice()).unwrap();
    assert_eq!(s, ExportState::Dispatched);
    let receipts = b.receipts();
    assert_eq!(receipts.len(), 1);
    assert_eq!(receipts[0].payload, item.payload);
    let again = b.decide_export(&item.item_id, ExportDecision::Deny, &alice()).unwrap();
    assert_eq!(again, ExportState::Dispatched);
    let comms = &item.comms_store;
    let actions: Vec<AuditAction> = b
        .audit(comms, &Principal::Auditor, None)
        .unwrap()
        .iter()
        .map(|r| r.action)
        .collect();
    assert_eq!(actions, [AuditAction::ExportStaged, AuditAction::ExportApproved, AuditAction::Export]);
}

#[test]
fn strangers_cannot_decide() {
    let (b, _) = sound_box();
    b.create_account(Some(&alice()), "bob", Role::Member).unwrap();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let item = b.export_items().pop().unwrap();
    assert!(b
        .decide_export(&item.item_id, ExportDecision::Approve, &UserId::new("bob"))
        .is_err());
}

#[test]
fn denied_exports_never_leave() {
    let (b, _) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let item = b.export_items().pop().unwrap();
    assert_eq!(
        b.decide_export(&item.item_id, ExportDecision::Deny, &alice()).unwrap(),
        ExportState::Denied
    );
    assert!(b.receipts().is_empty());
    assert_eq!(b.stores().record_count(&item.comms_store), 0);
}

#[test]
fn failed_delivery_stays_approved_and_retries() {
    let (b, _) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let item = b.export_items().pop().unwrap();
    b.processor().set_unavailable(true);
    let s = b.decide_export(&item.item_id, ExportDecision::Approve, &alice()).unwrap();
    assert_eq!(s, ExportState::Approved);
    assert_eq!(b.stores().record_count(&item.comms_store), 0);
    b.processor().set_unavailable(false);
    let out = b.runtime().exports().retry(&item.item_id, T0 + 2 * MINUTE_MS).unwrap();
    assert!(matches!(out, StageOutcome::Dispatched { .. }));
    assert_eq!(b.receipts().len(), 1);
}

#[test]
fn approval_after_revocation_is_denied() {
    let (b, app) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let item = b.export_items().pop().unwrap();
    b.arbiter().revoke(&RevokeScope::App(app), T0 + MINUTE_MS);
    let s = b.decide_export(&item.item_id, ExportDecision::Approve, &alice()).unwrap();
    assert_eq!(s, ExportState::Denied);
    assert_eq!(b.runtime().exports().item(&item.item_id).unwrap().note.as_deref(), Some("access revoked"));
    assert!(b.receipts().is_empty());
}

#[test]
fn all_sources_denied_suspends_once() {
    let (b, app) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let sla = b.installed_sla(&app).unwrap();
    b.arbiter().revoke(&RevokeScope::Sla(sla.sla_id), T0 + MINUTE_MS);
    let r = b.advance_to(T0 + 2 * MINUTE_MS).unwrap();
    assert!(r[0].1.suspended);
    assert_eq!(b.runtime().status(&app), Some(AppStatus::Suspended));
    b.advance_to(T0 + 3 * MINUTE_MS).unwrap();
    assert_eq!(b.notifier().count(NotificationKind::AppSuspended), 1);
    let denied = b
        .audit(&StoreId::new("store-microphone"), &Principal::Auditor, None)
        .unwrap()
        .iter()
        .filter(|r| r.action == AuditAction::TokenDenied)
        .count();
    assert_eq!(denied, 1);
}

#[test]
fn terminate_stops_runs_and_clears_the_queue() {
    let (b, app) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let report = b.terminate(&app).unwrap();
    assert!(report.known);
    assert_eq!(report.auto_denied, 1);
    assert!(report.revoked_policies >= 4);
    let runs = b.runtime().runs(&app).len();
    b.advance_to(T0 + HOUR_MS).unwrap();
    assert_eq!(b.runtime().runs(&app).len(), runs);
    assert!(b.export_items().iter().all(|i| i.state == ExportState::Denied));
}

#[test]
fn loading_twice_is_refused() {
    let (b, app) = sound_box();
    let sla = b.installed_sla(&app).unwrap();
    let p = demo::sound_lights_package();
    let err = b
        .runtime()
        .load_app(&p.flow, p.manifest.as_ref().unwrap(), &sla, T0)
        .unwrap_err();
    assert!(matches!(err, RuntimeError::AlreadyLoaded(_)));
}

#[test]
fn wrong_manifest_is_refused() {
    let (b, app) = sound_box();
    let mut sla = b.installed_sla(&app).unwrap();
    b.terminate(&app).unwrap();
    sla.manifest_hash = "0".repeat(64);
    let p = demo::sound_lights_package();
    let err = b
        .runtime()
        .load_app(&p.flow, p.manifest.as_ref().unwrap(), &sla, T0)
        .unwrap_err();
    assert!(matches!(err, RuntimeError::ManifestMismatch));
}

#[test]
fn derived_log_is_owned_by_the_installer() {
    let (b, app) = sound_box();
    b.advance_to(T0 + MINUTE_MS).unwrap();
    let store = crate::store::store_id_for(&derived_source_id(&app, "sound-levels"));
    assert_eq!(b.stores().kind(&store), Some(SourceKind::Derived));
    assert!(b.stores().owners(&store).unwrap().contains(&alice()));
    assert_eq!(b.stores().record_count(&store), 1);
}

#[test]
fn occupancy_demo_builds_a_week_matrix() {
    let b = Databox::new(PlatformConfig::virtual_at(7, T0)).unwrap();
    b.create_account(None, "alice", Role::Owner).unwrap();
    let kinds = [
        ("energy", SourceKind::EnergyMeter),
        ("door", SourceKind::DoorSensor),
        ("alarm", SourceKind::Alarm),
        ("presence", SourceKind::Presence),
    ];
    for (i, (name, kind)) in kinds.into_iter().enumerate() {
        let s = b.add_source(&[alice()], name, kind, "").unwrap();
        let mut p = SimProfile::new(kind, i as u64).with_cadence(MINUTE_MS);
        p.household_seed = 99;
        b.start_driver(&s, p).unwrap();
    }
    b.publish(demo::occupancy_package()).unwrap();
    let app = AppId::new(demo::OCCUPANCY_DEMO);
    b.install(&app, &demo::occupancy_choices(alice(), HOUR_MS as u64, DAY_MS as u64))
        .unwrap();
    b.run_until(T0 + 8 * DAY_MS, HOUR_MS).unwrap();
    let Datum::Occupancy(m) = &b.views(&app)[&NodeId::new("matrix-view")] else {
        panic!("matrix view holds no matrix");
    };
    assert_eq!(m.days.len(), 7);
    assert!(m.days.iter().all(|d| d.probabilities.len() == 24));
    assert!(m.values().flatten().all(|p| (0.0..=1.0).contains(&p)));
    assert!(m.values().filter(|p| p.is_some()).count() >= 7 * 24 - 24);
    assert!(m.calibrated);
}

#[test]
fn export_state_machine_edges() {
    use ExportState::*;
    assert!(Staged.can_become(Approved));
    assert!(Staged.can_become(Denied));
    assert!(Approved.can_become(Dispatched));
    assert!(!Denied.can_become(Approved));
    assert!(!Dispatched.can_become(Denied));
    assert!(!Approved.can_become(Denied));
}
