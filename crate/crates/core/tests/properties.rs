//! Property checks across module boundaries, each against an independent oracle.

mod common;

use common::*;
use databox_core::appstore::{Listing, SearchFilter};
use databox_core::arbiter::{
    AccessRequest, AccessToken, Action, Caveat, CAVEAT_ACTIONS, CAVEAT_APP, CAVEAT_EXPIRES, CAVEAT_REPORT_PERIOD,
    CAVEAT_SAMPLE_PERIOD, CAVEAT_STORE,
};
use databox_core::demo::{self, OCCUPANCY_DEMO, SOUND_LIGHTS};
use databox_core::ids::{NodeId, StoreId, DAY_MS, HOUR_MS, MINUTE_MS};
use databox_core::manifest::{compile, resolve_choices, ResolveContext, SourceChoice, UserChoices};
use databox_core::runtime::{Edge, Flow, FlowError, FlowNode, NodeKind, Params};
use databox_core::store::SourceKind;
use databox_core::{Databox, PlatformConfig};
use databox_core::accounts::Role;
use databox_core::ids::{AppId, SlaId};
use proptest::prelude::*;
use proptest::sample::select;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

struct Minted {
    b: Databox,
    tokens: Vec<AccessToken>,
    stores: Vec<StoreId>,
}

/// Both demo apps installed on one box, and one token per active policy.
fn minted() -> &'static Minted {
    static CELL: OnceLock<Minted> = OnceLock::new();
    CELL.get_or_init(|| {
        let b = household(5, None);
        install_occupancy(&b, HOUR_MS as u64, HOUR_MS as u64);
        install_sound_lights(&b);
        let now = b.now();
        let tokens = b
            .arbiter()
            .policies()
            .iter()
            .map(|p| b.arbiter().mint_token(&p.app_id, &p.store_id, now).unwrap())
            .collect();
        let mut stores: Vec<StoreId> = b.arbiter().policies().into_iter().map(|p| p.store_id).collect();
        stores.push(store("alarm-nope"));
        Minted { b, tokens, stores }
    })
}

fn arb_caveat(stores: Vec<StoreId>) -> impl Strategy<Value = Caveat> {
    let actions = proptest::collection::btree_set(select(vec!["query", "actuate", "export-stage", "fly"]), 0..4)
        .prop_map(|s| Caveat::new(CAVEAT_ACTIONS, s.into_iter().collect::<Vec<_>>().join(",")));
    prop_oneof![
        actions,
        select(vec![0u64, 60_000, 600_000, 3_600_000, 7_200_000]).prop_map(|p| Caveat::new(CAVEAT_SAMPLE_PERIOD, p)),
        (-HOUR_MS..10 * DAY_MS).prop_map(|d| Caveat::new(CAVEAT_EXPIRES, T0 + d)),
        select(stores).prop_map(|s| Caveat::new(CAVEAT_STORE, s)),
        select(vec![OCCUPANCY_DEMO, SOUND_LIGHTS]).prop_map(|a| Caveat::new(CAVEAT_APP, a)),
        select(vec!["600000", "never"]).prop_map(|r| Caveat::new(CAVEAT_REPORT_PERIOD, r)),
        Just(Caveat::new("colour", "blue")),
    ]
}

fn arb_request(stores: Vec<StoreId>) -> impl Strategy<Value = AccessRequest> {
    (
        select(stores),
        select(Action::ALL.to_vec()),
        0..40 * DAY_MS,
        proptest::option::of(0..2 * DAY_MS),
    )
        .prop_map(|(store_id, action, offset, last)| AccessRequest {
            store_id,
            action,
            now: T0 + offset,
            last_granted_time: last.map(|l| T0 + offset - l),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn attenuation_never_widens_authority(
        which in any::<prop::sample::Index>(),
        caveats in proptest::collection::vec(arb_caveat(minted().stores.clone()), 1..5),
        req in arb_request(minted().stores.clone()),
    ) {
        let m = minted();
        let base = which.get(&m.tokens);
        let narrowed = caveats.into_iter().fold(base.clone(), |t, c| t.attenuate(c));
        if m.b.arbiter().verify(&narrowed, &req).is_allow() {
            prop_assert!(m.b.arbiter().verify(base, &req).is_allow());
        }
    }
}

/// A random flow that satisfies every structural rule, with nodes declared in shuffled order.
fn valid_flow(seed: u64) -> Flow {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (s, p, o) = (rng.gen_range(1..4), rng.gen_range(0..6), rng.gen_range(1..4));
    let n = s + p + o;
    let kind = |i: usize| match i {
        i if i < s => NodeKind::Source { source: format!("s{i}") },
        i if i < s + p => NodeKind::Process { function: "passthrough".into(), params: Params::new() },
        _ => NodeKind::Visualisation { title: String::new() },
    };
    let mut pairs = BTreeSet::new();
    for to in s..n {
        for from in 0..to.min(s + p) {
            if rng.gen_bool(0.3) {
                pairs.insert((from, to));
            }
        }
    }
    for i in s..n {
        if !pairs.iter().any(|&(_, t)| t == i) {
            pairs.insert((rng.gen_range(0..i.min(s + p)), i));
        }
        if i < s + p && !pairs.iter().any(|&(f, _)| f == i) {
            pairs.insert((i, rng.gen_range(i + 1..n).max(s + p)));
        }
    }
    for i in 0..s {
        if !pairs.iter().any(|&(f, _)| f == i) {
            pairs.insert((i, rng.gen_range(s..n)));
        }
    }
    let mut nodes: Vec<FlowNode> = (0..n).map(|i| FlowNode { id: NodeId::new(format!("n{i}")), kind: kind(i) }).collect();
    nodes.shuffle(&mut rng);
    let mut edges: Vec<Edge> = pairs
        .into_iter()
        .map(|(f, t)| Edge { from: NodeId::new(format!("n{f}")), to: NodeId::new(format!("n{t}")), port: None })
        .collect();
    edges.shuffle(&mut rng);
    Flow { app_id: AppId::new("dag"), nodes, edges }
}

proptest! {
    #[test]
    fn validated_order_is_a_topological_permutation(seed in any::<u64>()) {
        let flow = valid_flow(seed);
        let order = flow.validate().unwrap();
        let declared: BTreeSet<&NodeId> = flow.nodes.iter().map(|n| &n.id).collect();
        prop_assert_eq!(order.len(), flow.nodes.len());
        prop_assert_eq!(order.iter().collect::<BTreeSet<_>>(), declared);
        let pos: HashMap<&NodeId, usize> = order.iter().enumerate().map(|(i, id)| (id, i)).collect();
        for e in &flow.edges {
            prop_assert!(pos[&e.from] < pos[&e.to], "{} before {}", e.from, e.to);
        }
    }

    #[test]
    fn reversing_a_process_edge_is_a_cycle(seed in any::<u64>()) {
        let mut flow = valid_flow(seed);
        let is_process = |id: &NodeId| matches!(flow.node(id).map(|n| &n.kind), Some(NodeKind::Process { .. }));
        let back = flow.edges.iter().find(|e| is_process(&e.from) && is_process(&e.to)).cloned();
        if let Some(e) = back {
            flow.edges.push(Edge { from: e.to, to: e.from, port: None });
            prop_assert!(matches!(flow.validate(), Err(FlowError::Cycle(_))));
        }
    }

    #[test]
    fn compiled_policies_mirror_the_choices(
        periods in proptest::collection::vec(select(vec![60_000u64, 600_000, 3_600_000, 120_000]), 4),
        report in proptest::option::of(select(vec![3_600_000u64, 86_400_000, 7_200_000])),
        targets in proptest::collection::vec(select(vec!["energy", "door", "alarm", "presence", "spare"]), 4),
        now in 0..DAY_MS,
    ) {
        let manifest = demo::occupancy_package().manifest.unwrap();
        let names = ["energy", "door", "alarm", "presence"];
        let sources: BTreeMap<String, SourceChoice> = names
            .iter()
            .zip(periods.iter().zip(&targets))
            .map(|(n, (p, t))| (n.to_string(), SourceChoice { store_id: store(t), sample_period_ms: Some(*p) }))
            .collect();
        let choices = UserChoices { user_id: alice(), sources, report_period_ms: report, preview_required: None };
        let ctx = ResolveContext { sla_id: SlaId::new("sla-x"), now: T0 + now, comms_store: Some(store("comms")) };
        let offered = periods.iter().all(|p| [60_000, 600_000, 3_600_000].contains(p))
            && report.is_some_and(|r| r != 7_200_000);
        let resolved = resolve_choices(&manifest, &choices, &ctx);
        prop_assert_eq!(resolved.is_ok(), offered);
        let Ok(sla) = resolved else { return Ok(()) };
        let policies = compile(&sla).unwrap();
        prop_assert_eq!(policies.len(), 5);
        for (i, name) in names.iter().enumerate() {
            let p = &policies[i];
            prop_assert_eq!(p.policy_id.to_string(), format!("sla-x/p{i}"));
            prop_assert_eq!(&p.store_id, &store(targets[i]), "{}", name);
            prop_assert_eq!(p.max_sample_period_ms, periods[i]);
            prop_assert_eq!(p.actions.iter().copied().collect::<Vec<_>>(), vec![Action::Query]);
            prop_assert_eq!(p.expiry, sla.expires_at);
        }
        let export = &policies[4];
        prop_assert_eq!(&export.store_id, &store("comms"));
        prop_assert_eq!(export.max_report_period_ms, report);
        prop_assert_eq!(export.actions.iter().copied().collect::<Vec<_>>(), vec![Action::ExportStage]);
        prop_assert!(policies.iter().all(|p| p.app_id.as_str() == OCCUPANCY_DEMO && !p.revoked));
    }
}

/// Sort key for store order: accredited, lower risk, higher mean stars, earlier, by id.
fn expected_order(mut listings: Vec<Listing>) -> Vec<AppId> {
    listings.sort_by(|a, b| {
        (!a.accredited, a.risk.overall, a.published_at, &a.app_id).cmp(&(!b.accredited, b.risk.overall, b.published_at, &b.app_id))
    });
    listings.sort_by(|a, b| {
        (!a.accredited, a.risk.overall)
            .cmp(&(!b.accredited, b.risk.overall))
            .then(b.star_mean().total_cmp(&a.star_mean()))
    });
    listings.into_iter().map(|l| l.app_id).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn search_and_recommend_follow_the_store_order(
        seed in any::<u64>(),
        devices in proptest::collection::btree_set(0..DEVICES.len(), 0..=DEVICES.len()),
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b = Databox::new(PlatformConfig::virtual_at(seed, T0)).unwrap();
        b.create_account(None, "alice", Role::Owner).unwrap();
        b.create_account(Some(&alice()), "bob", Role::Member).unwrap();
        for &i in &devices {
            let (id, kind, _) = DEVICES[i];
            b.add_source(&[alice()], id, kind, id).unwrap();
        }
        for i in 0..rng.gen_range(4..12) {
            b.publish(random_app(&mut rng, i).package).unwrap();
            if rng.gen_bool(0.5) {
                b.advance_to(b.now() + rng.gen_range(1..3) * MINUTE_MS).unwrap();
            }
        }
        let all = b.search(&SearchFilter::default());
        for l in &all {
            for user in [alice(), bob()] {
                if rng.gen_bool(0.6) {
                    b.appstore().record_install(&l.app_id, &user);
                    b.rate(&l.app_id, &user, rng.gen_range(1..=5)).unwrap();
                }
            }
        }
        let all = b.search(&SearchFilter::default());
        let ids: Vec<AppId> = all.iter().map(|l| l.app_id.clone()).collect();
        prop_assert_eq!(&ids, &expected_order(all.clone()));

        let available: BTreeSet<SourceKind> = devices
            .iter()
            .map(|&i| DEVICES[i].1)
            .filter(|k| SourceKind::DEVICE_KINDS.contains(k))
            .collect();
        let expected: Vec<AppId> = all
            .iter()
            .filter(|l| l.manifest.mandatory_kinds().iter().all(|k| available.contains(k)))
            .map(|l| l.app_id.clone())
            .collect();
        let got: Vec<AppId> = b.recommend().into_iter().map(|l| l.app_id).collect();
        prop_assert_eq!(got, expected);
    }
}
