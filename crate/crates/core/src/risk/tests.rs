use super::*;
use crate::arbiter::Action;
use crate::demo;
use crate::ids::AppId;
use crate::manifest::{CondensedLayer, DeclaredSource, ShortLayer};
use crate::runtime::{Edge, Params};
use proptest::prelude::*;

fn declared(name: &str, kind: SourceKind, action: Action) -> DeclaredSource {
    DeclaredSource {
        name: name.into(),
        kind: Some(kind),
        actions: vec![action],
        optional: false,
        description: String::new(),
    }
}

fn home_manifest(off_box: bool) -> Manifest {
    Manifest {
        format: 1,
        app_id: AppId::new("home"),
        short: Some(ShortLayer {
            purpose: "test".into(),
            sources: vec![
                declared("energy", SourceKind::EnergyMeter, Action::Query),
                declared("heart", SourceKind::HeartRate, Action::Query),
                declared("heater", SourceKind::Heating, Action::Actuate),
                declared("bulb", SourceKind::Bulb, Action::Actuate),
            ],
            sample_period_choices: vec![60_000],
            report_period_choices: vec![3_600_000],
            off_box,
            ..ShortLayer::default()
        }),
        condensed: Some(CondensedLayer {
            recipients: vec!["Acme".into()],
            ..CondensedLayer::default()
        }),
        legal: None,
    }
}

fn node(id: &str, kind: NodeKind) -> FlowNode {
    FlowNode { id: NodeId::new(id), kind }
}

fn source(id: &str, name: &str) -> FlowNode {
    node(id, NodeKind::Source { source: name.into() })
}

fn process(id: &str, function: &str) -> FlowNode {
    node(
        id,
        NodeKind::Process {
            function: function.into(),
            params: Params::new(),
        },
    )
}

fn view(id: &str) -> FlowNode {
    node(id, NodeKind::Visualisation { title: String::new() })
}

fn export(id: &str) -> FlowNode {
    node(id, NodeKind::Export { recipient: "Acme".into() })
}

fn actuate(id: &str, name: &str) -> FlowNode {
    node(
        id,
        NodeKind::Actuation {
            source: name.into(),
            command: "on".into(),
        },
    )
}

fn flow(nodes: Vec<FlowNode>) -> Flow {
    Flow {
        app_id: AppId::new("home"),
        nodes,
        edges: Vec::<Edge>::new(),
    }
}

fn codes(r: &NodeRating) -> Vec<&str> {
    r.reasons.iter().map(|x| x.code.as_str()).collect()
}

#[test]
fn shipped_table_covers_every_code_and_kind() {
    let t = RiskTable::builtin();
    assert_eq!(t.reasons.len(), REASON_CODES.len());
    assert_eq!(t.spectra.len(), NODE_KINDS.len());
    assert!(t.spectra.values().all(|(lo, hi)| lo <= hi));
}

#[test]
fn table_missing_a_reason_is_rejected() {
    let text = include_str!("risk_table.toml").replace("[reasons.OFF-BOX]", "[reasons.OFF-BOXX]");
    assert!(matches!(RiskTable::parse(&text), Err(RiskTableError::MissingReason("OFF-BOX"))));
}

#[test]
fn visualisation_is_level_zero() {
    let m = home_manifest(false);
    let r = node_risk(&view("v"), &RiskContext::new(&m));
    assert_eq!(r.level, Level::None);
    assert_eq!(codes(&r), ["ON-BOX-DISPLAY"]);
}

#[test]
fn non_eu_export_without_access_api_is_high() {
    let p = demo::sound_lights_package();
    let m = p.manifest.as_ref().unwrap();
    let r = node_risk(p.flow.node(&NodeId::new("cloud")).unwrap(), &RiskContext::new(m));
    assert_eq!(r.level, Level::High);
    for c in ["OFF-BOX", "NON-EU-RECIPIENT", "NO-ACCESS-API"] {
        assert!(codes(&r).contains(&c), "{c} missing");
    }
}

#[test]
fn heating_actuation_is_at_least_medium() {
    let m = home_manifest(false);
    let ctx = RiskContext::new(&m);
    let heat = node_risk(&actuate("a", "heater"), &ctx);
    assert!(heat.level >= Level::Medium);
    assert!(codes(&heat).contains(&"ESSENTIAL-ACTUATION"));
    let bulb = node_risk(&actuate("b", "bulb"), &ctx);
    assert!(bulb.level < heat.level);
}

#[test]
fn sensitive_source_raises_social_factor() {
    let m = home_manifest(false);
    let plain = app_risk(&flow(vec![source("s", "energy"), view("v")]), &m, true);
    let health = app_risk(&flow(vec![source("s", "heart"), view("v")]), &m, true);
    assert_eq!(plain.social.level, Level::None);
    assert!(health.social.level > Level::None);
    assert!(health.reason_codes().contains(&"SENSITIVE-CATEGORY"));
}

#[test]
fn unknown_function_and_undeclared_source_are_unverified() {
    let m = home_manifest(false);
    let ctx = RiskContext::new(&m);
    for n in [process("p", "mystery"), source("s", "toaster")] {
        let r = node_risk(&n, &ctx);
        assert_eq!(r.level, Level::High);
        assert_eq!(r.spectrum, None);
        assert_eq!(codes(&r), ["UNVERIFIED-NODE"]);
    }
}

#[test]
fn on_box_app_is_low_and_accredited() {
    let m = home_manifest(false);
    let f = flow(vec![source("s", "energy"), process("p", "window-mean"), view("v")]);
    let r = app_risk(&f, &m, true);
    assert!(r.overall <= Level::Low);
    assert!(r.accredited);
    assert!(accredit(&f, &m, true));
    assert_eq!(r.shields, r.overall.as_u8());
}

#[test]
fn bundled_export_app_is_not_accredited_until_export_removed() {
    let p = demo::sound_lights_package();
    let m = p.manifest.clone().unwrap();
    assert!(!accredit(&p.flow, &m, true));
    let mut f = p.flow.clone();
    f.nodes.retain(|n| !matches!(n.kind, NodeKind::Export { .. }));
    f.edges.retain(|e| e.to.as_str() != "cloud");
    let mut on_box = m.clone();
    on_box.short.as_mut().unwrap().off_box = false;
    assert!(!accredit(&f, &m, true));
    assert!(accredit(&f, &on_box, true));
    assert!(app_risk(&f, &on_box, true).accredited);
}

#[test]
fn unverified_node_or_package_blocks_accreditation() {
    let m = home_manifest(false);
    let f = flow(vec![source("s", "energy"), process("p", "mystery"), view("v")]);
    assert!(!accredit(&f, &m, true));
    let clean = flow(vec![source("s", "energy"), process("p", "window-mean"), view("v")]);
    let r = app_risk(&clean, &m, false);
    assert!(!r.accredited);
    assert_eq!(r.overall, Level::High);
    assert_eq!(r.package_reasons[0].code, "UNVERIFIED-PACKAGE");
}

#[test]
fn overall_is_max_of_factors() {
    let p = demo::sound_lights_package();
    let r = app_risk(&p.flow, p.manifest.as_ref().unwrap(), true);
    let max = Factor::ALL.iter().map(|f| r.factor(*f).level).max().unwrap();
    assert_eq!(r.overall, max);
    assert!(r.report_text().contains("not accredited"));
}

#[test]
fn level_round_trips_as_integer() {
    assert_eq!(serde_json::to_string(&Level::Medium).unwrap(), "2");
    assert!(serde_json::from_str::<Level>("4").is_err());
}

fn arb_node() -> impl Strategy<Value = FlowNode> {
    let names = ["energy", "heart", "heater", "bulb", "toaster"];
    let fns = ["window-mean", "threshold", "passthrough", "score", "mystery"];
    (0u8..6, 0usize..5, 0u32..1000).prop_map(move |(k, i, n)| {
        let id = format!("n{n}");
        match k {
            0 => source(&id, names[i]),
            1 => process(&id, fns[i]),
            2 => view(&id),
            3 => actuate(&id, names[i]),
            4 => export(&id),
            _ => node(&id, NodeKind::DerivedStore { name: "log".into() }),
        }
    })
}

proptest! {
    #[test]
    fn levels_stay_within_spectra(n in arb_node(), off_box in any::<bool>()) {
        let m = home_manifest(off_box);
        let r = node_risk(&n, &RiskContext::new(&m));
        match r.spectrum {
            Some((lo, hi)) => prop_assert!(lo <= r.level && r.level <= hi),
            None => prop_assert_eq!(r.level, Level::High),
        }
    }

    #[test]
    fn adding_a_node_never_lowers_a_factor(
        nodes in proptest::collection::vec(arb_node(), 0..8),
        extra in arb_node(),
        verified in any::<bool>(),
    ) {
        let m = home_manifest(true);
        let before = app_risk(&flow(nodes.clone()), &m, verified);
        let mut more = nodes;
        more.push(extra);
        let after = app_risk(&flow(more), &m, verified);
        for f in Factor::ALL {
            prop_assert!(after.factor(f).level >= before.factor(f).level);
        }
        prop_assert!(after.overall >= before.overall);
    }
}
