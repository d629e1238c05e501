//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use databox_core::accounts::Role;
use databox_core::appstore::Package;
use databox_core::ids::{AppId, Millis, NodeId, StoreId, UserId, HOUR_MS, MINUTE_MS};
use databox_core::manifest::{DeclaredSource, Manifest, SourceChoice, UserChoices};
use databox_core::runtime::{Edge, Flow, FlowNode, NodeClass, NodeKind, Params};
use databox_core::sim::SimProfile;
use databox_core::store::SourceKind;
use databox_core::arbiter::Action;
use databox_core::{demo, Databox, PlatformConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;

/// Midnight UTC, so day buckets line up with the virtual clock.
pub const T0: Millis = 1_700_006_400_000;

pub fn alice() -> UserId {
    UserId::new("alice")
}

pub fn bob() -> UserId {
    UserId::new("bob")
}

pub fn store(name: &str) -> StoreId {
    StoreId::new(format!("store-{name}"))
}

/// Devices of one home: (source id, kind, co-owned by bob).
pub const DEVICES: [(&str, SourceKind, bool); 7] = [
    ("energy", SourceKind::EnergyMeter, true),
    ("door", SourceKind::DoorSensor, false),
    ("alarm", SourceKind::Alarm, false),
    ("presence", SourceKind::Presence, false),
    ("microphone", SourceKind::MicrophoneLevel, false),
    ("bulb-1", SourceKind::Bulb, false),
    ("bulb-2", SourceKind::Bulb, false),
];

/// Alice (owner) and bob, every device registered. Drivers run at `cadence` when given.
pub fn household(seed: u64, cadence: Option<Millis>) -> Databox {
    household_with_keys(seed, cadence).0
}

/// [`household`] plus alice's and bob's login keys.
pub fn household_with_keys(seed: u64, cadence: Option<Millis>) -> (Databox, String, String) {
    let b = Databox::new(PlatformConfig::virtual_at(seed, T0)).unwrap();
    let a = b.create_account(None, "alice", Role::Owner).unwrap().key;
    let k = b.create_account(Some(&alice()), "bob", Role::Member).unwrap().key;
    for (i, (id, kind, shared)) in DEVICES.iter().enumerate() {
        let owners = if *shared { vec![alice(), bob()] } else { vec![alice()] };
        let s = b.add_source(&owners, id, *kind, id).unwrap();
        if let Some(cadence_ms) = cadence.filter(|_| !kind.supports_actuation()) {
            b.start_driver(
                &s,
                SimProfile {
                    kind: *kind,
                    seed: i as u64 + 1,
                    cadence_ms,
                    household_seed: 7,
                    params: Default::default(),
                },
            )
            .unwrap();
        }
    }
    (b, a, k)
}

pub fn install_occupancy(b: &Databox, sample_ms: u64, report_ms: u64) {
    b.publish(demo::occupancy_package()).unwrap();
    b.install(
        &AppId::new(demo::OCCUPANCY_DEMO),
        &demo::occupancy_choices(alice(), sample_ms, report_ms),
    )
    .unwrap();
}

pub fn install_sound_lights(b: &Databox) {
    b.publish(demo::sound_lights_package()).unwrap();
    b.install(&AppId::new(demo::SOUND_LIGHTS), &demo::sound_lights_choices(alice(), false))
        .unwrap();
}

/// A generated app: package plus the choices that install it on a [`household`].
pub struct RandomApp {
    pub package: Package,
    pub choices: UserChoices,
}

const QUERY_SOURCES: [(&str, SourceKind); 3] = [
    ("energy", SourceKind::EnergyMeter),
    ("door", SourceKind::DoorSensor),
    ("presence", SourceKind::Presence),
];

fn process_kind(rng: &mut impl Rng, pass_through: bool) -> NodeKind {
    let mut params = Params::new();
    let function = match rng.gen_range(0..if pass_through { 4 } else { 3 }) {
        0 => {
            params.insert("window_ms".into(), (HOUR_MS).into());
            "window-mean"
        }
        1 => {
            params.insert("window_ms".into(), (30 * MINUTE_MS).into());
            "window-sum"
        }
        2 => {
            params.insert("above".into(), rng.gen_range(0.0..1.0).into());
            "threshold"
        }
        _ => databox_core::runtime::PASS_THROUGH,
    };
    NodeKind::Process {
        function: function.into(),
        params,
    }
}

/// Builds a random flow and a manifest it satisfies: on- or off-box, one to three
/// query sources, up to three processes, and outputs drawn from every output kind
/// the manifest allows.
pub fn random_app(rng: &mut impl Rng, index: usize) -> RandomApp {
    let app_id = AppId::new(format!("generated-{index}"));
    let off_box = rng.gen_bool(0.4);
    let pass_through = rng.gen_bool(0.2);
    let with_lamp = rng.gen_bool(0.5);

    let mut picked: Vec<(&str, SourceKind)> = QUERY_SOURCES.to_vec();
    picked.shuffle(rng);
    picked.truncate(rng.gen_range(1..=3));

    let mut nodes: Vec<FlowNode> = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut upstream: Vec<NodeId> = Vec::new();
    let node = |id: String, kind: NodeKind| FlowNode { id: NodeId::new(id), kind };

    for (name, _) in &picked {
        let n = node(format!("src-{name}"), NodeKind::Source { source: name.to_string() });
        upstream.push(n.id.clone());
        nodes.push(n);
    }
    let mut processes = Vec::new();
    for p in 0..rng.gen_range(0..=3) {
        let n = node(format!("proc-{p}"), process_kind(rng, pass_through));
        let fan_in = rng.gen_range(1..=upstream.len().min(2));
        for from in upstream.choose_multiple(rng, fan_in) {
            edges.push(Edge { from: from.clone(), to: n.id.clone(), port: None });
        }
        upstream.push(n.id.clone());
        processes.push(n.id.clone());
        nodes.push(n);
    }

    let mut outputs = 0;
    for o in 0..rng.gen_range(1..=3) {
        let choice = rng.gen_range(0..4);
        let (kind, feeders): (NodeKind, &[NodeId]) = match choice {
            1 if with_lamp => (
                NodeKind::Actuation { source: "lamp".into(), command: "on".into() },
                &upstream,
            ),
            2 => (NodeKind::DerivedStore { name: format!("log-{o}") }, &upstream),
            3 if off_box && !processes.is_empty() => (
                NodeKind::Export { recipient: "Example Analytics".into() },
                &processes,
            ),
            _ => (NodeKind::Visualisation { title: format!("view {o}") }, &upstream),
        };
        let n = node(format!("out-{o}"), kind);
        let from = feeders.choose(rng).expect("non-empty feeders").clone();
        edges.push(Edge { from, to: n.id.clone(), port: None });
        nodes.push(n);
        outputs += 1;
    }
    // Every source and process needs a consumer.
    let dangling: Vec<NodeId> = nodes
        .iter()
        .filter(|n| n.kind.class() != NodeClass::Output)
        .filter(|n| !edges.iter().any(|e| e.from == n.id))
        .map(|n| n.id.clone())
        .collect();
    for from in dangling {
        let n = node(format!("out-{outputs}"), NodeKind::Visualisation { title: String::new() });
        outputs += 1;
        edges.push(Edge { from, to: n.id.clone(), port: None });
        nodes.push(n);
    }

    let mut manifest = demo::occupancy_package().manifest.unwrap();
    manifest.app_id = app_id.clone();
    let short = manifest.short.as_mut().unwrap();
    short.off_box = off_box;
    short.raw_pass_through = pass_through;
    short.sample_period_choices = vec![10 * MINUTE_MS as u64, HOUR_MS as u64];
    if rng.gen_bool(0.5) {
        short.online_access_url = None;
    }
    short.sources = picked
        .iter()
        .map(|(name, kind)| declared(name, *kind, Action::Query))
        .collect();
    if with_lamp {
        short.sources.push(declared("lamp", SourceKind::Bulb, Action::Actuate));
    }

    let mut sources: BTreeMap<String, SourceChoice> = picked
        .iter()
        .map(|(name, _)| {
            let c = SourceChoice { store_id: store(name), sample_period_ms: Some(10 * MINUTE_MS as u64) };
            (name.to_string(), c)
        })
        .collect();
    if with_lamp {
        sources.insert("lamp".into(), SourceChoice { store_id: store("bulb-1"), sample_period_ms: None });
    }

    let flow = Flow { app_id, nodes, edges };
    let package = Package::new(flow, Some(manifest));
    let package = if rng.gen_bool(0.9) { package.stamped() } else { package };
    RandomApp {
        package,
        choices: UserChoices {
            user_id: alice(),
            sources,
            report_period_ms: off_box.then_some(HOUR_MS as u64),
            preview_required: Some(rng.gen_bool(0.5)),
        },
    }
}

fn declared(name: &str, kind: SourceKind, action: Action) -> DeclaredSource {
    DeclaredSource {
        name: name.into(),
        kind: Some(kind),
        actions: vec![action],
        optional: false,
        description: format!("{name} for a generated app"),
    }
}

/// A node that could be added to `flow`, wired from one of its non-output nodes.
pub fn random_extension(rng: &mut impl Rng, flow: &Flow, manifest: &Manifest) -> (FlowNode, Option<Edge>) {
    let id = NodeId::new(format!("extra-{}", flow.nodes.len()));
    let kind = match rng.gen_range(0..8) {
        0 => NodeKind::Source { source: manifest.sources()[0].name.clone() },
        1 => NodeKind::Source { source: "undeclared".into() },
        2 => process_kind(rng, true),
        3 => NodeKind::Process { function: "unregistered-fft".into(), params: Params::new() },
        4 => NodeKind::Visualisation { title: String::new() },
        5 => NodeKind::Actuation { source: "lamp".into(), command: "on".into() },
        6 => NodeKind::DerivedStore { name: "extra".into() },
        _ => NodeKind::Export { recipient: "Somebody Else".into() },
    };
    let edge = (kind.class() != NodeClass::Source).then(|| {
        let feeders: Vec<&FlowNode> = flow.nodes.iter().filter(|n| n.kind.class() != NodeClass::Output).collect();
        Edge { from: feeders.choose(rng).unwrap().id.clone(), to: id.clone(), port: None }
    });
    (FlowNode { id, kind }, edge)
}
