//! The bundled example apps.

use crate::appstore::Package;
use crate::ids::{StoreId, UserId};
use crate::manifest::{Manifest, SourceChoice, UserChoices};
use crate::runtime::Flow;
use std::collections::BTreeMap;

pub const OCCUPANCY_DEMO: &str = "occupancy-demo";
pub const SOUND_LIGHTS: &str = "sound-lights";
pub const BUILTIN_NAMES: [&str; 2] = [OCCUPANCY_DEMO, SOUND_LIGHTS];

/// Report periods offered by the occupancy demo manifest.
pub const OCCUPANCY_REPORT_PERIODS: [u64; 2] = [3_600_000, 86_400_000];
/// Sources the occupancy demo reads, by declared name.
pub const OCCUPANCY_SOURCES: [&str; 4] = ["energy", "door", "alarm", "presence"];

fn package(flow: &str, manifest: &str) -> Package {
    Package::new(
        Flow::parse(flow).expect("bundled flow parses"),
        Some(Manifest::parse(manifest).expect("bundled manifest parses")),
    )
    .stamped()
}

pub fn occupancy_package() -> Package {
    package(
        include_str!("../../../apps/occupancy-demo/flow.toml"),
        include_str!("../../../apps/occupancy-demo/manifest.toml"),
    )
}

/// Sound-driven lights: one source, three processes, five outputs including a cloud export.
pub fn sound_lights_package() -> Package {
    package(
        include_str!("../../../apps/sound-lights/flow.toml"),
        include_str!("../../../apps/sound-lights/manifest.toml"),
    )
}

pub fn builtin(name: &str) -> Option<Package> {
    match name {
        OCCUPANCY_DEMO => Some(occupancy_package()),
        SOUND_LIGHTS => Some(sound_lights_package()),
        _ => None,
    }
}

fn choice(store: &str, period: Option<u64>) -> SourceChoice {
    SourceChoice {
        store_id: StoreId::new(store),
        sample_period_ms: period,
    }
}

/// Every occupancy source at one sample period, read from `store-<name>`.
pub fn occupancy_choices(user: UserId, sample_period_ms: u64, report_period_ms: u64) -> UserChoices {
    UserChoices {
        user_id: user,
        sources: OCCUPANCY_SOURCES
            .iter()
            .map(|n| (n.to_string(), choice(&format!("store-{n}"), Some(sample_period_ms))))
            .collect(),
        report_period_ms: Some(report_period_ms),
        preview_required: None,
    }
}

pub fn sound_lights_choices(user: UserId, include_optional: bool) -> UserChoices {
    let mut sources = BTreeMap::new();
    sources.insert("microphone".into(), choice("store-microphone", Some(60_000)));
    sources.insert("bulb-1".into(), choice("store-bulb-1", None));
    sources.insert("bulb-2".into(), choice("store-bulb-2", None));
    if include_optional {
        sources.insert("kitchen-mic".into(), choice("store-kitchen-mic", Some(60_000)));
    }
    UserChoices {
        user_id: user,
        sources,
        report_period_ms: Some(600_000),
        preview_required: None,
    }
}
