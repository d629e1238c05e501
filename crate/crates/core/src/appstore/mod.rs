//! Local app registry: listings with risk reports, badges and star ratings.

mod package;

pub use package::{Package, PackageError};

use crate::ids::{AppId, Millis, UserId};
use crate::manifest::{violations, Manifest, Violation};
use crate::risk::{self, Level, RiskRating};
use crate::runtime::FlowError;
use crate::store::SourceKind;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// Exact star statistics; the mean is derived from integer totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stars {
    pub total: u64,
    pub count: u64,
}

impl Stars {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total as f64 / self.count as f64
        }
    }

    /// Compares means exactly by cross-multiplication. Unrated counts as zero.
    pub fn cmp_mean(&self, other: &Stars) -> Ordering {
        let (a, b) = (self.count.max(1), other.count.max(1));
        (self.total as u128 * b as u128).cmp(&(other.total as u128 * a as u128))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub app_id: AppId,
    pub package_hash: String,
    pub manifest: Manifest,
    pub risk: RiskRating,
    pub accredited: bool,
    pub verified: bool,
    pub stars: Stars,
    pub published_at: Millis,
}

impl Listing {
    pub fn star_mean(&self) -> f64 {
        self.stars.mean()
    }

    pub fn kinds(&self) -> BTreeSet<SourceKind> {
        self.manifest.sources().iter().filter_map(|s| s.kind).collect()
    }
}

/// Accredited first, then ascending risk, then descending stars, then publish time.
pub fn listing_order(a: &Listing, b: &Listing) -> Ordering {
    b.accredited
        .cmp(&a.accredited)
        .then(a.risk.overall.cmp(&b.risk.overall))
        .then(b.stars.cmp_mean(&a.stars))
        .then(a.published_at.cmp(&b.published_at))
        .then(a.app_id.cmp(&b.app_id))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFilter {
    /// Listings must declare every one of these kinds.
    #[serde(default)]
    pub kinds: Vec<SourceKind>,
    #[serde(default)]
    pub max_risk: Option<Level>,
    #[serde(default)]
    pub accredited_only: bool,
}

impl SearchFilter {
    pub fn matches(&self, l: &Listing) -> bool {
        let kinds = l.kinds();
        self.kinds.iter().all(|k| kinds.contains(k))
            && self.max_risk.is_none_or(|m| l.risk.overall <= m)
            && (!self.accredited_only || l.accredited)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PublishError {
    #[error("package has no manifest")]
    ManifestMissing,
    #[error("manifest invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidManifest(Vec<Violation>),
    #[error(transparent)]
    InvalidFlow(#[from] FlowError),
    #[error("package {0} is already published")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RateError {
    #[error("unknown app {0}")]
    UnknownApp(AppId),
    #[error("{0} has not installed this app")]
    NotInstalled(UserId),
    #[error("stars must be 1 to 5, got {0}")]
    OutOfRange(u8),
}

#[derive(Default)]
struct State {
    listings: BTreeMap<AppId, Listing>,
    packages: BTreeMap<String, Package>,
    ratings: BTreeMap<AppId, BTreeMap<UserId, u8>>,
    installs: BTreeMap<AppId, BTreeSet<UserId>>,
}

#[derive(Default)]
pub struct AppStore {
    state: RwLock<State>,
}

/// Checks a package for publication or installation: manifest present and valid,
/// flow valid and consistent with the manifest.
pub fn check_package(package: &Package) -> Result<&Manifest, PublishError> {
    let manifest = package.manifest.as_ref().ok_or(PublishError::ManifestMissing)?;
    let v = violations(manifest);
    if !v.is_empty() {
        return Err(PublishError::InvalidManifest(v));
    }
    package.flow.validate()?;
    package.flow.check_against(manifest)?;
    Ok(manifest)
}

impl AppStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Publishes a package; a new version of an app replaces its listing and keeps its ratings.
    pub fn publish(&self, package: Package, now: Millis) -> Result<Listing, PublishError> {
        let manifest = check_package(&package)?.clone();
        let hash = package.hash();
        let mut st = self.state.write();
        if st.packages.contains_key(&hash) {
            return Err(PublishError::Duplicate(hash));
        }
        let verified = package.is_verified();
        let rating = risk::app_risk(&package.flow, &manifest, verified);
        let app_id = package.app_id().clone();
        let listing = Listing {
            app_id: app_id.clone(),
            package_hash: hash.clone(),
            accredited: rating.accredited,
            risk: rating,
            verified,
            manifest,
            stars: stars_of(st.ratings.get(&app_id)),
            published_at: now,
        };
        st.packages.insert(hash, package);
        st.listings.insert(app_id, listing.clone());
        Ok(listing)
    }

    /// The listing, provided its manifest still validates.
    pub fn listing(&self, app: &AppId) -> Option<Listing> {
        self.state
            .read()
            .listings
            .get(app)
            .filter(|l| violations(&l.manifest).is_empty())
            .cloned()
    }

    pub fn package(&self, app: &AppId) -> Option<Package> {
        let st = self.state.read();
        let l = st.listings.get(app)?;
        st.packages.get(&l.package_hash).cloned()
    }

    pub fn package_by_hash(&self, hash: &str) -> Option<Package> {
        self.state.read().packages.get(hash).cloned()
    }

    pub fn search(&self, filter: &SearchFilter) -> Vec<Listing> {
        let st = self.state.read();
        let mut out: Vec<Listing> = st
            .listings
            .values()
            .filter(|l| violations(&l.manifest).is_empty() && filter.matches(l))
            .cloned()
            .collect();
        out.sort_by(listing_order);
        out
    }

    /// Apps whose mandatory sources are all available, in search order.
    pub fn recommend(&self, available: &BTreeSet<SourceKind>) -> Vec<Listing> {
        let mut out = self.search(&SearchFilter::default());
        out.retain(|l| l.manifest.mandatory_kinds().iter().all(|k| available.contains(k)));
        out
    }

    pub fn record_install(&self, app: &AppId, user: &UserId) {
        self.state
            .write()
            .installs
            .entry(app.clone())
            .or_default()
            .insert(user.clone());
    }

    /// One rating per user per app; the latest replaces earlier ones.
    pub fn rate(&self, app: &AppId, user: &UserId, stars: u8) -> Result<Stars, RateError> {
        if !(1..=5).contains(&stars) {
            return Err(RateError::OutOfRange(stars));
        }
        let mut st = self.state.write();
        if !st.listings.contains_key(app) {
            return Err(RateError::UnknownApp(app.clone()));
        }
        if !st.installs.get(app).is_some_and(|u| u.contains(user)) {
            return Err(RateError::NotInstalled(user.clone()));
        }
        let table = st.ratings.entry(app.clone()).or_default();
        table.insert(user.clone(), stars);
        let summary = stars_of(Some(table));
        st.listings.get_mut(app).expect("checked").stars = summary;
        Ok(summary)
    }

    pub fn ratings(&self, app: &AppId) -> BTreeMap<UserId, u8> {
        self.state.read().ratings.get(app).cloned().unwrap_or_default()
    }

    /// Recomputes accreditation from each stored package; returns the apps whose badge changed.
    pub fn recheck_badges(&self) -> Vec<AppId> {
        let mut st = self.state.write();
        let State {
            listings, packages, ..
        } = &mut *st;
        let mut changed = Vec::new();
        for l in listings.values_mut() {
            let Some(p) = packages.get(&l.package_hash) else {
                continue;
            };
            let now = risk::accredit(&p.flow, &l.manifest, p.is_verified());
            if now != l.accredited {
                l.accredited = now;
                l.risk.accredited = now;
                changed.push(l.app_id.clone());
            }
        }
        changed
    }

    /// All listings as one document for offline browsing.
    pub fn export_static(&self) -> serde_json::Value {
        serde_json::json!({ "listings": self.search(&SearchFilter::default()) })
    }
}

fn stars_of(table: Option<&BTreeMap<UserId, u8>>) -> Stars {
    table.map_or_else(Stars::default, |t| Stars {
        total: t.values().map(|&s| s as u64).sum(),
        count: t.len() as u64,
    })
}
