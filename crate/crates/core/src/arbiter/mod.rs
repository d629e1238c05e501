//! Policy decision point.
//!
//! The arbiter holds the compiled policy table, mints caveat-scoped tokens for
//! apps, and decides every store request. Verification is total: it never
//! errors, it returns [`Decision::Deny`] with a reason.

mod policy;
mod token;

pub use policy::{decode_actions, encode_actions, Action, Policy};
pub use token::{
    AccessToken, Caveat, TokenDecodeError, CAVEAT_ACTIONS, CAVEAT_APP, CAVEAT_EXPIRES,
    CAVEAT_POLICY, CAVEAT_REPORT_PERIOD, CAVEAT_SAMPLE_PERIOD, CAVEAT_STORE, WIRE_VERSION,
};

use crate::ids::{AppId, Millis, PolicyId, SlaId, StoreId, TokenId};
use crate::manifest::Sla;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArbiterError {
    #[error("SLA {0} is not approved or has been withdrawn")]
    SlaNotApproved(SlaId),
    #[error("policy set does not belong to SLA {0}")]
    ForeignPolicy(SlaId),
    #[error("policy {0} has no actions")]
    EmptyActions(PolicyId),
    #[error("no active policy for app {app} on store {store}")]
    NoActivePolicy { app: AppId, store: StoreId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    BadMac,
    Expired,
    Revoked,
    WrongStore,
    ActionNotGranted,
    RateExceeded,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::BadMac => "bad-mac",
            DenyReason::Expired => "expired",
            DenyReason::Revoked => "revoked",
            DenyReason::WrongStore => "wrong-store",
            DenyReason::ActionNotGranted => "action-not-granted",
            DenyReason::RateExceeded => "rate-exceeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "kebab-case")]
pub enum Decision {
    Allow { policy_id: PolicyId },
    Deny { reason: DenyReason },
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow { .. })
    }

    fn deny(reason: DenyReason) -> Self {
        Decision::Deny { reason }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub store_id: StoreId,
    pub action: Action,
    pub now: Millis,
    /// Caller's view of its last granted query; the arbiter's own ledger takes precedence.
    pub last_granted_time: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevokeScope {
    Sla(SlaId),
    App(AppId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ArbiterEvent {
    Registered { policy_id: PolicyId, sla_id: SlaId },
    Replaced { old: PolicyId, new: PolicyId },
    Revoked { policy_id: PolicyId, at: Millis },
    Minted { token_id: TokenId, policy_id: PolicyId, fingerprint: String },
}

#[derive(Default)]
struct State {
    policies: BTreeMap<PolicyId, Policy>,
    by_sla: BTreeMap<SlaId, Vec<PolicyId>>,
    /// Last granted query per (app, store).
    ledger: HashMap<(AppId, StoreId), Millis>,
    minted: BTreeMap<String, TokenId>,
    events: Vec<ArbiterEvent>,
    next_token: u64,
}

pub struct Arbiter {
    root: [u8; 32],
    state: RwLock<State>,
}

impl Arbiter {
    pub fn new(root_secret: [u8; 32]) -> Self {
        Self {
            root: root_secret,
            state: RwLock::new(State::default()),
        }
    }

    /// Activates the compiled policies of an approved SLA. Re-registering the
    /// same SLA returns the existing ids. An older active policy for the same
    /// (app, store) from another SLA is revoked and replaced.
    pub fn register_policies(
        &self,
        sla: &Sla,
        policies: Vec<Policy>,
    ) -> Result<Vec<PolicyId>, ArbiterError> {
        if !sla.is_active() {
            return Err(ArbiterError::SlaNotApproved(sla.sla_id.clone()));
        }
        for p in &policies {
            if p.sla_id != sla.sla_id || p.app_id != sla.app_id {
                return Err(ArbiterError::ForeignPolicy(sla.sla_id.clone()));
            }
            if p.actions.is_empty() {
                return Err(ArbiterError::EmptyActions(p.policy_id.clone()));
            }
        }
        let mut st = self.state.write();
        if let Some(ids) = st.by_sla.get(&sla.sla_id) {
            return Ok(ids.clone());
        }
        let mut ids = Vec::with_capacity(policies.len());
        for p in policies {
            let stale: Vec<PolicyId> = st
                .policies
                .values()
                .filter(|q| {
                    !q.revoked
                        && q.app_id == p.app_id
                        && q.store_id == p.store_id
                        && q.sla_id != p.sla_id
                })
                .map(|q| q.policy_id.clone())
                .collect();
            for old in stale {
                if let Some(q) = st.policies.get_mut(&old) {
                    q.revoked = true;
                }
                st.events.push(ArbiterEvent::Replaced {
                    old,
                    new: p.policy_id.clone(),
                });
            }
            st.events.push(ArbiterEvent::Registered {
                policy_id: p.policy_id.clone(),
                sla_id: p.sla_id.clone(),
            });
            ids.push(p.policy_id.clone());
            st.policies.insert(p.policy_id.clone(), p);
        }
        st.by_sla.insert(sla.sla_id.clone(), ids.clone());
        Ok(ids)
    }

    pub fn mint_token(
        &self,
        app_id: &AppId,
        store_id: &StoreId,
        now: Millis,
    ) -> Result<AccessToken, ArbiterError> {
        let mut st = self.state.write();
        let policy = st
            .policies
            .values()
            .find(|p| &p.app_id == app_id && &p.store_id == store_id && p.is_active(now))
            .cloned()
            .ok_or_else(|| ArbiterError::NoActivePolicy {
                app: app_id.clone(),
                store: store_id.clone(),
            })?;
        st.next_token += 1;
        let token_id = TokenId::new(format!("tok-{}-{}", policy.policy_id, st.next_token));
        let mut caveats = vec![
            Caveat::new(CAVEAT_APP, &policy.app_id),
            Caveat::new(CAVEAT_STORE, &policy.store_id),
            Caveat::new(CAVEAT_POLICY, &policy.policy_id),
            Caveat::new(CAVEAT_ACTIONS, encode_actions(&policy.actions)),
            Caveat::new(CAVEAT_SAMPLE_PERIOD, policy.max_sample_period_ms),
        ];
        if let Some(r) = policy.max_report_period_ms {
            caveats.push(Caveat::new(CAVEAT_REPORT_PERIOD, r));
        }
        caveats.push(Caveat::new(CAVEAT_EXPIRES, policy.expiry));
        let token = AccessToken::mint(&self.root, token_id.clone(), caveats);
        let fingerprint = token.fingerprint();
        st.minted.insert(fingerprint.clone(), token_id.clone());
        st.events.push(ArbiterEvent::Minted {
            token_id,
            policy_id: policy.policy_id,
            fingerprint,
        });
        Ok(token)
    }

    /// Pure decision against the current policy table and grant ledger.
    pub fn verify(&self, token: &AccessToken, req: &AccessRequest) -> Decision {
        let st = self.state.read();
        decide(&self.root, &st, token, req)
    }

    /// Decides and, for an allowed query, records the grant in the ledger atomically.
    pub fn authorize(&self, token: &AccessToken, req: &AccessRequest) -> Decision {
        let mut st = self.state.write();
        let decision = decide(&self.root, &st, token, req);
        if decision.is_allow() && req.action == Action::Query {
            if let Some(app) = token.first_caveat(CAVEAT_APP) {
                st.ledger
                    .insert((AppId::new(app), req.store_id.clone()), req.now);
            }
        }
        decision
    }

    pub fn revoke(&self, scope: &RevokeScope, now: Millis) -> usize {
        let mut st = self.state.write();
        let targets: Vec<PolicyId> = st
            .policies
            .values()
            .filter(|p| !p.revoked)
            .filter(|p| match scope {
                RevokeScope::Sla(s) => &p.sla_id == s,
                RevokeScope::App(a) => &p.app_id == a,
            })
            .map(|p| p.policy_id.clone())
            .collect();
        for id in &targets {
            if let Some(p) = st.policies.get_mut(id) {
                p.revoked = true;
            }
            st.events.push(ArbiterEvent::Revoked {
                policy_id: id.clone(),
                at: now,
            });
        }
        targets.len()
    }

    pub fn policy(&self, id: &PolicyId) -> Option<Policy> {
        self.state.read().policies.get(id).cloned()
    }

    pub fn policies(&self) -> Vec<Policy> {
        self.state.read().policies.values().cloned().collect()
    }

    pub fn policies_for_sla(&self, sla: &SlaId) -> Vec<Policy> {
        let st = self.state.read();
        st.by_sla
            .get(sla)
            .map(|ids| ids.iter().filter_map(|i| st.policies.get(i).cloned()).collect())
            .unwrap_or_default()
    }

    pub fn active_policies_for_app(&self, app: &AppId, now: Millis) -> Vec<Policy> {
        self.state
            .read()
            .policies
            .values()
            .filter(|p| &p.app_id == app && p.is_active(now))
            .cloned()
            .collect()
    }

    pub fn last_grant(&self, app: &AppId, store: &StoreId) -> Option<Millis> {
        self.state
            .read()
            .ledger
            .get(&(app.clone(), store.clone()))
            .copied()
    }

    /// Maps an audit fingerprint back to the token the arbiter minted.
    pub fn token_for_fingerprint(&self, fingerprint: &str) -> Option<TokenId> {
        self.state.read().minted.get(fingerprint).cloned()
    }

    pub fn events(&self) -> Vec<ArbiterEvent> {
        self.state.read().events.clone()
    }
}

fn decide(root: &[u8], st: &State, token: &AccessToken, req: &AccessRequest) -> Decision {
    if !token.verify_mac(root) {
        return Decision::deny(DenyReason::BadMac);
    }
    let Some(claims) = Claims::parse(token) else {
        return Decision::deny(DenyReason::BadMac);
    };
    if claims.stores.iter().any(|s| s != &req.store_id) {
        return Decision::deny(DenyReason::WrongStore);
    }
    let Some(policy) = st.policies.get(&claims.policy) else {
        return Decision::deny(DenyReason::Revoked);
    };
    if policy.app_id != claims.app || policy.store_id != req.store_id {
        return Decision::deny(DenyReason::BadMac);
    }
    if policy.revoked {
        return Decision::deny(DenyReason::Revoked);
    }
    if req.now >= claims.expires.min(policy.expiry) {
        return Decision::deny(DenyReason::Expired);
    }
    if !claims.actions.contains(&req.action) || !policy.actions.contains(&req.action) {
        return Decision::deny(DenyReason::ActionNotGranted);
    }
    if req.action == Action::Query {
        let period = claims.sample_period.max(policy.max_sample_period_ms);
        let last = st
            .ledger
            .get(&(claims.app.clone(), req.store_id.clone()))
            .copied()
            .or(req.last_granted_time);
        if let Some(last) = last {
            if (req.now - last) < period as i64 {
                return Decision::deny(DenyReason::RateExceeded);
            }
        }
    }
    Decision::Allow {
        policy_id: policy.policy_id.clone(),
    }
}

/// Effective constraints after folding every caveat; repeated keys can only narrow.
struct Claims {
    app: AppId,
    stores: Vec<StoreId>,
    policy: PolicyId,
    actions: BTreeSet<Action>,
    sample_period: u64,
    expires: Millis,
}

impl Claims {
    fn parse(token: &AccessToken) -> Option<Self> {
        let mut app: Option<String> = None;
        let mut stores = Vec::new();
        let mut policy: Option<String> = None;
        let mut actions: Option<BTreeSet<Action>> = None;
        let mut sample_period = 0u64;
        let mut expires: Option<Millis> = None;
        for c in &token.caveats {
            match c.key.as_str() {
                CAVEAT_APP => match &app {
                    Some(a) if a != &c.value => return None,
                    _ => app = Some(c.value.clone()),
                },
                CAVEAT_STORE => stores.push(StoreId::new(&c.value)),
                CAVEAT_POLICY => match &policy {
                    Some(p) if p != &c.value => return None,
                    _ => policy = Some(c.value.clone()),
                },
                CAVEAT_ACTIONS => {
                    let set = decode_actions(&c.value)?;
                    actions = Some(match actions {
                        Some(prev) => prev.intersection(&set).copied().collect(),
                        None => set,
                    });
                }
                CAVEAT_SAMPLE_PERIOD => sample_period = sample_period.max(c.value.parse().ok()?),
                CAVEAT_REPORT_PERIOD => {
                    c.value.parse::<u64>().ok()?;
                }
                CAVEAT_EXPIRES => {
                    let e: Millis = c.value.parse().ok()?;
                    expires = Some(expires.map_or(e, |p| p.min(e)));
                }
                _ => return None,
            }
        }
        if stores.is_empty() {
            return None;
        }
        Some(Self {
            app: AppId::new(app?),
            stores,
            policy: PolicyId::new(policy?),
            actions: actions?,
            sample_period,
            expires: expires?,
        })
    }
}
