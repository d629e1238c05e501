//! The route table and request dispatch.
//!
//! Every route has one auth class. Session routes act for a logged-in user,
//! token routes for an app holding an arbiter token; neither credential is
//! accepted on the other's routes.

use super::wire::{Auth, Method, Request, Response};
use crate::accounts::{AccountError, Role, SharingPrefs};
use crate::appstore::{Package, PublishError, RateError, SearchFilter};
use crate::arbiter::{AccessToken, Action};
use crate::ids::{AppId, ExportId, Millis, NotificationId, RunId, SlaId, StoreId, UserId};
use crate::manifest::UserChoices;
use crate::notify::Notification;
use crate::platform::{Databox, PlatformError};
use crate::runtime::{ExportDecision, ExportError, RuntimeError};
use crate::sim::{GeneratorParams, SimError, SimProfile};
use crate::store::{Command, ManageOp, Principal, QuerySpec, SourceKind, StoreError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::mpsc::Receiver;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthClass {
    Public,
    /// Session, or nothing while the box has no accounts.
    Bootstrap,
    Session,
    /// Session of an account with the owner role.
    Owner,
    Token,
}

/// The authenticated party behind a request.
#[derive(Debug, Clone)]
pub enum Caller {
    Anonymous,
    User(UserId),
    App(AccessToken),
}

impl Caller {
    fn user(&self) -> Result<&UserId, ApiError> {
        match self {
            Caller::User(u) => Ok(u),
            _ => Err(ApiError::new(401, "unauthenticated", "a user session is required")),
        }
    }

    fn token(&self) -> Result<&AccessToken, ApiError> {
        match self {
            Caller::App(t) => Ok(t),
            _ => Err(ApiError::new(401, "unauthenticated", "an access token is required")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(422, "invalid", message)
    }

    pub fn into_response(self) -> Response {
        Response::json(self.status, &json!({ "error": { "code": self.code, "message": self.message } }))
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let (status, code) = classify(&e);
        ApiError::new(status, code, e.to_string())
    }
}

fn classify(e: &PlatformError) -> (u16, &'static str) {
    use PlatformError as P;
    match e {
        P::Account(AccountError::NotOwner) => (403, "forbidden"),
        P::Account(AccountError::Duplicate(_)) => (409, "conflict"),
        P::Account(AccountError::BadKey) => (401, "bad-credentials"),
        P::Account(AccountError::Unknown(_)) => (404, "not-found"),
        P::Account(_) => (422, "invalid"),
        P::Store(s) => store_status(s),
        P::Publish(PublishError::Duplicate(_)) => (409, "conflict"),
        P::Publish(_) => (422, "invalid-package"),
        P::Resolve(_) => (422, "invalid-choices"),
        P::Compile(_) | P::Arbiter(_) => (409, "conflict"),
        P::Runtime(RuntimeError::UnknownApp(_) | RuntimeError::UnknownRun(_)) => (404, "not-found"),
        P::Runtime(RuntimeError::AlreadyLoaded(_)) => (409, "conflict"),
        P::Runtime(RuntimeError::Export(ExportError::Unknown(_))) => (404, "not-found"),
        P::Runtime(RuntimeError::Export(ExportError::NotImplicated(_))) => (403, "forbidden"),
        P::Runtime(RuntimeError::Export(ExportError::NotApproved(_))) => (409, "conflict"),
        P::Runtime(RuntimeError::Store(s)) => store_status(s),
        P::Runtime(_) => (422, "invalid"),
        P::Sim(SimError::AlreadyDriven(_)) => (409, "conflict"),
        P::Sim(SimError::UnknownStore(_)) => (404, "not-found"),
        P::Sim(_) => (422, "invalid"),
        P::Notify(crate::notify::NotifyError::Unknown(_)) => (404, "not-found"),
        P::Notify(_) => (403, "forbidden"),
        P::Rate(RateError::UnknownApp(_)) => (404, "not-found"),
        P::Rate(RateError::NotInstalled(_)) => (403, "forbidden"),
        P::Rate(RateError::OutOfRange(_)) => (422, "invalid"),
        P::UnknownUser(_) | P::UnknownApp(_) | P::UnknownSla(_) => (404, "not-found"),
        P::AlreadyInstalled(_) | P::NotVirtual => (409, "conflict"),
        P::NotOwner { .. } | P::NotParty(_) => (403, "forbidden"),
        P::Denied(_) => (403, "denied"),
        P::KindMismatch { .. } | P::NoSchema(_) => (422, "invalid"),
    }
}

fn store_status(e: &StoreError) -> (u16, &'static str) {
    match e {
        StoreError::UnknownStore(_) => (404, "not-found"),
        StoreError::Denied { .. } => (403, "denied"),
        StoreError::NotOwner(_) | StoreError::Unauthorized(_) => (403, "forbidden"),
        StoreError::DuplicateSource(_) | StoreError::WriterAlreadyRegistered(_) => (409, "conflict"),
        StoreError::Io(_) => (500, "io"),
        _ => (422, "invalid"),
    }
}

type Handler = fn(&Api, &Caller, &Value) -> Result<Reply, ApiError>;

pub enum Reply {
    Json(Value),
    /// JSON lines.
    Lines(String),
}

pub struct Route {
    pub method: Method,
    pub path: &'static str,
    pub auth: AuthClass,
    pub summary: &'static str,
    handler: Handler,
}

macro_rules! routes {
    ($(($m:ident, $p:literal, $a:ident, $h:ident, $s:literal)),* $(,)?) => {
        &[$(Route { method: Method::$m, path: $p, auth: AuthClass::$a, summary: $s, handler: $h }),*]
    };
}

/// The event stream route; served by the connection loop rather than a handler.
pub const EVENTS_PATH: &str = "/events";

pub static ROUTES: &[Route] = routes![
    (Get, "/health", Public, health, "liveness and current box time"),
    (Get, "/routes", Public, route_table, "this table"),
    (Post, "/login", Public, login, "exchange a login key for a session"),
    (Get, "/appstore", Public, appstore_search, "search listings"),
    (Get, "/appstore/listing", Public, appstore_listing, "one listing"),
    (Post, "/accounts", Bootstrap, create_account, "create an account"),
    (Post, "/logout", Session, logout, "end the session"),
    (Get, "/me", Session, me, "the caller's account"),
    (Get, "/accounts", Session, accounts, "all accounts"),
    (Put, "/accounts/sharing", Session, set_sharing, "sharing preferences"),
    (Get, "/sources", Session, sources, "stores the caller owns"),
    (Post, "/sources", Session, add_source, "register a device source"),
    (Post, "/sources/share", Session, share_source, "add a co-owner"),
    (Post, "/sources/driver", Session, start_driver, "attach a simulated driver"),
    (Post, "/stores/manage", Session, manage_store, "redact, clear or delete"),
    (Get, "/stores/audit", Session, store_audit, "audit log of an owned store"),
    (Get, "/appstore/recommend", Session, recommend, "listings installable with present sources"),
    (Post, "/appstore/publish", Owner, publish, "publish a package"),
    (Post, "/appstore/rate", Session, rate, "rate an installed app"),
    (Post, "/apps/install", Session, install, "configure a manifest and install"),
    (Get, "/apps", Session, apps, "installed apps the caller is party to"),
    (Get, "/apps/views", Session, app_views, "latest visualisation values"),
    (Get, "/apps/runs", Session, app_runs, "run ids"),
    (Get, "/apps/trace", Session, app_trace, "provenance of one run, latest by default"),
    (Post, "/apps/terminate", Session, terminate, "stop an app"),
    (Post, "/apps/token", Session, issue_token, "mint a token for an installed app"),
    (Get, "/slas", Session, slas, "the caller's agreements"),
    (Get, "/slas/receipt", Session, sla_receipt, "signed copy of an agreement"),
    (Post, "/slas/withdraw", Session, withdraw, "withdraw consent"),
    (Get, "/exports", Session, exports, "export items the caller may decide"),
    (Post, "/exports/decide", Session, decide, "approve or deny a staged export"),
    (Get, "/notifications", Session, notifications, "the caller's notifications"),
    (Post, "/notifications/ack", Session, acknowledge, "mark a notification read"),
    (Get, "/events", Session, events_placeholder, "server-pushed notification stream"),
    (Post, "/clock/advance", Owner, advance, "advance the virtual clock and tick apps"),
    (Get, "/audit/dump", Owner, audit_dump, "every audit record as JSON lines"),
    (Get, "/receipts", Owner, receipts, "frames received by the local processor"),
    (Post, "/exports/retry", Owner, retry_export, "retry an undelivered export"),
    (Post, "/data/query", Token, data_query, "token-authorized query"),
    (Post, "/data/actuate", Token, data_actuate, "token-authorized actuation"),
    (Get, "/data/check", Token, data_check, "decision for a token without using it"),
];

pub struct Api {
    pub databox: Arc<Databox>,
}

impl Api {
    pub fn new(databox: Arc<Databox>) -> Self {
        Self { databox }
    }

    pub fn route(method: Method, path: &str) -> Option<&'static Route> {
        ROUTES.iter().find(|r| r.method == method && r.path == path)
    }

    /// Resolves the request's credentials against the route's auth class.
    pub fn authenticate(&self, req: &Request, class: AuthClass) -> Result<Caller, ApiError> {
        let accounts = self.databox.accounts();
        let session_user = |s: &str| {
            accounts
                .session_user(s)
                .ok_or_else(|| ApiError::new(401, "unauthenticated", "unknown or expired session"))
        };
        match (class, &req.auth) {
            (AuthClass::Public, Auth::Session(s)) => Ok(accounts.session_user(s).map_or(Caller::Anonymous, Caller::User)),
            (AuthClass::Public, _) => Ok(Caller::Anonymous),
            (AuthClass::Bootstrap, Auth::None) if accounts.list().is_empty() => Ok(Caller::Anonymous),
            (AuthClass::Token, Auth::Token(t)) => AccessToken::from_wire(t)
                .map(Caller::App)
                .map_err(|_| ApiError::new(401, "bad-token", "token does not decode")),
            (AuthClass::Token, Auth::Session(_)) => Err(ApiError::new(
                403,
                "wrong-credential",
                "data routes take an access token, not a user session",
            )),
            (_, Auth::Token(_)) => Err(ApiError::new(
                403,
                "wrong-credential",
                "account and consent routes take a user session, not an access token",
            )),
            (AuthClass::Owner, Auth::Session(s)) => {
                let u = session_user(s)?;
                if accounts.is_owner(&u) {
                    Ok(Caller::User(u))
                } else {
                    Err(ApiError::new(403, "forbidden", "owner role required"))
                }
            }
            (_, Auth::Session(s)) => session_user(s).map(Caller::User),
            (_, Auth::None) => Err(ApiError::new(401, "unauthenticated", "credentials required")),
        }
    }

    pub fn dispatch(&self, req: &Request) -> Response {
        match self.try_dispatch(req) {
            Ok(Reply::Json(v)) => Response::json(200, &v),
            Ok(Reply::Lines(s)) => Response::text(200, s).with_header("content-type", "application/jsonl"),
            Err(e) => e.into_response(),
        }
    }

    fn try_dispatch(&self, req: &Request) -> Result<Reply, ApiError> {
        let route = match Api::route(req.method, &req.path) {
            Some(r) => r,
            None if ROUTES.iter().any(|r| r.path == req.path) => {
                return Err(ApiError::new(405, "method-not-allowed", format!("{} {}", req.method.as_str(), req.path)))
            }
            None => return Err(ApiError::new(404, "no-route", format!("no route {}", req.path))),
        };
        let caller = self.authenticate(req, route.auth)?;
        let params = params(req)?;
        (route.handler)(self, &caller, &params)
    }

    /// Opens the caller's notification stream.
    pub fn subscribe(&self, req: &Request) -> Result<Receiver<Notification>, ApiError> {
        let caller = self.authenticate(req, AuthClass::Session)?;
        Ok(self.databox.notifier().subscribe(Some(caller.user()?.clone())))
    }
}

/// Body object merged with query parameters; numeric query values become numbers.
fn params(req: &Request) -> Result<Value, ApiError> {
    let mut v = if req.body.is_empty() {
        json!({})
    } else {
        serde_json::from_slice(&req.body).map_err(|e| ApiError::new(400, "bad-json", e.to_string()))?
    };
    let Value::Object(map) = &mut v else {
        return Err(ApiError::new(400, "bad-json", "body must be a JSON object"));
    };
    for (k, s) in &req.query {
        let val = s.parse::<i64>().map(Value::from).unwrap_or_else(|_| Value::String(s.clone()));
        map.entry(k.clone()).or_insert(val);
    }
    Ok(v)
}

fn arg<T: DeserializeOwned>(p: &Value, key: &str) -> Result<T, ApiError> {
    let v = p.get(key).ok_or_else(|| ApiError::bad(format!("missing {key}")))?;
    serde_json::from_value(v.clone()).map_err(|e| ApiError::bad(format!("{key}: {e}")))
}

fn opt<T: DeserializeOwned>(p: &Value, key: &str) -> Result<Option<T>, ApiError> {
    match p.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(_) => arg(p, key).map(Some),
    }
}

fn ok<T: Serialize>(v: T) -> Result<Reply, ApiError> {
    Ok(Reply::Json(serde_json::to_value(v).expect("reply serializes")))
}

fn owns(api: &Api, user: &UserId, store: &StoreId) -> Result<(), ApiError> {
    let owners = api
        .databox
        .stores()
        .owners(store)
        .ok_or_else(|| ApiError::new(404, "not-found", format!("unknown store {store}")))?;
    if owners.contains(user) {
        Ok(())
    } else {
        Err(ApiError::new(403, "forbidden", format!("{user} does not own {store}")))
    }
}

/// The installing user, or any owner-role account, may act on an app.
fn party(api: &Api, user: &UserId, app: &AppId) -> Result<(), ApiError> {
    let info = api
        .databox
        .app_info(app)
        .ok_or_else(|| ApiError::new(404, "not-found", format!("unknown app {app}")))?;
    if info.owners.contains(user) || api.databox.accounts().is_owner(user) {
        Ok(())
    } else {
        Err(ApiError::new(403, "forbidden", format!("{user} is not party to {app}")))
    }
}

fn health(api: &Api, _: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(json!({ "status": "ok", "now": api.databox.now() }))
}

fn route_table(_: &Api, _: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(ROUTES
        .iter()
        .map(|r| json!({ "method": r.method.as_str(), "path": r.path, "auth": r.auth, "summary": r.summary }))
        .collect::<Vec<_>>())
}

fn login(api: &Api, _: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let user: UserId = arg(p, "user_id")?;
    let key: String = arg(p, "key")?;
    let session = api.databox.accounts().login(&user, &key).map_err(PlatformError::from)?;
    ok(json!({ "session": session, "user_id": user }))
}

fn appstore_search(api: &Api, _: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let filter = SearchFilter {
        kinds: opt(p, "kinds")?.unwrap_or_default(),
        max_risk: opt(p, "max_risk")?,
        accredited_only: opt(p, "accredited_only")?.unwrap_or(false),
    };
    ok(api.databox.search(&filter))
}

fn appstore_listing(api: &Api, _: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    match api.databox.appstore().listing(&app) {
        Some(l) => ok(l),
        None => Err(ApiError::new(404, "not-found", format!("no listing for {app}"))),
    }
}

fn create_account(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let name: String = arg(p, "name")?;
    let role: Role = opt(p, "role")?.unwrap_or(Role::Member);
    let by = match c {
        Caller::User(u) => Some(u),
        _ => None,
    };
    ok(api.databox.create_account(by, &name, role)?)
}

fn logout(api: &Api, _: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let session: Option<String> = opt(p, "session")?;
    ok(json!({ "ended": session.is_some_and(|s| api.databox.accounts().logout(&s)) }))
}

fn me(api: &Api, c: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(api.databox.accounts().get(c.user()?))
}

fn accounts(api: &Api, _: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(api.databox.accounts_list())
}

fn set_sharing(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let prefs = SharingPrefs {
        accept_sharing_requests: arg(p, "accept_sharing_requests")?,
    };
    api.databox
        .accounts()
        .set_sharing(c.user()?, prefs.clone())
        .map_err(PlatformError::from)?;
    ok(prefs)
}

fn sources(api: &Api, c: &Caller, _: &Value) -> Result<Reply, ApiError> {
    let user = c.user()?;
    let stores = api.databox.stores();
    let out: Vec<Value> = stores
        .store_ids()
        .into_iter()
        .filter_map(|id| {
            let s = stores.source(&id)?;
            s.owner_ids.contains(user).then(|| {
                json!({ "store_id": id, "source": s, "records": stores.record_count(&id) })
            })
        })
        .collect();
    ok(out)
}

fn add_source(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let user = c.user()?.clone();
    let id: String = arg(p, "id")?;
    let kind: SourceKind = arg(p, "kind")?;
    let label: String = opt(p, "label")?.unwrap_or_default();
    let mut owners = vec![user.clone()];
    for o in opt::<Vec<UserId>>(p, "co_owners")?.unwrap_or_default() {
        if !owners.contains(&o) {
            owners.push(o);
        }
    }
    let store = api.databox.add_source(&owners, &id, kind, &label)?;
    ok(json!({ "store_id": store }))
}

fn share_source(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let store: StoreId = arg(p, "store_id")?;
    let with: UserId = arg(p, "with")?;
    api.databox.share_source(&store, c.user()?, &with)?;
    ok(json!({ "store_id": store, "owners": api.databox.stores().owners(&store) }))
}

#[derive(Deserialize)]
struct DriverArgs {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    cadence_ms: Option<Millis>,
    #[serde(default)]
    household_seed: u64,
    #[serde(default)]
    params: GeneratorParams,
}

fn start_driver(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let store: StoreId = arg(p, "store_id")?;
    owns(api, c.user()?, &store)?;
    let a: DriverArgs = serde_json::from_value(p.clone()).map_err(|e| ApiError::bad(e.to_string()))?;
    let kind = api.databox.stores().kind(&store).expect("owned store exists");
    let mut profile = SimProfile::new(kind, a.seed);
    if let Some(c) = a.cadence_ms {
        profile = profile.with_cadence(c);
    }
    profile.household_seed = a.household_seed;
    profile.params = a.params;
    api.databox.start_driver(&store, profile)?;
    ok(json!({ "store_id": store, "driver": "started" }))
}

fn manage_store(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let store: StoreId = arg(p, "store_id")?;
    let op: ManageOp = arg(p, "op")?;
    ok(api.databox.manage_store(&store, &op, c.user()?)?)
}

fn store_audit(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let store: StoreId = arg(p, "store_id")?;
    let range = match (opt::<Millis>(p, "from")?, opt::<Millis>(p, "to")?) {
        (None, None) => None,
        (f, t) => Some((f.unwrap_or(Millis::MIN), t.unwrap_or(Millis::MAX))),
    };
    ok(api.databox.audit(&store, &Principal::User(c.user()?.clone()), range)?)
}

fn recommend(api: &Api, _: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(api.databox.recommend())
}

fn publish(api: &Api, _: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let package: Package = arg(p, "package")?;
    ok(api.databox.publish(package)?)
}

fn rate(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    let stars: u8 = arg(p, "stars")?;
    ok(api.databox.rate(&app, c.user()?, stars)?)
}

fn install(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    let mut choices: UserChoices = arg(p, "choices")?;
    choices.user_id = c.user()?.clone();
    ok(api.databox.install(&app, &choices)?)
}

fn apps(api: &Api, c: &Caller, _: &Value) -> Result<Reply, ApiError> {
    let user = c.user()?;
    let is_owner = api.databox.accounts().is_owner(user);
    ok(api
        .databox
        .runtime()
        .app_ids()
        .iter()
        .filter_map(|a| api.databox.app_info(a))
        .filter(|i| is_owner || i.owners.contains(user))
        .collect::<Vec<_>>())
}

fn app_views(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    party(api, c.user()?, &app)?;
    ok(api.databox.views(&app))
}

fn app_runs(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    party(api, c.user()?, &app)?;
    ok(api.databox.runtime().runs(&app))
}

fn app_trace(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    party(api, c.user()?, &app)?;
    match opt::<RunId>(p, "run")? {
        Some(run) => ok(api.databox.inspect(&app, &run)?),
        None => match api.databox.runtime().latest_trace(&app) {
            Some(t) => ok(t),
            None => Err(ApiError::new(404, "not-found", format!("{app} has not run"))),
        },
    }
}

fn terminate(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    party(api, c.user()?, &app)?;
    ok(api.databox.terminate(&app)?)
}

fn issue_token(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let app: AppId = arg(p, "app")?;
    let store: StoreId = arg(p, "store_id")?;
    let t = api.databox.issue_token(&app, &store, c.user()?)?;
    ok(json!({ "token": t.to_wire(), "fingerprint": t.fingerprint() }))
}

fn slas(api: &Api, c: &Caller, _: &Value) -> Result<Reply, ApiError> {
    let user = c.user()?;
    ok(api
        .databox
        .slas()
        .into_iter()
        .filter(|s| &s.user_id == user)
        .collect::<Vec<_>>())
}

fn sla_receipt(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let sla: SlaId = arg(p, "sla_id")?;
    let r = api.databox.receipt(&sla)?;
    if &r.sla.user_id != c.user()? {
        return Err(ApiError::new(403, "forbidden", "not your agreement"));
    }
    ok(r)
}

fn withdraw(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let sla: SlaId = arg(p, "sla_id")?;
    ok(api.databox.withdraw(&sla, c.user()?)?)
}

fn exports(api: &Api, c: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(api.databox.exports_for(c.user()?))
}

fn decide(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let item: ExportId = arg(p, "item_id")?;
    let decision: ExportDecision = arg(p, "decision")?;
    let state = api.databox.decide_export(&item, decision, c.user()?)?;
    ok(json!({ "item_id": item, "state": state }))
}

fn notifications(api: &Api, c: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(api.databox.notifications(c.user()?))
}

fn acknowledge(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let id: NotificationId = arg(p, "notif_id")?;
    ok(json!({ "changed": api.databox.acknowledge(&id, c.user()?)? }))
}

fn events_placeholder(_: &Api, _: &Caller, _: &Value) -> Result<Reply, ApiError> {
    Err(ApiError::new(400, "stream-only", "open /events on a dedicated connection"))
}

fn advance(api: &Api, _: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let to = match (opt::<Millis>(p, "to_ms")?, opt::<Millis>(p, "by_ms")?) {
        (Some(t), None) => t,
        (None, Some(d)) if d >= 0 => api.databox.now() + d,
        _ => return Err(ApiError::bad("give exactly one of to_ms or a non-negative by_ms")),
    };
    let every: Option<Millis> = opt(p, "every_ms")?;
    let reports = match every {
        Some(e) if e > 0 => api.databox.run_until(to, e)?,
        Some(_) => return Err(ApiError::bad("every_ms must be positive")),
        None => api.databox.advance_to(to)?,
    };
    ok(json!({ "now": api.databox.now(), "reports": reports }))
}

fn audit_dump(api: &Api, _: &Caller, _: &Value) -> Result<Reply, ApiError> {
    Ok(Reply::Lines(api.databox.audit_dump()))
}

fn receipts(api: &Api, _: &Caller, _: &Value) -> Result<Reply, ApiError> {
    ok(api.databox.receipts())
}

fn retry_export(api: &Api, _: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let item: ExportId = arg(p, "item_id")?;
    let out = api
        .databox
        .runtime()
        .exports()
        .retry(&item, api.databox.now())
        .map_err(|e| PlatformError::from(e))?;
    ok(out)
}

fn data_query(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let store: StoreId = arg(p, "store_id")?;
    let spec: QuerySpec = arg(p, "spec")?;
    ok(api.databox.app_query(c.token()?, &store, &spec)?)
}

fn data_actuate(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let store: StoreId = arg(p, "store_id")?;
    let command: Command = arg(p, "command")?;
    ok(json!({ "seq_no": api.databox.app_actuate(c.token()?, &store, command)? }))
}

fn data_check(api: &Api, c: &Caller, p: &Value) -> Result<Reply, ApiError> {
    let store: StoreId = arg(p, "store_id")?;
    let action: Action = arg(p, "action")?;
    ok(api.databox.check_token(c.token()?, &store, action))
}
