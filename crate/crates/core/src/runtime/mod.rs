//! Flow-graph app execution.
//!
//! Apps are loaded against an approved SLA, ticked on a clock (virtual in tests
//! and scenarios), and read data only through tokens the arbiter minted for the
//! SLA's policies. Each tick that reads at least one source is a run with its
//! own provenance trace. Ticks of one app never overlap.

mod export;
mod flow;
mod functions;
mod provenance;

pub use export::{
    Dispatcher, ExportDecision, ExportError, ExportItem, ExportQueue, ExportState, NullDispatcher,
    StageOutcome, StageRequest,
};
pub use flow::{Edge, Flow, FlowError, FlowNode, NodeClass, NodeKind, Params, PASS_THROUGH};
pub use functions::{
    builtin_registry, logistic, Datum, FunctionError, FunctionRegistry, Input, OccupancyDay,
    OccupancyMatrix, ProcessFunction,
};
pub use provenance::{ProvenanceEntry, ProvenanceTrace};

use crate::arbiter::{AccessToken, Action, ArbiterError, RevokeScope};
use crate::ids::{AppId, Millis, NodeId, RunId, SlaId, SourceId, StoreId, UserId};
use crate::manifest::{Manifest, Sla};
use crate::notify::{NotificationKind, Notifier};
use crate::store::{
    Command, DataSource, QuerySpec, RecordSchema, ScalarType, SourceKind, StoreEngine, StoreError,
    Value, Writer,
};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

pub const EXPORT_SCHEMA: &str = "databox.export/v1";
pub const DERIVED_SCHEMA: &str = "derived/v1";

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error("SLA {0} is not active")]
    SlaInactive(SlaId),
    #[error("SLA is for app {sla}, flow is app {flow}")]
    AppMismatch { sla: AppId, flow: AppId },
    #[error("SLA was approved for a different manifest")]
    ManifestMismatch,
    #[error("node {node} reads {source_name}, which the SLA does not grant")]
    Ungranted { node: NodeId, source_name: String },
    #[error("node {0} exports, but the SLA grants no export")]
    ExportNotGranted(NodeId),
    #[error("app {0} is already loaded")]
    AlreadyLoaded(AppId),
    #[error("unknown app {0}")]
    UnknownApp(AppId),
    #[error("unknown run {0}")]
    UnknownRun(RunId),
    #[error(transparent)]
    Arbiter(#[from] ArbiterError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppStatus {
    Running,
    /// Every due source was denied; no further ticks until reloaded.
    Suspended,
    Terminated,
}

/// What one tick did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<RunId>,
    pub queries: usize,
    pub denied: usize,
    pub actuations: usize,
    pub derived_appends: usize,
    pub staged: usize,
    pub dispatched: usize,
    pub deferred: usize,
    pub export_denied: usize,
    /// True when this tick suspended the app.
    pub suspended: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminateReport {
    pub known: bool,
    pub auto_denied: usize,
    pub revoked_policies: usize,
}

/// The structured result document an export node sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportPayload {
    pub schema: String,
    pub app_id: AppId,
    pub node: NodeId,
    pub run_id: RunId,
    pub recipient: String,
    pub produced_at: Millis,
    pub result: Datum,
}

enum NodeState {
    Source {
        store: StoreId,
        period: Millis,
        cursor: Millis,
        last_query: Option<Millis>,
    },
    Process {
        function: Box<dyn ProcessFunction>,
    },
    Visualisation,
    Actuation {
        store: StoreId,
        command: String,
    },
    Export {
        recipient: String,
    },
    DerivedStore {
        store: StoreId,
    },
}

struct AppInstance {
    app_id: AppId,
    sla: Sla,
    flow: Flow,
    order: Vec<NodeId>,
    status: AppStatus,
    nodes: HashMap<NodeId, NodeState>,
    tokens: HashMap<StoreId, AccessToken>,
    owners: BTreeSet<UserId>,
    last_output: HashMap<NodeId, Datum>,
    views: BTreeMap<NodeId, Datum>,
    runs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppInfo {
    pub app_id: AppId,
    pub sla_id: SlaId,
    pub status: AppStatus,
    pub runs: u64,
    pub owners: BTreeSet<UserId>,
}

pub struct Runtime {
    stores: Arc<StoreEngine>,
    notifier: Arc<Notifier>,
    registry: FunctionRegistry,
    exports: ExportQueue,
    apps: RwLock<BTreeMap<AppId, Arc<Mutex<AppInstance>>>>,
    traces: RwLock<BTreeMap<AppId, Vec<ProvenanceTrace>>>,
    max_traces: usize,
}

pub fn derived_source_id(app: &AppId, name: &str) -> SourceId {
    SourceId::new(format!("{app}.{name}"))
}

pub fn derived_schema() -> RecordSchema {
    RecordSchema::new(DERIVED_SCHEMA, &[("result", ScalarType::Text, "")])
}

impl Runtime {
    pub fn new(stores: Arc<StoreEngine>, notifier: Arc<Notifier>, dispatcher: Arc<dyn Dispatcher>) -> Self {
        Self {
            exports: ExportQueue::new(stores.clone(), notifier.clone(), dispatcher),
            stores,
            notifier,
            registry: FunctionRegistry::builtin(),
            apps: RwLock::new(BTreeMap::new()),
            traces: RwLock::new(BTreeMap::new()),
            max_traces: 10_000,
        }
    }

    /// Keeps at most `n` traces per app, dropping the oldest.
    pub fn with_trace_limit(mut self, n: usize) -> Self {
        self.max_traces = n.max(1);
        self
    }

    pub fn exports(&self) -> &ExportQueue {
        &self.exports
    }

    pub fn load_app(
        &self,
        flow: &Flow,
        manifest: &Manifest,
        sla: &Sla,
        now: Millis,
    ) -> Result<AppInfo, RuntimeError> {
        if !sla.is_active() || now >= sla.expires_at {
            return Err(RuntimeError::SlaInactive(sla.sla_id.clone()));
        }
        if sla.app_id != flow.app_id {
            return Err(RuntimeError::AppMismatch {
                sla: sla.app_id.clone(),
                flow: flow.app_id.clone(),
            });
        }
        if sla.manifest_hash != manifest.hash() {
            return Err(RuntimeError::ManifestMismatch);
        }
        let order = flow.validate()?;
        flow.check_against(manifest)?;
        if let Some(existing) = self.apps.read().get(&flow.app_id) {
            if existing.lock().status != AppStatus::Terminated {
                return Err(RuntimeError::AlreadyLoaded(flow.app_id.clone()));
            }
        }

        let app = &flow.app_id;
        let ungranted = |node: &FlowNode, source: &str, action: Action| {
            sla.grant(source)
                .filter(|g| g.actions.contains(&action))
                .ok_or_else(|| RuntimeError::Ungranted {
                    node: node.id.clone(),
                    source_name: source.to_string(),
                })
        };
        let mut nodes = HashMap::new();
        let mut derived = Vec::new();
        for node in &flow.nodes {
            let state = match &node.kind {
                NodeKind::Source { source } => {
                    let g = ungranted(node, source, Action::Query)?;
                    let period = g.sample_period_ms.unwrap_or(0) as Millis;
                    NodeState::Source {
                        store: g.store_id.clone(),
                        period,
                        cursor: now - period,
                        last_query: None,
                    }
                }
                NodeKind::Process { function, params } => NodeState::Process {
                    function: self.registry.instantiate(function, params)?,
                },
                NodeKind::Visualisation { .. } => NodeState::Visualisation,
                NodeKind::Actuation { source, command } => {
                    let g = ungranted(node, source, Action::Actuate)?;
                    NodeState::Actuation {
                        store: g.store_id.clone(),
                        command: command.clone(),
                    }
                }
                NodeKind::Export { recipient } => {
                    if sla.export.is_none() {
                        return Err(RuntimeError::ExportNotGranted(node.id.clone()));
                    }
                    NodeState::Export {
                        recipient: recipient.clone(),
                    }
                }
                NodeKind::DerivedStore { name } => {
                    let store = self.derived_store(app, name, &sla.user_id)?;
                    derived.push(store.clone());
                    NodeState::DerivedStore { store }
                }
            };
            nodes.insert(node.id.clone(), state);
        }

        let arbiter = self.stores.arbiter();
        let mut tokens = HashMap::new();
        for store in sla.store_ids() {
            if !tokens.contains_key(store) {
                tokens.insert(store.clone(), arbiter.mint_token(app, store, now)?);
            }
        }
        let mut owners: BTreeSet<UserId> = sla
            .grants
            .iter()
            .filter_map(|g| self.stores.owners(&g.store_id))
            .flatten()
            .collect();
        owners.insert(sla.user_id.clone());
        for store in &derived {
            match self.stores.register_writer(store, Writer::App(app.clone())) {
                Ok(()) | Err(StoreError::WriterAlreadyRegistered(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }

        let inst = AppInstance {
            app_id: app.clone(),
            sla: sla.clone(),
            flow: flow.clone(),
            order,
            status: AppStatus::Running,
            nodes,
            tokens,
            owners,
            last_output: HashMap::new(),
            views: BTreeMap::new(),
            runs: 0,
        };
        let info = inst.info();
        self.apps.write().insert(app.clone(), Arc::new(Mutex::new(inst)));
        Ok(info)
    }

    /// Creates, or reuses from an earlier install, the app's derived store.
    fn derived_store(&self, app: &AppId, name: &str, owner: &UserId) -> Result<StoreId, StoreError> {
        let source_id = derived_source_id(app, name);
        let id = crate::store::store_id_for(&source_id);
        if self.stores.source(&id).is_some() {
            return Ok(id);
        }
        self.stores.create_store(
            DataSource {
                source_id,
                kind: SourceKind::Derived,
                owner_ids: [owner.clone()].into_iter().collect(),
                label: format!("{name} (derived by {app})"),
                schema_id: String::new(),
            },
            derived_schema(),
        )
    }

    fn instance(&self, app: &AppId) -> Option<Arc<Mutex<AppInstance>>> {
        self.apps.read().get(app).cloned()
    }

    pub fn app_ids(&self) -> Vec<AppId> {
        self.apps.read().keys().cloned().collect()
    }

    pub fn info(&self, app: &AppId) -> Option<AppInfo> {
        self.instance(app).map(|i| i.lock().info())
    }

    pub fn status(&self, app: &AppId) -> Option<AppStatus> {
        self.instance(app).map(|i| i.lock().status)
    }

    /// Latest value shown by each visualisation node.
    pub fn views(&self, app: &AppId) -> BTreeMap<NodeId, Datum> {
        self.instance(app)
            .map(|i| i.lock().views.clone())
            .unwrap_or_default()
    }

    /// Ticks every running app in app-id order.
    pub fn tick_all(&self, now: Millis) -> Vec<(AppId, TickReport)> {
        self.app_ids()
            .into_iter()
            .filter_map(|a| self.tick(&a, now).ok().map(|r| (a, r)))
            .collect()
    }

    pub fn tick(&self, app: &AppId, now: Millis) -> Result<TickReport, RuntimeError> {
        let inst = self
            .instance(app)
            .ok_or_else(|| RuntimeError::UnknownApp(app.clone()))?;
        let mut inst = inst.lock();
        if inst.status != AppStatus::Running {
            return Ok(TickReport::default());
        }
        let mut report = TickReport::default();
        let mut entries = Vec::new();
        let mut executed: HashSet<NodeId> = HashSet::new();
        let mut due = 0usize;

        let inst = &mut *inst;
        for id in inst.order.clone() {
            let Some(NodeState::Source {
                store,
                period,
                cursor,
                last_query,
            }) = inst.nodes.get_mut(&id)
            else {
                continue;
            };
            if last_query.is_some_and(|t| now - t < *period) {
                continue;
            }
            due += 1;
            let token = &inst.tokens[store];
            let spec = QuerySpec::range(*cursor, now);
            match self.stores.query(store, token, &spec, now, *last_query) {
                Ok(result) => {
                    report.queries += 1;
                    let fields = self
                        .stores
                        .schema(store)
                        .map(|s| s.field_names())
                        .unwrap_or_default();
                    let datum = Datum::Rows {
                        fields,
                        records: result.rows().to_vec(),
                    };
                    entries.push(ProvenanceEntry {
                        node_id: id.clone(),
                        node_kind: "source".into(),
                        input: format!("query {store} [{}, {})", *cursor, now),
                        output: datum.summary(),
                        rows: Some(result.row_count()),
                        timestamp: now,
                    });
                    *cursor = now;
                    *last_query = Some(now);
                    inst.last_output.insert(id.clone(), datum);
                    executed.insert(id);
                }
                Err(_) => report.denied += 1,
            }
        }
        if due > 0 && report.queries == 0 {
            inst.status = AppStatus::Suspended;
            report.suspended = true;
            self.notifier.notify(
                &inst.sla.user_id,
                NotificationKind::AppSuspended,
                inst.app_id.as_str(),
                now,
            );
            return Ok(report);
        }
        if executed.is_empty() {
            return Ok(report);
        }

        inst.runs += 1;
        let run_id = RunId::new(format!("{}/run-{:06}", inst.app_id, inst.runs));
        for id in inst.order.clone() {
            let node = inst.flow.node(&id).expect("ordered node exists");
            if node.kind.class() == NodeClass::Source {
                continue;
            }
            let edges: Vec<Edge> = inst.flow.inputs_of(&id).cloned().collect();
            if !edges.iter().any(|e| executed.contains(&e.from)) {
                continue;
            }
            let empty = Datum::Empty;
            let inputs: Vec<Input<'_>> = edges
                .iter()
                .map(|e| Input {
                    port: e.port(),
                    datum: inst.last_output.get(&e.from).unwrap_or(&empty),
                    fresh: executed.contains(&e.from),
                })
                .collect();
            let input_summary = inputs
                .iter()
                .map(|i| format!("{}: {}", i.port, i.datum.summary()))
                .collect::<Vec<_>>()
                .join("; ");
            let latest = inputs
                .iter()
                .rev()
                .find(|i| i.fresh)
                .map(|i| i.datum.clone())
                .unwrap_or(Datum::Empty);
            let kind_name = node.kind.name().to_string();
            let state = inst.nodes.get_mut(&id).expect("state per node");
            let output = match state {
                NodeState::Process { function } => {
                    let out = function.apply(&inputs, now);
                    let summary = out.summary();
                    inst.last_output.insert(id.clone(), out);
                    summary
                }
                NodeState::Visualisation => {
                    let s = format!("displayed {}", latest.summary());
                    inst.views.insert(id.clone(), latest);
                    s
                }
                NodeState::Actuation { store, command } => match actuation_value(&latest) {
                    None => "no value".into(),
                    Some(value) => {
                        let cmd = Command {
                            name: command.clone(),
                            value,
                        };
                        match self.stores.actuate(store, &inst.tokens[store], cmd, now) {
                            Ok(seq) => {
                                report.actuations += 1;
                                format!("actuated {store} seq {seq}")
                            }
                            Err(e) => format!("actuation refused: {e}"),
                        }
                    }
                },
                NodeState::DerivedStore { store } => {
                    if latest.is_empty() {
                        "no value".into()
                    } else {
                        let text = serde_json::to_string(&latest).expect("datum serializes");
                        let w = Writer::App(inst.app_id.clone());
                        match self.stores.append(store, &w, now, vec![Value::Text(text)], now) {
                            Ok(seq) => {
                                report.derived_appends += 1;
                                format!("appended {store} seq {seq}")
                            }
                            Err(e) => format!("append refused: {e}"),
                        }
                    }
                }
                NodeState::Export { recipient } => {
                    let recipient = recipient.clone();
                    self.export(inst, &id, &run_id, &recipient, latest, now, &mut report)?
                }
                NodeState::Source { .. } => unreachable!("sources handled above"),
            };
            entries.push(ProvenanceEntry {
                node_id: id.clone(),
                node_kind: kind_name,
                input: input_summary,
                output,
                rows: None,
                timestamp: now,
            });
            executed.insert(id);
        }

        // entries were gathered sources-first; restore topological order
        let pos: HashMap<&NodeId, usize> = inst.order.iter().enumerate().map(|(i, n)| (n, i)).collect();
        entries.sort_by_key(|e| pos[&e.node_id]);
        let trace = ProvenanceTrace {
            run_id: run_id.clone(),
            app_id: inst.app_id.clone(),
            started_at: now,
            entries,
        };
        let mut traces = self.traces.write();
        let list = traces.entry(inst.app_id.clone()).or_default();
        list.push(trace);
        if list.len() > self.max_traces {
            let excess = list.len() - self.max_traces;
            list.drain(..excess);
        }
        report.run_id = Some(run_id);
        Ok(report)
    }

    #[allow(clippy::too_many_arguments)]
    fn export(
        &self,
        inst: &AppInstance,
        node: &NodeId,
        run_id: &RunId,
        recipient: &str,
        result: Datum,
        now: Millis,
        report: &mut TickReport,
    ) -> Result<String, RuntimeError> {
        if result.is_empty() {
            return Ok("no value".into());
        }
        let grant = inst.sla.export.as_ref().expect("checked at load");
        let payload = ExportPayload {
            schema: EXPORT_SCHEMA.into(),
            app_id: inst.app_id.clone(),
            node: node.clone(),
            run_id: run_id.clone(),
            recipient: recipient.to_string(),
            produced_at: now,
            result,
        };
        let req = StageRequest {
            app_id: &inst.app_id,
            sla_id: &inst.sla.sla_id,
            token: &inst.tokens[&grant.store_id],
            comms_store: &grant.store_id,
            report_period_ms: grant.report_period_ms as Millis,
            preview_required: inst.sla.preview_required,
            recipient,
            payload: serde_json::to_string(&payload).expect("payload serializes"),
            owners: &inst.owners,
        };
        Ok(match self.exports.stage(req, now)? {
            StageOutcome::Staged { item_id } => {
                report.staged += 1;
                format!("staged {item_id} for preview")
            }
            StageOutcome::Dispatched { item_id } => {
                report.dispatched += 1;
                format!("dispatched {item_id}")
            }
            StageOutcome::Undelivered { item_id, error } => format!("{item_id} undelivered: {error}"),
            StageOutcome::Deferred { until } => {
                report.deferred += 1;
                format!("deferred until {until}")
            }
            StageOutcome::Denied { reason } => {
                report.export_denied += 1;
                format!("export denied: {}", reason.as_str())
            }
        })
    }

    pub fn decide_export(
        &self,
        item: &crate::ids::ExportId,
        decision: ExportDecision,
        user: &UserId,
        now: Millis,
    ) -> Result<ExportState, RuntimeError> {
        Ok(self.exports.decide(item, decision, user, now)?)
    }

    /// Stops the app: no further ticks, staged exports denied, all its policies revoked.
    /// Waits for an in-progress tick to finish.
    pub fn terminate(&self, app: &AppId, now: Millis) -> Result<TerminateReport, RuntimeError> {
        let known = match self.instance(app) {
            None => false,
            Some(inst) => {
                let mut inst = inst.lock();
                inst.status = AppStatus::Terminated;
                for state in inst.nodes.values() {
                    if let NodeState::DerivedStore { store } = state {
                        self.stores.unregister_writer(store, &Writer::App(app.clone()));
                    }
                }
                true
            }
        };
        let auto_denied = self.exports.deny_all(app, "app terminated", now)?;
        let revoked_policies = self
            .stores
            .arbiter()
            .revoke(&RevokeScope::App(app.clone()), now);
        Ok(TerminateReport {
            known,
            auto_denied,
            revoked_policies,
        })
    }

    pub fn runs(&self, app: &AppId) -> Vec<RunId> {
        self.traces
            .read()
            .get(app)
            .map(|v| v.iter().map(|t| t.run_id.clone()).collect())
            .unwrap_or_default()
    }

    pub fn inspect(&self, app: &AppId, run: &RunId) -> Result<ProvenanceTrace, RuntimeError> {
        self.traces
            .read()
            .get(app)
            .and_then(|v| v.iter().find(|t| &t.run_id == run).cloned())
            .ok_or_else(|| RuntimeError::UnknownRun(run.clone()))
    }

    pub fn traces(&self, app: &AppId) -> Vec<ProvenanceTrace> {
        self.traces.read().get(app).cloned().unwrap_or_default()
    }

    pub fn latest_trace(&self, app: &AppId) -> Option<ProvenanceTrace> {
        self.traces.read().get(app).and_then(|v| v.last().cloned())
    }
}

impl AppInstance {
    fn info(&self) -> AppInfo {
        AppInfo {
            app_id: self.app_id.clone(),
            sla_id: self.sla.sla_id.clone(),
            status: self.status,
            runs: self.runs,
            owners: self.owners.clone(),
        }
    }
}

fn actuation_value(d: &Datum) -> Option<Value> {
    match d {
        Datum::Flag { value } => Some(Value::Boolean(*value)),
        other => other.reduce().map(Value::Real),
    }
}

#[cfg(test)]
mod tests;
