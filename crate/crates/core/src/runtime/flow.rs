//! Flow documents: the node graph an app is built from.

use crate::crypto;
use crate::ids::{AppId, NodeId};
use crate::manifest::Manifest;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub type Params = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NodeKind {
    /// Reads a source declared in the manifest, by its declared name.
    Source { source: String },
    Process {
        function: String,
        #[serde(default)]
        params: Params,
    },
    Visualisation {
        #[serde(default)]
        title: String,
    },
    /// Drives an actuator source declared in the manifest.
    Actuation { source: String, command: String },
    Export { recipient: String },
    DerivedStore { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeClass {
    Source,
    Process,
    Output,
}

impl NodeKind {
    pub fn class(&self) -> NodeClass {
        match self {
            NodeKind::Source { .. } => NodeClass::Source,
            NodeKind::Process { .. } => NodeClass::Process,
            _ => NodeClass::Output,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Source { .. } => "source",
            NodeKind::Process { .. } => "process",
            NodeKind::Visualisation { .. } => "visualisation",
            NodeKind::Actuation { .. } => "actuation",
            NodeKind::Export { .. } => "export",
            NodeKind::DerivedStore { .. } => "derived-store",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNode {
    pub id: NodeId,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    /// Input label at the receiving node; defaults to the sending node's id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<String>,
}

impl Edge {
    pub fn port(&self) -> &str {
        self.port.as_deref().unwrap_or(self.from.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub app_id: AppId,
    #[serde(default)]
    pub nodes: Vec<FlowNode>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlowError {
    #[error("flow document: {0}")]
    Parse(String),
    #[error("flow has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("flow graph contains a cycle through {0}")]
    Cycle(NodeId),
    #[error("source node {0} has an input")]
    SourceWithInput(NodeId),
    #[error("output node {0} has an outgoing edge")]
    OutputWithOutput(NodeId),
    #[error("process node {0} has no input")]
    ProcessWithoutInput(NodeId),
    #[error("process node {0} has no output")]
    ProcessWithoutOutput(NodeId),
    #[error("output node {0} has no input")]
    OutputWithoutInput(NodeId),
    #[error("flow app id {flow} does not match manifest app id {manifest}")]
    AppMismatch { flow: AppId, manifest: AppId },
    #[error("node {node} references source {source_name} not declared by the manifest")]
    UndeclaredSource { node: NodeId, source_name: String },
    #[error("node {node} needs action {action} on {source_name}, which the manifest does not declare")]
    UndeclaredAction {
        node: NodeId,
        source_name: String,
        action: &'static str,
    },
    #[error("export node {0} in an app whose manifest keeps data on the box")]
    ExportWithoutOffBox(NodeId),
    #[error("export node {node} is fed directly by non-process node {from}")]
    RawExport { node: NodeId, from: NodeId },
    #[error("pass-through node {0} needs a manifest declaring raw pass-through")]
    UndeclaredPassThrough(NodeId),
}

/// Function id of the raw pass-through process.
pub const PASS_THROUGH: &str = "passthrough";

impl Flow {
    /// Parses TOML or JSON (detected by a leading `{`).
    pub fn parse(text: &str) -> Result<Self, FlowError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| FlowError::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| FlowError::Parse(e.to_string()))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("flow is TOML-representable")
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("flow serializes")
    }

    pub fn hash(&self) -> String {
        crypto::sha256_hex(&self.canonical_bytes())
    }

    pub fn node(&self, id: &NodeId) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn nodes_of(&self, class: NodeClass) -> impl Iterator<Item = &FlowNode> {
        self.nodes.iter().filter(move |n| n.kind.class() == class)
    }

    pub fn has_export(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.kind, NodeKind::Export { .. }))
    }

    pub fn inputs_of<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| &e.to == id)
    }

    /// Checks the structural invariants and returns node ids in topological order.
    pub fn validate(&self) -> Result<Vec<NodeId>, FlowError> {
        if self.nodes.is_empty() {
            return Err(FlowError::Empty);
        }
        let mut index = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(&n.id, i).is_some() {
                return Err(FlowError::DuplicateNode(n.id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        let mut indeg = vec![0usize; self.nodes.len()];
        let mut outdeg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            let from = *index
                .get(&e.from)
                .ok_or_else(|| FlowError::UnknownNode(e.from.clone()))?;
            let to = *index
                .get(&e.to)
                .ok_or_else(|| FlowError::UnknownNode(e.to.clone()))?;
            if !seen.insert((from, to)) {
                return Err(FlowError::DuplicateEdge(e.from.clone(), e.to.clone()));
            }
            outdeg[from] += 1;
            indeg[to] += 1;
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let id = n.id.clone();
            match n.kind.class() {
                NodeClass::Source if indeg[i] > 0 => return Err(FlowError::SourceWithInput(id)),
                NodeClass::Output if outdeg[i] > 0 => return Err(FlowError::OutputWithOutput(id)),
                NodeClass::Output if indeg[i] == 0 => return Err(FlowError::OutputWithoutInput(id)),
                NodeClass::Process if indeg[i] == 0 => {
                    return Err(FlowError::ProcessWithoutInput(id))
                }
                NodeClass::Process if outdeg[i] == 0 => {
                    return Err(FlowError::ProcessWithoutOutput(id))
                }
                _ => {}
            }
        }
        self.topo_order(&index, indeg)
    }

    /// Kahn's algorithm; ready nodes are taken in declaration order.
    fn topo_order(
        &self,
        index: &HashMap<&NodeId, usize>,
        mut indeg: Vec<usize>,
    ) -> Result<Vec<NodeId>, FlowError> {
        let mut ready: BTreeSet<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(self.nodes[i].id.clone());
            for e in self.edges.iter().filter(|e| e.from == self.nodes[i].id) {
                let j = index[&e.to];
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        match indeg.iter().position(|&d| d > 0) {
            Some(i) => Err(FlowError::Cycle(self.nodes[i].id.clone())),
            None => Ok(order),
        }
    }

    /// Checks the flow against the manifest it ships with.
    pub fn check_against(&self, manifest: &Manifest) -> Result<(), FlowError> {
        use crate::arbiter::Action;
        if self.app_id != manifest.app_id {
            return Err(FlowError::AppMismatch {
                flow: self.app_id.clone(),
                manifest: manifest.app_id.clone(),
            });
        }
        let pass_through = manifest.short.as_ref().is_some_and(|s| s.raw_pass_through);
        for n in &self.nodes {
            let needs = match &n.kind {
                NodeKind::Source { source } => Some((source, Action::Query)),
                NodeKind::Actuation { source, .. } => Some((source, Action::Actuate)),
                _ => None,
            };
            if let Some((source, action)) = needs {
                let declared =
                    manifest
                        .source(source)
                        .ok_or_else(|| FlowError::UndeclaredSource {
                            node: n.id.clone(),
                            source_name: source.clone(),
                        })?;
                if !declared.wants(action) {
                    return Err(FlowError::UndeclaredAction {
                        node: n.id.clone(),
                        source_name: source.clone(),
                        action: action.as_str(),
                    });
                }
            }
            match &n.kind {
                NodeKind::Export { .. } => {
                    if !manifest.off_box() {
                        return Err(FlowError::ExportWithoutOffBox(n.id.clone()));
                    }
                    for e in self.inputs_of(&n.id) {
                        let from = self.node(&e.from).expect("validated edge");
                        if from.kind.class() != NodeClass::Process {
                            return Err(FlowError::RawExport {
                                node: n.id.clone(),
                                from: e.from.clone(),
                            });
                        }
                    }
                }
                NodeKind::Process { function, .. } if function == PASS_THROUGH && !pass_through => {
                    return Err(FlowError::UndeclaredPassThrough(n.id.clone()));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
