use crate::ids::{AppId, Millis, NodeId, RunId};
use serde::{Deserialize, Serialize};

/// One executed node in one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub node_id: NodeId,
    pub node_kind: String,
    pub input: String,
    pub output: String,
    /// Rows returned, for source nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    pub timestamp: Millis,
}

/// Entries are in the flow's topological order, one per executed node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceTrace {
    pub run_id: RunId,
    pub app_id: AppId,
    pub started_at: Millis,
    pub entries: Vec<ProvenanceEntry>,
}

impl ProvenanceTrace {
    pub fn entry(&self, node: &NodeId) -> Option<&ProvenanceEntry> {
        self.entries.iter().find(|e| &e.node_id == node)
    }

    pub fn node_ids(&self) -> Vec<&NodeId> {
        self.entries.iter().map(|e| &e.node_id).collect()
    }
}
