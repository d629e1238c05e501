use super::schema::Value;
use crate::ids::{AppId, ExportId, Millis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub seq_no: u64,
    pub timestamp: Millis,
    pub body: RecordBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum RecordBody {
    Values { values: Vec<Value> },
    Actuation { command: Command },
    Export { frame: CommsFrame },
    /// Placeholder left by redaction; the sequence number survives, the values do not.
    Redacted,
}

impl DataRecord {
    pub fn values(&self) -> Option<&[Value]> {
        match &self.body {
            RecordBody::Values { values } => Some(values),
            _ => None,
        }
    }

    pub fn is_redacted(&self) -> bool {
        matches!(self.body, RecordBody::Redacted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub name: String,
    pub value: Value,
}

/// One dispatched export as written to the communications log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommsFrame {
    pub item_id: ExportId,
    pub app_id: AppId,
    pub recipient: String,
    /// Canonical JSON of the export payload document.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    None,
    Mean {
        field: String,
    },
    Count,
}

/// Half-open time range `[from, to)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub from: Millis,
    pub to: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rows: Option<usize>,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl QuerySpec {
    pub fn range(from: Millis, to: Millis) -> Self {
        Self {
            from,
            to,
            max_rows: None,
            aggregation: Aggregation::None,
        }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QueryResult {
    Rows { rows: Vec<DataRecord> },
    Mean { value: Option<f64>, rows: usize },
    Count { count: usize },
}

impl QueryResult {
    pub fn row_count(&self) -> usize {
        match self {
            QueryResult::Rows { rows } => rows.len(),
            QueryResult::Mean { rows, .. } => *rows,
            QueryResult::Count { count } => *count,
        }
    }

    pub fn rows(&self) -> &[DataRecord] {
        match self {
            QueryResult::Rows { rows } => rows,
            _ => &[],
        }
    }
}
