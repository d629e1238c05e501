use crate::ids::{SourceId, UserId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    EnergyMeter,
    DoorSensor,
    Presence,
    Alarm,
    MicrophoneLevel,
    Bulb,
    Heating,
    HeartRate,
    Generic,
    /// App-produced store.
    Derived,
    /// Outbound channel of an off-box app; one frame per dispatched export.
    Communications,
}

impl SourceKind {
    pub const DEVICE_KINDS: [SourceKind; 9] = [
        SourceKind::EnergyMeter,
        SourceKind::DoorSensor,
        SourceKind::Presence,
        SourceKind::Alarm,
        SourceKind::MicrophoneLevel,
        SourceKind::Bulb,
        SourceKind::Heating,
        SourceKind::HeartRate,
        SourceKind::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::EnergyMeter => "energy-meter",
            SourceKind::DoorSensor => "door-sensor",
            SourceKind::Presence => "presence",
            SourceKind::Alarm => "alarm",
            SourceKind::MicrophoneLevel => "microphone-level",
            SourceKind::Bulb => "bulb",
            SourceKind::Heating => "heating",
            SourceKind::HeartRate => "heart-rate",
            SourceKind::Generic => "generic",
            SourceKind::Derived => "derived",
            SourceKind::Communications => "communications",
        }
    }

    pub fn supports_actuation(self) -> bool {
        matches!(self, SourceKind::Bulb | SourceKind::Heating)
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown source kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSource {
    pub source_id: SourceId,
    pub kind: SourceKind,
    pub owner_ids: BTreeSet<UserId>,
    /// Human annotation, e.g. "the kettle".
    #[serde(default)]
    pub label: String,
    pub schema_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarType {
    Integer,
    Real,
    Boolean,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
    #[serde(default)]
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSchema {
    pub schema_id: String,
    pub fields: Vec<FieldDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            Value::Boolean(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("field {field} expects {expected:?}")]
    Type { field: String, expected: ScalarType },
    #[error("duplicate field name {0}")]
    DuplicateField(String),
}

impl RecordSchema {
    pub fn new(schema_id: impl Into<String>, fields: &[(&str, ScalarType, &str)]) -> Self {
        Self {
            schema_id: schema_id.into(),
            fields: fields
                .iter()
                .map(|(n, t, u)| FieldDef {
                    name: n.to_string(),
                    ty: *t,
                    unit: u.to_string(),
                })
                .collect(),
        }
    }

    pub fn check(&self) -> Result<(), SchemaError> {
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            if !seen.insert(&f.name) {
                return Err(SchemaError::DuplicateField(f.name.clone()));
            }
        }
        Ok(())
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    /// Checks arity and types. Integers are widened into real fields.
    pub fn conform(&self, values: Vec<Value>) -> Result<Vec<Value>, SchemaError> {
        if values.len() != self.fields.len() {
            return Err(SchemaError::Arity {
                expected: self.fields.len(),
                got: values.len(),
            });
        }
        values
            .into_iter()
            .zip(&self.fields)
            .map(|(v, f)| match (f.ty, v) {
                (ScalarType::Integer, v @ Value::Integer(_)) => Ok(v),
                (ScalarType::Real, Value::Real(r)) if r.is_finite() => Ok(Value::Real(r)),
                (ScalarType::Real, Value::Integer(i)) => Ok(Value::Real(i as f64)),
                (ScalarType::Boolean, v @ Value::Boolean(_)) => Ok(v),
                (ScalarType::Text, v @ Value::Text(_)) => Ok(v),
                _ => Err(SchemaError::Type {
                    field: f.name.clone(),
                    expected: f.ty,
                }),
            })
            .collect()
    }
}
