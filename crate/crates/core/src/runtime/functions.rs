//! Built-in process functions and the data passed between nodes.

use super::flow::Params;
use crate::ids::{Millis, DAY_MS};
use crate::store::DataRecord;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};

/// A value flowing along an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Datum {
    Empty,
    Rows {
        fields: Vec<String>,
        records: Vec<DataRecord>,
    },
    Scalar {
        value: f64,
    },
    Flag {
        value: bool,
    },
    Occupancy(OccupancyMatrix),
}

/// Per-day rows of per-bucket occupancy probabilities. `None` marks a bucket with no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMatrix {
    pub bucket_ms: Millis,
    pub days: Vec<OccupancyDay>,
    pub baseline: f64,
    pub scale: f64,
    /// True once the calibration window has passed and the fit is frozen.
    pub calibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyDay {
    /// Days since the epoch.
    pub day: i64,
    pub probabilities: Vec<Option<f64>>,
}

impl OccupancyMatrix {
    pub fn values(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.days.iter().flat_map(|d| d.probabilities.iter().copied())
    }
}

impl Datum {
    pub fn is_empty(&self) -> bool {
        matches!(self, Datum::Empty)
    }

    /// Short human-readable description used in provenance traces.
    pub fn summary(&self) -> String {
        match self {
            Datum::Empty => "empty".into(),
            Datum::Rows { fields, records } => {
                format!("{} rows [{}]", records.len(), fields.join(", "))
            }
            Datum::Scalar { value } => format!("scalar {value:.4}"),
            Datum::Flag { value } => format!("flag {value}"),
            Datum::Occupancy(m) => {
                let width = m.days.first().map_or(0, |d| d.probabilities.len());
                format!("occupancy matrix {}x{}", m.days.len(), width)
            }
        }
    }

    pub fn row_count(&self) -> Option<usize> {
        match self {
            Datum::Rows { records, .. } => Some(records.len()),
            _ => None,
        }
    }

    /// Reduces the datum to one number, for combiners and actuators.
    pub fn reduce(&self) -> Option<f64> {
        match self {
            Datum::Empty => None,
            Datum::Scalar { value } => Some(*value),
            Datum::Flag { value } => Some(if *value { 1.0 } else { 0.0 }),
            Datum::Rows { records, .. } => {
                let xs: Vec<f64> = records
                    .iter()
                    .filter_map(|r| r.values().and_then(|v| v.iter().find_map(|x| x.as_f64())))
                    .collect();
                mean(&xs)
            }
            Datum::Occupancy(m) => {
                let latest = m.days.last()?;
                let xs: Vec<f64> = latest.probabilities.iter().flatten().copied().collect();
                mean(&xs)
            }
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// One input delivered to a process node.
#[derive(Debug, Clone, Copy)]
pub struct Input<'a> {
    pub port: &'a str,
    pub datum: &'a Datum,
    /// False when the producing node did not execute in this run and the value is its last output.
    pub fresh: bool,
}

pub trait ProcessFunction: Send {
    fn apply(&mut self, inputs: &[Input<'_>], now: Millis) -> Datum;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FunctionError {
    #[error("unknown process function {0}")]
    Unknown(String),
    #[error("{function}: parameter {param}: {reason}")]
    BadParam {
        function: String,
        param: String,
        reason: String,
    },
}

type Factory = fn(&Params) -> Result<Box<dyn ProcessFunction>, FunctionError>;

/// Registry of process functions by id. Extended in source, never by packages.
pub struct FunctionRegistry {
    factories: HashMap<&'static str, Factory>,
}

impl FunctionRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            factories: HashMap::new(),
        };
        r.register("window-mean", |p| window(p, "window-mean", false));
        r.register("window-sum", |p| window(p, "window-sum", true));
        r.register("threshold", threshold);
        r.register("occupancy", occupancy);
        r.register("score", score);
        r.register(super::flow::PASS_THROUGH, |_| Ok(Box::new(PassThrough)));
        r
    }

    pub fn register(&mut self, id: &'static str, factory: Factory) {
        self.factories.insert(id, factory);
    }

    pub fn contains(&self, id: &str) -> bool {
        self.factories.contains_key(id)
    }

    pub fn ids(&self) -> Vec<&'static str> {
        let mut ids: Vec<_> = self.factories.keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn instantiate(&self, id: &str, params: &Params) -> Result<Box<dyn ProcessFunction>, FunctionError> {
        let f = self
            .factories
            .get(id)
            .ok_or_else(|| FunctionError::Unknown(id.to_string()))?;
        f(params)
    }
}

/// Shared instance of the built-in registry.
pub fn builtin_registry() -> &'static FunctionRegistry {
    static REGISTRY: std::sync::OnceLock<FunctionRegistry> = std::sync::OnceLock::new();
    REGISTRY.get_or_init(FunctionRegistry::builtin)
}

fn bad(function: &str, param: &str, reason: impl Into<String>) -> FunctionError {
    FunctionError::BadParam {
        function: function.into(),
        param: param.into(),
        reason: reason.into(),
    }
}

fn param_str(p: &Params, f: &str, key: &str, default: &str) -> Result<String, FunctionError> {
    match p.get(key) {
        None => Ok(default.to_string()),
        Some(v) => v
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| bad(f, key, "expected a string")),
    }
}

fn param_f64(p: &Params, f: &str, key: &str, default: f64) -> Result<f64, FunctionError> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| bad(f, key, "expected a finite number")),
    }
}

fn param_ms(p: &Params, f: &str, key: &str, default: Millis) -> Result<Millis, FunctionError> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_i64()
            .filter(|x| *x > 0)
            .ok_or_else(|| bad(f, key, "expected a positive integer")),
    }
}

/// Numeric samples of `field` (or of the first numeric field) from fresh row inputs.
fn samples<'a>(inputs: &'a [Input<'a>], field: &'a str) -> impl Iterator<Item = (Millis, f64)> + 'a {
    inputs.iter().filter(|i| i.fresh).flat_map(move |i| {
        let (idx, records) = match i.datum {
            Datum::Rows { fields, records } => (fields.iter().position(|f| f == field), records.as_slice()),
            _ => (None, &[][..]),
        };
        records.iter().filter_map(move |r| {
            let values = r.values()?;
            let x = match idx {
                Some(k) => values.get(k)?.as_f64()?,
                None if field.is_empty() => values.iter().find_map(|v| v.as_f64())?,
                None => return None,
            };
            Some((r.timestamp, x))
        })
    })
}

struct Window {
    field: String,
    window_ms: Millis,
    sum: bool,
    buf: VecDeque<(Millis, f64)>,
}

fn window(p: &Params, f: &str, sum: bool) -> Result<Box<dyn ProcessFunction>, FunctionError> {
    Ok(Box::new(Window {
        field: param_str(p, f, "field", "")?,
        window_ms: param_ms(p, f, "window_ms", crate::ids::HOUR_MS)?,
        sum,
        buf: VecDeque::new(),
    }))
}

impl ProcessFunction for Window {
    fn apply(&mut self, inputs: &[Input<'_>], now: Millis) -> Datum {
        self.buf.extend(samples(inputs, &self.field));
        for i in inputs.iter().filter(|i| i.fresh) {
            if let Datum::Scalar { value } = i.datum {
                self.buf.push_back((now, *value));
            }
        }
        let cutoff = now - self.window_ms;
        self.buf.retain(|(t, _)| *t >= cutoff);
        let total: f64 = self.buf.iter().map(|(_, x)| x).sum();
        match (self.sum, self.buf.len()) {
            (true, _) => Datum::Scalar { value: total },
            (false, 0) => Datum::Empty,
            (false, n) => Datum::Scalar { value: total / n as f64 },
        }
    }
}

struct Threshold {
    above: f64,
}

fn threshold(p: &Params) -> Result<Box<dyn ProcessFunction>, FunctionError> {
    Ok(Box::new(Threshold {
        above: param_f64(p, "threshold", "above", 0.5)?,
    }))
}

impl ProcessFunction for Threshold {
    fn apply(&mut self, inputs: &[Input<'_>], _now: Millis) -> Datum {
        match inputs.iter().find_map(|i| i.datum.reduce()) {
            Some(x) => Datum::Flag { value: x > self.above },
            None => Datum::Empty,
        }
    }
}

/// Running mean and variance.
#[derive(Debug, Default, Clone, Copy)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std_dev(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Time-of-day occupancy estimate from energy use.
///
/// Each bucket's probability is `logistic((bucket_mean - baseline) / scale)`. The baseline is
/// the mean of the samples seen during the calibration window (the first day by default) and
/// the scale their standard deviation, floored at `min_scale`. Both freeze when the window ends.
struct Occupancy {
    field: String,
    bucket_ms: Millis,
    calibration_ms: Millis,
    max_days: usize,
    min_scale: f64,
    first: Option<Millis>,
    fit: Welford,
    frozen: bool,
    buckets: BTreeMap<(i64, usize), (f64, u64)>,
}

fn occupancy(p: &Params) -> Result<Box<dyn ProcessFunction>, FunctionError> {
    let f = "occupancy";
    let bucket_ms = param_ms(p, f, "bucket_ms", crate::ids::HOUR_MS)?;
    if DAY_MS % bucket_ms != 0 {
        return Err(bad(f, "bucket_ms", "must divide one day"));
    }
    let min_scale = param_f64(p, f, "min_scale", 1.0)?;
    if min_scale <= 0.0 {
        return Err(bad(f, "min_scale", "must be positive"));
    }
    Ok(Box::new(Occupancy {
        field: param_str(p, f, "field", "watts")?,
        bucket_ms,
        calibration_ms: param_ms(p, f, "calibration_ms", DAY_MS)?,
        max_days: param_ms(p, f, "days", 7)? as usize,
        min_scale,
        first: None,
        fit: Welford::default(),
        frozen: false,
        buckets: BTreeMap::new(),
    }))
}

impl Occupancy {
    fn push(&mut self, t: Millis, x: f64) {
        let first = *self.first.get_or_insert(t);
        if !self.frozen {
            if t < first + self.calibration_ms {
                self.fit.push(x);
            } else {
                self.frozen = true;
            }
        }
        let day = t.div_euclid(DAY_MS);
        let bucket = (t.rem_euclid(DAY_MS) / self.bucket_ms) as usize;
        let e = self.buckets.entry((day, bucket)).or_insert((0.0, 0));
        e.0 += x;
        e.1 += 1;
    }
}

impl ProcessFunction for Occupancy {
    fn apply(&mut self, inputs: &[Input<'_>], _now: Millis) -> Datum {
        let fresh: Vec<_> = samples(inputs, &self.field).collect();
        for (t, x) in fresh {
            self.push(t, x);
        }
        let Some(&(last_day, _)) = self.buckets.keys().next_back() else {
            return Datum::Empty;
        };
        let first_day = last_day - self.max_days as i64 + 1;
        self.buckets.retain(|(d, _), _| *d >= first_day);

        let baseline = self.fit.mean;
        let scale = self.fit.std_dev().max(self.min_scale);
        let per_day = (DAY_MS / self.bucket_ms) as usize;
        let mut days: Vec<OccupancyDay> = Vec::new();
        for (&(day, bucket), &(sum, n)) in &self.buckets {
            if days.last().is_none_or(|d| d.day != day) {
                days.push(OccupancyDay {
                    day,
                    probabilities: vec![None; per_day],
                });
            }
            let p = logistic((sum / n as f64 - baseline) / scale);
            days.last_mut().expect("pushed").probabilities[bucket] = Some(p);
        }
        Datum::Occupancy(OccupancyMatrix {
            bucket_ms: self.bucket_ms,
            days,
            baseline,
            scale,
            calibrated: self.frozen,
        })
    }
}

/// Weighted mean of the inputs' reduced values. Weights are keyed by input port
/// (default 1); ports listed in `invert` contribute `1 - x`.
struct Score {
    weights: BTreeMap<String, f64>,
    invert: Vec<String>,
}

fn score(p: &Params) -> Result<Box<dyn ProcessFunction>, FunctionError> {
    let mut weights = BTreeMap::new();
    if let Some(w) = p.get("weights") {
        let obj = w
            .as_object()
            .ok_or_else(|| bad("score", "weights", "expected a table"))?;
        for (k, v) in obj {
            let x = v
                .as_f64()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| bad("score", "weights", format!("weight {k} must be non-negative")))?;
            weights.insert(k.clone(), x);
        }
    }
    let invert = match p.get("invert") {
        None => Vec::new(),
        Some(v) => v
            .as_array()
            .and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect())
            .ok_or_else(|| bad("score", "invert", "expected a list of port names"))?,
    };
    Ok(Box::new(Score { weights, invert }))
}

impl ProcessFunction for Score {
    fn apply(&mut self, inputs: &[Input<'_>], _now: Millis) -> Datum {
        let (mut num, mut den) = (0.0, 0.0);
        for i in inputs {
            if let Some(mut x) = i.datum.reduce() {
                if self.invert.iter().any(|p| p == i.port) {
                    x = 1.0 - x;
                }
                let w = self.weights.get(i.port).copied().unwrap_or(1.0);
                num += w * x;
                den += w;
            }
        }
        if den > 0.0 {
            Datum::Scalar { value: num / den }
        } else {
            Datum::Empty
        }
    }
}

/// Forwards fresh rows unchanged. Only loadable when the manifest declares it.
struct PassThrough;

impl ProcessFunction for PassThrough {
    fn apply(&mut self, inputs: &[Input<'_>], _now: Millis) -> Datum {
        let mut out_fields = Vec::new();
        let mut out = Vec::new();
        for i in inputs.iter().filter(|i| i.fresh) {
            if let Datum::Rows { fields, records } = i.datum {
                out_fields.clone_from(fields);
                out.extend(records.iter().cloned());
            }
        }
        if out.is_empty() {
            Datum::Empty
        } else {
            Datum::Rows {
                fields: out_fields,
                records: out,
            }
        }
    }
}
