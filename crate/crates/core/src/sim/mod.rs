//! Deterministic simulated devices and the drivers that feed them into stores.
//!
//! Every stream is a pure function of (profile, start time): randomness comes
//! from ChaCha8 generators seeded from the profile seed, and per-day events
//! (appliance use, door openings, the household's routine) are seeded from the
//! seed and the day number, so a stream can be produced in any number of pieces.

mod driver;

pub use driver::Driver;

use crate::ids::{Millis, DAY_MS, HOUR_MS, MINUTE_MS};
use crate::ids::StoreId;
use crate::store::{RecordSchema, ScalarType, SourceKind, StoreError, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("no generator for source kind {0}")]
    UnsupportedKind(SourceKind),
    #[error("cadence must be positive")]
    BadCadence,
    #[error("store {store} holds {actual} data, profile generates {expected}")]
    KindMismatch {
        store: StoreId,
        expected: SourceKind,
        actual: SourceKind,
    },
    #[error("unknown store {0}")]
    UnknownStore(StoreId),
    #[error("store {0} already has a driver")]
    AlreadyDriven(StoreId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Generator parameters. Unused fields are ignored by kinds they do not apply to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub base_load_w: f64,
    pub appliance_events_per_day: u32,
    pub appliance_w: f64,
    pub appliance_minutes: u32,
    pub noise_w: f64,
    pub door_openings_per_day: u32,
    /// Probability that motion is detected while someone is home and awake.
    pub presence_detection: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            base_load_w: 120.0,
            appliance_events_per_day: 6,
            appliance_w: 2000.0,
            appliance_minutes: 20,
            noise_w: 15.0,
            door_openings_per_day: 6,
            presence_detection: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    pub kind: SourceKind,
    pub seed: u64,
    #[serde(default = "default_cadence")]
    pub cadence_ms: Millis,
    /// Seed of the shared household routine; sources of one home share it.
    #[serde(default)]
    pub household_seed: u64,
    #[serde(default)]
    pub params: GeneratorParams,
}

fn default_cadence() -> Millis {
    10_000
}

impl SimProfile {
    pub fn new(kind: SourceKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            cadence_ms: default_cadence(),
            household_seed: 0,
            params: GeneratorParams::default(),
        }
    }

    pub fn with_cadence(mut self, cadence_ms: Millis) -> Self {
        self.cadence_ms = cadence_ms;
        self
    }
}

/// Record layout of each simulated kind.
pub fn schema_for(kind: SourceKind) -> Option<RecordSchema> {
    let (id, field, ty, unit) = match kind {
        SourceKind::EnergyMeter => ("energy-meter/v1", "watts", ScalarType::Real, "W"),
        SourceKind::DoorSensor => ("door-sensor/v1", "open", ScalarType::Boolean, ""),
        SourceKind::Presence => ("presence/v1", "present", ScalarType::Boolean, ""),
        SourceKind::Alarm => ("alarm/v1", "armed", ScalarType::Boolean, ""),
        SourceKind::MicrophoneLevel => ("microphone-level/v1", "db", ScalarType::Real, "dB"),
        SourceKind::Bulb => ("bulb/v1", "on", ScalarType::Boolean, ""),
        SourceKind::Heating => ("heating/v1", "setpoint", ScalarType::Real, "C"),
        SourceKind::HeartRate => ("heart-rate/v1", "bpm", ScalarType::Real, "bpm"),
        SourceKind::Generic => ("generic/v1", "value", ScalarType::Real, ""),
        SourceKind::Derived | SourceKind::Communications => return None,
    };
    Some(RecordSchema::new(id, &[(field, ty, unit)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSample {
    pub timestamp: Millis,
    pub values: Vec<Value>,
}

/// One day of the household routine, as offsets from midnight.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DayPlan {
    wake: Millis,
    sleep: Millis,
    /// Away interval on working days.
    away: Option<(Millis, Millis)>,
}

impl DayPlan {
    fn home(&self, off: Millis) -> bool {
        self.away.is_none_or(|(a, b)| off < a || off >= b)
    }

    fn awake(&self, off: Millis) -> bool {
        off >= self.wake && off < self.sleep
    }

    fn active(&self, off: Millis) -> bool {
        self.home(off) && self.awake(off)
    }

    /// Intervals (offsets) when someone is home and awake.
    fn active_spans(&self) -> Vec<(Millis, Millis)> {
        match self.away {
            Some((a, b)) => vec![(self.wake, a.max(self.wake)), (b.min(self.sleep), self.sleep)],
            None => vec![(self.wake, self.sleep)],
        }
        .into_iter()
        .filter(|(a, b)| b > a)
        .collect()
    }
}

fn day_rng(seed: u64, day: i64, stream: u64) -> ChaCha8Rng {
    let mixed = seed
        ^ (day as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    ChaCha8Rng::seed_from_u64(mixed)
}

fn jitter(rng: &mut ChaCha8Rng, around: Millis, spread: Millis) -> Millis {
    around + rng.gen_range(-spread..=spread)
}

fn day_plan(household_seed: u64, day: i64) -> DayPlan {
    let mut rng = day_rng(household_seed, day, 1);
    // day 0 (1970-01-01) was a Thursday; weekday 0 is Monday
    let weekday = (day + 3).rem_euclid(7);
    let work_day = weekday < 5;
    let wake = jitter(&mut rng, if work_day { 7 * HOUR_MS } else { 9 * HOUR_MS }, 30 * MINUTE_MS);
    let sleep = jitter(&mut rng, 23 * HOUR_MS, 45 * MINUTE_MS);
    let away = work_day.then(|| {
        (
            jitter(&mut rng, 8 * HOUR_MS + 30 * MINUTE_MS, 20 * MINUTE_MS),
            jitter(&mut rng, 17 * HOUR_MS + 30 * MINUTE_MS, 45 * MINUTE_MS),
        )
    });
    DayPlan { wake, sleep, away }
}

/// Picks `n` instants uniformly within the spans.
fn events_in(rng: &mut ChaCha8Rng, spans: &[(Millis, Millis)], n: u32) -> Vec<Millis> {
    let total: Millis = spans.iter().map(|(a, b)| b - a).sum();
    if total <= 0 {
        return Vec::new();
    }
    let mut out: Vec<Millis> = (0..n)
        .map(|_| {
            let mut x = rng.gen_range(0..total);
            for (a, b) in spans {
                if x < b - a {
                    return a + x;
                }
                x -= b - a;
            }
            unreachable!("x < total")
        })
        .collect();
    out.sort_unstable();
    out
}

struct DayCache {
    day: i64,
    plan: DayPlan,
    /// Appliance or door event start offsets.
    events: Vec<Millis>,
}

/// Produces a profile's samples one at a time from a start instant.
pub struct Generator {
    profile: SimProfile,
    rng: ChaCha8Rng,
    next_t: Millis,
    cache: Option<DayCache>,
}

const DOOR_OPEN_MS: Millis = 30_000;

impl Generator {
    pub fn new(profile: SimProfile, t0: Millis) -> Result<Self, SimError> {
        if schema_for(profile.kind).is_none() {
            return Err(SimError::UnsupportedKind(profile.kind));
        }
        if profile.cadence_ms <= 0 {
            return Err(SimError::BadCadence);
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            next_t: t0,
            cache: None,
        })
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    /// Timestamp of the next sample.
    pub fn peek_time(&self) -> Millis {
        self.next_t
    }

    fn day(&mut self, day: i64) -> &DayCache {
        if self.cache.as_ref().is_none_or(|c| c.day != day) {
            let plan = day_plan(self.profile.household_seed, day);
            let p = &self.profile.params;
            let mut rng = day_rng(self.profile.seed, day, 2);
            let events = match self.profile.kind {
                SourceKind::EnergyMeter => events_in(&mut rng, &plan.active_spans(), p.appliance_events_per_day),
                SourceKind::DoorSensor => {
                    let mut e = events_in(&mut rng, &plan.active_spans(), p.door_openings_per_day);
                    if let Some((a, b)) = plan.away {
                        e.extend([a, b]);
                        e.sort_unstable();
                    }
                    e
                }
                _ => Vec::new(),
            };
            self.cache = Some(DayCache { day, plan, events });
        }
        self.cache.as_ref().expect("filled")
    }

    pub fn next_sample(&mut self) -> SimSample {
        let t = self.next_t;
        self.next_t += self.profile.cadence_ms;
        let day = t.div_euclid(DAY_MS);
        let off = t.rem_euclid(DAY_MS);
        let cadence = self.profile.cadence_ms;
        let params = self.profile.params.clone();
        let kind = self.profile.kind;
        let (plan, events) = {
            let c = self.day(day);
            (c.plan, c.events.clone())
        };
        let noise: f64 = self.rng.gen_range(-1.0..1.0);
        let u: f64 = self.rng.gen();
        let value = match kind {
            SourceKind::EnergyMeter => {
                let len = params.appliance_minutes as Millis * MINUTE_MS;
                let running = events.iter().filter(|&&e| off >= e && off < e + len).count();
                let occupied = if plan.active(off) { 150.0 } else { 0.0 };
                let w = params.base_load_w + occupied + running as f64 * params.appliance_w + noise * params.noise_w;
                Value::Real(w.max(0.0))
            }
            SourceKind::DoorSensor => Value::Boolean(
                events
                    .iter()
                    .any(|&e| e < off + cadence && e + DOOR_OPEN_MS > off),
            ),
            SourceKind::Presence => Value::Boolean(plan.active(off) && u < params.presence_detection),
            SourceKind::Alarm => Value::Boolean(!plan.home(off) || !plan.awake(off)),
            SourceKind::MicrophoneLevel => {
                let base = if plan.active(off) { 50.0 } else { 30.0 };
                let spike = if plan.active(off) && u < 0.05 { 30.0 } else { 0.0 };
                Value::Real(base + spike + noise * 5.0)
            }
            SourceKind::Bulb => Value::Boolean(plan.active(off) && off >= 18 * HOUR_MS),
            SourceKind::Heating => Value::Real(if plan.home(off) { 20.0 } else { 16.0 }),
            SourceKind::HeartRate => {
                let base = if plan.active(off) { 75.0 } else { 58.0 };
                Value::Real(base + noise * 6.0)
            }
            SourceKind::Generic => Value::Real(u),
            SourceKind::Derived | SourceKind::Communications => unreachable!("rejected in new"),
        };
        SimSample {
            timestamp: t,
            values: vec![value],
        }
    }

    /// All samples strictly before `end`.
    pub fn until(&mut self, end: Millis) -> Vec<SimSample> {
        let mut out = Vec::new();
        while self.next_t < end {
            out.push(self.next_sample());
        }
        out
    }
}

/// Samples at `t0, t0 + cadence, ...` within `[t0, t0 + duration)`.
pub fn generate(profile: &SimProfile, t0: Millis, duration: Millis) -> Result<Vec<SimSample>, SimError> {
    Ok(Generator::new(profile.clone(), t0)?.until(t0 + duration.max(0)))
}
