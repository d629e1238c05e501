use super::{Generator, SimError, SimProfile};
use crate::clock::Clock;
use crate::ids::{Millis, SourceId, StoreId};
use crate::store::{StoreEngine, StoreError, Writer};
use parking_lot::Mutex;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// Feeds a generator into one store as that store's registered writer.
pub struct Driver {
    engine: Arc<StoreEngine>,
    store: StoreId,
    writer: Writer,
    generator: Mutex<Generator>,
    stopped: AtomicBool,
    appended: AtomicU64,
}

impl Driver {
    /// Registers the driver as the store's only writer; samples start at `t0`.
    pub fn start(
        engine: Arc<StoreEngine>,
        profile: SimProfile,
        store: &StoreId,
        t0: Millis,
    ) -> Result<Arc<Self>, SimError> {
        let source = engine
            .source(store)
            .ok_or_else(|| SimError::UnknownStore(store.clone()))?;
        if source.kind != profile.kind {
            return Err(SimError::KindMismatch {
                store: store.clone(),
                expected: profile.kind,
                actual: source.kind,
            });
        }
        let generator = Generator::new(profile, t0)?;
        let writer = Writer::Driver(source.source_id.clone());
        engine
            .register_writer(store, writer.clone())
            .map_err(|e| match e {
                StoreError::WriterAlreadyRegistered(s) => SimError::AlreadyDriven(s),
                other => other.into(),
            })?;
        Ok(Arc::new(Self {
            engine,
            store: store.clone(),
            writer,
            generator: Mutex::new(generator),
            stopped: AtomicBool::new(false),
            appended: AtomicU64::new(0),
        }))
    }

    pub fn store(&self) -> &StoreId {
        &self.store
    }

    pub fn source_id(&self) -> Option<&SourceId> {
        match &self.writer {
            Writer::Driver(s) => Some(s),
            _ => None,
        }
    }

    /// Appends every sample timestamped before `now`. Returns how many were appended.
    pub fn advance_to(&self, now: Millis) -> Result<usize, StoreError> {
        let mut g = self.generator.lock();
        let mut n = 0;
        while !self.stopped.load(Ordering::Acquire) && g.peek_time() < now {
            let s = g.next_sample();
            self.engine
                .append(&self.store, &self.writer, s.timestamp, s.values, s.timestamp)?;
            n += 1;
        }
        self.appended.fetch_add(n as u64, Ordering::Relaxed);
        Ok(n)
    }

    /// Stops appending and releases the store's writer slot. Idempotent.
    pub fn stop(&self) {
        let _g = self.generator.lock();
        if !self.stopped.swap(true, Ordering::AcqRel) {
            self.engine.unregister_writer(&self.store, &self.writer);
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped.load(Ordering::Acquire)
    }

    pub fn appended(&self) -> u64 {
        self.appended.load(Ordering::Relaxed)
    }

    /// Runs the driver against a clock on its own thread until stopped.
    pub fn spawn(self: &Arc<Self>, clock: Arc<dyn Clock>, poll: Duration) -> JoinHandle<()> {
        let me = self.clone();
        std::thread::spawn(move || {
            while !me.is_stopped() {
                if me.advance_to(clock.now()).is_err() {
                    me.stop();
                    break;
                }
                std::thread::sleep(poll);
            }
        })
    }
}
