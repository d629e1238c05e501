//! A stand-in for an external data controller's processor.

use crate::ids::{AppId, ExportId};
use crate::runtime::Dispatcher;
use crate::store::CommsFrame;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub seq: u64,
    pub item_id: ExportId,
    pub app_id: AppId,
    pub recipient: String,
    pub payload: String,
}

/// Logs every frame it receives.
#[derive(Default)]
pub struct ProcessorStub {
    receipts: Mutex<Vec<Receipt>>,
    refuse: AtomicBool,
}

impl ProcessorStub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn receive(&self, frame: &CommsFrame) -> Result<Receipt, String> {
        if self.refuse.load(Ordering::Acquire) {
            return Err("processor unavailable".into());
        }
        let mut r = self.receipts.lock();
        let receipt = Receipt {
            seq: r.len() as u64 + 1,
            item_id: frame.item_id.clone(),
            app_id: frame.app_id.clone(),
            recipient: frame.recipient.clone(),
            payload: frame.payload.clone(),
        };
        r.push(receipt.clone());
        Ok(receipt)
    }

    /// Makes later deliveries fail, to exercise retry paths.
    pub fn set_unavailable(&self, down: bool) {
        self.refuse.store(down, Ordering::Release);
    }

    pub fn receipts(&self) -> Vec<Receipt> {
        self.receipts.lock().clone()
    }

    pub fn count(&self) -> usize {
        self.receipts.lock().len()
    }
}

impl Dispatcher for ProcessorStub {
    fn deliver(&self, frame: &CommsFrame) -> Result<(), String> {
        self.receive(frame).map(|_| ())
    }
}
