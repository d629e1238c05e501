//! An external processor reachable over the wire, and the dispatcher that feeds it.

use super::client::Client;
use super::server::Service;
use super::wire::{Method, Request, Response};
use crate::processor::ProcessorStub;
use crate::runtime::Dispatcher;
use crate::store::CommsFrame;
use parking_lot::Mutex;
use serde_json::json;
use std::net::SocketAddr;
use std::sync::Arc;

/// Serves `POST /receive` and `GET /receipts` over a [`ProcessorStub`].
pub struct ProcessorService {
    pub stub: Arc<ProcessorStub>,
}

impl Service for ProcessorService {
    fn handle(&self, req: &Request) -> Response {
        match (req.method, req.path.as_str()) {
            (Method::Post, "/receive") => match serde_json::from_slice::<CommsFrame>(&req.body) {
                Ok(frame) => match self.stub.receive(&frame) {
                    Ok(r) => Response::json(200, &json!(r)),
                    Err(e) => Response::json(503, &json!({ "error": { "code": "unavailable", "message": e } })),
                },
                Err(e) => Response::json(422, &json!({ "error": { "code": "invalid", "message": e.to_string() } })),
            },
            (Method::Get, "/receipts") => Response::json(200, &json!(self.stub.receipts())),
            _ => Response::json(404, &json!({ "error": { "code": "no-route", "message": req.path } })),
        }
    }
}

/// Delivers frames to a remote processor, reconnecting after failures.
pub struct RemoteDispatcher {
    addr: SocketAddr,
    conn: Mutex<Option<Client>>,
}

impl RemoteDispatcher {
    pub fn new(addr: SocketAddr) -> Self {
        Self {
            addr,
            conn: Mutex::new(None),
        }
    }
}

impl Dispatcher for RemoteDispatcher {
    fn deliver(&self, frame: &CommsFrame) -> Result<(), String> {
        let mut slot = self.conn.lock();
        if slot.is_none() {
            *slot = Some(Client::connect(self.addr).map_err(|e| e.to_string())?);
        }
        let body = serde_json::to_value(frame).map_err(|e| e.to_string())?;
        let result = slot.as_mut().expect("connected").post("/receive", &body);
        match result {
            Ok(_) => Ok(()),
            Err(e) => {
                *slot = None;
                Err(e.to_string())
            }
        }
    }
}
