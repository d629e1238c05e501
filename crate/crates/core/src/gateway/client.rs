//! Blocking client for the gateway.

use super::api::ApiError;
use super::wire::{Auth, Event, Method, Request, Response, WireError};
use crate::notify::Notification;
use serde_json::Value;
use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{} ({}): {}", .0.code, .0.status, .0.message)]
    Api(ApiError),
    #[error("response body: {0}")]
    Body(#[from] serde_json::Error),
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pub auth: Auth,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let writer = TcpStream::connect(addr).map_err(WireError::from)?;
        let reader = BufReader::new(writer.try_clone().map_err(WireError::from)?);
        Ok(Self {
            reader,
            writer,
            auth: Auth::None,
        })
    }

    pub fn with_auth(mut self, auth: Auth) -> Self {
        self.auth = auth;
        self
    }

    pub fn set_read_timeout(&self, t: Option<std::time::Duration>) -> std::io::Result<()> {
        self.writer.set_read_timeout(t)
    }

    /// Sends one request with the client's credentials unless it carries its own.
    pub fn send(&mut self, mut req: Request) -> Result<Response, ClientError> {
        if req.auth == Auth::None {
            req.auth = self.auth.clone();
        }
        req.write_to(&mut self.writer).map_err(WireError::from)?;
        Ok(Response::read_from(&mut self.reader)?)
    }

    /// JSON call; non-2xx responses become `ClientError::Api`.
    pub fn call(&mut self, method: Method, target: &str, body: Option<&Value>) -> Result<Value, ClientError> {
        let mut req = Request::new(method, target);
        if let Some(b) = body {
            req = req.with_json(b);
        }
        let resp = self.send(req)?;
        if !resp.is_success() {
            return Err(ClientError::Api(api_error(&resp)));
        }
        if resp.headers.get("content-type").is_some_and(|c| c == "application/jsonl") {
            return Ok(Value::String(String::from_utf8_lossy(&resp.body).into_owned()));
        }
        Ok(resp.json_body()?)
    }

    pub fn get(&mut self, target: &str) -> Result<Value, ClientError> {
        self.call(Method::Get, target, None)
    }

    pub fn post(&mut self, target: &str, body: &Value) -> Result<Value, ClientError> {
        self.call(Method::Post, target, Some(body))
    }

    /// Logs in and keeps the session for later calls.
    pub fn login(&mut self, user: &str, key: &str) -> Result<String, ClientError> {
        let v = self.call(
            Method::Post,
            "/login",
            Some(&serde_json::json!({ "user_id": user, "key": key })),
        )?;
        let session = v["session"].as_str().unwrap_or_default().to_string();
        self.auth = Auth::Session(session.clone());
        Ok(session)
    }

    /// Turns this connection into a notification stream.
    pub fn events(mut self) -> Result<Events, ClientError> {
        let resp = self.send(Request::new(Method::Get, "/events"))?;
        if !resp.is_success() {
            return Err(ClientError::Api(api_error(&resp)));
        }
        Ok(Events { reader: self.reader })
    }
}

fn api_error(resp: &Response) -> ApiError {
    let body = resp.json_body().unwrap_or(Value::Null);
    let field = |k: &str| body["error"][k].as_str().map(str::to_string);
    match (field("code"), field("message")) {
        (Some(code), Some(message)) => ApiError::new(resp.status, &code, message),
        _ => ApiError::new(resp.status, "unknown", String::from_utf8_lossy(&resp.body)),
    }
}

/// Pushed notifications; heartbeats are skipped.
pub struct Events {
    reader: BufReader<TcpStream>,
}

impl Iterator for Events {
    type Item = Result<Notification, ClientError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match Event::read_from(&mut self.reader) {
                Ok(e) if e.kind == "notification" => {
                    return Some(serde_json::from_slice(&e.body).map_err(ClientError::from))
                }
                Ok(_) => continue,
                Err(WireError::Closed) => return None,
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}
