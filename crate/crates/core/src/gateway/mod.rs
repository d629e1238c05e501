//! Network access to a box.
//!
//! A single TCP listener carries length-framed JSON requests (see [`wire`]).
//! Users authenticate with a session from `/login`; apps running outside the
//! box present arbiter tokens on the `/data` routes. `/events` turns its
//! connection into a stream of pushed notifications.

pub mod api;
pub mod client;
pub mod processor;
pub mod server;
pub mod wire;

pub use api::{Api, ApiError, AuthClass, ROUTES};
pub use client::{Client, ClientError};
pub use processor::{ProcessorService, RemoteDispatcher};
pub use server::{Server, ServerHandle, Service};
pub use wire::{Auth, Event, Method, Request, Response, WireError};

/// Listen address for `databox serve`.
pub const ENV_BIND: &str = "DATABOX_BIND";
/// Directory for store files.
pub const ENV_DATA_DIR: &str = "DATABOX_DATA_DIR";
/// Path of the persisted signing keyring.
pub const ENV_KEYRING: &str = "DATABOX_KEYRING";
/// Gateway address used by clients.
pub const ENV_ADDR: &str = "DATABOX_ADDR";
/// Session id used by clients.
pub const ENV_SESSION: &str = "DATABOX_SESSION";

pub const DEFAULT_BIND: &str = "127.0.0.1:7460";

#[cfg(test)]
mod tests;
