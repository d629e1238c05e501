//! A local personal-data platform: isolated per-source stores, token-gated flow
//! apps, consent compiled into enforceable policies, and complete audit trails.

pub mod accounts;
pub mod appstore;
pub mod arbiter;
pub mod clock;
pub mod crypto;
pub mod demo;
pub mod gateway;
pub mod ids;
pub mod manifest;
pub mod notify;
pub mod platform;
pub mod processor;
pub mod risk;
pub mod runtime;
pub mod scenario;
pub mod sim;
pub mod store;

pub use platform::{Databox, PlatformConfig, PlatformError};
