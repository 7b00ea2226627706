//! Storage, codecs, HTTP service and client for the qdh hub.
//!
//! The in-memory engines live in `qdh-core`; this crate makes them durable
//! ([`journal`], [`blob`], [`hub`]), speaks the upload formats ([`codec`]),
//! authenticates callers ([`auth`]) and serves everything over HTTP
//! ([`service`]). The `qdh` binary is both the server and its client.

pub mod auth;
pub mod blob;
pub mod client;
pub mod codec;
pub mod config;
pub mod hub;
pub mod journal;
pub mod procedures;
pub mod service;

pub use hub::{Hub, HubConfig};

/// Current UTC time as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn now_timestamp() -> String {
    let now = time::OffsetDateTime::now_utc();
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z",
        now.year(),
        u8::from(now.month()),
        now.day(),
        now.hour(),
        now.minute(),
        now.second()
    )
}
