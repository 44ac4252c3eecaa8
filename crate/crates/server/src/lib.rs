//! Serves N independent FindView environments over a framed byte stream.
//!
//! The wire format lives in [`protocol`] and is documented in `protocol.md`.

pub mod client;
pub mod protocol;
pub mod server;
pub mod session;

pub use client::{Client, ClientError, Response};
pub use server::{serve, serve_stdio, serve_tcp, spawn_tcp, ServerError};
pub use session::{EpisodeSource, SessionConfig};
