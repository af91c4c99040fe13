//! HTTP front end for the arena platform, plus a small client used by the CLI.

pub mod client;
pub mod http;
pub mod server;

pub use client::Client;
pub use http::{router, ApiError, AppState, RegistrationResponse};
pub use server::{build_clock, serve};
