//! HTTP analytics API and command-line entry points.

pub mod api;
pub mod cli;

pub use api::{router, with_cors};
