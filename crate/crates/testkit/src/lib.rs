//! Reference oracles and fixture builders shared by the test suites.
//!
//! The oracles here are deliberately naive: they recompute everything from
//! raw inputs on every call and share no code with the production paths
//! beyond plain data types.

pub mod fixtures;
pub mod oracle;

pub use fixtures::*;
pub use oracle::*;
