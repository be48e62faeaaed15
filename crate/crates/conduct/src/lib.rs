//! Conducting a trial: an event-sourced state machine over the design
//! engine, a JSON-lines event store and an HTTP API.
//!
//! Dose indices are zero-based throughout.

pub mod error;
pub mod event;
pub mod http;
pub mod schema;
pub mod service;
pub mod state;
pub mod store;

pub use error::{ConductError, Result};
pub use service::Conduct;
pub use state::TrialState;
