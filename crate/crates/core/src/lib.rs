//! Seamless two-stage dose-optimization design: escalation with backfill,
//! covariate-adaptive stage-2 randomization, OBD selection and a Monte-Carlo
//! simulator for operating characteristics.

pub mod backfill;
pub mod blrm;
pub mod boin;
pub mod config;
pub mod decision;
pub mod error;
pub mod minimization;
pub mod obd;
pub mod scenario;
pub mod sim;
pub mod stage1;
pub mod stage2;
pub mod stats;
pub mod tally;

pub use decision::Decision;
pub use error::{BardError, Result};
