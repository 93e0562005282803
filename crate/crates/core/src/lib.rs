//! Radio environment maps of per-channel interference statistics and
//! switch-minimal channel planning for vehicle platoons.

pub mod error;
pub mod ingest;
pub mod mixture;
pub mod planner;
pub mod propagation;
pub mod remstore;
pub mod scenario;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
