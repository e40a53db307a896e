//! Constrained skill discovery: diverse skill policies trained under
//! near-optimality constraints on several reward groups.

pub mod approx;
pub mod config;
pub mod diversity;
pub mod envs;
pub mod error;
pub mod features;
pub mod lagrange;
pub mod math;
pub mod oracle;
pub mod rewards;
pub mod sweep;
pub mod trainer;
pub mod verify;

pub use config::RunConfig;
pub use error::{Error, Result};
