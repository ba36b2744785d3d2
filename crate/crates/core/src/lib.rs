pub mod config;
pub mod detectability;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod planner;
pub mod projector;
pub mod recon;
pub mod regressor;

pub use error::{Error, Result};
