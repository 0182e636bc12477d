pub mod agent;
pub mod chain;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod model;
pub mod policies;

pub use error::{Error, Result};
