//! Command line and HTTP/JSON front end for warning triage.

pub mod api;
pub mod config;
pub mod data;
pub mod error;
pub mod ops;

pub use config::Settings;
pub use error::{Error, Result};
