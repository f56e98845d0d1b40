//! Experiment harness around `bpa-core`: configuration, artifact formats,
//! multi-seed campaigns, reports, and the live advising service.

pub mod campaign;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod service;
pub mod stats;

pub use error::{LabError, Result};
