//! File formats, configuration, plots and the `bxai` command line for the
//! `bxai-core` pipeline.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod plot;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
