//! File formats, retrieval clients, checkpoints, configuration and the
//! command line around `methodtag-core`.
//!
//! The [`pipeline`] module wires the stages together over the paths of a
//! [`config::PipelineConfig`]; [`cli::run`] is the `methodtag` binary.

pub mod checkpoint;
pub mod cli;
pub mod client;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod xml;

pub use error::{Error, Result, StageError};
