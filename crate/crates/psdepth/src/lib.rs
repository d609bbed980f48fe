//! Files, configuration and the command-line pipeline around `psdepth-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod log;
pub mod pipeline;
pub mod pnm;

pub use error::{Error, Result};
pub use psdepth_core as core;
