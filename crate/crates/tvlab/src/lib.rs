// SPDX-License-Identifier: MIT OR Apache-2.0

//! File formats, the cached experiment pipeline, reports and the `tvlab`
//! command line on top of `tvlab-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod meta;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::RunError;
pub use pipeline::Pipeline;
