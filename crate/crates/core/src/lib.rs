// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task-vector discovery for patchable transformers.
//!
//! A task vector is a per-site mean activation which, patched into a
//! query-only forward pass, makes the model perform a task it would
//! otherwise need an in-context demonstration for. This crate holds the
//! whole algorithmic stack and has no IO:
//!
//! - [`numerics`]: dense kernels, seeded counter-based RNG, Adam, PCA.
//! - [`tasks`]: synthetic image-to-image tasks, 2x2 prompt layout, metrics.
//! - [`model`]: a toy MAE-style encoder/decoder with recordable and
//!   patchable per-head residual contributions, plus a hand-written trainer.
//! - [`planted`]: an additive objective with known optimal sites.
//! - [`lab`]: activation collection, mean activations, taskness scores,
//!   site grouping and clustering metrics.
//! - [`search`]: REINFORCE mask search, greedy random search, CMA and
//!   baselines, evaluation and task-vector arithmetic.
//!
//! The crate is `no_std` + `alloc` unless the `std` feature is enabled.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod lab;
pub mod model;
pub mod numerics;
pub mod planted;
pub mod search;
pub mod tasks;

pub use error::{Error, Result};
