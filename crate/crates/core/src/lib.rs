//! Allocation-only core of the affectkit toolkit.
//!
//! Everything numerical lives here: annotation parsing and sentinel
//! filtering, the mixed-feature backbone with dual-direction attention,
//! per-task heads (fully-connected and recurrent), the contrastive
//! vision-language adapter, task losses, challenge metrics, per-AU
//! threshold search and the training harness. Nothing in this crate touches
//! the filesystem; the `affectkit` crate layers IO, file formats and the CLI
//! on top.
//!
//! The crate is `no_std` unless the `std` feature is enabled and only needs
//! `alloc`.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(rust_2018_idioms)]

extern crate alloc;

pub mod backbone;
pub mod clip_align;
pub mod curation;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod heads;
pub mod math;
pub mod nn;
pub mod objectives;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
pub use task::Task;
