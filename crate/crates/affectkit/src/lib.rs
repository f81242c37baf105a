//! File formats, dataset IO and command-line plumbing for
//! [`affectkit_core`].
//!
//! Everything numerical is delegated to the core crate. This crate reads
//! annotation directories and PNG frames, writes curated indices,
//! checkpoints, fixtures and prediction files, and implements the
//! `affectkit` binary's subcommands in [`cli`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod frames;
pub mod runs;

pub use affectkit_core as core;
pub use error::{Error, Result};
