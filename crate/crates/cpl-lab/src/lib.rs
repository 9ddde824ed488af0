//! Desk-scale training lab around `cpl-core`.
//!
//! Provides everything the pure core leaves out: synthetic corpora with a
//! controllable difficulty split ([`corpus`]), JSON configuration
//! ([`config`]), binary checkpoints ([`checkpoint`]), deterministic JSONL
//! run logs ([`runlog`]), the supervised-warmup plus semi-supervised
//! training loop ([`trainer`]), and ablation grids ([`ablate`]). The `cpl`
//! binary exposes all of it on the command line ([`cli`]).

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod runlog;
pub mod seed;
pub mod trainer;
