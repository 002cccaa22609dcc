//! Knowledge-type probing and two-stage fine-tuning curricula for closed-book QA.
//!
//! A QA pair is labelled by how often a model answers it correctly under
//! greedy and sampled decoding:
//!
//! | label        | greedy accuracy | sampled accuracy |
//! |--------------|-----------------|------------------|
//! | HighlyKnown  | 1               | any              |
//! | MaybeKnown   | in (0, 1)       | any              |
//! | WeaklyKnown  | 0               | > 0              |
//! | Unknown      | 0               | 0                |
//!
//! The crate probes a model through an HTTP completion endpoint (or the
//! in-process [`mock`] backend), classifies every pair, builds the stage-1 and
//! stage-2 training sets with HighlyKnown replay, drives an external trainer
//! through a file-and-sentinel contract, and reports how labels move between
//! snapshots. See the `examples/` directory for one runnable program per
//! capability.

pub mod analytics;
pub mod classify;
pub mod cli;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod mock;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod prompt;

pub use error::{Error, ErrorKind, Result};
