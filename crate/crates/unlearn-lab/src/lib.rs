//! A desk-scale laboratory for entity-level machine unlearning.
//!
//! The crate provides the full loop: entity-structured corpora
//! ([`corpus`], [`synth`]), forget-retain pairing schedules ([`scheduler`]),
//! a small trainable autoregressive model with exact gradients
//! ([`seqmodel`]), the unlearning objectives ([`objectives`]), the
//! evaluation metric stack ([`metrics`]), and an experiment harness with a
//! command-line front end ([`harness`]).

pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod scheduler;
pub mod seqmodel;
pub mod synth;

#[cfg(test)]
pub(crate) mod testsupport;

pub use error::{Error, Result};
