//! Morality-frame identification by few-shot prompting of a text-completion
//! service: taxonomy, corpora, prompt rendering, completion clients, vote
//! consolidation, entity matching and evaluation.

pub mod domain;
pub mod error;
pub mod rng;
pub mod corpus;
pub mod prompts;
pub mod entmatch;
pub mod metrics;
pub mod client;
pub mod pipeline;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
