//! Gender-stereotype benchmarking for multilingual language models.
//!
//! A seed corpus of stereotype-tagged English sentences is expanded into
//! other languages as gendered minimal pairs and templated neutral
//! sentences ([`expansion`]), scored with a language model's token
//! log-probabilities ([`scoring`]) and aggregated into per-stereotype
//! masculine rates, ranks and an overall stereotype rate ([`metrics`],
//! [`report`]).

pub mod backends;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod expansion;
pub mod metrics;
pub mod report;
pub mod scoring;
pub mod templating;

pub use error::{Error, Result};
