//! Multimodal entity tagging: given a (text, image) query, find the entity of
//! a multimodal knowledge base it describes.
//!
//! The engine is two-stage. [`retrieval`] pulls candidates through a BM25
//! gloss index ([`text_index`]) and an HNSW image index ([`vector_index`]);
//! [`matchers`] scores each candidate's evidence pair four ways and
//! [`fusion`] ranks entities by a tuned linear combination of those scores.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod kb;
pub mod matchers;
pub mod pipeline;
pub mod report;
pub mod retrieval;
pub mod text_index;
pub mod vector_index;

pub use error::{Error, Result};
