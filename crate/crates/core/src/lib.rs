//! Corpus-evaluation harness for retrieval-augmented question answering.
//!
//! A corpus is chunked at a range of chunk sizes. For each size the chunks
//! are embedded into an exact cosine index, every question of a QA set is
//! answered through retrieve → assemble → generate, and the answers are
//! scored for correctness against their ground truths. The per-size means
//! show how well the corpus supports the questions.

pub mod cache;
pub mod chunker;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod exec;
pub mod http;
pub mod llm;
pub mod metrics;
pub mod rag;
pub mod sweep;
pub mod vectorstore;

pub use error::{Error, Result};
pub use exec::Execution;
