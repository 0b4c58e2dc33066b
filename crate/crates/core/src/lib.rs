//! Biomedical retrieval and question-answering pipeline engine.
//!
//! Corpus ingestion, dense retrieval over exact and HNSW indexes, two-stage
//! re-ranking (pointwise scorer then listwise chat model), rank fusion,
//! answer prompting and parsing, and the evaluation metrics used to judge
//! every stage.

pub mod clients;
pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod fusion;
pub mod index;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod prompts;
pub mod rerank;
pub mod run;
