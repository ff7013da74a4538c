//! Deterministic, replayable diagnosis pipeline for dermatology cases.
//!
//! The pipeline runs in three stages per case: a retrieval stage that asks a
//! vision LLM for a list of candidate skin conditions, a re-ranking stage
//! that narrows the list to a final diagnosis (four strategies, including a
//! multi-agent debate), and an alignment stage that restyles the output
//! toward clinician-style responses. Every LLM exchange goes through a
//! [`gateway::Backend`], so entire runs can be recorded to a manifest and
//! replayed byte-for-byte offline.
//!
//! Module map:
//! - [`case`] — case records, condition names, dataset ingestion
//! - [`gateway`] — chat types, canonical hashing, live/scripted/record/replay backends
//! - [`prompts`] — versioned prompt templates, bundled or loaded from a directory
//! - [`retrieval`] — candidate-list generation and free-text list parsing
//! - [`rerank`] — score-based re-ranking strategies
//! - [`mac`] — multi-agent conversation re-ranker (coordinator / specialists / admin)
//! - [`align`] — style-rule alignment and the APO rule-learning loop
//! - [`metrics`] — accuracy, BLEU/DeltaBLEU, and the similarity judge
//! - [`pipeline`] — batch orchestration, run directories, manifests, reports

pub mod align;
pub mod case;
pub mod gateway;
pub mod mac;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod rerank;
pub mod retrieval;
