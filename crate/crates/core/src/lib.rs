//! Knowledge-grounded, abstention-aware verification of corporate
//! sustainability claims.
//!
//! The crate is organised around two evidence stores built from parsed ESG
//! reports and a set of reasoning pipelines that consume them:
//!
//! - [`schema`] / [`graph`] — a schema-validated labeled property graph of
//!   ESG entities and relations. Every inserted fact is admitted only if its
//!   typed triple is allowed by the schema.
//! - [`docstore`] — overlapping text chunks with report/company/year/page
//!   provenance and company-filtered top-m semantic retrieval.
//! - [`ingest`] — parsed-report loading, model-driven triple extraction,
//!   embedding-blocking entity resolution, and store population.
//! - [`grounding`] — maps a claim onto a target company plus typed key
//!   elements, always anchored by a `KPIObservation` element.
//! - [`retrieval`] — schema-driven k-hop evidence-subgraph extraction and
//!   deterministic context rendering.
//! - [`pipeline`] — the baseline, rag, kgrag, and hybrid verification
//!   pipelines producing verdict + justification + evidence, with principled
//!   abstention.
//! - [`eval`] — coverage-aware classification metrics, justification-quality
//!   aggregation, Borda rank aggregation, and Friedman/Nemenyi tests.
//! - [`provider`] — the only module that performs network I/O; everything
//!   model-facing goes through its [`provider::Provider`] trait, with a
//!   deterministic scripted mock for tests.

pub mod docstore;
pub mod embed;
pub mod eval;
pub mod graph;
pub mod grounding;
pub mod ingest;
pub mod pipeline;
pub mod provider;
pub mod retrieval;
pub mod schema;
mod util;

pub use embed::{cosine_similarity, DeterministicEmbedder, Embedder, EmbeddingVector};
pub use graph::{Edge, Graph, GraphStats, Node, NodeId, PropertyValue};
pub use pipeline::{Assessment, Pipeline, PromptMode, Verdict};
pub use provider::{ChatRequest, ChatResponse, MockProvider, Provider, RequestTag};
pub use schema::{Schema, ValueKind};
