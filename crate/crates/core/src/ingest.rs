//! Corpus ingestion: parsed-report loading, model-driven triple extraction,
//! embedding-blocking entity resolution, and population of both stores.
//!
//! The document-parsing front end is out of scope; ingestion starts from the
//! normalized parsed-report file contract (one JSON object per line, a header
//! record followed by span records).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docstore::{chunk_document, DocStore, DocStoreError, ReportMeta};
use crate::embed::{cosine_similarity, EmbedError, Embedder};
use crate::graph::{Edge, Graph, GraphError, NodeId, Properties, PropertyValue};
use crate::provider::{ChatRequest, Provider, ProviderError, RequestTag};

/// Default embedding-blocking merge threshold for entity resolution.
/// Conservative: merging distinct companies is worse than keeping duplicates.
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.85;
/// Spans per extraction request.
pub const DEFAULT_SPAN_BATCH: usize = 8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    DocStore(#[from] DocStoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Paragraph,
    Table,
    FigureDescription,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpan {
    pub text: String,
    pub page: u32,
    pub kind: SpanKind,
}

/// A normalized parsed report: metadata plus ordered spans.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub report_id: String,
    pub company: String,
    pub year: i32,
    pub spans: Vec<ReportSpan>,
}

impl ParsedReport {
    pub fn meta(&self) -> ReportMeta {
        ReportMeta {
            report_id: self.report_id.clone(),
            company: self.company.clone(),
            year: self.year,
        }
    }
}

/// Loads a parsed-report file: a header line with report metadata, then one
/// span object per line. Malformed records are rejected with line numbers.
pub fn load_parsed_report(path: impl AsRef<Path>) -> Result<ParsedReport, IngestError> {
    let file = File::open(path.as_ref())?;
    parse_report(BufReader::new(file))
}

pub fn parse_report<R: BufRead>(reader: R) -> Result<ParsedReport, IngestError> {
    let mut header: Option<(String, String, i32)> = None;
    let mut spans = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let display = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                line: display,
                message: e.to_string(),
            })?;
        if header.is_none() {
            let report_id = value
                .get("report_id")
                .and_then(|v| v.as_str())
                .ok_or(IngestError::MissingField("report_id"))?;
            if report_id.is_empty() {
                return Err(IngestError::Parse {
                    line: display,
                    message: "report_id must be non-empty".into(),
                });
            }
            let company = value
                .get("company")
                .and_then(|v| v.as_str())
                .ok_or(IngestError::MissingField("company"))?;
            let year = value
                .get("year")
                .and_then(|v| v.as_i64())
                .ok_or(IngestError::MissingField("year"))? as i32;
            header = Some((report_id.to_string(), company.to_string(), year));
            continue;
        }
        let text = value
            .get("text")
            .and_then(|v| v.as_str())
            .ok_or(IngestError::MissingField("text"))?
            .to_string();
        let page = value
            .get("page")
            .and_then(|v| v.as_u64())
            .ok_or(IngestError::MissingField("page"))?;
        if page == 0 {
            return Err(IngestError::Parse {
                line: display,
                message: "page numbers start at 1".into(),
            });
        }
        let kind = match value.get("kind").and_then(|v| v.as_str()) {
            Some("paragraph") | None => SpanKind::Paragraph,
            Some("table") => SpanKind::Table,
            Some("figure_description") => SpanKind::FigureDescription,
            Some(other) => {
                return Err(IngestError::Parse {
                    line: display,
                    message: format!("unknown span kind {other:?}"),
                })
            }
        };
        spans.push(ReportSpan {
            text,
            page: page as u32,
            kind,
        });
    }
    let (report_id, company, year) = header.ok_or(IngestError::MissingField("report_id"))?;
    Ok(ParsedReport {
        report_id,
        company,
        year,
        spans,
    })
}

/// One endpoint of a candidate triple: type, display name, raw properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub name: String,
    #[serde(default)]
    pub props: BTreeMap<String, serde_json::Value>,
}

/// A candidate fact extracted from a report, pre-admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTriple {
    pub src: EntityMention,
    pub label: String,
    pub dst: EntityMention,
    pub report_id: String,
    pub page: u32,
}

/// Why a candidate was refused: its typed triple is not in the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub src_type: String,
    pub label: String,
    pub dst_type: String,
}

impl std::fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "schema forbids ({}, {}, {})",
            self.src_type, self.label, self.dst_type
        )
    }
}

#[derive(Debug, Default)]
pub struct ExtractionOutcome {
    pub candidates: Vec<CandidateTriple>,
    /// Responses or items that could not be parsed and were dropped.
    pub malformed: usize,
}

const EXTRACT_SYSTEM: &str = "You extract facts from corporate sustainability report excerpts \
as typed triples for a knowledge graph. Only use the allowed typed relationships provided. \
Respond with a JSON array; each element is \
{\"src\": {\"type\": ..., \"name\": ..., \"props\": {...}}, \"label\": ..., \
\"dst\": {\"type\": ..., \"name\": ..., \"props\": {...}}}. \
Respond with [] if no facts are present.";

/// Prompts the provider per span batch and parses candidate triples out of
/// its JSON responses. Unparseable responses or items are dropped and
/// counted, never guessed at.
pub fn extract_triples(
    report: &ParsedReport,
    schema: &crate::schema::Schema,
    provider: &dyn Provider,
    span_batch: usize,
) -> Result<ExtractionOutcome, IngestError> {
    let mut outcome = ExtractionOutcome::default();
    if report.spans.is_empty() {
        return Ok(outcome);
    }
    let allowed: Vec<String> = schema
        .allowed
        .iter()
        .map(|(s, l, t)| format!("({s}, {l}, {t})"))
        .collect();
    for batch in report.spans.chunks(span_batch.max(1)) {
        let mut user = format!(
            "Company: {}\nReport: {} ({})\nAllowed typed relationships:\n{}\n\nExcerpts:\n",
            report.company,
            report.report_id,
            report.year,
            allowed.join("\n")
        );
        for span in batch {
            user.push_str(&format!("[page {}] {}\n", span.page, span.text));
        }
        let request = ChatRequest::new(RequestTag::Extract, EXTRACT_SYSTEM, user);
        let response = provider.complete(&request)?;
        let page = batch.first().map(|s| s.page).unwrap_or(1);
        match parse_triple_array(&response.text, &report.report_id, page) {
            Ok((mut candidates, malformed_items)) => {
                outcome.candidates.append(&mut candidates);
                outcome.malformed += malformed_items;
            }
            Err(()) => outcome.malformed += 1,
        }
    }
    Ok(outcome)
}

/// Parses a JSON array of candidate triples, tolerating markdown fences.
/// Returns Err only when the response is not an array at all.
fn parse_triple_array(
    text: &str,
    report_id: &str,
    page: u32,
) -> Result<(Vec<CandidateTriple>, usize), ()> {
    let trimmed = strip_code_fences(text);
    let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|_| ())?;
    let array = value.as_array().ok_or(())?;
    let mut candidates = Vec::new();
    let mut malformed = 0usize;
    for item in array {
        #[derive(Deserialize)]
        struct RawTriple {
            src: EntityMention,
            label: String,
            dst: EntityMention,
            #[serde(default)]
            page: Option<u32>,
        }
        match serde_json::from_value::<RawTriple>(item.clone()) {
            Ok(raw)
                if !raw.src.entity_type.is_empty()
                    && !raw.src.name.is_empty()
                    && !raw.label.is_empty()
                    && !raw.dst.entity_type.is_empty()
                    && !raw.dst.name.is_empty() =>
            {
                candidates.push(CandidateTriple {
                    src: raw.src,
                    label: raw.label,
                    dst: raw.dst,
                    report_id: report_id.to_string(),
                    page: raw.page.unwrap_or(page),
                });
            }
            _ => malformed += 1,
        }
    }
    Ok((candidates, malformed))
}

pub(crate) fn strip_code_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.trim().strip_suffix("```").unwrap_or(rest).trim()
}

/// Reads a triples sidecar: the graph snapshot record format (node records
/// then edge records) reinterpreted as candidate triples for one report.
/// Sidecar records carry no page provenance; page is recorded as 0.
pub fn load_triples_sidecar(
    path: impl AsRef<Path>,
    report_id: &str,
) -> Result<Vec<CandidateTriple>, IngestError> {
    let file = File::open(path.as_ref())?;
    let mut mentions: BTreeMap<u64, EntityMention> = BTreeMap::new();
    let mut candidates = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let display = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                line: display,
                message: e.to_string(),
            })?;
        match value.get("kind").and_then(|v| v.as_str()) {
            Some("node") => {
                let id = value
                    .get("id")
                    .and_then(|v| v.as_u64())
                    .ok_or(IngestError::MissingField("id"))?;
                let entity_type = value
                    .get("type")
                    .and_then(|v| v.as_str())
                    .ok_or(IngestError::MissingField("type"))?
                    .to_string();
                let name = value
                    .get("name")
                    .and_then(|v| v.as_str())
                    .ok_or(IngestError::MissingField("name"))?
                    .to_string();
                let props = value
                    .get("props")
                    .and_then(|v| v.as_object())
                    .map(|m| m.clone().into_iter().collect())
                    .unwrap_or_default();
                mentions.insert(
                    id,
                    EntityMention {
                        entity_type,
                        name,
                        props,
                    },
                );
            }
            Some("edge") => {
                let src = value
                    .get("src")
                    .and_then(|v| v.as_u64())
                    .ok_or(IngestError::MissingField("src"))?;
                let dst = value
                    .get("dst")
                    .and_then(|v| v.as_u64())
                    .ok_or(IngestError::MissingField("dst"))?;
                let label = value
                    .get("label")
                    .and_then(|v| v.as_str())
                    .ok_or(IngestError::MissingField("label"))?
                    .to_string();
                let src = mentions.get(&src).cloned().ok_or(IngestError::Parse {
                    line: display,
                    message: format!("edge references unknown node id {src}"),
                })?;
                let dst = mentions.get(&dst).cloned().ok_or(IngestError::Parse {
                    line: display,
                    message: format!("edge references unknown node id {dst}"),
                })?;
                candidates.push(CandidateTriple {
                    src,
                    label,
                    dst,
                    report_id: report_id.to_string(),
                    page: 0,
                });
            }
            other => {
                return Err(IngestError::Parse {
                    line: display,
                    message: format!("unknown record kind {other:?}"),
                });
            }
        }
    }
    Ok(candidates)
}

/// Resolves a mention to an existing node of the same type via name-embedding
/// similarity (embedding-blocking: only same-type nodes are compared), or
/// creates a new node. Returns the node id and whether a merge happened.
///
/// On merge, incoming properties are unioned in; existing values win.
pub fn resolve_entity(
    graph: &mut Graph,
    entity_type: &str,
    canonical_name: &str,
    properties: &BTreeMap<String, serde_json::Value>,
    embedder: &dyn Embedder,
    merge_threshold: f64,
) -> Result<(NodeId, bool), IngestError> {
    if !graph.schema().has_entity_type(entity_type) {
        return Err(IngestError::Graph(GraphError::UnknownEntityType(
            entity_type.to_string(),
        )));
    }
    let name_embedding = embedder.embed(canonical_name)?;
    let mut best: Option<(f64, NodeId)> = None;
    for id in graph.nodes_of_type(entity_type).collect::<Vec<_>>() {
        let node = graph.node(id).expect("indexed node exists");
        let other = embedder.embed(&node.canonical_name)?;
        let sim = cosine_similarity(&name_embedding, &other)?;
        let better = match best {
            None => sim >= merge_threshold,
            // Strict greater keeps the smallest node id on exact ties.
            Some((best_sim, _)) => sim >= merge_threshold && sim > best_sim,
        };
        if better {
            best = Some((sim, id));
        }
    }
    let coerced = coerce_properties(graph, entity_type, properties);
    match best {
        Some((_, id)) => {
            graph.union_node_properties(id, coerced)?;
            Ok((id, true))
        }
        None => {
            let id = graph.add_node(entity_type, canonical_name, coerced)?;
            Ok((id, false))
        }
    }
}

/// Maps raw JSON properties onto the schema's declared kinds. Undeclared
/// attributes are dropped (logged); unparseable values survive as
/// `raw:`-prefixed text.
fn coerce_properties(
    graph: &Graph,
    entity_type: &str,
    raw: &BTreeMap<String, serde_json::Value>,
) -> Properties {
    let mut out = Properties::new();
    for (attr, value) in raw {
        match graph.schema().declared_kind(entity_type, attr) {
            Some(kind) => {
                out.insert(attr.clone(), PropertyValue::coerce(kind, value));
            }
            None => {
                tracing::debug!(
                    entity_type,
                    attribute = %attr,
                    "dropping undeclared attribute"
                );
            }
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct AdmissionOutcome {
    pub admitted: usize,
    pub rejected: Vec<(CandidateTriple, SchemaViolation)>,
    pub merged_entities: usize,
}

/// Validates each candidate's typed triple against the schema, resolves or
/// creates endpoint nodes, and stores the edge. Candidates whose type is not
/// allowed are rejected before any node is created, each rejection carrying
/// its [`SchemaViolation`].
pub fn admit_triples(
    graph: &mut Graph,
    candidates: &[CandidateTriple],
    embedder: &dyn Embedder,
    merge_threshold: f64,
) -> Result<AdmissionOutcome, IngestError> {
    let mut outcome = AdmissionOutcome::default();
    for candidate in candidates {
        if !graph.schema().allows(
            &candidate.src.entity_type,
            &candidate.label,
            &candidate.dst.entity_type,
        ) {
            outcome.rejected.push((
                candidate.clone(),
                SchemaViolation {
                    src_type: candidate.src.entity_type.clone(),
                    label: candidate.label.clone(),
                    dst_type: candidate.dst.entity_type.clone(),
                },
            ));
            continue;
        }
        let (src, src_merged) = resolve_entity(
            graph,
            &candidate.src.entity_type,
            &candidate.src.name,
            &candidate.src.props,
            embedder,
            merge_threshold,
        )?;
        let (dst, dst_merged) = resolve_entity(
            graph,
            &candidate.dst.entity_type,
            &candidate.dst.name,
            &candidate.dst.props,
            embedder,
            merge_threshold,
        )?;
        outcome.merged_entities += usize::from(src_merged) + usize::from(dst_merged);
        graph.add_edge(Edge::new(src, candidate.label.clone(), dst))?;
        outcome.admitted += 1;
    }
    Ok(outcome)
}

/// Where candidate triples come from during population.
pub enum TripleSource<'a> {
    /// Prompt the provider per span batch.
    Provider(&'a dyn Provider),
    /// Offline sidecar files keyed by report id, in the graph snapshot
    /// record format. Reports without a sidecar contribute no triples.
    Sidecars(&'a BTreeMap<String, std::path::PathBuf>),
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub merge_threshold: f64,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub span_batch: usize,
    /// Reports prepared (chunked + extracted) concurrently. Store writes and
    /// entity resolution stay serialized regardless.
    pub parallelism: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            chunk_size: crate::docstore::DEFAULT_CHUNK_SIZE,
            chunk_overlap: crate::docstore::DEFAULT_CHUNK_OVERLAP,
            span_batch: DEFAULT_SPAN_BATCH,
            parallelism: 1,
        }
    }
}

/// Per-stage population counts, emitted by `populate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub reports: usize,
    pub chunks_indexed: usize,
    pub candidates: usize,
    pub admitted: usize,
    pub rejected: usize,
    pub merged_entities: usize,
    pub malformed_items: usize,
    /// (report_id, error) for reports that failed; they do not abort the run.
    pub failed_reports: Vec<(String, String)>,
}

/// Per-report read-only preparation: chunking plus candidate extraction.
struct PreparedReport {
    drafts: Vec<crate::docstore::ChunkDraft>,
    candidates: Vec<CandidateTriple>,
    malformed: usize,
}

fn prepare_report(
    report: &ParsedReport,
    source: &TripleSource<'_>,
    schema: &crate::schema::Schema,
    options: &IngestOptions,
) -> Result<PreparedReport, IngestError> {
    let spans: Vec<(String, u32)> = report
        .spans
        .iter()
        .map(|s| (s.text.clone(), s.page))
        .collect();
    let drafts = chunk_document(&spans, options.chunk_size, options.chunk_overlap)?;
    let (candidates, malformed) = match source {
        TripleSource::Provider(provider) => {
            let extraction = extract_triples(report, schema, *provider, options.span_batch)?;
            (extraction.candidates, extraction.malformed)
        }
        TripleSource::Sidecars(paths) => match paths.get(&report.report_id) {
            Some(path) => (load_triples_sidecar(path, &report.report_id)?, 0),
            None => (Vec::new(), 0),
        },
    };
    Ok(PreparedReport {
        drafts,
        candidates,
        malformed,
    })
}

/// Populates both stores from a corpus of parsed reports: chunk + index each
/// report into the document store, extract + admit triples into the graph,
/// and anchor every report on exactly one Organization node per canonical
/// company. One bad report is recorded and skipped, not fatal.
///
/// Preparation (chunking and provider extraction) runs concurrently up to
/// `options.parallelism`; store writes and entity resolution are serialized
/// in corpus order, so the result is independent of the width.
pub fn populate(
    corpus: &[ParsedReport],
    source: &TripleSource<'_>,
    embedder: &dyn Embedder,
    graph: &mut Graph,
    store: &mut DocStore,
    options: &IngestOptions,
) -> Result<PopulationReport, IngestError> {
    let prepare = |report: &ParsedReport| prepare_report(report, source, graph.schema(), options);
    let prepared: Vec<Result<PreparedReport, IngestError>> = if options.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .expect("ingest worker pool");
        pool.install(|| {
            use rayon::prelude::*;
            corpus.par_iter().map(prepare).collect()
        })
    } else {
        corpus.iter().map(prepare).collect()
    };

    let mut report_out = PopulationReport::default();
    for (report, prep) in corpus.iter().zip(prepared) {
        match prep.and_then(|p| write_report(report, p, embedder, graph, store, options)) {
            Ok(one) => {
                report_out.reports += 1;
                report_out.chunks_indexed += one.chunks_indexed;
                report_out.candidates += one.candidates;
                report_out.admitted += one.admitted;
                report_out.rejected += one.rejected;
                report_out.merged_entities += one.merged_entities;
                report_out.malformed_items += one.malformed_items;
            }
            Err(e) => {
                report_out
                    .failed_reports
                    .push((report.report_id.clone(), e.to_string()));
            }
        }
    }
    Ok(report_out)
}

/// The single-writer phase for one prepared report.
fn write_report(
    report: &ParsedReport,
    prepared: PreparedReport,
    embedder: &dyn Embedder,
    graph: &mut Graph,
    store: &mut DocStore,
    options: &IngestOptions,
) -> Result<PopulationReport, IngestError> {
    let mut out = PopulationReport {
        malformed_items: prepared.malformed,
        candidates: prepared.candidates.len(),
        ..PopulationReport::default()
    };
    let before = store.len();
    store.index_chunks(&report.meta(), &prepared.drafts, embedder)?;
    out.chunks_indexed = store.len() - before;

    // The company anchor: one Organization node per canonical company, to
    // which every same-named mention resolves.
    resolve_entity(
        graph,
        "Organization",
        &report.company,
        &BTreeMap::new(),
        embedder,
        options.merge_threshold,
    )?;

    let admission = admit_triples(graph, &prepared.candidates, embedder, options.merge_threshold)?;
    out.admitted = admission.admitted;
    out.rejected = admission.rejected.len();
    out.merged_entities = admission.merged_entities;
    for (candidate, violation) in &admission.rejected {
        tracing::debug!(
            report = %candidate.report_id,
            page = candidate.page,
            %violation,
            "candidate triple rejected"
        );
    }
    Ok(out)
}
