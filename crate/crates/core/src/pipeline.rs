//! The verification pipelines: baseline (no retrieval), rag (document
//! chunks), kgrag (graph evidence), and hybrid (a judge picks between the
//! rag and kgrag justifications).
//!
//! Every pipeline is fail-closed: no code path yields a Greenwashing or
//! NotGreenwashing verdict without a successfully parsed model response, and
//! any provider failure degrades to an abstention with a diagnostic
//! justification. Pipelines never write to either store.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docstore::{DocStore, DEFAULT_TOP_M};
use crate::embed::Embedder;
use crate::eval::{compute_metrics, MetricsReport, TruthLabel};
use crate::graph::Graph;
use crate::grounding::{ground_claim, Claim};
use crate::ingest::DEFAULT_MERGE_THRESHOLD;
use crate::provider::{ChatRequest, Provider, RequestTag};
use crate::retrieval::{render_context, retrieve_context, RetrievalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Greenwashing,
    NotGreenwashing,
    Abstain,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Greenwashing => "Greenwashing",
            Verdict::NotGreenwashing => "NotGreenwashing",
            Verdict::Abstain => "Abstain",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Baseline,
    Rag,
    Kgrag,
    Hybrid,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [
        Pipeline::Baseline,
        Pipeline::Rag,
        Pipeline::Kgrag,
        Pipeline::Hybrid,
    ];

    pub fn parse(name: &str) -> Option<Pipeline> {
        match name.to_ascii_lowercase().as_str() {
            "baseline" => Some(Pipeline::Baseline),
            "rag" => Some(Pipeline::Rag),
            "kgrag" => Some(Pipeline::Kgrag),
            "hybrid" => Some(Pipeline::Hybrid),
            _ => None,
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pipeline::Baseline => "baseline",
            Pipeline::Rag => "rag",
            Pipeline::Kgrag => "kgrag",
            Pipeline::Hybrid => "hybrid",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptMode {
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "few-shot")]
    FewShot,
}

impl PromptMode {
    pub fn parse(name: &str) -> Option<PromptMode> {
        match name.to_ascii_lowercase().as_str() {
            "zero-shot" | "zero_shot" | "zeroshot" => Some(PromptMode::ZeroShot),
            "few-shot" | "few_shot" | "fewshot" => Some(PromptMode::FewShot),
            _ => None,
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::ZeroShot => "zero-shot",
            PromptMode::FewShot => "few-shot",
        })
    }
}

/// A provenance reference backing an assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvidenceRef {
    Chunk {
        report_id: String,
        chunk_id: u32,
        year: i32,
        page_number: u32,
    },
    Path {
        text: String,
    },
}

/// The auditable output of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub verdict: Verdict,
    pub justification: String,
    pub evidence: Vec<EvidenceRef>,
    pub pipeline: Pipeline,
    pub prompt_mode: PromptMode,
}

impl Assessment {
    fn abstain(pipeline: Pipeline, mode: PromptMode, reason: impl Into<String>) -> Assessment {
        Assessment {
            verdict: Verdict::Abstain,
            justification: reason.into(),
            evidence: Vec::new(),
            pipeline,
            prompt_mode: mode,
        }
    }

    /// Decided verdicts must carry a non-empty justification.
    pub fn check_invariants(&self) -> bool {
        self.verdict == Verdict::Abstain || !self.justification.is_empty()
    }
}

/// A few-shot exemplar shown to the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub claim: String,
    pub verdict: Verdict,
    pub justification: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("few-shot prompt config requires at least one example")]
    MissingFewShotExamples,
    #[error("failed to read examples file: {0}")]
    ExamplesFile(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Working definition included in every classification prompt.
pub const DEFAULT_DEFINITIONS: &str = "Greenwashing is the practice of conveying a false or \
misleading impression of the environmental benefits of a company, product, or activity. A \
claim is greenwashing when the disclosed facts contradict it, when it overstates actual \
performance, when it presents legal compliance or minor initiatives as significant \
environmental benefit, or when it is too vague to be substantiated and disclosed evidence \
does not support it. A claim is not greenwashing when the disclosed facts substantiate it. \
If the available evidence is insufficient to decide either way, abstain.";

/// Prompt configuration: mode, definitions, and (for few-shot) exemplars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub definition_text: String,
    #[serde(default)]
    pub examples: Vec<FewShotExample>,
}

impl PromptConfig {
    pub fn zero_shot(definition_text: impl Into<String>) -> PromptConfig {
        PromptConfig {
            mode: PromptMode::ZeroShot,
            definition_text: definition_text.into(),
            examples: Vec::new(),
        }
    }

    pub fn few_shot(
        definition_text: impl Into<String>,
        examples: Vec<FewShotExample>,
    ) -> Result<PromptConfig, PipelineError> {
        if examples.is_empty() {
            return Err(PipelineError::MissingFewShotExamples);
        }
        Ok(PromptConfig {
            mode: PromptMode::FewShot,
            definition_text: definition_text.into(),
            examples,
        })
    }

    /// Few-shot exemplars live in an editable JSON file (an array of
    /// [`FewShotExample`]), not in code.
    pub fn few_shot_from_file(
        definition_text: impl Into<String>,
        path: impl AsRef<Path>,
    ) -> Result<PromptConfig, PipelineError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PipelineError::ExamplesFile(e.to_string()))?;
        let examples: Vec<FewShotExample> =
            serde_json::from_str(&text).map_err(|e| PipelineError::ExamplesFile(e.to_string()))?;
        PromptConfig::few_shot(definition_text, examples)
    }

    fn preamble(&self) -> String {
        let mut out = format!("Definitions:\n{}\n", self.definition_text);
        if self.mode == PromptMode::FewShot {
            out.push_str("\nExamples:\n");
            for ex in &self.examples {
                let verdict = match ex.verdict {
                    Verdict::Greenwashing => "GREENWASHING",
                    Verdict::NotGreenwashing => "NOT_GREENWASHING",
                    Verdict::Abstain => "ABSTAIN",
                };
                out.push_str(&format!(
                    "Claim: {}\nVERDICT: {}\nJUSTIFICATION: {}\n\n",
                    ex.claim, verdict, ex.justification
                ));
            }
        }
        out
    }
}

const CLASSIFY_SYSTEM: &str = "You verify corporate sustainability claims. Decide whether the \
claim constitutes greenwashing, based only on the definitions and any evidence provided. \
Answer in exactly this format:\nVERDICT: GREENWASHING | NOT_GREENWASHING | ABSTAIN\n\
JUSTIFICATION: <a concise factual justification citing the evidence>\n\
Abstain when the evidence is insufficient to decide.";

/// Parses a classifier response. Expects a `VERDICT:` line carrying one of
/// GREENWASHING | NOT_GREENWASHING | ABSTAIN (case-insensitive) and a
/// `JUSTIFICATION:` block. Anything unparseable — including a decided verdict
/// with no justification — fails closed to Abstain with the raw text kept as
/// a diagnostic. Total function.
pub fn parse_verdict(response_text: &str) -> (Verdict, String) {
    let mut verdict: Option<Verdict> = None;
    let mut justification_parts: Vec<&str> = Vec::new();
    let mut in_justification = false;
    for line in response_text.lines() {
        let trimmed = line.trim();
        let upper = trimmed.to_ascii_uppercase();
        if verdict.is_none() {
            if let Some(rest) = upper.strip_prefix("VERDICT:") {
                verdict = match rest.trim() {
                    "GREENWASHING" => Some(Verdict::Greenwashing),
                    "NOT_GREENWASHING" => Some(Verdict::NotGreenwashing),
                    "ABSTAIN" => Some(Verdict::Abstain),
                    _ => None,
                };
                continue;
            }
        }
        if !in_justification {
            if let Some(idx) = upper.find("JUSTIFICATION:") {
                in_justification = true;
                let rest = trimmed["JUSTIFICATION:".len() + idx..].trim();
                if !rest.is_empty() {
                    justification_parts.push(rest);
                }
                continue;
            }
        } else {
            justification_parts.push(trimmed);
        }
    }
    let justification = justification_parts.join("\n").trim().to_string();
    match verdict {
        Some(Verdict::Abstain) => (Verdict::Abstain, justification),
        Some(decided) if !justification.is_empty() => (decided, justification),
        // Missing marker or decided-without-justification: fail closed.
        _ => (Verdict::Abstain, response_text.trim().to_string()),
    }
}

/// Everything a pipeline run needs from the environment. Stores are read-only
/// here: pipelines never write.
pub struct PipelineContext<'a> {
    pub graph: &'a Graph,
    pub store: &'a DocStore,
    pub provider: &'a dyn Provider,
    pub embedder: &'a dyn Embedder,
    pub retrieval: RetrievalParams,
    pub top_m: usize,
    pub link_threshold: f64,
}

impl<'a> PipelineContext<'a> {
    pub fn new(
        graph: &'a Graph,
        store: &'a DocStore,
        provider: &'a dyn Provider,
        embedder: &'a dyn Embedder,
    ) -> Self {
        PipelineContext {
            graph,
            store,
            provider,
            embedder,
            retrieval: RetrievalParams::default(),
            top_m: DEFAULT_TOP_M,
            link_threshold: DEFAULT_MERGE_THRESHOLD,
        }
    }
}

fn classify(
    ctx_provider: &dyn Provider,
    config: &PromptConfig,
    claim: &Claim,
    evidence_block: &str,
    pipeline: Pipeline,
    evidence: Vec<EvidenceRef>,
) -> Assessment {
    let user = format!(
        "{}\nClaim to assess: {}\n\n{}",
        config.preamble(),
        claim.text,
        evidence_block
    );
    let request = ChatRequest::new(RequestTag::Classify, CLASSIFY_SYSTEM, user);
    match ctx_provider.complete(&request) {
        Ok(response) => {
            let (verdict, justification) = parse_verdict(&response.text);
            Assessment {
                verdict,
                justification,
                evidence,
                pipeline,
                prompt_mode: config.mode,
            }
        }
        Err(e) => Assessment::abstain(pipeline, config.mode, format!("provider error: {e}")),
    }
}

/// Baseline: the model sees only the claim and the prompt configuration — no
/// retrieved context at all.
pub fn run_baseline(claim: &Claim, config: &PromptConfig, provider: &dyn Provider) -> Assessment {
    classify(
        provider,
        config,
        claim,
        "No retrieved evidence is provided. Use only the definitions above.",
        Pipeline::Baseline,
        Vec::new(),
    )
}

/// rag: company-filtered top-m chunk retrieval feeds the classifier;
/// evidence is the retrieved chunk provenance.
pub fn run_em_rag(claim: &Claim, ctx: &PipelineContext<'_>, config: &PromptConfig) -> Assessment {
    // Grounding for the company only; the claim text itself is the query.
    let grounded = match ground_claim(claim, ctx.graph, ctx.provider, ctx.embedder, ctx.link_threshold)
    {
        Ok(g) => g,
        Err(e) => {
            return Assessment::abstain(
                Pipeline::Rag,
                config.mode,
                format!("grounding failed: {e}"),
            )
        }
    };
    let Some(company_node) = grounded.company_node else {
        return Assessment::abstain(
            Pipeline::Rag,
            config.mode,
            format!("company not found: {:?}", grounded.company_name),
        );
    };
    let company = ctx
        .graph
        .node(company_node)
        .expect("linked node exists")
        .canonical_name
        .clone();
    let hits = match ctx
        .store
        .retrieve_chunks(&claim.text, &company, ctx.top_m, ctx.embedder)
    {
        Ok(hits) => hits,
        Err(e) => {
            return Assessment::abstain(
                Pipeline::Rag,
                config.mode,
                format!("retrieval failed: {e}"),
            )
        }
    };
    let mut evidence_block = String::new();
    let mut evidence = Vec::new();
    if hits.is_empty() {
        evidence_block.push_str("No evidence was found for this company in the document store.");
    } else {
        evidence_block.push_str("Evidence chunks:\n");
        for (i, (chunk, _)) in hits.iter().enumerate() {
            evidence_block.push_str(&format!(
                "[{}] (report {}, year {}, page {}) {}\n",
                i + 1,
                chunk.report_id,
                chunk.year,
                chunk.page_number,
                chunk.text
            ));
            evidence.push(EvidenceRef::Chunk {
                report_id: chunk.report_id.clone(),
                chunk_id: chunk.chunk_id,
                year: chunk.year,
                page_number: chunk.page_number,
            });
        }
    }
    classify(
        ctx.provider,
        config,
        claim,
        &evidence_block,
        Pipeline::Rag,
        evidence,
    )
}

/// kgrag: full grounding, schema-driven subgraph retrieval, and the rendered
/// reasoning paths as context; evidence is the path set.
pub fn run_em_kgrag(claim: &Claim, ctx: &PipelineContext<'_>, config: &PromptConfig) -> Assessment {
    let grounded = match ground_claim(claim, ctx.graph, ctx.provider, ctx.embedder, ctx.link_threshold)
    {
        Ok(g) => g,
        Err(e) => {
            return Assessment::abstain(
                Pipeline::Kgrag,
                config.mode,
                format!("grounding failed: {e}"),
            )
        }
    };
    if grounded.company_node.is_none() {
        return Assessment::abstain(
            Pipeline::Kgrag,
            config.mode,
            format!("company not found: {:?}", grounded.company_name),
        );
    }
    let subgraph = match retrieve_context(ctx.graph, &grounded, &ctx.retrieval, ctx.embedder) {
        Ok(h) => h,
        Err(e) => {
            return Assessment::abstain(
                Pipeline::Kgrag,
                config.mode,
                format!("retrieval failed: {e}"),
            )
        }
    };
    let rendered = render_context(&subgraph, ctx.graph);
    let evidence_block = if rendered.is_empty() {
        "No graph evidence was found for this claim.".to_string()
    } else {
        format!("Evidence paths from the knowledge graph:\n{rendered}")
    };
    let evidence = rendered
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| EvidenceRef::Path {
            text: l.to_string(),
        })
        .collect();
    classify(
        ctx.provider,
        config,
        claim,
        &evidence_block,
        Pipeline::Kgrag,
        evidence,
    )
}

const JUDGE_SYSTEM: &str = "You are judging two assessments of the same sustainability claim. \
Pick the one whose justification is better grounded in evidence. Answer with exactly \
'CHOICE: A' or 'CHOICE: B'.";

/// hybrid: a judge selects between the rag and kgrag justifications; the
/// chosen assessment is returned re-tagged. Degenerate cases skip the judge:
/// two abstentions abstain, a single abstention yields the other assessment
/// (there is nothing to compare a missing justification against).
pub fn run_em_hybrid(
    claim: &Claim,
    rag: &Assessment,
    kgrag: &Assessment,
    provider: &dyn Provider,
) -> Assessment {
    let mode = rag.prompt_mode;
    let retag = |a: &Assessment| {
        let mut out = a.clone();
        out.pipeline = Pipeline::Hybrid;
        out
    };
    match (rag.verdict, kgrag.verdict) {
        (Verdict::Abstain, Verdict::Abstain) => Assessment::abstain(
            Pipeline::Hybrid,
            mode,
            "both underlying pipelines abstained",
        ),
        (Verdict::Abstain, _) => retag(kgrag),
        (_, Verdict::Abstain) => retag(rag),
        _ => {
            let user = format!(
                "Claim: {}\n\nAssessment A (verdict {}):\n{}\n\nAssessment B (verdict {}):\n{}",
                claim.text, rag.verdict, rag.justification, kgrag.verdict, kgrag.justification
            );
            let request = ChatRequest::new(RequestTag::Judge, JUDGE_SYSTEM, user);
            match provider.complete(&request) {
                Ok(response) => match parse_choice(&response.text) {
                    Some('A') => retag(rag),
                    Some('B') => retag(kgrag),
                    _ => Assessment::abstain(
                        Pipeline::Hybrid,
                        mode,
                        format!("unparseable judge choice: {}", response.text.trim()),
                    ),
                },
                Err(e) => {
                    Assessment::abstain(Pipeline::Hybrid, mode, format!("provider error: {e}"))
                }
            }
        }
    }
}

fn parse_choice(text: &str) -> Option<char> {
    for line in text.lines() {
        let upper = line.trim().to_ascii_uppercase();
        if let Some(rest) = upper.strip_prefix("CHOICE:") {
            return match rest.trim() {
                "A" => Some('A'),
                "B" => Some('B'),
                _ => None,
            };
        }
    }
    None
}

/// Runs one pipeline end to end. Hybrid runs rag and kgrag internally and
/// then judges.
pub fn run_pipeline(
    pipeline: Pipeline,
    claim: &Claim,
    ctx: &PipelineContext<'_>,
    config: &PromptConfig,
) -> Assessment {
    match pipeline {
        Pipeline::Baseline => run_baseline(claim, config, ctx.provider),
        Pipeline::Rag => run_em_rag(claim, ctx, config),
        Pipeline::Kgrag => run_em_kgrag(claim, ctx, config),
        Pipeline::Hybrid => {
            let rag = run_em_rag(claim, ctx, config);
            let kgrag = run_em_kgrag(claim, ctx, config);
            run_em_hybrid(claim, &rag, &kgrag, ctx.provider)
        }
    }
}

/// One row of a batch dataset: `{id, claim, company?, label?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub id: String,
    pub claim: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub company: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<TruthLabel>,
}

/// Rows that failed to parse: (line number, message).
pub type SkippedRows = Vec<(usize, String)>;

/// Loads a JSONL dataset, skipping malformed rows with a warning list.
pub fn load_dataset(
    path: impl AsRef<Path>,
) -> Result<(Vec<DatasetRow>, SkippedRows), PipelineError> {
    let file = File::open(path.as_ref())?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DatasetRow>(&line) {
            Ok(row) if !row.claim.trim().is_empty() => rows.push(row),
            Ok(_) => skipped.push((lineno + 1, "empty claim".to_string())),
            Err(e) => skipped.push((lineno + 1, e.to_string())),
        }
    }
    Ok((rows, skipped))
}

/// One output record of a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub pipeline: Pipeline,
    pub prompt_mode: PromptMode,
    pub verdict: Verdict,
    pub justification: String,
    pub evidence: Vec<EvidenceRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<TruthLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub pipeline: Pipeline,
    pub prompt_mode: PromptMode,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchOutput {
    pub records: Vec<BatchRecord>,
    pub metrics: Vec<MetricsRow>,
}

impl BatchOutput {
    /// Canonical JSONL rendering of the records, stable across runs.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_records<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.records_jsonl().as_bytes())
    }
}

/// Runs every (pipeline, mode) combination over the dataset. Claims are
/// independent; `parallelism > 1` fans them out over a bounded worker pool
/// while keeping the output in input order. Metrics are computed per
/// combination when ground-truth labels are present.
pub fn run_batch(
    rows: &[DatasetRow],
    pipelines: &[Pipeline],
    modes: &[(PromptMode, PromptConfig)],
    ctx: &PipelineContext<'_>,
    parallelism: usize,
) -> BatchOutput {
    let mut output = BatchOutput::default();
    for (mode, config) in modes {
        debug_assert_eq!(*mode, config.mode);
        for &pipeline in pipelines {
            let assess = |row: &DatasetRow| -> BatchRecord {
                let assessment = match Claim::new(row.claim.clone()) {
                    Ok(mut claim) => {
                        claim.id = Some(row.id.clone());
                        run_pipeline(pipeline, &claim, ctx, config)
                    }
                    Err(e) => Assessment::abstain(pipeline, *mode, format!("invalid claim: {e}")),
                };
                BatchRecord {
                    id: row.id.clone(),
                    pipeline,
                    prompt_mode: *mode,
                    verdict: assessment.verdict,
                    justification: assessment.justification,
                    evidence: assessment.evidence,
                    label: row.label,
                }
            };
            let records: Vec<BatchRecord> = if parallelism > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(parallelism)
                    .build()
                    .expect("worker pool");
                pool.install(|| {
                    use rayon::prelude::*;
                    rows.par_iter().map(assess).collect()
                })
            } else {
                rows.iter().map(assess).collect()
            };
            let labeled: Vec<(Verdict, TruthLabel)> = records
                .iter()
                .filter_map(|r| r.label.map(|l| (r.verdict, l)))
                .collect();
            if !labeled.is_empty() {
                if let Ok(metrics) = compute_metrics(&labeled) {
                    output.metrics.push(MetricsRow {
                        pipeline,
                        prompt_mode: *mode,
                        metrics,
                    });
                }
            }
            output.records.extend(records);
        }
    }
    output
}

/// Standard mode table: zero-shot always, few-shot when examples exist.
pub fn mode_configs(
    definitions: &str,
    few_shot_examples: Option<Vec<FewShotExample>>,
) -> Result<Vec<(PromptMode, PromptConfig)>, PipelineError> {
    let mut out = vec![(PromptMode::ZeroShot, PromptConfig::zero_shot(definitions))];
    if let Some(examples) = few_shot_examples {
        out.push((
            PromptMode::FewShot,
            PromptConfig::few_shot(definitions, examples)?,
        ));
    }
    Ok(out)
}
