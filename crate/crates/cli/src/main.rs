//! Command-line front end: schema merging, corpus ingestion, graph
//! statistics, single-claim verification, batch runs, and evaluation reports.
//!
//! Exit codes: 0 success (or a decided verdict), 1 I/O or configuration
//! error, 2 validation conflict, 3 abstain (`verify` only).

mod config;
mod table;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use claimlens_core::docstore::DocStore;
use claimlens_core::embed::Embedder;
use claimlens_core::eval::{
    borda_scores, friedman_test, ilora_aggregate, nemenyi, three_way_judge, EvalError, IloraScore,
    RankingRecord, TruthLabel,
};
use claimlens_core::graph::Graph;
use claimlens_core::grounding::Claim;
use claimlens_core::ingest::{
    load_parsed_report, populate, IngestOptions, ParsedReport, TripleSource,
};
use claimlens_core::pipeline::{
    load_dataset, run_batch, run_pipeline, BatchRecord, Pipeline, PipelineContext, PromptConfig,
    PromptMode, Verdict, DEFAULT_DEFINITIONS,
};
use claimlens_core::provider::Provider;
use claimlens_core::schema::{Schema, SchemaError};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "claimlens", version, about = "Knowledge-grounded verification of corporate sustainability claims")]
struct Cli {
    /// Path to a TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Render human-readable tables alongside the JSON output.
    #[arg(long, global = true)]
    table: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct StoreArgs {
    /// Schema file (overrides the config).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Graph snapshot file (overrides the config).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Document-store snapshot file (overrides the config).
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct RetrievalArgs {
    /// Nodes retrieved per claim-element type (overrides the config).
    #[arg(long)]
    top_n: Option<usize>,
    /// Similarity threshold for graph retrieval (overrides the config).
    #[arg(long)]
    threshold: Option<f64>,
    /// Max path length in hops (overrides the config).
    #[arg(long)]
    k: Option<usize>,
    /// Chunks retrieved per claim (overrides the config).
    #[arg(long)]
    top_m: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Merge schema files into a unified schema.
    SchemaMerge {
        /// Input schema files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output path for the merged schema.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Ingest parsed reports into the graph and document store.
    Ingest {
        #[command(flatten)]
        stores: StoreArgs,
        /// Parsed-report files (JSONL).
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Where to write the graph snapshot.
        #[arg(long)]
        graph_out: PathBuf,
        /// Where to write the document-store snapshot.
        #[arg(long)]
        store_out: PathBuf,
        /// Directory of offline triples sidecars (<report_id>.triples.jsonl);
        /// when given, the provider is not called for extraction.
        #[arg(long)]
        sidecar_dir: Option<PathBuf>,
    },
    /// Print corpus statistics for a graph snapshot.
    Stats {
        #[command(flatten)]
        stores: StoreArgs,
        /// How many entries in the top-type/top-relation lists.
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Verify a single claim. Exit code 0 when decided, 3 when abstained.
    Verify {
        #[command(flatten)]
        stores: StoreArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// The claim text.
        #[arg(long)]
        claim: String,
        /// Pipeline: baseline | rag | kgrag | hybrid.
        #[arg(long)]
        pipeline: String,
        /// Prompt mode: zero-shot | few-shot.
        #[arg(long, default_value = "zero-shot")]
        mode: String,
        /// Debug: write the retrieved evidence subgraph (snapshot records
        /// followed by the rendered context) to this path.
        #[arg(long)]
        dump_evidence: Option<PathBuf>,
    },
    /// Run pipelines over a claims dataset and write assessment records.
    Batch {
        #[command(flatten)]
        stores: StoreArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Dataset of {id, claim, company?, label?} rows (JSONL).
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated pipelines to run.
        #[arg(long, default_value = "baseline,rag,kgrag,hybrid", value_delimiter = ',')]
        pipelines: Vec<String>,
        /// Comma-separated prompt modes to run.
        #[arg(long, default_value = "zero-shot", value_delimiter = ',')]
        modes: Vec<String>,
        /// Output JSONL of assessment records.
        #[arg(long)]
        out: PathBuf,
        /// Claims processed concurrently (overrides the config).
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Evaluate result files: metrics, Borda, Friedman/Nemenyi, justification
    /// quality.
    Eval {
        /// Assessment records (JSONL) from `batch`.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Ranking records (JSONL of {claim_id, positions}).
        #[arg(long)]
        rankings: Option<PathBuf>,
        /// Justification-quality scores (JSONL of the five criteria).
        #[arg(long)]
        ilora: Option<PathBuf>,
        /// Run the 3-way listwise judge over the results records (uses the
        /// configured provider) instead of reading a rankings file.
        #[arg(long)]
        judge: bool,
        /// Where to write judge-produced rankings.
        #[arg(long)]
        rankings_out: Option<PathBuf>,
        /// Where to write the radar CSV of justification-quality means.
        #[arg(long)]
        radar_csv: Option<PathBuf>,
    },
}

enum CliError {
    /// I/O or configuration problems.
    Io(String),
    /// Validation conflicts (schema merge).
    Conflict(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Conflict(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Conflict(m) => m,
        }
    }
}

fn io_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let config = RunConfig::load(cli.config.as_deref()).map_err(CliError::Io)?;
    match cli.command {
        Command::SchemaMerge { inputs, output } => cmd_schema_merge(&inputs, &output),
        Command::Ingest {
            stores,
            reports,
            graph_out,
            store_out,
            sidecar_dir,
        } => cmd_ingest(&config, &stores, &reports, &graph_out, &store_out, sidecar_dir.as_deref()),
        Command::Stats { stores, top_k } => cmd_stats(&config, &stores, top_k, cli.table),
        Command::Verify {
            stores,
            retrieval,
            claim,
            pipeline,
            mode,
            dump_evidence,
        } => cmd_verify(
            &config,
            &stores,
            &retrieval,
            &claim,
            &pipeline,
            &mode,
            dump_evidence.as_deref(),
        ),
        Command::Batch {
            stores,
            retrieval,
            dataset,
            pipelines,
            modes,
            out,
            parallelism,
        } => cmd_batch(
            &config, &stores, &retrieval, &dataset, &pipelines, &modes, &out, parallelism,
            cli.table,
        ),
        Command::Eval {
            results,
            rankings,
            ilora,
            judge,
            rankings_out,
            radar_csv,
        } => cmd_eval(
            &config,
            results.as_deref(),
            rankings.as_deref(),
            ilora.as_deref(),
            judge,
            rankings_out.as_deref(),
            radar_csv.as_deref(),
            cli.table,
        ),
    }
}

fn cmd_schema_merge(inputs: &[PathBuf], output: &Path) -> Result<u8, CliError> {
    let mut parts = Vec::new();
    for path in inputs {
        parts.push(Schema::from_json_file(path).map_err(|e| io_err("reading schema", e))?);
    }
    match Schema::merge(&parts) {
        Ok(merged) => {
            merged
                .to_json_file(output)
                .map_err(|e| io_err("writing merged schema", e))?;
            println!(
                "{}",
                serde_json::json!({
                    "entity_types": merged.entity_types.len(),
                    "relation_types": merged.relation_types.len(),
                    "allowed_triples": merged.allowed.len(),
                    "output": output.display().to_string(),
                })
            );
            Ok(0)
        }
        Err(e @ SchemaError::ConflictingAttributeKind { .. }) => {
            Err(CliError::Conflict(format!("schema conflict: {e}")))
        }
        Err(e) => Err(io_err("merging schemas", e)),
    }
}

struct Resolved {
    schema_path: PathBuf,
    graph_path: Option<PathBuf>,
    store_path: Option<PathBuf>,
}

fn resolve_paths(config: &RunConfig, args: &StoreArgs) -> Result<Resolved, CliError> {
    let schema_path = args
        .schema
        .clone()
        .or_else(|| config.stores.schema.clone())
        .ok_or_else(|| CliError::Io("no schema path given (flag --schema or [stores].schema)".into()))?;
    if !schema_path.exists() {
        return Err(CliError::Io(format!(
            "schema file {} does not exist",
            schema_path.display()
        )));
    }
    Ok(Resolved {
        schema_path,
        graph_path: args.graph.clone().or_else(|| config.stores.graph.clone()),
        store_path: args.store.clone().or_else(|| config.stores.docstore.clone()),
    })
}

fn load_graph(schema_path: &Path, graph_path: &Path) -> Result<Graph, CliError> {
    let schema = Schema::from_json_file(schema_path).map_err(|e| io_err("reading schema", e))?;
    let file = File::open(graph_path)
        .map_err(|e| io_err(&format!("opening graph {}", graph_path.display()), e))?;
    Graph::load_snapshot(schema, BufReader::new(file)).map_err(|e| io_err("loading graph", e))
}

fn load_docstore(path: &Path) -> Result<DocStore, CliError> {
    let file = File::open(path)
        .map_err(|e| io_err(&format!("opening document store {}", path.display()), e))?;
    DocStore::load_snapshot(BufReader::new(file)).map_err(|e| io_err("loading document store", e))
}

#[allow(clippy::too_many_arguments)]
fn cmd_ingest(
    config: &RunConfig,
    stores: &StoreArgs,
    reports: &[PathBuf],
    graph_out: &Path,
    store_out: &Path,
    sidecar_dir: Option<&Path>,
) -> Result<u8, CliError> {
    let resolved = resolve_paths(config, stores)?;
    let schema =
        Schema::from_json_file(&resolved.schema_path).map_err(|e| io_err("reading schema", e))?;
    let mut corpus: Vec<ParsedReport> = Vec::new();
    for path in reports {
        corpus.push(load_parsed_report(path).map_err(|e| {
            io_err(&format!("parsing report {}", path.display()), e)
        })?);
    }
    let embedder = config.embedder.build();
    let provider = config
        .provider
        .build()
        .map_err(|e| io_err("building provider", e))?;
    let sidecars: BTreeMap<String, PathBuf> = match sidecar_dir {
        Some(dir) => corpus
            .iter()
            .map(|r| {
                (
                    r.report_id.clone(),
                    dir.join(format!("{}.triples.jsonl", r.report_id)),
                )
            })
            .filter(|(_, p)| p.exists())
            .collect(),
        None => BTreeMap::new(),
    };
    let source = if sidecar_dir.is_some() {
        TripleSource::Sidecars(&sidecars)
    } else {
        TripleSource::Provider(provider.as_ref())
    };
    let options = IngestOptions {
        merge_threshold: config.ingest.merge_threshold,
        chunk_size: config.ingest.chunk_size,
        chunk_overlap: config.ingest.chunk_overlap,
        span_batch: config.ingest.span_batch,
        parallelism: config.run.parallelism.max(1),
    };
    let mut graph = Graph::new(schema);
    let mut store = DocStore::new();
    let report = populate(
        &corpus,
        &source,
        embedder.as_ref(),
        &mut graph,
        &mut store,
        &options,
    )
    .map_err(|e| io_err("populating stores", e))?;
    graph
        .ensure_node_embeddings(embedder.as_ref())
        .map_err(|e| io_err("embedding nodes", e))?;

    let graph_file = File::create(graph_out)
        .map_err(|e| io_err(&format!("creating {}", graph_out.display()), e))?;
    graph
        .save_snapshot(BufWriter::new(graph_file))
        .map_err(|e| io_err("writing graph snapshot", e))?;
    let store_file = File::create(store_out)
        .map_err(|e| io_err(&format!("creating {}", store_out.display()), e))?;
    store
        .save_snapshot(BufWriter::new(store_file))
        .map_err(|e| io_err("writing document-store snapshot", e))?;

    println!(
        "{}",
        serde_json::to_string(&report).map_err(|e| io_err("serializing report", e))?
    );
    Ok(0)
}

fn cmd_stats(
    config: &RunConfig,
    stores: &StoreArgs,
    top_k: usize,
    table: bool,
) -> Result<u8, CliError> {
    let resolved = resolve_paths(config, stores)?;
    let graph_path = resolved
        .graph_path
        .ok_or_else(|| CliError::Io("no graph path given (flag --graph or [stores].graph)".into()))?;
    let graph = load_graph(&resolved.schema_path, &graph_path)?;
    let stats = graph.stats(top_k);
    println!(
        "{}",
        serde_json::to_string(&stats).map_err(|e| io_err("serializing stats", e))?
    );
    if table {
        eprintln!("{}", table::render_stats(&stats));
    }
    Ok(0)
}

fn build_context<'a>(
    config: &RunConfig,
    flags: &RetrievalArgs,
    graph: &'a Graph,
    store: &'a DocStore,
    provider: &'a dyn Provider,
    embedder: &'a dyn Embedder,
) -> PipelineContext<'a> {
    let mut ctx = PipelineContext::new(graph, store, provider, embedder);
    ctx.retrieval = config.retrieval_params();
    if let Some(top_n) = flags.top_n {
        ctx.retrieval.top_n = top_n;
    }
    if let Some(threshold) = flags.threshold {
        ctx.retrieval.threshold = threshold;
    }
    if let Some(k) = flags.k {
        ctx.retrieval.k = k;
    }
    ctx.top_m = flags.top_m.unwrap_or(config.retrieval.top_m);
    ctx.link_threshold = config.ingest.merge_threshold;
    ctx
}

fn prompt_config_for(config: &RunConfig, mode: PromptMode) -> Result<PromptConfig, CliError> {
    let definitions = match &config.run.definitions_file {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| io_err(&format!("reading definitions {}", path.display()), e))?,
        None => DEFAULT_DEFINITIONS.to_string(),
    };
    match mode {
        PromptMode::ZeroShot => Ok(PromptConfig::zero_shot(definitions)),
        PromptMode::FewShot => {
            let path = config.run.fewshot_file.as_ref().ok_or_else(|| {
                CliError::Io("few-shot mode requires [run].fewshot_file in the config".into())
            })?;
            PromptConfig::few_shot_from_file(definitions, path)
                .map_err(|e| io_err("loading few-shot examples", e))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    config: &RunConfig,
    stores: &StoreArgs,
    retrieval: &RetrievalArgs,
    claim_text: &str,
    pipeline_name: &str,
    mode_name: &str,
    dump_evidence: Option<&Path>,
) -> Result<u8, CliError> {
    let Some(pipeline) = Pipeline::parse(pipeline_name) else {
        eprintln!(
            "unknown pipeline {pipeline_name:?}\nusage: claimlens verify --claim <TEXT> \
             --pipeline <baseline|rag|kgrag|hybrid> [--mode <zero-shot|few-shot>]"
        );
        return Ok(1);
    };
    let Some(mode) = PromptMode::parse(mode_name) else {
        eprintln!("unknown prompt mode {mode_name:?} (expected zero-shot or few-shot)");
        return Ok(1);
    };
    let resolved = resolve_paths(config, stores)?;
    let graph_path = resolved
        .graph_path
        .ok_or_else(|| CliError::Io("no graph path given".into()))?;
    let store_path = resolved
        .store_path
        .ok_or_else(|| CliError::Io("no document-store path given".into()))?;
    let mut graph = load_graph(&resolved.schema_path, &graph_path)?;
    let embedder = config.embedder.build();
    graph
        .ensure_node_embeddings(embedder.as_ref())
        .map_err(|e| io_err("embedding nodes", e))?;
    graph.seal();
    let store = load_docstore(&store_path)?;
    let provider = config
        .provider
        .build()
        .map_err(|e| io_err("building provider", e))?;
    let ctx = build_context(
        config,
        retrieval,
        &graph,
        &store,
        provider.as_ref(),
        embedder.as_ref(),
    );
    let prompt_config = prompt_config_for(config, mode)?;
    let claim = Claim::new(claim_text).map_err(|e| io_err("claim", e))?;
    if let Some(path) = dump_evidence {
        dump_evidence_subgraph(&claim, &ctx, path)?;
    }
    let assessment = run_pipeline(pipeline, &claim, &ctx, &prompt_config);
    println!(
        "{}",
        serde_json::to_string(&assessment).map_err(|e| io_err("serializing assessment", e))?
    );
    Ok(if assessment.verdict == Verdict::Abstain {
        3
    } else {
        0
    })
}

/// Debug helper for `verify --dump-evidence`: grounds the claim, runs the
/// graph retrieval, and writes the subgraph records followed by the rendered
/// context.
fn dump_evidence_subgraph(
    claim: &Claim,
    ctx: &PipelineContext<'_>,
    path: &Path,
) -> Result<(), CliError> {
    use claimlens_core::grounding::ground_claim;
    use claimlens_core::retrieval::{dump_subgraph, render_context, retrieve_context};
    let grounded = ground_claim(claim, ctx.graph, ctx.provider, ctx.embedder, ctx.link_threshold)
        .map_err(|e| io_err("grounding for evidence dump", e))?;
    if grounded.company_node.is_none() {
        return Err(CliError::Io(format!(
            "cannot dump evidence: company {:?} not found in the graph",
            grounded.company_name
        )));
    }
    let subgraph = retrieve_context(ctx.graph, &grounded, &ctx.retrieval, ctx.embedder)
        .map_err(|e| io_err("retrieving evidence", e))?;
    let mut w = BufWriter::new(
        File::create(path).map_err(|e| io_err("creating evidence dump", e))?,
    );
    dump_subgraph(&subgraph, ctx.graph, &mut w).map_err(|e| io_err("writing evidence dump", e))?;
    writeln!(w, "\n{}", render_context(&subgraph, ctx.graph))
        .map_err(|e| io_err("writing evidence dump", e))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_batch(
    config: &RunConfig,
    stores: &StoreArgs,
    retrieval: &RetrievalArgs,
    dataset: &Path,
    pipeline_names: &[String],
    mode_names: &[String],
    out: &Path,
    parallelism: Option<usize>,
    table: bool,
) -> Result<u8, CliError> {
    let mut pipelines = Vec::new();
    for name in pipeline_names {
        pipelines.push(Pipeline::parse(name).ok_or_else(|| {
            CliError::Io(format!("unknown pipeline {name:?} (baseline|rag|kgrag|hybrid)"))
        })?);
    }
    let mut modes = Vec::new();
    for name in mode_names {
        let mode = PromptMode::parse(name)
            .ok_or_else(|| CliError::Io(format!("unknown prompt mode {name:?}")))?;
        modes.push((mode, prompt_config_for(config, mode)?));
    }
    let resolved = resolve_paths(config, stores)?;
    let graph_path = resolved
        .graph_path
        .ok_or_else(|| CliError::Io("no graph path given".into()))?;
    let store_path = resolved
        .store_path
        .ok_or_else(|| CliError::Io("no document-store path given".into()))?;
    let mut graph = load_graph(&resolved.schema_path, &graph_path)?;
    let embedder = config.embedder.build();
    graph
        .ensure_node_embeddings(embedder.as_ref())
        .map_err(|e| io_err("embedding nodes", e))?;
    graph.seal();
    let store = load_docstore(&store_path)?;
    let provider = config
        .provider
        .build()
        .map_err(|e| io_err("building provider", e))?;
    let ctx = build_context(
        config,
        retrieval,
        &graph,
        &store,
        provider.as_ref(),
        embedder.as_ref(),
    );

    let (rows, skipped) =
        load_dataset(dataset).map_err(|e| io_err("reading dataset", e))?;
    for (line, message) in &skipped {
        eprintln!("warning: dataset line {line} skipped: {message}");
    }
    let width = parallelism.unwrap_or(config.run.parallelism).max(1);
    let output = run_batch(&rows, &pipelines, &modes, &ctx, width);

    let out_file =
        File::create(out).map_err(|e| io_err(&format!("creating {}", out.display()), e))?;
    output
        .write_records(BufWriter::new(out_file))
        .map_err(|e| io_err("writing records", e))?;
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "records": output.records.len(),
            "skipped_rows": skipped.len(),
            "metrics": output.metrics,
            "out": out.display().to_string(),
        }))
        .map_err(|e| io_err("serializing summary", e))?
    );
    if table {
        eprintln!("{}", table::render_metrics(&output.metrics));
    }
    Ok(0)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>, CliError> {
    use std::io::BufRead;
    let file =
        File::open(path).map_err(|e| io_err(&format!("opening {} {}", what, path.display()), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(what, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| io_err(&format!("{} line {}", what, lineno + 1), e))?,
        );
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    config: &RunConfig,
    results: Option<&Path>,
    rankings: Option<&Path>,
    ilora: Option<&Path>,
    judge: bool,
    rankings_out: Option<&Path>,
    radar_csv: Option<&Path>,
    table: bool,
) -> Result<u8, CliError> {
    let mut report = serde_json::Map::new();

    let records: Option<Vec<BatchRecord>> = match results {
        Some(path) => Some(read_jsonl(path, "results")?),
        None => None,
    };

    // Classification metrics per (pipeline, mode) over labeled records.
    if let Some(records) = &records {
        let mut by_combo: BTreeMap<(Pipeline, PromptMode), Vec<(Verdict, TruthLabel)>> =
            BTreeMap::new();
        for record in records {
            if let Some(label) = record.label {
                by_combo
                    .entry((record.pipeline, record.prompt_mode))
                    .or_default()
                    .push((record.verdict, label));
            }
        }
        let mut metrics_rows = Vec::new();
        for ((pipeline, mode), results) in &by_combo {
            if let Ok(metrics) = claimlens_core::eval::compute_metrics(results) {
                metrics_rows.push(serde_json::json!({
                    "pipeline": pipeline,
                    "prompt_mode": mode,
                    "metrics": metrics,
                }));
            }
        }
        report.insert("metrics".into(), serde_json::Value::Array(metrics_rows));
    }

    // Rankings: either judged fresh from the results or read from a file.
    let ranking_records: Option<Vec<RankingRecord>> = if judge {
        let records = records.as_ref().ok_or_else(|| {
            CliError::Io("--judge requires --results with baseline, rag and kgrag records".into())
        })?;
        let provider = config
            .provider
            .build()
            .map_err(|e| io_err("building provider", e))?;
        let (ranked, empty_flagged, unparseable) =
            judge_results(records, provider.as_ref())?;
        report.insert(
            "judging".into(),
            serde_json::json!({
                "ranked": ranked.len(),
                "records_with_empty_justification": empty_flagged,
                "unparseable_rankings": unparseable,
            }),
        );
        if let Some(path) = rankings_out {
            let mut w = BufWriter::new(
                File::create(path).map_err(|e| io_err("creating rankings output", e))?,
            );
            for record in &ranked {
                writeln!(
                    w,
                    "{}",
                    serde_json::to_string(record).map_err(|e| io_err("serializing ranking", e))?
                )
                .map_err(|e| io_err("writing rankings", e))?;
            }
        }
        Some(ranked)
    } else {
        match rankings {
            Some(path) => Some(read_jsonl(path, "rankings")?),
            None => None,
        }
    };

    if let Some(ranked) = &ranking_records {
        match borda_scores(ranked) {
            Ok(scores) => {
                report.insert(
                    "borda".into(),
                    serde_json::to_value(&scores).map_err(|e| io_err("serializing borda", e))?,
                );
            }
            Err(e) => {
                report.insert("borda".into(), serde_json::json!({ "error": e.to_string() }));
            }
        }
        // Raw place tallies: pipeline -> [#1st, #2nd, #3rd].
        let mut tallies: BTreeMap<String, [u64; 3]> = BTreeMap::new();
        for record in ranked {
            for (name, &place) in &record.positions {
                if (1..=3).contains(&place) {
                    tallies.entry(name.clone()).or_insert([0; 3])[place as usize - 1] += 1;
                }
            }
        }
        report.insert(
            "rank_counts".into(),
            serde_json::to_value(&tallies).map_err(|e| io_err("serializing tallies", e))?,
        );
        let matrix: Vec<Vec<u32>> = ranked
            .iter()
            .map(|r| r.positions.values().map(|&p| p as u32).collect())
            .collect();
        match friedman_test(&matrix) {
            Ok(friedman) => {
                let names: Vec<&String> = ranked[0].positions.keys().collect();
                let mean_ranks: BTreeMap<String, f64> = names
                    .iter()
                    .zip(&friedman.mean_ranks)
                    .map(|(n, r)| ((*n).clone(), *r))
                    .collect();
                report.insert(
                    "friedman".into(),
                    serde_json::json!({
                        "chi_square": friedman.chi_square,
                        "p_value": friedman.p_value,
                        "mean_ranks": mean_ranks,
                    }),
                );
                match nemenyi(&mean_ranks, matrix.len(), 0.05) {
                    Ok(result) => {
                        report.insert(
                            "nemenyi".into(),
                            serde_json::to_value(&result)
                                .map_err(|e| io_err("serializing nemenyi", e))?,
                        );
                    }
                    Err(e) => {
                        report.insert(
                            "nemenyi".into(),
                            serde_json::json!({ "error": e.to_string() }),
                        );
                    }
                }
            }
            Err(e @ EvalError::MalformedMatrix(_)) => {
                report.insert(
                    "friedman".into(),
                    serde_json::json!({ "error": format!("refused: {e} (need N >= 2 ranked claims)") }),
                );
            }
            Err(e) => return Err(io_err("friedman", e)),
        }
    }

    if let Some(path) = ilora {
        let scores: Vec<IloraScore> = read_jsonl(path, "ilora scores")?;
        match ilora_aggregate(&scores) {
            Ok(means) => {
                if let Some(csv_path) = radar_csv {
                    std::fs::write(csv_path, means.to_csv())
                        .map_err(|e| io_err("writing radar csv", e))?;
                }
                report.insert(
                    "ilora".into(),
                    serde_json::to_value(&means).map_err(|e| io_err("serializing ilora", e))?,
                );
            }
            Err(e) => {
                report.insert("ilora".into(), serde_json::json!({ "error": e.to_string() }));
            }
        }
    }

    let value = serde_json::Value::Object(report);
    println!(
        "{}",
        serde_json::to_string(&value).map_err(|e| io_err("serializing report", e))?
    );
    if table {
        eprintln!("{}", table::render_eval(&value));
    }
    Ok(0)
}

/// Groups results by (claim id, prompt mode) and runs the listwise judge over
/// the three non-hybrid pipelines. Returns the rankings, how many judged
/// groups contained an empty (abstained) justification, and how many judge
/// responses were unparseable.
fn judge_results(
    records: &[BatchRecord],
    provider: &dyn Provider,
) -> Result<(Vec<RankingRecord>, usize, usize), CliError> {
    let mut groups: BTreeMap<(String, PromptMode), BTreeMap<String, String>> = BTreeMap::new();
    for record in records {
        if record.pipeline == Pipeline::Hybrid {
            continue;
        }
        groups
            .entry((record.id.clone(), record.prompt_mode))
            .or_default()
            .insert(record.pipeline.to_string(), record.justification.clone());
    }
    let mut ranked = Vec::new();
    let mut empty_flagged = 0usize;
    let mut unparseable = 0usize;
    for ((claim_id, mode), justifications) in &groups {
        if justifications.len() != 3 {
            continue;
        }
        if justifications.values().any(String::is_empty) {
            empty_flagged += 1;
        }
        let id = format!("{claim_id}/{mode}");
        match three_way_judge(&id, claim_id, justifications, provider) {
            Ok(record) => ranked.push(record),
            Err(EvalError::UnparseableRanking(_)) => unparseable += 1,
            Err(EvalError::Provider(e)) => return Err(io_err("judge provider", e)),
            Err(e) => return Err(io_err("judging", e)),
        }
    }
    Ok((ranked, empty_flagged, unparseable))
}
