//! Batch orchestration: ontology, index, extraction, retrieval, linking,
//! overlap resolution and scoring, with persisted outputs and a run manifest.
//!
//! Each stage runs over the whole corpus on a bounded worker pool. Results are
//! collected in document order, so parallelism never changes the output.

mod annotations;
mod config;
mod corpus;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedder, EmbeddingError};
use crate::evaluation::{
    document_metrics, load_gold, mention_metrics, render_table, validate_gold, EvalError,
    EvalReport, GoldValidation, MatchMode, Prediction,
};
use crate::extraction::{
    extract_rule_based, extract_segment_based, load_segments, EntitySpan, FunctionWords, Segment,
    SegmentError, Strategy,
};
use crate::linking::{
    link, Abstention, CacheStats, CachedChat, ChatBackend, ChatError, LinkOutcome, LinkedMention,
    Provenance,
};
use crate::ontology::{parse_obo, subtree_filter, Ontology, OntologyError};
use crate::postprocess::{resolve_overlaps, ResolutionPolicy};
use crate::retrieval::{
    build_index, build_key, ConceptIndex, RetrievalDecision, RetrievalError, Thresholds,
};

pub use annotations::{read_tsv, write_json, write_tsv, AnnotationRecord, TSV_HEADER};
pub use config::{
    apply_override, load_config, parse_config, read_config, ConfigErrors, ConfigIssue,
    EvaluationConfig, ExtractionConfig, OntologyConfig, RunConfig,
};
pub use corpus::{ingest_corpus, Corpus, Document};

pub const ANNOTATIONS_TSV: &str = "annotations.tsv";
pub const ANNOTATIONS_JSON: &str = "annotations.json";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_TXT: &str = "eval.txt";
pub const MANIFEST_JSON: &str = "manifest.json";

const DOCUMENT_UNIT: &str = "one corpus file or JSON-lines row per document";
const MAX_WARNING_MESSAGES: usize = 100;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("ontology: {0}")]
    Ontology(#[from] OntologyError),
    #[error("segments: {0}")]
    Segments(#[from] SegmentError),
    #[error("embedder: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("index: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("chat backend: {0}")]
    Chat(#[from] ChatError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Corpus(_) => "corpus",
            Self::Ontology(_) => "ontology",
            Self::Segments(_) => "segments",
            Self::Embedding(_) => "embedding",
            Self::Retrieval(_) => "index",
            Self::Chat(_) => "chat",
            Self::Eval(_) => "evaluation",
            Self::Pool(_) => "pool",
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::io(path, e))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PipelineError::io(path, e.into()))?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| PipelineError::io(path, e))
}

/// Parses the OBO file, merges xref synonyms and restricts to the root's
/// subtree when one is configured.
pub fn load_ontology(cfg: &OntologyConfig) -> Result<Ontology, PipelineError> {
    let mut ontology = parse_obo(open(&cfg.path)?)?;
    if let Some(p) = &cfg.xref_synonyms {
        ontology = ontology.with_xref_synonyms(open(p)?)?;
    }
    if let Some(root) = &cfg.root_id {
        ontology = subtree_filter(&ontology, root)?;
    }
    Ok(ontology)
}

pub fn open_embedder(config: &RunConfig) -> Result<Embedder, PipelineError> {
    Ok(Embedder::new(
        config.embedder.open()?,
        config.embedder.batch_size,
    ))
}

fn millis(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSource {
    Built,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexInfo {
    pub content_hash: String,
    pub build_key: String,
    pub aliases: usize,
    pub concepts: usize,
    pub dimension: usize,
    pub source: IndexSource,
    pub path: Option<PathBuf>,
}

impl IndexInfo {
    fn of(index: &ConceptIndex, source: IndexSource, path: Option<PathBuf>) -> Self {
        Self {
            content_hash: index.content_hash().to_string(),
            build_key: index.build_key().to_string(),
            aliases: index.len(),
            concepts: index.concept_count(),
            dimension: index.dimension(),
            source,
            path,
        }
    }
}

/// Loads `cache_dir/index-<build key>.bin` when it matches, otherwise builds
/// the index and stores it there.
pub fn obtain_index(
    ontology: &Ontology,
    embedder: &Embedder,
    cache_dir: Option<&Path>,
) -> Result<(ConceptIndex, IndexInfo), PipelineError> {
    let key = build_key(ontology, &embedder.identity());
    let path = cache_dir.map(|d| d.join(format!("index-{key}.bin")));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        match ConceptIndex::load(p) {
            Ok(idx) if idx.build_key() == key && idx.dimension() == embedder.dimension() => {
                let info = IndexInfo::of(&idx, IndexSource::Cached, path.clone());
                return Ok((idx, info));
            }
            Ok(_) => log::warn!("cached index {} does not match, rebuilding", p.display()),
            Err(e) => log::warn!("cached index {} unusable ({e}), rebuilding", p.display()),
        }
    }
    let idx = build_index(ontology, embedder)?;
    if let Some(p) = &path {
        idx.save(p)?;
    }
    let info = IndexInfo::of(&idx, IndexSource::Built, path);
    Ok((idx, info))
}

/// Backends supplied by the caller instead of being opened from the config.
#[derive(Default)]
pub struct Backends {
    pub embedder: Option<Embedder>,
    pub chat: Option<Box<dyn ChatBackend>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub documents: usize,
    pub spans: usize,
    pub direct: usize,
    pub ambiguous: usize,
    pub no_match: usize,
    pub retrieval_failures: usize,
    pub llm_linked: usize,
    pub abstained: BTreeMap<String, usize>,
    pub link_failures: usize,
    pub mentions_before_resolution: usize,
    pub mentions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub match_mode: MatchMode,
    pub zero_division: String,
    pub mention: EvalReport,
    pub document: EvalReport,
    pub validation: GoldValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub config_hash: String,
    pub ontology_label: String,
    pub ontology_hash: String,
    pub ontology_concepts: usize,
    pub index: Option<IndexInfo>,
    pub embedder: String,
    pub chat_model: String,
    pub thresholds: Thresholds,
    pub strategy: Strategy,
    pub resolution_policy: ResolutionPolicy,
    pub document_unit: String,
    pub counts: RunCounts,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: usize,
    pub warning_messages: Vec<String>,
    pub chat_cache: CacheStats,
    pub outputs: BTreeMap<String, PathBuf>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub mentions: Vec<LinkedMention>,
    pub evaluation: Option<EvalSummary>,
    pub manifest: Manifest,
}

fn abstention_reason(a: &Abstention) -> &'static str {
    match a {
        Abstention::NoMatch => "no_match",
        Abstention::AnsweredNone => "answered_none",
        Abstention::NotHigh { .. } => "not_high",
        Abstention::OutsideCandidates { .. } => "outside_candidates",
        Abstention::Malformed { .. } => "malformed",
    }
}

struct Warnings(Vec<String>);

impl Warnings {
    fn push(&mut self, message: String) {
        log::warn!("{message}");
        self.0.push(message);
    }
}

/// Embeds the spans of one document in batches. A failed batch falls back to
/// one call per span so a single bad entity only loses itself.
fn retrieve_document(
    spans: &[EntitySpan],
    index: &ConceptIndex,
    embedder: &Embedder,
    thresholds: &Thresholds,
) -> Vec<Result<RetrievalDecision, String>> {
    let texts: Vec<String> = spans.iter().map(|s| s.text.clone()).collect();
    let vectors: Vec<Result<_, EmbeddingError>> = match embedder.embed_batch(&texts) {
        Ok(vs) => vs.into_iter().map(Ok).collect(),
        Err(_) => texts.iter().map(|t| embedder.embed(t)).collect(),
    };
    spans
        .iter()
        .zip(vectors)
        .map(|(span, v)| {
            v.map_err(RetrievalError::from)
                .and_then(|v| index.query_vector(&v, thresholds))
                .map_err(|e| {
                    format!(
                        "{}:{}-{} `{}`: retrieval failed: {e}",
                        span.doc_id, span.start, span.end, span.text
                    )
                })
        })
        .collect()
}

fn evaluate_predictions(
    preds: &[Prediction],
    corpus: &Corpus,
    gold_path: &Path,
    ontology: Option<&Ontology>,
    cfg: &EvaluationConfig,
) -> Result<EvalSummary, PipelineError> {
    let gold = load_gold(open(gold_path)?)?;
    let validation = validate_gold(&gold, &corpus.char_lengths(), ontology);
    if !validation.is_clean() {
        log::warn!("gold file has rows outside the corpus or ontology; see the validation section");
    }
    let docs = corpus.doc_ids();
    let mention = mention_metrics(preds, &gold, &docs, cfg.match_mode)?;
    let document = document_metrics(preds, &gold, &docs)?;
    let strip = |r: EvalReport| {
        if cfg.per_document {
            r
        } else {
            r.without_breakdown()
        }
    };
    Ok(EvalSummary {
        match_mode: cfg.match_mode,
        zero_division: "a metric whose denominator is 0 is reported as 0".into(),
        mention: strip(mention),
        document: strip(document),
        validation,
    })
}

fn write_eval(dir: &Path, summary: &EvalSummary, per_document: bool) -> Result<(), PipelineError> {
    write_json_file(&dir.join(EVAL_JSON), summary)?;
    let mut text = render_table(
        &[summary.mention.clone(), summary.document.clone()],
        per_document,
    );
    let v = &summary.validation;
    if !v.is_clean() {
        text.push_str("\ngold validation\n");
        for d in &v.unknown_documents {
            text.push_str(&format!("  unknown document: {d}\n"));
        }
        for g in &v.out_of_range {
            text.push_str(&format!(
                "  out of range: {}\t{}\t{}\t{}\n",
                g.doc_id, g.start, g.end, g.concept_id
            ));
        }
        for c in &v.unknown_concepts {
            text.push_str(&format!("  concept outside ontology: {c}\n"));
        }
    }
    let path = dir.join(EVAL_TXT);
    fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))
}

pub fn run(config: &RunConfig) -> Result<RunSummary, PipelineError> {
    run_with(config, Backends::default())
}

pub fn run_with(config: &RunConfig, backends: Backends) -> Result<RunSummary, PipelineError> {
    config.retrieval.validate()?;
    let started = Instant::now();
    let mut timings = BTreeMap::new();
    let mut warnings = Warnings(Vec::new());

    let t = Instant::now();
    let ontology = load_ontology(&config.ontology)?;
    timings.insert("ontology".to_string(), millis(t));

    let t = Instant::now();
    let corpus = ingest_corpus(&config.corpus)?;
    timings.insert("corpus".to_string(), millis(t));

    let lexicon = match &config.extraction.lexicon {
        Some(p) => FunctionWords::from_reader(open(p)?).map_err(|e| PipelineError::io(p, e))?,
        None => FunctionWords::default(),
    };
    let segments: BTreeMap<String, Vec<Segment>> = match &config.extraction.segments {
        Some(p) => load_segments(open(p)?)?,
        None => BTreeMap::new(),
    };

    let embedder = match backends.embedder {
        Some(e) => e,
        None => open_embedder(config)?,
    };
    let chat_backend = match backends.chat {
        Some(c) => c,
        None => config.chat.open()?,
    };
    let chat = CachedChat::new(
        chat_backend,
        config.cache_dir.as_ref().map(|d| d.join("replies")),
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;

    let mut counts = RunCounts {
        documents: corpus.len(),
        ..RunCounts::default()
    };
    let mut index_info = None;
    let mut mentions: Vec<LinkedMention> = Vec::new();
    let policy = ResolutionPolicy::for_strategy(config.extraction.strategy);

    if !corpus.is_empty() {
        let t = Instant::now();
        let (index, info) = obtain_index(&ontology, &embedder, config.cache_dir.as_deref())?;
        timings.insert("index".to_string(), millis(t));
        index_info = Some(info);

        let t = Instant::now();
        let spans: Vec<Vec<EntitySpan>> = pool.install(|| {
            corpus
                .documents()
                .par_iter()
                .map(|d| match config.extraction.strategy {
                    Strategy::RuleBased => Ok(extract_rule_based(&d.doc_id, &d.text, &lexicon)),
                    Strategy::SegmentBased => {
                        let external = segments.get(&d.doc_id).map(Vec::as_slice).unwrap_or(&[]);
                        extract_segment_based(&d.doc_id, &d.text, external, &lexicon)
                    }
                })
                .collect::<Result<_, SegmentError>>()
        })?;
        timings.insert("extraction".to_string(), millis(t));
        counts.spans = spans.iter().map(Vec::len).sum();

        let t = Instant::now();
        let decisions: Vec<Vec<Result<RetrievalDecision, String>>> = pool.install(|| {
            spans
                .par_iter()
                .map(|s| retrieve_document(s, &index, &embedder, &config.retrieval))
                .collect()
        });
        timings.insert("retrieval".to_string(), millis(t));

        let mut work: Vec<(&EntitySpan, RetrievalDecision)> = Vec::new();
        for (span, d) in spans.iter().flatten().zip(decisions.into_iter().flatten()) {
            match d {
                Ok(d) => {
                    match d {
                        RetrievalDecision::Direct { .. } => counts.direct += 1,
                        RetrievalDecision::Ambiguous { .. } => counts.ambiguous += 1,
                        RetrievalDecision::NoMatch { .. } => counts.no_match += 1,
                    }
                    work.push((span, d));
                }
                Err(message) => {
                    counts.retrieval_failures += 1;
                    warnings.push(message);
                }
            }
        }

        let t = Instant::now();
        let outcomes: Vec<Result<LinkOutcome, String>> = pool.install(|| {
            work.par_iter()
                .map(|(span, d)| {
                    link(span, d, &chat, &ontology).map_err(|e| {
                        format!(
                            "{}:{}-{} `{}`: linking failed: {e}",
                            span.doc_id, span.start, span.end, span.text
                        )
                    })
                })
                .collect()
        });
        timings.insert("linking".to_string(), millis(t));

        let mut linked: BTreeMap<String, Vec<LinkedMention>> = BTreeMap::new();
        for outcome in outcomes {
            match outcome {
                Ok(LinkOutcome::Linked(m)) => {
                    if m.provenance == Provenance::LlmLinked {
                        counts.llm_linked += 1;
                    }
                    counts.mentions_before_resolution += 1;
                    linked.entry(m.span.doc_id.clone()).or_default().push(m);
                }
                Ok(LinkOutcome::Abstained(Abstention::NoMatch)) => {}
                Ok(LinkOutcome::Abstained(a)) => {
                    *counts
                        .abstained
                        .entry(abstention_reason(&a).to_string())
                        .or_default() += 1;
                }
                Err(message) => {
                    counts.link_failures += 1;
                    warnings.push(message);
                }
            }
        }

        let t = Instant::now();
        for (_, doc_mentions) in linked {
            mentions.extend(resolve_overlaps(doc_mentions, policy));
        }
        timings.insert("resolution".to_string(), millis(t));
    }
    mentions.sort_by(|a, b| {
        (&a.span.doc_id, a.span.start, a.span.end, &a.concept_id).cmp(&(
            &b.span.doc_id,
            b.span.start,
            b.span.end,
            &b.concept_id,
        ))
    });
    counts.mentions = mentions.len();

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let mut outputs = BTreeMap::new();
    let tsv = out.join(ANNOTATIONS_TSV);
    write_tsv(create(&tsv)?, &mentions).map_err(|e| PipelineError::io(&tsv, e))?;
    outputs.insert("annotations_tsv".to_string(), tsv);
    let json = out.join(ANNOTATIONS_JSON);
    write_json(create(&json)?, &mentions).map_err(|e| PipelineError::io(&json, e))?;
    outputs.insert("annotations_json".to_string(), json);

    let evaluation = match &config.gold {
        Some(gold) => {
            let t = Instant::now();
            let preds: Vec<Prediction> = mentions.iter().map(Into::into).collect();
            let summary = pool.install(|| {
                evaluate_predictions(&preds, &corpus, gold, Some(&ontology), &config.evaluation)
            })?;
            write_eval(out, &summary, config.evaluation.per_document)?;
            outputs.insert("eval_json".to_string(), out.join(EVAL_JSON));
            outputs.insert("eval_txt".to_string(), out.join(EVAL_TXT));
            timings.insert("evaluation".to_string(), millis(t));
            Some(summary)
        }
        None => None,
    };
    timings.insert("total".to_string(), millis(started));

    let manifest_path = out.join(MANIFEST_JSON);
    outputs.insert("manifest".to_string(), manifest_path.clone());
    let manifest = Manifest {
        tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        config_hash: config.hash(),
        ontology_label: ontology.source_label().to_string(),
        ontology_hash: ontology.content_hash(),
        ontology_concepts: ontology.active_len(),
        index: index_info,
        embedder: embedder.identity(),
        chat_model: chat.model().to_string(),
        thresholds: config.retrieval,
        strategy: config.extraction.strategy,
        resolution_policy: policy,
        document_unit: DOCUMENT_UNIT.into(),
        counts,
        timings_ms: timings,
        warnings: warnings.0.len(),
        warning_messages: warnings
            .0
            .iter()
            .take(MAX_WARNING_MESSAGES)
            .cloned()
            .collect(),
        chat_cache: chat.stats(),
        outputs,
    };
    write_json_file(&manifest_path, &manifest)?;
    Ok(RunSummary {
        mentions,
        evaluation,
        manifest,
    })
}

/// Inputs for rescoring an annotations file. No backend is involved.
pub struct EvaluateRequest<'a> {
    pub annotations: &'a Path,
    pub gold: &'a Path,
    pub corpus: &'a Path,
    pub ontology: Option<&'a OntologyConfig>,
    pub settings: &'a EvaluationConfig,
    pub output_dir: Option<&'a Path>,
}

pub fn evaluate(req: &EvaluateRequest) -> Result<EvalSummary, PipelineError> {
    let corpus = ingest_corpus(req.corpus)?;
    let preds = read_tsv(open(req.annotations)?)?;
    let ontology = req.ontology.map(load_ontology).transpose()?;
    let summary = evaluate_predictions(&preds, &corpus, req.gold, ontology.as_ref(), req.settings)?;
    if let Some(dir) = req.output_dir {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        write_eval(dir, &summary, req.settings.per_document)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub index_path: PathBuf,
    pub content_hash: String,
    pub build_key: String,
    pub aliases: usize,
    pub concepts: usize,
    pub dimension: usize,
    pub embedder: String,
    pub ontology_label: String,
    pub ontology_hash: String,
    pub duration_ms: f64,
    pub previous_content_hash: Option<String>,
    pub unchanged: bool,
}

/// Path of the manifest written beside an index file.
pub fn build_manifest_path(index_path: &Path) -> PathBuf {
    index_path.with_extension("manifest.json")
}

/// Builds and times the index alone, writes it to `output` and a manifest
/// beside it, and reports whether an index already at `output` had the same
/// content hash.
pub fn build_index_file(
    config: &RunConfig,
    output: &Path,
    embedder: Option<Embedder>,
) -> Result<BuildReport, PipelineError> {
    let ontology = load_ontology(&config.ontology)?;
    let embedder = match embedder {
        Some(e) => e,
        None => open_embedder(config)?,
    };
    let previous = output
        .exists()
        .then(|| ConceptIndex::load(output).ok())
        .flatten()
        .map(|i| i.content_hash().to_string());
    let t = Instant::now();
    let index = build_index(&ontology, &embedder)?;
    let duration_ms = millis(t);
    index.save(output)?;
    let report = BuildReport {
        index_path: output.to_path_buf(),
        content_hash: index.content_hash().to_string(),
        build_key: index.build_key().to_string(),
        aliases: index.len(),
        concepts: index.concept_count(),
        dimension: index.dimension(),
        embedder: embedder.identity(),
        ontology_label: ontology.source_label().to_string(),
        ontology_hash: ontology.content_hash(),
        duration_ms,
        unchanged: previous.as_deref() == Some(index.content_hash()),
        previous_content_hash: previous,
    };
    write_json_file(&build_manifest_path(output), &report)?;
    Ok(report)
}
