mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{e2e_config, e2e_workspace, fixtures};
use conrec::embedding::{mock_raw, write_vector_file, Embedder, FileBackend};
use conrec::extraction::{extract_rule_based, extract_segment_based, FunctionWords};
use conrec::linking::{ChatBackend, ChatError, PromptPair, ScriptedChat};
use conrec::ontology::alias_list;
use conrec::pipeline::{
    evaluate, ingest_corpus, load_ontology, run, run_with, Backends, EvaluateRequest, IndexSource,
    ANNOTATIONS_JSON, ANNOTATIONS_TSV, EVAL_JSON, MANIFEST_JSON,
};
use serde_json::Value;

fn read(path: &std::path::Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn quoted(p: &std::path::Path) -> String {
    serde_json::to_string(p).unwrap()
}

#[test]
fn rule_based_matches_expected_annotations() {
    let dir = e2e_workspace();
    let config = e2e_config(dir.path(), &[]);
    run(&config).unwrap();
    assert_eq!(
        read(&config.output_dir.join(ANNOTATIONS_TSV)),
        read(&fixtures().join("e2e/expected.rule_based.tsv"))
    );
}

#[test]
fn segment_based_matches_expected_annotations() {
    let dir = e2e_workspace();
    let config = e2e_config(dir.path(), &[("extraction.strategy", "\"segment_based\"")]);
    let summary = run(&config).unwrap();
    assert_eq!(
        read(&config.output_dir.join(ANNOTATIONS_TSV)),
        read(&fixtures().join("e2e/expected.segment_based.tsv"))
    );
    assert_eq!(summary.manifest.counts.llm_linked, 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let mut outputs = Vec::new();
    for _ in 0..3 {
        let dir = e2e_workspace();
        let config = e2e_config(dir.path(), &[("workers", "3")]);
        run(&config).unwrap();
        outputs.push((
            read(&config.output_dir.join(ANNOTATIONS_TSV)),
            read(&config.output_dir.join(ANNOTATIONS_JSON)),
            read(&config.output_dir.join(EVAL_JSON)),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = e2e_workspace();
    let one = e2e_config(dir.path(), &[("workers", "1"), ("output_dir", "\"out1\"")]);
    let many = e2e_config(dir.path(), &[("workers", "8"), ("output_dir", "\"out8\"")]);
    run(&one).unwrap();
    run(&many).unwrap();
    assert_eq!(
        read(&one.output_dir.join(ANNOTATIONS_TSV)),
        read(&many.output_dir.join(ANNOTATIONS_TSV))
    );
}

#[test]
fn evaluation_on_fixture() {
    let dir = e2e_workspace();
    let summary = run(&e2e_config(dir.path(), &[])).unwrap();
    let eval = summary.evaluation.unwrap();
    // Three of four gold rows found; the fourth prediction sits on a concept
    // the gold file names outside the ontology.
    assert_eq!(
        (
            eval.mention.counts.tp,
            eval.mention.counts.fp,
            eval.mention.counts.fn_
        ),
        (3, 1, 1)
    );
    assert!((eval.mention.f1 - 0.75).abs() < 1e-12);
    assert_eq!(
        eval.validation.unknown_concepts,
        BTreeSet::from(["HP:0000408".to_string()])
    );
}

#[test]
fn manifest_records_the_run() {
    let dir = e2e_workspace();
    let config = e2e_config(dir.path(), &[]);
    let summary = run(&config).unwrap();
    let m: Value = serde_json::from_str(&read(&config.output_dir.join(MANIFEST_JSON))).unwrap();
    for key in [
        "tool",
        "config_hash",
        "ontology_label",
        "ontology_hash",
        "ontology_concepts",
        "index",
        "embedder",
        "chat_model",
        "thresholds",
        "strategy",
        "resolution_policy",
        "document_unit",
        "counts",
        "timings_ms",
        "warnings",
        "chat_cache",
        "outputs",
    ] {
        assert!(m.get(key).is_some(), "manifest lacks `{key}`");
    }
    assert_eq!(m["thresholds"]["tau1"], 0.95);
    assert_eq!(m["thresholds"]["tau2"], 0.85);
    assert_eq!(m["thresholds"]["k"], 5);
    assert_eq!(m["ontology_concepts"], 5);
    assert_eq!(m["embedder"], "mock(dim=4096,seed=7)");
    assert_eq!(m["resolution_policy"], "highest_score");
    for stage in ["extraction", "retrieval", "linking", "resolution", "total"] {
        assert!(m["timings_ms"][stage].is_number(), "no timing for {stage}");
    }
    let c = &summary.manifest.counts;
    assert_eq!(c.documents, 2);
    assert_eq!(
        c.spans,
        c.direct + c.ambiguous + c.no_match + c.retrieval_failures
    );
    assert_eq!(c.mentions, 4);
    assert_eq!(summary.manifest.warnings, 0);
    assert_eq!(summary.manifest.config_hash, config.hash());
}

#[test]
fn index_and_replies_are_cached() {
    let dir = e2e_workspace();
    let config = e2e_config(dir.path(), &[]);
    let first = run(&config).unwrap();
    assert_eq!(
        first.manifest.index.as_ref().unwrap().source,
        IndexSource::Built
    );
    assert!(first.manifest.chat_cache.misses > 0);

    let second = run(&config).unwrap();
    assert_eq!(
        second.manifest.index.as_ref().unwrap().source,
        IndexSource::Cached
    );
    assert_eq!(second.manifest.chat_cache.misses, 0);
    assert_eq!(
        second.manifest.chat_cache.hits,
        first.manifest.chat_cache.misses
    );
    assert_eq!(second.mentions, first.mentions);
}

struct Counting {
    inner: ScriptedChat,
    calls: Arc<AtomicUsize>,
}

impl ChatBackend for Counting {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }
}

fn counting_chat(dir: &std::path::Path) -> (Box<dyn ChatBackend>, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let inner = ScriptedChat::open(&dir.join("chat_script.json")).unwrap();
    (
        Box::new(Counting {
            inner,
            calls: calls.clone(),
        }),
        calls,
    )
}

#[test]
fn warm_cache_makes_no_chat_calls() {
    let dir = e2e_workspace();
    let config = e2e_config(dir.path(), &[]);
    let (chat, calls) = counting_chat(dir.path());
    run_with(
        &config,
        Backends {
            embedder: None,
            chat: Some(chat),
        },
    )
    .unwrap();
    assert!(calls.load(Ordering::SeqCst) > 0);

    let (chat, calls) = counting_chat(dir.path());
    run_with(
        &config,
        Backends {
            embedder: None,
            chat: Some(chat),
        },
    )
    .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn empty_corpus_skips_everything() {
    let dir = e2e_workspace();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let config = e2e_config(dir.path(), &[("corpus", "\"empty\""), ("gold", "null")]);
    let (chat, calls) = counting_chat(dir.path());
    let summary = run_with(
        &config,
        Backends {
            embedder: None,
            chat: Some(chat),
        },
    )
    .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    assert!(summary.manifest.index.is_none());
    assert!(summary.mentions.is_empty());
    assert!(
        !dir.path().join("cache").exists()
            || fs::read_dir(dir.path().join("cache"))
                .unwrap()
                .next()
                .is_none()
    );
    assert_eq!(
        read(&config.output_dir.join(ANNOTATIONS_TSV))
            .lines()
            .count(),
        1
    );
}

#[test]
fn jsonl_corpus_equals_directory_corpus() {
    let dir = e2e_workspace();
    let corpus = ingest_corpus(&dir.path().join("corpus")).unwrap();
    let lines: Vec<String> = corpus
        .documents()
        .iter()
        .rev()
        .map(|d| serde_json::json!({"doc_id": d.doc_id, "text": d.text}).to_string())
        .collect();
    fs::write(dir.path().join("corpus.jsonl"), lines.join("\n")).unwrap();

    let from_dir = e2e_config(dir.path(), &[("output_dir", "\"a\"")]);
    let from_jsonl = e2e_config(
        dir.path(),
        &[("output_dir", "\"b\""), ("corpus", "\"corpus.jsonl\"")],
    );
    run(&from_dir).unwrap();
    run(&from_jsonl).unwrap();
    assert_eq!(
        read(&from_dir.output_dir.join(ANNOTATIONS_TSV)),
        read(&from_jsonl.output_dir.join(ANNOTATIONS_TSV))
    );
}

struct FailingFor {
    label: &'static str,
    inner: ScriptedChat,
}

impl ChatBackend for FailingFor {
    fn model(&self) -> &str {
        "failing"
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, ChatError> {
        if prompt.label() == Some(self.label) {
            return Err(ChatError::Transport {
                status: Some(500),
                message: "boom".into(),
            });
        }
        self.inner.complete(prompt)
    }
}

#[test]
fn chat_failure_becomes_a_warning() {
    let dir = e2e_workspace();
    let config = e2e_config(
        dir.path(),
        &[
            ("extraction.strategy", "\"segment_based\""),
            ("cache_dir", "null"),
        ],
    );
    let chat = FailingFor {
        label: "secundum atrial septal defect",
        inner: ScriptedChat::open(&dir.path().join("chat_script.json")).unwrap(),
    };
    let summary = run_with(
        &config,
        Backends {
            embedder: None,
            chat: Some(Box::new(chat)),
        },
    )
    .unwrap();
    assert_eq!(summary.manifest.counts.link_failures, 1);
    assert_eq!(summary.manifest.warnings, 1);
    assert!(summary.manifest.warning_messages[0].contains("secundum atrial septal defect"));
    // Without the longer linked span, the direct match inside it is kept.
    let tsv = read(&config.output_dir.join(ANNOTATIONS_TSV));
    assert_eq!(tsv, read(&fixtures().join("e2e/expected.rule_based.tsv")));
}

#[test]
fn evaluate_reproduces_run_scores() {
    let dir = e2e_workspace();
    let config = e2e_config(dir.path(), &[]);
    let summary = run(&config).unwrap();
    let rescored_dir = dir.path().join("rescored");
    let rescored = evaluate(&EvaluateRequest {
        annotations: &config.output_dir.join(ANNOTATIONS_TSV),
        gold: config.gold.as_ref().unwrap(),
        corpus: &config.corpus,
        ontology: Some(&config.ontology),
        settings: &config.evaluation,
        output_dir: Some(&rescored_dir),
    })
    .unwrap();
    assert_eq!(Some(&rescored), summary.evaluation.as_ref());
    assert_eq!(
        read(&rescored_dir.join(EVAL_JSON)),
        read(&config.output_dir.join(EVAL_JSON))
    );
}

/// Every text the fixture run embeds: aliases and spans of both strategies.
fn embedded_texts(dir: &std::path::Path) -> BTreeSet<String> {
    let config = e2e_config(dir, &[]);
    let ontology = load_ontology(&config.ontology).unwrap();
    let mut texts: BTreeSet<String> = alias_list(&ontology).into_iter().map(|a| a.text).collect();
    let lexicon = FunctionWords::default();
    for d in ingest_corpus(&config.corpus).unwrap().documents() {
        texts.extend(
            extract_rule_based(&d.doc_id, &d.text, &lexicon)
                .into_iter()
                .map(|s| s.text),
        );
        texts.extend(
            extract_segment_based(&d.doc_id, &d.text, &[], &lexicon)
                .unwrap()
                .into_iter()
                .map(|s| s.text),
        );
    }
    texts
}

#[test]
fn fixture_tokens_do_not_collide_in_the_mock_embedder() {
    let dir = e2e_workspace();
    let tokens: BTreeSet<String> = embedded_texts(dir.path())
        .iter()
        .flat_map(|t| t.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .collect();
    let mut owner: BTreeMap<usize, &str> = BTreeMap::new();
    for t in &tokens {
        let v = mock_raw(t, 4096, 7);
        let bucket = v.iter().position(|x| *x != 0.0).unwrap();
        if let Some(other) = owner.insert(bucket, t) {
            panic!("`{t}` and `{other}` share bucket {bucket}");
        }
    }
}

#[test]
fn file_backend_reproduces_mock_backend_output() {
    let dir = e2e_workspace();
    let texts = embedded_texts(dir.path());
    let vectors: Vec<(String, Vec<f64>)> = texts
        .iter()
        .map(|t| (t.clone(), mock_raw(t, 4096, 7)))
        .collect();
    let mut file = Vec::new();
    write_vector_file(
        &mut file,
        4096,
        vectors.iter().map(|(t, v)| (t.as_str(), v.as_slice())),
    )
    .unwrap();
    let vector_path = dir.path().join("vectors.tsv");
    fs::write(&vector_path, &file).unwrap();

    for strategy in ["\"rule_based\"", "\"segment_based\""] {
        let mock = e2e_config(
            dir.path(),
            &[
                ("extraction.strategy", strategy),
                ("output_dir", "\"mock\""),
            ],
        );
        let file_cfg = e2e_config(
            dir.path(),
            &[
                ("extraction.strategy", strategy),
                ("output_dir", "\"file\""),
                (
                    "embedder",
                    &format!(
                        r#"{{"kind":"file","dimension":4096,"path":{}}}"#,
                        quoted(&vector_path)
                    ),
                ),
            ],
        );
        run(&mock).unwrap();
        let backend = FileBackend::open(&vector_path).unwrap();
        let summary = run_with(
            &file_cfg,
            Backends {
                embedder: Some(Embedder::new(Box::new(backend), 32)),
                chat: None,
            },
        )
        .unwrap();
        assert_eq!(summary.manifest.warnings, 0);
        assert_eq!(
            read(&mock.output_dir.join(ANNOTATIONS_TSV)),
            read(&file_cfg.output_dir.join(ANNOTATIONS_TSV)),
            "{strategy}"
        );
    }
}
