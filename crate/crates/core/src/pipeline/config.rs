//! Run configuration: a JSON file validated field by field so that every
//! problem is reported at once.
//!
//! Relative paths resolve against the directory holding the config file.
//! Secrets never live here; the chat section names the environment variable
//! that holds the token.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embedding::{EmbedderKind, EmbedderSpec};
use crate::evaluation::MatchMode;
use crate::extraction::Strategy;
use crate::linking::{ChatKind, ChatSpec};
use crate::retrieval::Thresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyConfig {
    pub path: PathBuf,
    pub root_id: Option<String>,
    pub xref_synonyms: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub strategy: Strategy,
    /// Function-word list replacing the shipped one.
    pub lexicon: Option<PathBuf>,
    /// External segment TSV, only with `segment_based`.
    pub segments: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub match_mode: MatchMode,
    pub per_document: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub ontology: OntologyConfig,
    pub extraction: ExtractionConfig,
    pub embedder: EmbedderSpec,
    pub retrieval: Thresholds,
    pub chat: ChatSpec,
    pub cache_dir: Option<PathBuf>,
    pub corpus: PathBuf,
    pub gold: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration ({} problem", self.0.len())?;
        if self.0.len() != 1 {
            f.write_str("s")?;
        }
        f.write_str(")")?;
        for i in &self.0 {
            write!(f, "\n  {}: {}", i.field, i.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ConfigErrors {
    pub fn fields(&self) -> Vec<&str> {
        self.0.iter().map(|i| i.field.as_str()).collect()
    }
}

/// Reads one JSON object, recording the keys it hands out so the rest can be
/// reported as unknown.
struct Section<'a> {
    obj: Map<String, Value>,
    prefix: String,
    issues: &'a mut Vec<ConfigIssue>,
}

impl<'a> Section<'a> {
    fn new(value: Value, prefix: &str, issues: &'a mut Vec<ConfigIssue>) -> Option<Self> {
        match value {
            Value::Object(obj) => Some(Self {
                obj,
                prefix: prefix.into(),
                issues,
            }),
            other => {
                issues.push(ConfigIssue {
                    field: prefix.trim_end_matches('.').to_string(),
                    message: format!("expected an object, found {}", kind(&other)),
                });
                None
            }
        }
    }

    fn name(&self, key: &str) -> String {
        format!("{}{key}", self.prefix)
    }

    fn issue(&mut self, key: &str, message: impl Into<String>) {
        let field = self.name(key);
        self.issues.push(ConfigIssue {
            field,
            message: message.into(),
        });
    }

    fn optional<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        match self.obj.remove(key)? {
            Value::Null => None,
            v => match serde_json::from_value(v) {
                Ok(t) => Some(t),
                Err(e) => {
                    self.issue(key, e.to_string());
                    None
                }
            },
        }
    }

    fn required<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        let present = matches!(self.obj.get(key), Some(v) if !v.is_null());
        if !present {
            self.issue(key, "missing required field");
        }
        self.optional(key)
    }

    fn or<T: DeserializeOwned>(&mut self, key: &str, default: T) -> T {
        self.optional(key).unwrap_or(default)
    }

    fn section(&mut self, key: &str) -> Option<Section<'_>> {
        let value = self.obj.remove(key).unwrap_or(Value::Object(Map::new()));
        let prefix = self.name(key) + ".";
        Section::new(value, &prefix, self.issues)
    }

    fn finish(self) {
        for key in self.obj.keys() {
            self.issues.push(ConfigIssue {
                field: format!("{}{key}", self.prefix),
                message: "unknown field".into(),
            });
        }
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Sets `dotted.key` to `value` in a config object, creating sections as
/// needed. Values parse as JSON when they can and fall back to strings.
pub fn apply_override(root: &mut Value, key: &str, value: &str) -> Result<(), String> {
    let parsed =
        serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.into()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("bad key `{key}`"))?;
    let mut cur = root;
    for p in parts {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("`{key}`: parent is not an object"))?;
        cur = obj
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .ok_or_else(|| format!("`{key}`: parent is not an object"))?
        .insert(last.to_string(), parsed);
    Ok(())
}

/// Validates a config value. `base` anchors relative paths. Filesystem and
/// environment checks are left to [`RunConfig::check_resources`].
pub fn parse_config(value: Value, base: &Path) -> Result<RunConfig, ConfigErrors> {
    let mut issues = Vec::new();
    let config = parse_into(value, base, &mut issues);
    match config {
        Some(c) if issues.is_empty() => Ok(c),
        _ => Err(ConfigErrors(issues)),
    }
}

fn parse_into(value: Value, base: &Path, issues: &mut Vec<ConfigIssue>) -> Option<RunConfig> {
    let mut root = Section::new(value, "", issues)?;
    let path = |p: Option<PathBuf>| p.map(|p| resolve(base, p));

    let ontology = root.section("ontology").map(|mut s| {
        let o = (
            path(s.required("path")),
            s.optional::<String>("root_id"),
            path(s.optional("xref_synonyms")),
        );
        s.finish();
        o
    });

    let extraction = root.section("extraction").map(|mut s| {
        let strategy = s.or("strategy", Strategy::RuleBased);
        let lexicon = path(s.optional("lexicon"));
        let segments = path(s.optional("segments"));
        if segments.is_some() && strategy != Strategy::SegmentBased {
            s.issue("segments", "only allowed with strategy `segment_based`");
        }
        s.finish();
        ExtractionConfig {
            strategy,
            lexicon,
            segments,
        }
    });

    let embedder = root.section("embedder").map(|mut s| {
        let d = EmbedderSpec::default();
        let spec = EmbedderSpec {
            kind: s.or("kind", d.kind),
            dimension: s.or("dimension", d.dimension),
            url: s.optional("url"),
            path: path(s.optional("path")),
            seed: s.or("seed", d.seed),
            batch_size: s.or("batch_size", d.batch_size),
            max_in_flight: s.or("max_in_flight", d.max_in_flight),
            timeout_secs: s.or("timeout_secs", d.timeout_secs),
        };
        if spec.dimension == 0 {
            s.issue("dimension", "must be at least 1");
        }
        if spec.batch_size == 0 {
            s.issue("batch_size", "must be at least 1");
        }
        match spec.kind {
            EmbedderKind::Http if spec.url.is_none() => s.issue("url", "required for kind `http`"),
            EmbedderKind::File if spec.path.is_none() => {
                s.issue("path", "required for kind `file`")
            }
            _ => {}
        }
        s.finish();
        spec
    });

    let retrieval = root.section("retrieval").map(|mut s| {
        let d = Thresholds::default();
        let t = Thresholds {
            tau1: s.or("tau1", d.tau1),
            tau2: s.or("tau2", d.tau2),
            k: s.or("k", d.k),
        };
        if let Err(e) = t.validate() {
            s.issue("tau1/tau2/k", e.to_string());
        }
        s.finish();
        t
    });

    let chat = root.section("chat").map(|mut s| {
        let d = ChatSpec::default();
        let spec = ChatSpec {
            kind: s.or("kind", d.kind),
            endpoint: s.optional("endpoint").or(d.endpoint),
            model: s.or("model", d.model),
            auth_env: match s.obj.get("auth_env") {
                Some(Value::Null) => {
                    s.obj.remove("auth_env");
                    None
                }
                _ => s.optional("auth_env").or(d.auth_env),
            },
            max_in_flight: s.or("max_in_flight", d.max_in_flight),
            requests_per_second: s.or("requests_per_second", d.requests_per_second),
            timeout_secs: s.or("timeout_secs", d.timeout_secs),
            script: path(s.optional("script")),
        };
        if spec.kind == ChatKind::Scripted && spec.script.is_none() {
            s.issue("script", "required for kind `scripted`");
        }
        if spec.max_in_flight == 0 {
            s.issue("max_in_flight", "must be at least 1");
        }
        if spec.requests_per_second.is_nan() || spec.requests_per_second < 0.0 {
            s.issue(
                "requests_per_second",
                "must be zero (unlimited) or positive",
            );
        }
        s.finish();
        spec
    });

    let evaluation = root.section("evaluation").map(|mut s| {
        let e = EvaluationConfig {
            match_mode: s.or("match_mode", MatchMode::default()),
            per_document: s.or("per_document", false),
        };
        s.finish();
        e
    });

    let cache_dir = path(root.optional("cache_dir"));
    let corpus = path(root.required("corpus"));
    let gold = path(root.optional("gold"));
    let output_dir = path(root.required("output_dir"));
    let workers = root.or("workers", 4usize);
    if workers == 0 {
        root.issue("workers", "must be at least 1");
    }
    root.finish();

    let (ontology_path, root_id, xref_synonyms) = ontology?;
    Some(RunConfig {
        ontology: OntologyConfig {
            path: ontology_path?,
            root_id,
            xref_synonyms,
        },
        extraction: extraction?,
        embedder: embedder?,
        retrieval: retrieval?,
        chat: chat?,
        cache_dir,
        corpus: corpus?,
        gold,
        output_dir: output_dir?,
        workers,
        evaluation: evaluation?,
    })
}

impl RunConfig {
    /// Input files exist and named credentials are set.
    pub fn check_resources(&self) -> Result<(), ConfigErrors> {
        let mut issues = Vec::new();
        let mut must_exist = |field: &str, p: Option<&PathBuf>| {
            if let Some(p) = p {
                if !p.exists() {
                    issues.push(ConfigIssue {
                        field: field.into(),
                        message: format!("{} does not exist", p.display()),
                    });
                }
            }
        };
        must_exist("ontology.path", Some(&self.ontology.path));
        must_exist(
            "ontology.xref_synonyms",
            self.ontology.xref_synonyms.as_ref(),
        );
        must_exist("extraction.lexicon", self.extraction.lexicon.as_ref());
        must_exist("extraction.segments", self.extraction.segments.as_ref());
        must_exist("corpus", Some(&self.corpus));
        must_exist("gold", self.gold.as_ref());
        if self.embedder.kind == EmbedderKind::File {
            must_exist("embedder.path", self.embedder.path.as_ref());
        }
        if self.chat.kind == ChatKind::Scripted {
            must_exist("chat.script", self.chat.script.as_ref());
        }
        if self.chat.kind == ChatKind::Http {
            if let Some(var) = &self.chat.auth_env {
                if std::env::var_os(var).is_none() {
                    issues.push(ConfigIssue {
                        field: "chat.auth_env".into(),
                        message: format!("environment variable {var} is not set"),
                    });
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(issues))
        }
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("serializable config");
        hex::encode(Sha256::digest(json))
    }
}

/// Reads, overrides, validates and resource-checks a config file.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, ConfigErrors> {
    let config = read_config(path, overrides)?;
    config.check_resources()?;
    Ok(config)
}

/// [`load_config`] without the filesystem and credential checks.
pub fn read_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, ConfigErrors> {
    let single = |message: String| {
        ConfigErrors(vec![ConfigIssue {
            field: "<file>".into(),
            message,
        }])
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| single(format!("{}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| single(format!("{}: {e}", path.display())))?;
    let mut issues = Vec::new();
    for (k, v) in overrides {
        if let Err(message) = apply_override(&mut value, k, v) {
            issues.push(ConfigIssue {
                field: k.clone(),
                message,
            });
        }
    }
    if !issues.is_empty() {
        return Err(ConfigErrors(issues));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(value, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({"ontology": {"path": "hp.obo"}, "corpus": "docs", "output_dir": "out"})
    }

    #[test]
    fn defaults_filled() {
        let c = parse_config(minimal(), Path::new("/cfg")).unwrap();
        assert_eq!(
            c.retrieval,
            Thresholds {
                tau1: 0.95,
                tau2: 0.85,
                k: 5
            }
        );
        assert_eq!(c.extraction.strategy, Strategy::RuleBased);
        assert_eq!(c.ontology.path, Path::new("/cfg/hp.obo"));
        assert_eq!(c.corpus, Path::new("/cfg/docs"));
        assert_eq!(c.embedder, EmbedderSpec::default());
        assert_eq!(c.chat, ChatSpec::default());
        assert_eq!(c.evaluation.match_mode, MatchMode::OneToOne);
    }

    #[test]
    fn tau_order_rejected() {
        let mut v = minimal();
        v["retrieval"] = json!({"tau1": 0.8, "tau2": 0.85});
        let e = parse_config(v, Path::new("/")).unwrap_err();
        assert_eq!(e.fields(), ["retrieval.tau1/tau2/k"]);
    }

    #[test]
    fn every_problem_reported() {
        let v = json!({
            "ontology": {"path": "x.obo", "root": "HP:1"},
            "extraction": {"strategy": "rule_based", "segments": "s.tsv"},
            "retrieval": {"k": "five"},
            "chat": {"kind": "scripted"},
            "output_dir": "o",
            "colour": "blue"
        });
        let e = parse_config(v, Path::new("/")).unwrap_err();
        let fields = e.fields();
        for f in [
            "ontology.root",
            "extraction.segments",
            "retrieval.k",
            "chat.script",
            "corpus",
            "colour",
        ] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
        assert!(e.to_string().contains("colour: unknown field"));
    }

    #[test]
    fn overrides_apply_before_validation() {
        let mut v = minimal();
        apply_override(&mut v, "retrieval.tau1", "0.97").unwrap();
        apply_override(&mut v, "extraction.strategy", "segment_based").unwrap();
        apply_override(&mut v, "corpus", "/abs/docs").unwrap();
        let c = parse_config(v, Path::new("/cfg")).unwrap();
        assert_eq!(c.retrieval.tau1, 0.97);
        assert_eq!(c.extraction.strategy, Strategy::SegmentBased);
        assert_eq!(c.corpus, Path::new("/abs/docs"));
    }

    #[test]
    fn null_auth_env_disables_token() {
        let mut v = minimal();
        v["chat"] = json!({"auth_env": null, "endpoint": "http://localhost:1/v1/chat/completions"});
        assert_eq!(parse_config(v, Path::new("/")).unwrap().chat.auth_env, None);
    }

    #[test]
    fn missing_files_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, minimal().to_string()).unwrap();
        let e = load_config(&p, &[]).unwrap_err();
        let fields = e.fields();
        assert!(fields.contains(&"ontology.path") && fields.contains(&"corpus"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config(minimal(), Path::new("/")).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.retrieval.k = 6;
        assert_ne!(a.hash(), b.hash());
    }
}
