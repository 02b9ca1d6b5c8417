use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conrec::evaluation::{render_table, MatchMode};
use conrec::extraction::Strategy;
use conrec::linking::Provenance;
use conrec::pipeline::{
    build_index_file, evaluate, load_config, read_config, run, ConfigErrors, EvaluateRequest,
    EvaluationConfig, OntologyConfig, PipelineError, RunConfig, ANNOTATIONS_TSV,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "conrec",
    version,
    about = "Ontology concept recognition over clinical text"
)]
struct Cli {
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    error_json: bool,

    /// Log verbosity: -v for info, -vv for debug. RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write annotations, reports and a manifest.
    Annotate(Overrides),
    /// Rescore an annotations TSV against gold without touching any backend.
    Evaluate(EvaluateArgs),
    /// Build and time the concept index alone.
    BuildIndex {
        #[command(flatten)]
        overrides: Overrides,
        /// Index file to write (default: <output_dir>/index.bin).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Validate a config, including input paths and credentials, without running.
    ValidateConfig(Overrides),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    /// Set any config field, e.g. `--set retrieval.k=3`. Relative paths here
    /// resolve against the config file's directory.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Take corpus, gold, ontology and evaluation settings from this config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Annotations TSV (default: <output_dir>/annotations.tsv from the config).
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// OBO file used to flag gold concepts outside the ontology.
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long, value_parser = parse_match_mode)]
    match_mode: Option<MatchMode>,
    #[arg(long)]
    per_document: bool,
    /// Where eval.json and eval.txt go (default: the config's output_dir).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_match_mode(s: &str) -> Result<MatchMode, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| "expected one_to_one, greedy or any_overlap".into())
}

enum Failure {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self::Pipeline(e)
    }
}

impl From<ConfigErrors> for Failure {
    fn from(e: ConfigErrors) -> Self {
        Self::Pipeline(e.into())
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir()
        .map(|d| d.join(p))
        .unwrap_or_else(|_| p.to_path_buf())
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>, Failure> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            out.push((k.trim().to_string(), v.to_string()));
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| json!(absolute(p)).to_string());
        let flags = [
            ("corpus", path(&self.corpus)),
            ("gold", path(&self.gold)),
            ("output_dir", path(&self.output_dir)),
            ("cache_dir", path(&self.cache_dir)),
            (
                "extraction.strategy",
                self.strategy.map(|s| json!(s).to_string()),
            ),
            ("retrieval.tau1", self.tau1.map(|v| v.to_string())),
            ("retrieval.tau2", self.tau2.map(|v| v.to_string())),
            ("retrieval.k", self.k.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
        ];
        out.extend(
            flags
                .into_iter()
                .filter_map(|(k, v)| Some((k.to_string(), v?))),
        );
        Ok(out)
    }

    fn load(&self) -> Result<RunConfig, Failure> {
        Ok(load_config(&self.config, &self.pairs()?)?)
    }
}

fn annotate(o: &Overrides) -> Result<(), Failure> {
    let config = o.load()?;
    let summary = run(&config)?;
    let m = &summary.manifest;
    let via_linker = summary
        .mentions
        .iter()
        .filter(|x| x.provenance == Provenance::LlmLinked)
        .count();
    println!(
        "{} mentions in {} documents ({} direct, {} via the linker), {} warnings",
        m.counts.mentions,
        m.counts.documents,
        m.counts.mentions - via_linker,
        via_linker,
        m.warnings
    );
    for (name, path) in &m.outputs {
        println!("{name}: {}", path.display());
    }
    if let Some(eval) = &summary.evaluation {
        print!(
            "\n{}",
            render_table(&[eval.mention.clone(), eval.document.clone()], false)
        );
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), Failure> {
    let config = match &a.config {
        Some(p) => Some(read_config(p, &[])?),
        None => None,
    };
    let pick = |flag: &Option<PathBuf>, from: Option<PathBuf>, name: &str| {
        flag.as_ref().map(|p| absolute(p)).or(from).ok_or_else(|| {
            Failure::Usage(format!(
                "--{name} is required without a config that provides it"
            ))
        })
    };
    let annotations = pick(
        &a.annotations,
        config.as_ref().map(|c| c.output_dir.join(ANNOTATIONS_TSV)),
        "annotations",
    )?;
    let gold = pick(
        &a.gold,
        config.as_ref().and_then(|c| c.gold.clone()),
        "gold",
    )?;
    let corpus = pick(
        &a.corpus,
        config.as_ref().map(|c| c.corpus.clone()),
        "corpus",
    )?;
    let ontology = match (&a.ontology, &config) {
        (Some(p), _) => Some(OntologyConfig {
            path: absolute(p),
            root_id: None,
            xref_synonyms: None,
        }),
        (None, Some(c)) => Some(c.ontology.clone()),
        (None, None) => None,
    };
    let mut settings = config
        .as_ref()
        .map(|c| c.evaluation.clone())
        .unwrap_or(EvaluationConfig {
            match_mode: MatchMode::default(),
            per_document: false,
        });
    if let Some(m) = a.match_mode {
        settings.match_mode = m;
    }
    settings.per_document |= a.per_document;
    let output_dir = a
        .output_dir
        .as_ref()
        .map(|p| absolute(p))
        .or_else(|| config.as_ref().map(|c| c.output_dir.clone()));
    let summary = evaluate(&EvaluateRequest {
        annotations: &annotations,
        gold: &gold,
        corpus: &corpus,
        ontology: ontology.as_ref(),
        settings: &settings,
        output_dir: output_dir.as_deref(),
    })?;
    print!(
        "{}",
        render_table(
            &[summary.mention.clone(), summary.document.clone()],
            settings.per_document
        )
    );
    Ok(())
}

fn build_index_cmd(o: &Overrides, output: &Option<PathBuf>) -> Result<(), Failure> {
    let config = o.load()?;
    let output = output
        .as_ref()
        .map(|p| absolute(p))
        .unwrap_or_else(|| config.output_dir.join("index.bin"));
    let report = build_index_file(&config, &output, None)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable report")
    );
    if report.unchanged {
        eprintln!("index content hash unchanged: {}", report.content_hash);
    }
    Ok(())
}

fn validate_cmd(o: &Overrides) -> Result<(), Failure> {
    let config = o.load()?;
    println!(
        "{}",
        serde_json::to_string_pretty(&config).expect("serializable config")
    );
    eprintln!("configuration is valid");
    Ok(())
}

fn report(f: &Failure, as_json: bool) -> ExitCode {
    let (kind, message, issues, code) = match f {
        Failure::Usage(m) => ("usage", m.clone(), vec![], 2),
        Failure::Pipeline(e @ PipelineError::Config(ConfigErrors(issues))) => {
            ("config", e.to_string(), issues.clone(), 2)
        }
        Failure::Pipeline(e) => (e.kind(), e.to_string(), vec![], 1),
    };
    if as_json {
        let body = json!({"error": {"kind": kind, "message": message, "issues": issues}});
        eprintln!("{body}");
    } else {
        eprintln!("error: {message}");
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Annotate(o) => annotate(o),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::BuildIndex { overrides, output } => build_index_cmd(overrides, output),
        Command::ValidateConfig(o) => validate_cmd(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f, cli.error_json),
    }
}
