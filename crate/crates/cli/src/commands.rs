//! Subcommand definitions and their implementations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mathdeid_core::corpus::{load_corpus, write_corpus, Corpus};
use mathdeid_core::detection::{load_results, write_results};
use mathdeid_core::evaluation::{
    evaluate, render_overall_table, render_report, render_segment_table, render_type_table, write_strata_csv,
    BootstrapOptions, EvalReport, MatchPolicy, DEFAULT_ITERATIONS, DEFAULT_SEED,
};
use mathdeid_core::llm::gateway::ENV_MODEL_ID;
use mathdeid_core::llm::{
    detect_llm_corpus, ChatClient, HttpChatClient, LlmError, LlmRunConfig, PromptVariant, RecordingClient,
    ReplayClient, RetryPolicy,
};
use mathdeid_core::optimizer::{evaluate_grid, select_thresholds, write_heatmap, GridRange, UncertainPolicy};
use mathdeid_core::recognizers::{ner_from_config, BaselineEngine, RecognizerConfig};
use mathdeid_core::segmentation::{
    label_corpus, CachedEmbedder, Embedder, GatewayEmbedder, HashedEmbedder, MathVocabulary, SegmentLabeling,
    Thresholds,
};
use mathdeid_core::surrogation::{
    apply_surrogates, audit_corpus, load_items, select_applicable, write_items, write_ledger, AuditConfig, AuditScope,
    SurrogateRegistry,
};
use mathdeid_review::ReviewStore;
use serde_json::{json, Value};

use crate::manifest::{write_manifest, RunConfig};

pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T = ()> = Result<T, Failure>;

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Validation(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "mathdeid",
    version,
    about = "De-identification pipeline for math tutoring transcripts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every message MATH or NON-MATH.
    Segment(SegmentArgs),
    /// Grid-search segmentation thresholds against audited labels.
    Optimize(OptimizeArgs),
    /// Run a detection engine over a corpus.
    Detect(DetectArgs),
    /// Score detections against gold labels.
    Evaluate(EvaluateArgs),
    /// Audit upstream redactions with an LLM.
    Audit(AuditArgs),
    /// Rewrite the corpus with approved audit decisions.
    ApplySurrogates(ApplyArgs),
    /// Serve the review API.
    ReviewServe(ServeArgs),
    /// Render tables from saved evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmbedderKind {
    /// Deterministic hashed term vectors; offline.
    Hashed,
    /// OpenAI-compatible `/embeddings` endpoint.
    Gateway,
}

#[derive(Debug, Args)]
pub struct EmbedderArgs {
    #[arg(long, value_enum, default_value_t = EmbedderKind::Hashed)]
    embedder: EmbedderKind,
    #[arg(long, default_value_t = 384)]
    embedding_dim: usize,
    /// Embeddings endpoint URL (gateway embedder).
    #[arg(long)]
    embedding_url: Option<String>,
    #[arg(long, default_value = "all-MiniLM-L6-v2")]
    embedding_model: String,
}

impl EmbedderArgs {
    fn build(&self) -> Outcome<Box<dyn Embedder>> {
        Ok(match self.embedder {
            EmbedderKind::Hashed => Box::new(HashedEmbedder::new(self.embedding_dim)),
            EmbedderKind::Gateway => {
                let url = self
                    .embedding_url
                    .clone()
                    .ok_or_else(|| invalid(anyhow!("--embedder gateway needs --embedding-url")))?;
                let key = std::env::var("EMBEDDING_API_KEY").ok().filter(|k| !k.is_empty());
                Box::new(CachedEmbedder::new(GatewayEmbedder::new(
                    url,
                    key,
                    self.embedding_model.clone(),
                    self.embedding_dim,
                )))
            }
        })
    }

    fn settings(&self, into: &mut BTreeMap<String, Value>) {
        into.insert("embedder".into(), json!(format!("{:?}", self.embedder).to_lowercase()));
        into.insert("embedding_dim".into(), json!(self.embedding_dim));
        if matches!(self.embedder, EmbedderKind::Gateway) {
            into.insert("embedding_model".into(), json!(self.embedding_model));
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary JSON; the bundled vocabulary when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    t_anchor: f64,
    #[arg(long, default_value_t = 0.3)]
    t_sim: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Excluded,
    AsTp,
    AsFp,
}

impl From<PolicyArg> for UncertainPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Excluded => UncertainPolicy::Excluded,
            PolicyArg::AsTp => UncertainPolicy::AsTruePositive,
            PolicyArg::AsFp => UncertainPolicy::AsFalsePositive,
        }
    }
}

fn parse_range(s: &str) -> Result<GridRange, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [start, stop, step] if step > 0.0 && stop >= start => Ok(GridRange::new(start, stop, step)),
        _ => Err("expected start:stop:step with step > 0 and stop >= start".into()),
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Source corpus whose redactions were audited.
    #[arg(long)]
    input: PathBuf,
    /// Audit items carrying the verdicts.
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Excluded)]
    uncertain: PolicyArg,
    #[arg(long, value_parser = parse_range, default_value = "0.05:0.10:0.01")]
    anchor_grid: GridRange,
    #[arg(long, value_parser = parse_range, default_value = "0.0:0.5:0.1")]
    sim_grid: GridRange,
    /// Grid results and the selected thresholds (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Heatmap CSV.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Baseline,
    Llm,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    /// Model id; defaults to $LLM_MODEL_ID.
    #[arg(long)]
    model: Option<String>,
    /// Serve responses from a recorded log instead of the gateway.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Append every response to this log.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    #[arg(long, default_value_t = 5)]
    max_attempts: u32,
    /// Requests per second across workers.
    #[arg(long)]
    rate_limit: Option<f64>,
    #[arg(long, default_value_t = 3)]
    context_radius: usize,
}

impl LlmArgs {
    fn model(&self) -> Outcome<String> {
        self.model
            .clone()
            .or_else(|| std::env::var(ENV_MODEL_ID).ok().filter(|m| !m.is_empty()))
            .or_else(|| self.replay.as_ref().map(|_| "replay".to_string()))
            .ok_or_else(|| invalid(anyhow!("no model id: pass --model or set {ENV_MODEL_ID}")))
    }

    fn client(&self) -> Outcome<Arc<dyn ChatClient>> {
        let base: Arc<dyn ChatClient> = match &self.replay {
            Some(path) => Arc::new(ReplayClient::load(path).map_err(invalid)?),
            None => Arc::new(HttpChatClient::from_env().map_err(invalid)?),
        };
        Ok(match &self.record {
            Some(path) => Arc::new(
                RecordingClient::new(base, path)
                    .with_context(|| format!("opening {}", path.display()))
                    .map_err(runtime)?,
            ),
            None => base,
        })
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts.max(1),
            ..RetryPolicy::default()
        }
    }

    fn settings(&self, into: &mut BTreeMap<String, Value>) {
        into.insert("concurrency".into(), json!(self.concurrency));
        into.insert("max_attempts".into(), json!(self.max_attempts));
        into.insert("rate_limit".into(), json!(self.rate_limit));
        into.insert("context_radius".into(), json!(self.context_radius));
        if let Some(r) = &self.replay {
            into.insert("replay".into(), json!(r));
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = EngineArg::Baseline)]
    engine: EngineArg,
    /// Prompt variant for the LLM engine: basic, math, or segment.
    #[arg(long, default_value = "basic")]
    prompt: PromptVariant,
    /// Segment labeling; required by the segment prompt.
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Recognizer configuration JSON for the baseline engine.
    #[arg(long)]
    recognizers: Option<PathBuf>,
    /// NER provider for the baseline engine: gazetteer or none.
    #[arg(long, default_value = "gazetteer")]
    ner: String,
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Corpus with gold labels.
    #[arg(long)]
    gold: PathBuf,
    /// Detection results.
    #[arg(long)]
    pred: PathBuf,
    /// Segment labeling for MATH/NON-MATH strata.
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Matching policy: text or overlap.
    #[arg(long, default_value = "text")]
    policy: MatchPolicy,
    /// Bootstrap iterations; 0 disables intervals.
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    bootstrap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Per-stratum CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    All,
    Redacted,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    input: PathBuf,
    /// Audit items (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    iteration: u32,
    #[arg(long, value_enum, default_value_t = ScopeArg::All)]
    scope: ScopeArg,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    items: PathBuf,
    /// Rewritten corpus.
    #[arg(long)]
    out: PathBuf,
    /// Label ledger CSV; defaults to `<out>.ledger.csv`.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Surrogate registry JSON, read if present and updated on success.
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    items: PathBuf,
    /// Append-only event log; created if missing.
    #[arg(long)]
    log: PathBuf,
    /// Corpus for context windows.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory with the review UI bundle, served at `/`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Shared token required in the `x-review-token` header; defaults to
    /// $REVIEW_TOKEN.
    #[arg(long)]
    token: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report JSON files, one per engine.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// Write the tables here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Segment(a) => segment(a),
        Command::Optimize(a) => optimize(a),
        Command::Detect(a) => detect(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Audit(a) => audit(a),
        Command::ApplySurrogates(a) => apply(a),
        Command::ReviewServe(a) => serve(a),
        Command::Report(a) => report(a),
    }
}

fn read_corpus(path: &Path) -> Outcome<Corpus> {
    load_corpus(path).map_err(invalid)
}

fn read_vocab(path: Option<&Path>) -> Outcome<MathVocabulary> {
    match path {
        Some(p) => MathVocabulary::load(p)
            .with_context(|| format!("vocabulary {}", p.display()))
            .map_err(invalid),
        None => Ok(MathVocabulary::reference()),
    }
}

fn read_labeling(path: &Path, corpus: &Corpus) -> Outcome<SegmentLabeling> {
    let labeling = SegmentLabeling::load(path)
        .with_context(|| format!("segment labeling {}", path.display()))
        .map_err(invalid)?;
    if !labeling.covers(corpus) {
        return Err(invalid(anyhow!(
            "segment labeling {} does not cover every message",
            path.display()
        )));
    }
    Ok(labeling)
}

fn finish(config: RunConfig, inputs: &[&Path]) -> Outcome {
    let path = write_manifest(config, inputs).map_err(runtime)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn check_threshold(name: &str, v: f64) -> Outcome {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(anyhow!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn segment(a: SegmentArgs) -> Outcome {
    check_threshold("--t-anchor", a.t_anchor)?;
    check_threshold("--t-sim", a.t_sim)?;
    let corpus = read_corpus(&a.input)?;
    let vocab = read_vocab(a.vocab.as_deref())?;
    let embedder = a.embedder.build()?;
    let thresholds = Thresholds::new(a.t_anchor, a.t_sim);
    let labeling = label_corpus(&corpus, &vocab, thresholds, embedder.as_ref()).map_err(runtime)?;
    labeling.write(&a.out).map_err(runtime)?;
    let s = labeling.summary(&corpus);
    println!(
        "{} of {} messages MATH ({:.1}% of tokens)",
        s.math_messages,
        s.total_messages,
        100.0 * s.math_token_share()
    );
    let mut settings = BTreeMap::new();
    a.embedder.settings(&mut settings);
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.vocab.as_deref());
    finish(
        RunConfig {
            command: "segment".into(),
            corpus: Some(a.input.clone()),
            vocabulary: a.vocab.clone(),
            t_anchor: Some(a.t_anchor),
            t_sim: Some(a.t_sim),
            output: a.out.clone(),
            settings,
            ..Default::default()
        },
        &inputs,
    )
}

fn optimize(a: OptimizeArgs) -> Outcome {
    let corpus = read_corpus(&a.input)?;
    let items = load_items(&a.items).map_err(invalid)?;
    let vocab = read_vocab(a.vocab.as_deref())?;
    let embedder = a.embedder.build()?;
    let policy = UncertainPolicy::from(a.uncertain);
    let grid = evaluate_grid(
        &corpus,
        &items,
        &vocab,
        embedder.as_ref(),
        a.anchor_grid,
        a.sim_grid,
        policy,
    )
    .map_err(|e| match e {
        mathdeid_core::optimizer::OptimizerError::Segmentation(_) => runtime(e),
        other => invalid(other),
    })?;
    let selected = select_thresholds(&grid).ok_or_else(|| invalid(anyhow!("empty threshold grid")))?;
    let doc = json!({
        "policy": policy,
        "anchor_grid": a.anchor_grid,
        "sim_grid": a.sim_grid,
        "selected": selected,
        "grid": grid,
    });
    std::fs::write(
        &a.out,
        serde_json::to_string_pretty(&doc).expect("grid serializes") + "\n",
    )
    .with_context(|| format!("writing {}", a.out.display()))
    .map_err(runtime)?;
    if let Some(path) = &a.heatmap {
        let file = File::create(path)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
        write_heatmap(&grid, BufWriter::new(file)).map_err(runtime)?;
    }
    let best = grid
        .iter()
        .find(|p| p.thresholds == selected)
        .expect("selected point is in the grid");
    println!(
        "selected T_anchor = {}, T_sim = {} (objective {:.4}, FP captured {:.3}, TP captured {:.3})",
        selected.anchor, selected.similarity, best.objective, best.fp_proportion, best.tp_proportion
    );
    let mut settings = BTreeMap::new();
    a.embedder.settings(&mut settings);
    settings.insert("uncertain".into(), json!(policy));
    settings.insert("anchor_grid".into(), json!(a.anchor_grid));
    settings.insert("sim_grid".into(), json!(a.sim_grid));
    let mut inputs = vec![a.input.as_path(), a.items.as_path()];
    inputs.extend(a.vocab.as_deref());
    finish(
        RunConfig {
            command: "optimize".into(),
            corpus: Some(a.input.clone()),
            vocabulary: a.vocab.clone(),
            t_anchor: Some(selected.anchor),
            t_sim: Some(selected.similarity),
            output: a.out.clone(),
            settings,
            ..Default::default()
        },
        &inputs,
    )
}

fn llm_failure(e: LlmError) -> Failure {
    match e {
        LlmError::Config(_) => invalid(e),
        LlmError::Aborted { .. } => runtime(e),
    }
}

fn detect(a: DetectArgs) -> Outcome {
    if a.engine == EngineArg::Llm && a.prompt.needs_labeling() && a.segments.is_none() {
        return Err(invalid(anyhow!(
            "--prompt segment requires --segments <labeling.jsonl>"
        )));
    }
    let corpus = read_corpus(&a.input)?;
    let labeling = match &a.segments {
        Some(p) => Some(read_labeling(p, &corpus)?),
        None => None,
    };
    let mut settings = BTreeMap::new();
    let mut config = RunConfig {
        command: "detect".into(),
        corpus: Some(a.input.clone()),
        output: a.out.clone(),
        ..Default::default()
    };
    let results = match a.engine {
        EngineArg::Baseline => {
            let recognizers = match &a.recognizers {
                Some(p) => RecognizerConfig::load(p).map_err(invalid)?,
                None => RecognizerConfig::reference(),
            }
            .compile()
            .map_err(invalid)?;
            let ner = ner_from_config(Some(a.ner.as_str()), a.gazetteer.as_deref()).map_err(invalid)?;
            settings.insert("ner".into(), json!(a.ner));
            config.engine = Some("baseline".into());
            BaselineEngine::new(recognizers, ner).detect_corpus(&corpus)
        }
        EngineArg::Llm => {
            let model = a.llm.model()?;
            let mut run = LlmRunConfig::new(a.prompt, model.clone());
            run.context_radius = a.llm.context_radius;
            run.concurrency_limit = a.llm.concurrency.max(1);
            run.retry = a.llm.retry();
            run.rate_limit = a.llm.rate_limit;
            let client = a.llm.client()?;
            a.llm.settings(&mut settings);
            config.engine = Some("llm".into());
            config.prompt_variant = Some(a.prompt.code().into());
            config.model_id = Some(model);
            detect_llm_corpus(&corpus, &run, labeling.as_ref(), client.as_ref()).map_err(llm_failure)?
        }
    };
    write_results(&results, &a.out).map_err(runtime)?;
    let detections: usize = results.iter().map(|r| r.detection_count()).sum();
    let warnings: usize = results.iter().flat_map(|r| &r.messages).map(|m| m.warnings.len()).sum();
    println!(
        "{detections} detections over {} transcripts ({warnings} warnings)",
        results.len()
    );
    config.settings = settings;
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.segments.as_deref());
    inputs.extend(a.recognizers.as_deref());
    inputs.extend(a.gazetteer.as_deref());
    inputs.extend(a.llm.replay.as_deref());
    finish(config, &inputs)
}

fn evaluate_cmd(a: EvaluateArgs) -> Outcome {
    let corpus = read_corpus(&a.gold)?;
    let results = load_results(&a.pred).map_err(invalid)?;
    let labeling = match &a.segments {
        Some(p) => Some(read_labeling(p, &corpus)?),
        None => None,
    };
    let bootstrap = (a.bootstrap > 0).then_some(BootstrapOptions {
        iterations: a.bootstrap,
        seed: a.seed,
    });
    let report = evaluate(&corpus, &results, a.policy, labeling.as_ref(), bootstrap).map_err(invalid)?;
    std::fs::write(
        &a.out,
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )
    .with_context(|| format!("writing {}", a.out.display()))
    .map_err(runtime)?;
    if let Some(path) = &a.csv {
        let file = File::create(path)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
        write_strata_csv(&report, BufWriter::new(file)).map_err(runtime)?;
    }
    print!("{}", render_report(&report));
    let mut settings = BTreeMap::new();
    settings.insert("bootstrap".into(), json!(a.bootstrap));
    settings.insert("engine".into(), json!(report.engine));
    let mut inputs = vec![a.gold.as_path(), a.pred.as_path()];
    inputs.extend(a.segments.as_deref());
    finish(
        RunConfig {
            command: "evaluate".into(),
            corpus: Some(a.gold.clone()),
            match_policy: Some(a.policy.code().into()),
            seed: Some(a.seed),
            output: a.out.clone(),
            settings,
            ..Default::default()
        },
        &inputs,
    )
}

fn audit(a: AuditArgs) -> Outcome {
    if a.iteration == 0 {
        return Err(invalid(anyhow!("--iteration starts at 1")));
    }
    let corpus = read_corpus(&a.input)?;
    let model = a.llm.model()?;
    let mut config = AuditConfig::new(model.clone());
    config.context_radius = a.llm.context_radius;
    config.concurrency_limit = a.llm.concurrency.max(1);
    config.retry = a.llm.retry();
    config.rate_limit = a.llm.rate_limit;
    config.iteration = a.iteration;
    config.scope = match a.scope {
        ScopeArg::All => AuditScope::AllMessages,
        ScopeArg::Redacted => AuditScope::RedactedOnly,
    };
    let client = a.llm.client()?;
    let outcome = audit_corpus(&corpus, client.as_ref(), &config).map_err(llm_failure)?;
    write_items(&outcome.items, &a.out).map_err(runtime)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let flagged = outcome.items.iter().filter(|i| i.flagged).count();
    println!(
        "{} items from {} requests ({} malformed responses, {flagged} flagged)",
        outcome.items.len(),
        outcome.requests,
        outcome.malformed
    );
    let mut settings = BTreeMap::new();
    a.llm.settings(&mut settings);
    settings.insert("iteration".into(), json!(a.iteration));
    settings.insert("scope".into(), json!(config.scope));
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.llm.replay.as_deref());
    finish(
        RunConfig {
            command: "audit".into(),
            corpus: Some(a.input.clone()),
            model_id: Some(model),
            output: a.out.clone(),
            settings,
            ..Default::default()
        },
        &inputs,
    )
}

fn apply(a: ApplyArgs) -> Outcome {
    let corpus = read_corpus(&a.input)?;
    let items = load_items(&a.items).map_err(invalid)?;
    let mut registry = match &a.registry {
        Some(p) if p.exists() => {
            let raw = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(invalid)?;
            serde_json::from_str(&raw)
                .with_context(|| format!("registry {}", p.display()))
                .map_err(invalid)?
        }
        _ => SurrogateRegistry::new(),
    };
    let (applicable, skipped) = select_applicable(&items);
    let outcome = apply_surrogates(&corpus, &applicable, &mut registry).map_err(invalid)?;
    write_corpus(&outcome.corpus, &a.out).map_err(runtime)?;
    let ledger_path = a.ledger.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".ledger.csv");
        PathBuf::from(p)
    });
    let file = File::create(&ledger_path)
        .with_context(|| format!("writing {}", ledger_path.display()))
        .map_err(runtime)?;
    write_ledger(&outcome.ledger, BufWriter::new(file)).map_err(runtime)?;
    if let Some(p) = &a.registry {
        std::fs::write(
            p,
            serde_json::to_string_pretty(&registry).expect("registry serializes") + "\n",
        )
        .with_context(|| format!("writing {}", p.display()))
        .map_err(runtime)?;
    }
    let s = &outcome.summary;
    println!(
        "{} input labels: {} retained, {} removed, {} untouched; {} discovered; {} output labels; {} items not applied",
        s.input_labels,
        s.retained,
        s.removed,
        s.untouched,
        s.discovered,
        s.output_labels,
        skipped.len()
    );
    let mut settings = BTreeMap::new();
    settings.insert("ledger".into(), json!(ledger_path));
    settings.insert("summary".into(), json!(s));
    let mut inputs = vec![a.input.as_path(), a.items.as_path()];
    inputs.extend(a.registry.as_deref().filter(|p| p.exists()));
    finish(
        RunConfig {
            command: "apply-surrogates".into(),
            corpus: Some(a.input.clone()),
            output: a.out.clone(),
            settings,
            ..Default::default()
        },
        &inputs,
    )
}

fn serve(a: ServeArgs) -> Outcome {
    let mut store = ReviewStore::open(&a.items, &a.log).map_err(invalid)?;
    if let Some(p) = &a.corpus {
        store = store.with_corpus(read_corpus(p)?);
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", a.host, a.port))
        .map_err(invalid)?;
    let token = a
        .token
        .or_else(|| std::env::var("REVIEW_TOKEN").ok().filter(|t| !t.is_empty()));
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    eprintln!("review API on http://{addr}/api");
    rt.block_on(mathdeid_review::serve(store, addr, token, a.static_dir))
        .map_err(runtime)
}

fn report(a: ReportArgs) -> Outcome {
    let mut reports = Vec::new();
    for p in &a.reports {
        let raw = std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(invalid)?;
        let r: EvalReport = serde_json::from_str(&raw)
            .with_context(|| format!("report {}", p.display()))
            .map_err(invalid)?;
        reports.push(r);
    }
    let mut out = render_overall_table(&reports);
    for r in &reports {
        out.push_str(&format!("\n{}\n", r.engine));
        out.push_str(&render_type_table(r));
    }
    if reports.iter().any(|r| r.by_segment.is_some()) {
        out.push('\n');
        out.push_str(&render_segment_table(&reports));
    }
    match &a.out {
        Some(path) => {
            std::fs::write(path, &out)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(runtime)?;
            let inputs: Vec<&Path> = a.reports.iter().map(PathBuf::as_path).collect();
            finish(
                RunConfig {
                    command: "report".into(),
                    output: path.clone(),
                    ..Default::default()
                },
                &inputs,
            )
        }
        None => {
            print!("{out}");
            Ok(())
        }
    }
}
