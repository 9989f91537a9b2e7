//! The `vfd` command line. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.
//!
//! Settings come from flags, then a flat TOML file given with `--config`,
//! then built-in defaults. Credentials are read only from the environment.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::dataset::{self, history_cutoff, SamplingSpec};
use crate::eval::{self, compare_runs, TagLog};
use crate::forge::{ForgeClient, ForgeConfig};
use crate::gateway::{
    ChatBackend, Gateway, GatewayConfig, MockBackend, MockScript, RemoteBackend, API_KEY_ENV,
};
use crate::http::{Cassette, HttpTransport, ReqwestTransport};
use crate::hv::{
    Embedder, HashProjectionEmbedder, HvStore, RemoteEmbedder, DEFAULT_EMBEDDING_MODEL,
};
use crate::jsonl;
use crate::model::{AblationMode, DetectionResult, FailureTag};
use crate::pipeline::{run_dataset, Detector, DetectorConfig, RunManifest, RunOptions};
use crate::review::{self, HvHandle};
use crate::tokenize::WordPunctTokenizer;

pub const NVD_API_KEY_ENV: &str = "VFD_NVD_API_KEY";
pub const DEFAULT_NVD_URL: &str = "https://services.nvd.nist.gov/rest/json/cves/2.0";
pub const DEFAULT_MODEL: &str = "Qwen2-72B-Instruct";
/// Width of the default remote embedding model's vectors.
pub const DEFAULT_EMBED_DIM: usize = 3584;
pub const MOCK_EMBED_DIM: usize = 64;

#[derive(Debug, Parser)]
#[command(
    name = "vfd",
    version,
    about = "Detect vulnerability-fixing commits with LLMs"
)]
pub struct Cli {
    /// Flat TOML file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replay HTTP traffic from a recorded cassette instead of the network.
    #[arg(long, global = true)]
    pub http_cassette: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download a CVE snapshot from the NVD API.
    FetchCves(FetchCves),
    /// Build an evaluation dataset from a CVE snapshot and a commit catalog.
    BuildDataset(BuildDataset),
    /// Summarise and embed historical fixes into a vector store.
    BuildHv(BuildHv),
    /// Run detection over a dataset in one mode.
    Detect(Detect),
    /// Score a results file against dataset labels.
    Evaluate(Evaluate),
    /// Run all five ablation settings and compare them.
    Ablate(Ablate),
    /// Serve the review API.
    Serve(Serve),
    /// Tag a wrong prediction with a failure reason, then print the tally.
    Tag(Tag),
}

#[derive(Debug, Args, Default)]
pub struct LlmArgs {
    /// Scripted mock backend (JSONL) instead of a remote model.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// OpenAI-compatible chat completions URL.
    #[arg(long)]
    pub llm_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct EmbedArgs {
    /// Use the offline hash-projection embedder.
    #[arg(long)]
    pub mock_embedder: bool,
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub embed_model: Option<String>,
}

#[derive(Debug, Args)]
pub struct FetchCves {
    #[arg(long)]
    pub from: NaiveDate,
    #[arg(long)]
    pub to: NaiveDate,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub nvd_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildDataset {
    #[arg(long)]
    pub cves: PathBuf,
    /// Commit catalog (one commit per line).
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ratio: Option<u32>,
    #[arg(long)]
    pub percentile: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<NaiveDate>,
    /// Fetch linked issue reports and pull requests from the forge.
    #[arg(long)]
    pub mine_artifacts: bool,
    #[arg(long)]
    pub forge_api_base: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildHv {
    #[arg(long)]
    pub cves: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cutoff: Option<NaiveDate>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct Detect {
    /// full, wo-cci, wo-da, wo-hv or vanilla.
    #[arg(long)]
    pub mode: AblationMode,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to `<dataset>.<mode>.results.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub hv_store: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop HV too when CCI is ablated.
    #[arg(long)]
    pub strict_ablation: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Ablate {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub hv_store: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strict_ablation: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub hv_store: Option<PathBuf>,
    /// CVE snapshot used to describe promoted records.
    #[arg(long)]
    pub cves: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct Tag {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    /// Result to tag; omit to only print the tally.
    #[arg(long, requires = "tag")]
    pub id: Option<String>,
    #[arg(long, value_parser = parse_tag)]
    pub tag: Option<FailureTag>,
    #[arg(long, default_value = "")]
    pub note: String,
}

fn parse_tag(s: &str) -> Result<FailureTag, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| {
        let names: Vec<String> = FailureTag::REVIEW_TAGS
            .iter()
            .map(|t| format!("{t:?}"))
            .collect();
        format!("unknown tag `{s}`; one of {}", names.join(", "))
    })
}

/// Keys accepted in the `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub llm_url: Option<String>,
    pub max_in_flight: Option<usize>,
    pub max_prompt_tokens: Option<u64>,
    pub cache: Option<bool>,
    pub http_timeout_secs: Option<u64>,
    pub embed_url: Option<String>,
    pub embed_dim: Option<usize>,
    pub embed_model: Option<String>,
    pub mock_embedder: Option<bool>,
    pub hv_store: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub ratio: Option<u32>,
    pub percentile: Option<f64>,
    pub cutoff: Option<NaiveDate>,
    pub strict_ablation: Option<bool>,
    pub exclude_promoted: Option<bool>,
    pub forge_api_base: Option<String>,
    pub forge_body_char_cap: Option<usize>,
    pub nvd_url: Option<String>,
    pub bind: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(Box<dyn std::error::Error + Send + Sync>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn rt<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::Runtime(Box::new(e))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Ctx {
    cfg: FileConfig,
    cassette: Option<PathBuf>,
}

impl Ctx {
    fn transport(&self) -> Result<Arc<dyn HttpTransport>, CliError> {
        match &self.cassette {
            Some(p) => Ok(Arc::new(Cassette::load(p).map_err(rt)?)),
            None => {
                let secs = self.cfg.http_timeout_secs.unwrap_or(120);
                Ok(Arc::new(
                    ReqwestTransport::new(Duration::from_secs(secs)).map_err(rt)?,
                ))
            }
        }
    }

    fn model(&self, llm: &LlmArgs) -> String {
        llm.model
            .clone()
            .or_else(|| self.cfg.model.clone())
            .unwrap_or_else(|| DEFAULT_MODEL.into())
    }

    fn gateway(&self, llm: &LlmArgs) -> Result<Arc<Gateway>, CliError> {
        let backend: Arc<dyn ChatBackend> = if let Some(script) = &llm.mock {
            Arc::new(MockBackend::new(MockScript::load(script).map_err(rt)?))
        } else {
            let url = llm
                .llm_url
                .clone()
                .or_else(|| self.cfg.llm_url.clone())
                .ok_or_else(|| {
                    usage("no LLM backend: pass --mock <script> or --llm-url / llm_url")
                })?;
            Arc::new(
                RemoteBackend::new(self.transport()?, url)
                    .with_api_key(std::env::var(API_KEY_ENV).ok()),
            )
        };
        let config = GatewayConfig {
            max_prompt_tokens: self.cfg.max_prompt_tokens,
            max_in_flight: llm.max_in_flight.or(self.cfg.max_in_flight),
            cache: self.cfg.cache.unwrap_or(false),
        };
        Ok(Arc::new(Gateway::new(backend, config)))
    }

    /// An embedder for a new store, chosen by flags and config.
    fn embedder(&self, e: &EmbedArgs) -> Result<Arc<dyn Embedder>, CliError> {
        if e.mock_embedder || self.cfg.mock_embedder.unwrap_or(false) {
            let dim = e.embed_dim.or(self.cfg.embed_dim).unwrap_or(MOCK_EMBED_DIM);
            return Ok(Arc::new(HashProjectionEmbedder::new(dim)));
        }
        let url = e
            .embed_url
            .clone()
            .or_else(|| self.cfg.embed_url.clone())
            .ok_or_else(|| usage("no embedder: pass --mock-embedder or --embed-url / embed_url"))?;
        let dim = e
            .embed_dim
            .or(self.cfg.embed_dim)
            .unwrap_or(DEFAULT_EMBED_DIM);
        let model = e
            .embed_model
            .clone()
            .or_else(|| self.cfg.embed_model.clone())
            .unwrap_or_else(|| DEFAULT_EMBEDDING_MODEL.into());
        Ok(Arc::new(
            RemoteEmbedder::new(self.transport()?, url, dim)
                .with_model(model)
                .with_api_key(std::env::var(API_KEY_ENV).ok()),
        ))
    }

    /// An embedder matching an existing store's model and width.
    fn embedder_for(&self, store: &HvStore, e: &EmbedArgs) -> Result<Arc<dyn Embedder>, CliError> {
        if store.embedding_model() == HashProjectionEmbedder::MODEL {
            return Ok(Arc::new(HashProjectionEmbedder::new(store.dim())));
        }
        let args = EmbedArgs {
            mock_embedder: false,
            embed_url: e.embed_url.clone(),
            embed_dim: Some(store.dim()),
            embed_model: Some(store.embedding_model().to_owned()),
        };
        self.embedder(&args)
    }

    fn hv_path(&self, flag: &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| self.cfg.hv_store.clone())
    }

    fn detector(
        &self,
        llm: &LlmArgs,
        embed: &EmbedArgs,
        hv_store: Option<&Path>,
        strict: bool,
    ) -> Result<Detector, CliError> {
        let mut cfg = DetectorConfig::new(self.model(llm));
        cfg.strict_ablation = strict || self.cfg.strict_ablation.unwrap_or(false);
        cfg.exclude_promoted = self.cfg.exclude_promoted.unwrap_or(false);
        let mut d = Detector::new(self.gateway(llm)?, cfg);
        if let Some(p) = hv_store {
            let store = HvStore::load(p).map_err(rt)?;
            let embedder = self.embedder_for(&store, embed)?;
            d = d.with_hv(embedder, Arc::new(store));
        }
        Ok(d)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        cfg,
        cassette: cli.http_cassette,
    };
    match cli.command {
        Command::FetchCves(c) => fetch_cves(&ctx, c),
        Command::BuildDataset(c) => build_dataset(&ctx, c),
        Command::BuildHv(c) => build_hv(&ctx, c),
        Command::Detect(c) => detect(&ctx, c),
        Command::Evaluate(c) => evaluate(c),
        Command::Ablate(c) => ablate(&ctx, c),
        Command::Serve(c) => serve(&ctx, c),
        Command::Tag(c) => tag(c),
    }
}

fn fetch_cves(ctx: &Ctx, c: FetchCves) -> Result<(), CliError> {
    if c.from >= c.to {
        return Err(usage("--from must be earlier than --to"));
    }
    let url = c
        .nvd_url
        .or_else(|| ctx.cfg.nvd_url.clone())
        .unwrap_or_else(|| DEFAULT_NVD_URL.into());
    let key = std::env::var(NVD_API_KEY_ENV).ok();
    let entries = dataset::fetch_nvd(
        ctx.transport()?.as_ref(),
        &url,
        key.as_deref(),
        c.from,
        c.to,
    )
    .map_err(rt)?;
    jsonl::write_atomic(&c.out, &entries).map_err(rt)?;
    println!("wrote {} CVEs to {}", entries.len(), c.out.display());
    Ok(())
}

fn build_dataset(ctx: &Ctx, c: BuildDataset) -> Result<(), CliError> {
    let spec = SamplingSpec {
        nvf_per_vf: c
            .ratio
            .or(ctx.cfg.ratio)
            .unwrap_or(dataset::DEFAULT_NVF_PER_VF),
        seed: c.seed.or(ctx.cfg.seed).unwrap_or(0),
    };
    if spec.nvf_per_vf == 0 {
        return Err(usage("--ratio must be at least 1"));
    }
    let percentile = c
        .percentile
        .or(ctx.cfg.percentile)
        .unwrap_or(dataset::DEFAULT_PERCENTILE);
    let cutoff = c.cutoff.or(ctx.cfg.cutoff).unwrap_or_else(history_cutoff);
    let cves = dataset::load_cve_snapshot(&c.cves).map_err(rt)?;
    let catalog = dataset::load_catalog(&c.catalog).map_err(rt)?;
    let mut built = dataset::build_dataset(
        cves,
        &catalog,
        &spec,
        &WordPunctTokenizer,
        percentile,
        cutoff,
    )
    .map_err(rt)?;
    if c.mine_artifacts {
        let mut fc = ForgeConfig::default();
        if let Some(base) = c.forge_api_base.or_else(|| ctx.cfg.forge_api_base.clone()) {
            fc.api_base = base;
        }
        if let Some(cap) = ctx.cfg.forge_body_char_cap {
            fc.body_char_cap = cap;
        }
        let client = ForgeClient::new(ctx.transport()?, fc);
        for e in &mut built.entries {
            let mined = client.mine_commit_artifacts(&e.commit).map_err(rt)?;
            for w in &mined.warnings {
                log::warn!("{}: {w}", e.commit.id);
            }
            e.artifacts = mined.artifacts;
        }
    }
    for s in &built.metadata.shortfalls {
        log::warn!(
            "{}: wanted {} NVF, pool has {}",
            s.repo,
            s.wanted,
            s.available
        );
    }
    dataset::write_dataset(&c.out, &built).map_err(rt)?;
    let n = &built.metadata.counts;
    println!(
        "wrote {} entries ({} VF, {} NVF, {} removed over {} tokens) to {}",
        built.entries.len(),
        n.vf,
        n.nvf,
        n.removed_by_length,
        built.metadata.threshold,
        c.out.display()
    );
    Ok(())
}

fn build_hv(ctx: &Ctx, c: BuildHv) -> Result<(), CliError> {
    let cutoff = c.cutoff.or(ctx.cfg.cutoff).unwrap_or_else(history_cutoff);
    let cves = dataset::load_cve_snapshot(&c.cves).map_err(rt)?;
    let catalog = dataset::load_catalog(&c.catalog).map_err(rt)?;
    let (historical, _) = dataset::split_by_date(cves, cutoff);
    let embedder = ctx.embedder(&c.embed)?;
    let detector = Detector::new(ctx.gateway(&c.llm)?, DetectorConfig::new(ctx.model(&c.llm)));
    let parallelism = c.parallelism.or(ctx.cfg.parallelism).unwrap_or(4);
    let (records, warnings) =
        detector.build_hv_records(&historical, &catalog, embedder.as_ref(), parallelism);
    for w in &warnings {
        log::warn!("{w}");
    }
    let store = HvStore::build(records, embedder.dim(), embedder.model()).map_err(rt)?;
    store.save(&c.out).map_err(rt)?;
    println!(
        "stored {} historical fixes ({} skipped) in {}",
        store.len(),
        warnings.len(),
        c.out.display()
    );
    Ok(())
}

fn default_results_path(dataset: &Path, mode: &AblationMode) -> PathBuf {
    let mut name = dataset
        .file_stem()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(format!(".{}.results.jsonl", mode.slug()));
    dataset.with_file_name(name)
}

fn summary_path(results: &Path) -> PathBuf {
    let mut name = results
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".summary.json");
    results.with_file_name(name)
}

struct RunSpec<'a> {
    detector: &'a Detector,
    dataset: &'a Path,
    mode: AblationMode,
    out: PathBuf,
    hv_store: Option<PathBuf>,
    seed: u64,
    parallelism: usize,
}

fn run_one(spec: RunSpec<'_>, entries: &[crate::model::DatasetEntry]) -> Result<(), CliError> {
    let manifest = RunManifest {
        dataset: spec.dataset.to_owned(),
        mode: spec.mode.clone(),
        model: spec.detector.config().model.clone(),
        hv_store: spec.hv_store,
        seed: spec.seed,
        started_at: chrono::Utc::now().to_rfc3339(),
        gateway_config_digest: spec.detector.gateway().config_digest(),
        strict_ablation: spec.detector.config().strict_ablation,
    };
    let mut opts = RunOptions::new(&spec.out);
    opts.parallelism = spec.parallelism;
    let summary = run_dataset(spec.detector, entries, manifest, &opts).map_err(|e| match e {
        crate::pipeline::PipelineError::MissingStore(_) => usage(e.to_string()),
        other => rt(other),
    })?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let sp = summary_path(&spec.out);
    std::fs::write(&sp, text + "\n").map_err(rt)?;
    println!(
        "{}: {} results ({} resumed) in {}",
        spec.mode.name(),
        summary.counts.total,
        summary.counts.resumed,
        spec.out.display()
    );
    Ok(())
}

fn detect(ctx: &Ctx, c: Detect) -> Result<(), CliError> {
    let entries = dataset::load_dataset(&c.dataset).map_err(rt)?;
    let hv = ctx.hv_path(&c.hv_store);
    let detector = ctx.detector(&c.llm, &c.embed, hv.as_deref(), c.strict_ablation)?;
    let out = c
        .out
        .clone()
        .unwrap_or_else(|| default_results_path(&c.dataset, &c.mode));
    run_one(
        RunSpec {
            detector: &detector,
            dataset: &c.dataset,
            mode: c.mode,
            out,
            hv_store: hv,
            seed: c.seed.or(ctx.cfg.seed).unwrap_or(0),
            parallelism: c.parallelism.or(ctx.cfg.parallelism).unwrap_or(4),
        },
        &entries,
    )
}

fn evaluate(c: Evaluate) -> Result<(), CliError> {
    let entries = dataset::load_dataset(&c.dataset).map_err(rt)?;
    let results: Vec<DetectionResult> = jsonl::read(&c.results).map_err(rt)?;
    let report = eval::evaluate(&results, &entries).map_err(rt)?;
    print!("{}", report.to_text());
    if let Some(out) = c.out {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&out, text + "\n").map_err(rt)?;
    }
    Ok(())
}

fn ablate(ctx: &Ctx, c: Ablate) -> Result<(), CliError> {
    let entries = dataset::load_dataset(&c.dataset).map_err(rt)?;
    let hv = ctx.hv_path(&c.hv_store);
    if hv.is_none() {
        return Err(usage("ablate needs --hv-store (or hv_store in the config)"));
    }
    let detector = ctx.detector(&c.llm, &c.embed, hv.as_deref(), c.strict_ablation)?;
    std::fs::create_dir_all(&c.out_dir).map_err(rt)?;
    let mut reports = Vec::new();
    for mode in AblationMode::study() {
        let out = c.out_dir.join(format!("{}.jsonl", mode.slug()));
        run_one(
            RunSpec {
                detector: &detector,
                dataset: &c.dataset,
                mode: mode.clone(),
                out: out.clone(),
                hv_store: hv.clone(),
                seed: c.seed.or(ctx.cfg.seed).unwrap_or(0),
                parallelism: c.parallelism.or(ctx.cfg.parallelism).unwrap_or(4),
            },
            &entries,
        )?;
        let results: Vec<DetectionResult> = jsonl::read(&out).map_err(rt)?;
        reports.push((mode, eval::evaluate(&results, &entries).map_err(rt)?));
    }
    let table = compare_runs(&reports).map_err(rt)?;
    std::fs::write(c.out_dir.join("ablation.txt"), table.to_text()).map_err(rt)?;
    std::fs::write(c.out_dir.join("ablation.csv"), table.to_csv()).map_err(rt)?;
    let json = serde_json::to_string_pretty(&table).expect("table serializes");
    std::fs::write(c.out_dir.join("ablation.json"), json + "\n").map_err(rt)?;
    print!("{}", table.to_text());
    Ok(())
}

fn serve(ctx: &Ctx, c: Serve) -> Result<(), CliError> {
    let bind = c
        .bind
        .or_else(|| ctx.cfg.bind.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let addr: std::net::SocketAddr = bind
        .parse()
        .map_err(|e| usage(format!("--bind {bind}: {e}")))?;
    let mut state =
        review::load_state(&c.results, &c.dataset, &c.verdicts).map_err(CliError::Runtime)?;
    if let Some(p) = c.cves {
        state = state.with_cves(dataset::load_cve_snapshot(&p).map_err(rt)?);
    }
    if let Some(path) = ctx.hv_path(&c.hv_store) {
        let store = HvStore::load(&path).map_err(rt)?;
        let embedder = ctx.embedder_for(&store, &c.embed)?;
        state = state.with_hv(HvHandle {
            store: RwLock::new(store),
            path,
            embedder,
        });
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(rt)?;
    runtime
        .block_on(review::serve(Arc::new(state), addr))
        .map_err(rt)
}

fn tag(c: Tag) -> Result<(), CliError> {
    let log = TagLog::new(&c.log);
    if let (Some(id), Some(t)) = (&c.id, c.tag) {
        let entries = dataset::load_dataset(&c.dataset).map_err(rt)?;
        let results: Vec<DetectionResult> = jsonl::read(&c.results).map_err(rt)?;
        let result = results
            .iter()
            .find(|r| &r.commit_id == id)
            .ok_or_else(|| usage(format!("no result `{id}`")))?;
        let label = entries
            .iter()
            .find(|e| &e.commit.id == id)
            .map(|e| e.label)
            .ok_or_else(|| usage(format!("`{id}` is not in the dataset")))?;
        let record = eval::tag_failure(result, label, t, c.note.clone())
            .map_err(|e| usage(e.to_string()))?;
        log.append(&record).map_err(rt)?;
    }
    let current = log.current().map_err(rt)?;
    print!("{}", eval::tag_table(&eval::aggregate_tags(&current)));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with(["vfd", "detect"]), 2);
        assert_eq!(main_with(["vfd", "no-such-command"]), 2);
        assert_eq!(
            main_with([
                "vfd",
                "detect",
                "--mode",
                "sideways",
                "--dataset",
                "d.jsonl"
            ]),
            2
        );
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(
            main_with([
                "vfd",
                "evaluate",
                "--results",
                "/nonexistent/r",
                "--dataset",
                "/nonexistent/d"
            ]),
            1
        );
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "modle = \"x\"\n").unwrap();
        let args = [
            "vfd",
            "--config",
            p.to_str().unwrap(),
            "evaluate",
            "--results",
            "r",
            "--dataset",
            "d",
        ];
        assert_eq!(main_with(args), 2);
    }

    #[test]
    fn default_results_name() {
        assert_eq!(
            default_results_path(Path::new("/x/d.jsonl"), &AblationMode::vanilla()),
            PathBuf::from("/x/d.vanilla.results.jsonl")
        );
    }

    #[test]
    fn tag_names_parse() {
        assert_eq!(
            parse_tag("LongContextMiss"),
            Ok(FailureTag::LongContextMiss)
        );
        assert!(parse_tag("Nope").is_err());
    }
}
