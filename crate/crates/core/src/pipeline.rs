//! Per-commit orchestration (CCI → DA → HV → final verdict) and resumable
//! batch runs over a dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{extract_fix_commit_urls, CveEntry};
use crate::gateway::{Gateway, GatewayError};
use crate::hv::{embed, Embedder, HvError, HvQueryResult, HvStore, QueryOptions};
use crate::model::{
    commit_id, AblationMode, ArtifactSummary, Commit, Component, DatasetEntry, DetectionResult,
    DevArtifact, FailureTag, HVRecord, HvMatch, ThreeAspectSummary, Verdict,
};
use crate::prompts::{
    parse_three_aspects, parse_verdict, render_cavfd, render_cci, render_da, CavfdInputs,
    HvContext, ParseError, PromptError, MAX_PROMPT_ARTIFACTS,
};

#[derive(Debug, thiserror::Error)]
pub enum ComponentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unparseable after retry: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Store(#[from] HvError),
}

#[derive(Debug, thiserror::Error)]
#[error("{component} component failed: {cause}")]
pub struct ComponentFailed {
    pub component: Component,
    #[source]
    pub cause: ComponentError,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("mode {0} needs a historical store and an embedder")]
    MissingStore(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: result for `{id}` does not belong to this dataset")]
    ForeignResult { path: PathBuf, id: String },
    #[error("dataset lists `{0}` more than once")]
    DuplicateEntry(String),
    #[error("run stopped after {0} results")]
    Interrupted(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub model: String,
    /// Under w/o-CCI, also drop HV instead of computing CCI just for the
    /// retrieval query.
    pub strict_ablation: bool,
    /// Ignore promoted records when retrieving.
    pub exclude_promoted: bool,
}

impl DetectorConfig {
    pub fn new(model: impl Into<String>) -> Self {
        DetectorConfig {
            model: model.into(),
            strict_ablation: false,
            exclude_promoted: false,
        }
    }
}

pub struct Detector {
    gateway: Arc<Gateway>,
    embedder: Option<Arc<dyn Embedder>>,
    store: Option<Arc<HvStore>>,
    config: DetectorConfig,
}

#[derive(Debug, Default)]
pub struct DaOutcome {
    pub summaries: Vec<ArtifactSummary>,
    pub warnings: Vec<String>,
}

impl Detector {
    pub fn new(gateway: Arc<Gateway>, config: DetectorConfig) -> Self {
        Detector {
            gateway,
            embedder: None,
            store: None,
            config,
        }
    }

    pub fn with_hv(mut self, embedder: Arc<dyn Embedder>, store: Arc<HvStore>) -> Self {
        self.embedder = Some(embedder);
        self.store = Some(store);
        self
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Fails when `mode` needs retrieval but no store is attached.
    pub fn check_mode(&self, mode: &AblationMode) -> Result<(), PipelineError> {
        if mode.is_enabled(Component::HV) && (self.store.is_none() || self.embedder.is_none()) {
            return Err(PipelineError::MissingStore(mode.name()));
        }
        Ok(())
    }

    /// Completes `req` and parses it, asking a second time if the first reply
    /// does not parse.
    fn complete_parsed<T>(
        &self,
        req: &crate::gateway::ChatRequest,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<(T, String), (ComponentError, Option<String>)> {
        let mut last: Option<(ParseError, String)> = None;
        for _ in 0..2 {
            let resp = self.gateway.complete(req).map_err(|e| {
                let raw = last.as_ref().map(|(_, t)| t.clone());
                (ComponentError::from(e), raw)
            })?;
            match parse(&resp.text) {
                Ok(v) => return Ok((v, resp.text)),
                Err(e) => last = Some((e, resp.text)),
            }
        }
        let (e, text) = last.expect("two attempts were made");
        Err((e.into(), Some(text)))
    }

    pub fn run_cci(&self, commit: &Commit) -> Result<ThreeAspectSummary, ComponentFailed> {
        let fail = |cause| ComponentFailed {
            component: Component::CCI,
            cause,
        };
        let req = render_cci(commit, &self.config.model).map_err(|e| fail(e.into()))?;
        self.complete_parsed(&req, parse_three_aspects)
            .map(|(s, _)| s)
            .map_err(|(e, _)| fail(e))
    }

    /// Summaries of the most recent artifacts (highest number first, at most
    /// the prompt cap). An artifact that cannot be summarised is dropped.
    pub fn run_da(&self, artifacts: &[DevArtifact]) -> DaOutcome {
        let mut picked: Vec<&DevArtifact> = artifacts.iter().collect();
        picked.sort_by(|a, b| b.number.cmp(&a.number).then(a.kind.cmp(&b.kind)));
        picked.dedup_by_key(|a| a.number);
        let mut out = DaOutcome::default();
        for a in picked.into_iter().take(MAX_PROMPT_ARTIFACTS) {
            let result = render_da(a, &self.config.model)
                .map_err(ComponentError::from)
                .and_then(|req| {
                    self.complete_parsed(&req, parse_three_aspects)
                        .map_err(|(e, _)| e)
                });
            match result {
                Ok((summary, _)) => out.summaries.push(ArtifactSummary {
                    kind: a.kind,
                    number: a.number,
                    summary,
                }),
                Err(e) => {
                    let msg = format!("{} #{} dropped: {e}", a.kind, a.number);
                    log::warn!("{msg}");
                    out.warnings.push(msg);
                }
            }
        }
        out
    }

    pub fn run_hv(
        &self,
        commit: &Commit,
        cci: &ThreeAspectSummary,
    ) -> Result<Option<HvQueryResult>, ComponentFailed> {
        let fail = |cause: HvError| ComponentFailed {
            component: Component::HV,
            cause: cause.into(),
        };
        let (Some(embedder), Some(store)) = (&self.embedder, &self.store) else {
            return Ok(None);
        };
        let q = embed(embedder.as_ref(), cci).map_err(fail)?;
        let opts = QueryOptions {
            exclude_promoted: self.config.exclude_promoted,
        };
        let hits = store
            .nearest_k(&q, commit.language, 1, opts)
            .map_err(fail)?;
        Ok(hits.into_iter().next())
    }

    /// Runs the components enabled by `mode` and asks for a verdict.
    /// Component failures degrade to "None available."; only a missing
    /// store in a retrieval mode is an error.
    pub fn detect(
        &self,
        commit: &Commit,
        artifacts: &[DevArtifact],
        mode: &AblationMode,
    ) -> Result<DetectionResult, PipelineError> {
        self.check_mode(mode)?;
        let hv_on = mode.is_enabled(Component::HV)
            && (mode.is_enabled(Component::CCI) || !self.config.strict_ablation);
        let cci_on = mode.is_enabled(Component::CCI) || hv_on;

        let cci = if cci_on {
            self.run_cci(commit)
                .inspect_err(|e| log::warn!("{}: {e}", commit.id))
                .ok()
        } else {
            None
        };
        let da = if mode.is_enabled(Component::DA) {
            self.run_da(artifacts).summaries
        } else {
            Vec::new()
        };
        let hv = match (&cci, hv_on) {
            (Some(s), true) => self
                .run_hv(commit, s)
                .inspect_err(|e| log::warn!("{}: {e}", commit.id))
                .ok()
                .flatten(),
            _ => None,
        };

        let cci_for_prompt = cci.as_ref().filter(|_| mode.is_enabled(Component::CCI));
        let inputs = CavfdInputs {
            cci: cci_for_prompt,
            da: Some(&da).filter(|d| !d.is_empty()).map(|d| d.as_slice()),
            hv: hv.as_ref().map(|h| HvContext {
                description: &h.record.cve_description,
                three_aspects: &h.record.three_aspects,
            }),
        };
        let mut inputs_used = BTreeSet::new();
        if inputs.cci.is_some_and(|s| s.is_complete()) {
            inputs_used.insert(Component::CCI);
        }
        if inputs.da.is_some() {
            inputs_used.insert(Component::DA);
        }
        if inputs.hv.is_some() {
            inputs_used.insert(Component::HV);
        }
        debug_assert!(inputs_used.iter().all(|c| mode.is_enabled(*c)));

        let req = render_cavfd(commit, &inputs, mode, &self.config.model);
        let (verdict, analysis, raw_response, failure_tag) =
            match self.complete_parsed(&req, parse_verdict) {
                Ok((v, raw)) => (v.vulnerability_fix, v.analysis, raw, None),
                Err((ComponentError::Parse(_), raw)) => (
                    Verdict::No,
                    String::new(),
                    raw.unwrap_or_default(),
                    Some(FailureTag::Unparseable),
                ),
                Err((e, raw)) => (
                    Verdict::No,
                    e.to_string(),
                    raw.unwrap_or_default(),
                    Some(FailureTag::BackendFailure),
                ),
            };

        Ok(DetectionResult {
            commit_id: commit.id.clone(),
            verdict,
            analysis,
            inputs_used,
            hv_match: hv.map(|h| HvMatch {
                cve_id: h.record.cve_id,
                distance: h.distance,
            }),
            raw_response,
            failure_tag,
            cci_summary: cci,
            da_summaries: da,
        })
    }

    /// Summarises and embeds the fix commits of historical CVEs. CVEs whose
    /// fix commits are absent from `catalog` or whose summary fails are
    /// skipped with a warning.
    pub fn build_hv_records(
        &self,
        historical: &[CveEntry],
        catalog: &[Commit],
        embedder: &dyn Embedder,
        parallelism: usize,
    ) -> (Vec<HVRecord>, Vec<String>) {
        let by_id: HashMap<&str, &Commit> = catalog.iter().map(|c| (c.id.as_str(), c)).collect();
        let mut jobs = Vec::new();
        let mut warnings = Vec::new();
        for cve in historical {
            for (repo, hash) in extract_fix_commit_urls(cve) {
                match by_id.get(commit_id(&repo, &hash).as_str()) {
                    Some(c) => jobs.push((cve, *c)),
                    None => warnings.push(format!("{}: {repo}@{hash} not in catalog", cve.cve_id)),
                }
            }
        }
        let results = parallel_map(&jobs, parallelism, |(cve, commit)| {
            let summary = self.run_cci(commit).map_err(|e| e.to_string())?;
            let embedding = embed(embedder, &summary).map_err(|e| e.to_string())?;
            Ok::<_, String>(HVRecord {
                cve_id: cve.cve_id.clone(),
                cve_description: cve.description.clone(),
                fix_commit: (*commit).clone(),
                three_aspects: summary,
                embedding,
                language: commit.language,
                disclosed_at: cve.published_at,
                promoted_from: None,
            })
        });
        let mut records = Vec::new();
        for ((cve, commit), r) in jobs.iter().zip(results) {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => warnings.push(format!("{} / {}: {e}", cve.cve_id, commit.id)),
            }
        }
        (records, warnings)
    }
}

/// Order-preserving map over `items` with at most `workers` threads.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            let tx = tx.clone();
            let (next, f) = (&next, &f);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let _ = tx.send((i, f(&items[i])));
            });
        }
        drop(tx);
        for (i, r) in rx {
            slots[i] = Some(r);
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Everything needed to repeat a run against the same backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: PathBuf,
    pub mode: AblationMode,
    pub model: String,
    pub hv_store: Option<PathBuf>,
    pub seed: u64,
    pub started_at: String,
    pub gateway_config_digest: String,
    pub strict_ablation: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub total: usize,
    pub resumed: usize,
    pub processed: usize,
    pub verdicts: BTreeMap<String, usize>,
    pub failure_tags: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDurations {
    pub wall_ms: u64,
    pub mean_commit_ms: f64,
    pub max_commit_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub counts: RunCounts,
    pub durations: RunDurations,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub output: PathBuf,
    pub parallelism: usize,
    /// Stop with [`PipelineError::Interrupted`] once this many new results
    /// are on disk; used to exercise resumption.
    pub stop_after: Option<usize>,
}

impl RunOptions {
    pub fn new(output: impl Into<PathBuf>) -> Self {
        RunOptions {
            output: output.into(),
            parallelism: 4,
            stop_after: None,
        }
    }
}

/// Reads complete result lines, truncating a torn trailing line so appends
/// start on a clean boundary.
pub fn recover_results(path: &Path) -> Result<Vec<DetectionResult>, PipelineError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut good_len = 0u64;
    let mut results = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<DetectionResult>(line.trim_end()) {
            Ok(r) => {
                results.push(r);
                good_len += n as u64;
            }
            Err(_) if line.trim().is_empty() => good_len += n as u64,
            Err(_) => break,
        }
    }
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    if f.metadata().map_err(io_err(path))?.len() != good_len {
        log::warn!(
            "{}: truncating torn tail at byte {good_len}",
            path.display()
        );
        f.set_len(good_len).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    Ok(results)
}

fn bump(map: &mut BTreeMap<String, usize>, key: String) {
    *map.entry(key).or_default() += 1;
}

/// Detects every entry, appending results in dataset order. Entries already
/// present in the output file are skipped, so a killed run resumes where it
/// stopped and ends with the same file an uninterrupted run produces.
pub fn run_dataset(
    detector: &Detector,
    entries: &[DatasetEntry],
    manifest: RunManifest,
    opts: &RunOptions,
) -> Result<RunSummary, PipelineError> {
    detector.check_mode(&manifest.mode)?;
    let started = Instant::now();
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.commit.id.as_str()) {
            return Err(PipelineError::DuplicateEntry(e.commit.id.clone()));
        }
    }
    let existing = recover_results(&opts.output)?;
    let mut counts = RunCounts {
        total: entries.len(),
        resumed: existing.len(),
        ..Default::default()
    };
    let mut done = HashSet::new();
    for r in &existing {
        if !seen.contains(r.commit_id.as_str()) {
            return Err(PipelineError::ForeignResult {
                path: opts.output.clone(),
                id: r.commit_id.clone(),
            });
        }
        done.insert(r.commit_id.clone());
        tally(&mut counts, r);
    }
    let pending: Vec<&DatasetEntry> = entries
        .iter()
        .filter(|e| !done.contains(&e.commit.id))
        .collect();

    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&opts.output)
        .map_err(io_err(&opts.output))?;
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<DetectionResult, PipelineError>, u64)>();
    let mut per_commit = Vec::with_capacity(pending.len());
    let mut failure: Option<PipelineError> = None;

    std::thread::scope(|s| {
        for _ in 0..opts.parallelism.max(1).min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, pending, mode) = (&next, &stop, &pending, &manifest.mode);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = pending.get(i) else { break };
                let t = Instant::now();
                let r = detector.detect(&entry.commit, &entry.artifacts, mode);
                if tx.send((i, r, t.elapsed().as_millis() as u64)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut buffer = BTreeMap::new();
        let mut written = 0usize;
        for (i, r, ms) in rx {
            if failure.is_some() {
                continue;
            }
            buffer.insert(i, r);
            per_commit.push(ms);
            while let Some(r) = buffer.remove(&written) {
                let step = r.and_then(|r| {
                    let line = crate::jsonl::to_line(&r);
                    out.write_all(line.as_bytes())
                        .and_then(|_| out.sync_data())
                        .map_err(io_err(&opts.output))?;
                    Ok(r)
                });
                match step {
                    Ok(r) => {
                        tally(&mut counts, &r);
                        counts.processed += 1;
                        written += 1;
                        if opts.stop_after == Some(written) && written < pending.len() {
                            failure = Some(PipelineError::Interrupted(written));
                        }
                    }
                    Err(e) => failure = Some(e),
                }
                if failure.is_some() {
                    stop.store(true, Ordering::SeqCst);
                    break;
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let durations = RunDurations {
        wall_ms: started.elapsed().as_millis() as u64,
        mean_commit_ms: if per_commit.is_empty() {
            0.0
        } else {
            per_commit.iter().sum::<u64>() as f64 / per_commit.len() as f64
        },
        max_commit_ms: per_commit.iter().copied().max().unwrap_or(0),
    };
    Ok(RunSummary {
        manifest,
        counts,
        durations,
    })
}

fn tally(counts: &mut RunCounts, r: &DetectionResult) {
    bump(&mut counts.verdicts, format!("{:?}", r.verdict));
    if let Some(tag) = r.failure_tag {
        bump(&mut counts.failure_tags, format!("{tag:?}"));
    }
}
