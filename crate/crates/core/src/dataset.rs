//! Evaluation dataset and historical corpus construction.
//!
//! Inputs are a CVE snapshot (one `{cve_id, description, references,
//! published_at}` record per line) and a commit catalog (one [`Commit`] per
//! line, exported from the repositories of interest). Fix commits are read
//! from CVE reference URLs, non-fix commits are sampled per repository, and
//! the longest patches are dropped at a nearest-rank percentile.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::http::{HttpRequest, HttpTransport};
use crate::jsonl::{self, JsonlError};
use crate::model::{
    commit_id, is_cve_id, validate_dataset, validate_entry_value, Commit, DatasetEntry, Label,
    Violation,
};
use crate::tokenize::Tokenizer;

pub const DEFAULT_NVF_PER_VF: u32 = 16;
pub const DEFAULT_PERCENTILE: f64 = 0.99;

/// First day excluded from the historical corpus.
pub fn history_cutoff() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CveEntry {
    pub cve_id: String,
    pub description: String,
    pub references: Vec<String>,
    pub published_at: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub nvf_per_vf: u32,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            nvf_per_vf: DEFAULT_NVF_PER_VF,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid record at line {line}: {violations}")]
    Invalid { line: usize, violations: String },
    #[error("malformed cve id `{0}`")]
    BadCveId(String),
    #[error("nvf_per_vf must be at least 1")]
    BadRatio,
    #[error("percentile must lie in (0, 1], got {0}")]
    BadPercentile(f64),
    #[error("cannot filter an empty dataset")]
    Empty,
    #[error("{nvf} NVF for {vf} VF exceeds the 1:{ratio} ratio")]
    RatioExceeded { vf: usize, nvf: usize, ratio: u32 },
    #[error("NVD request failed: {0}")]
    Nvd(String),
}

static COMMIT_URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^https?://(?:www\.)?github\.com/([A-Za-z0-9_.-]+)/([A-Za-z0-9_.-]+)/commit/([0-9a-fA-F]{7,40})(?:[/?#.].*)?$",
    )
    .unwrap()
});

/// `(owner/name, hash)` for every forge commit URL among the references.
pub fn extract_fix_commit_urls(entry: &CveEntry) -> Vec<(String, String)> {
    let mut seen = HashSet::new();
    entry
        .references
        .iter()
        .filter_map(|url| {
            let caps = COMMIT_URL.captures(url.trim())?;
            let repo = format!("{}/{}", &caps[1], &caps[2]);
            let repo = repo.trim_end_matches(".git").to_owned();
            Some((repo, caps[3].to_ascii_lowercase()))
        })
        .filter(|pair| seen.insert(pair.clone()))
        .collect()
}

/// `(before cutoff, on or after cutoff)`.
pub fn split_by_date(entries: Vec<CveEntry>, cutoff: NaiveDate) -> (Vec<CveEntry>, Vec<CveEntry>) {
    entries.into_iter().partition(|e| e.published_at < cutoff)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub repo: String,
    pub wanted: usize,
    pub available: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NvfSample {
    pub commits: Vec<Commit>,
    pub shortfalls: Vec<Shortfall>,
}

fn repo_rng(seed: u64, repo: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(repo.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Draws `nvf_per_vf` non-fix commits per fix commit from the same
/// repository, without replacement. Short pools are taken whole and reported;
/// they are never topped up from other repositories.
pub fn sample_nvf(
    vf: &[Commit],
    nvf_pool: &[Commit],
    spec: &SamplingSpec,
) -> Result<NvfSample, DatasetError> {
    if spec.nvf_per_vf == 0 {
        return Err(DatasetError::BadRatio);
    }
    let vf_ids: HashSet<&str> = vf.iter().map(|c| c.id.as_str()).collect();
    let mut vf_per_repo: BTreeMap<&str, usize> = BTreeMap::new();
    for c in vf {
        *vf_per_repo.entry(c.repo.as_str()).or_default() += 1;
    }
    let mut pools: HashMap<&str, BTreeMap<&str, &Commit>> = HashMap::new();
    for c in nvf_pool {
        if !vf_ids.contains(c.id.as_str()) {
            pools.entry(c.repo.as_str()).or_default().insert(&c.id, c);
        }
    }
    let mut out = NvfSample::default();
    for (repo, n_vf) in vf_per_repo {
        let wanted = n_vf * spec.nvf_per_vf as usize;
        let mut candidates: Vec<&Commit> = pools
            .get(repo)
            .map(|p| p.values().copied().collect())
            .unwrap_or_default();
        if candidates.len() < wanted {
            out.shortfalls.push(Shortfall {
                repo: repo.to_owned(),
                wanted,
                available: candidates.len(),
            });
        }
        candidates.shuffle(&mut repo_rng(spec.seed, repo));
        out.commits
            .extend(candidates.into_iter().take(wanted).cloned());
    }
    Ok(out)
}

/// Rank of the nearest-rank percentile among `n` sorted items, 1-based.
pub fn nearest_rank(n: usize, percentile: f64) -> usize {
    // tolerance absorbs products like 0.99 * 100 landing a hair above 99
    let rank = (percentile * n as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthFilter {
    pub kept: Vec<DatasetEntry>,
    pub removed: Vec<DatasetEntry>,
    pub threshold: u64,
}

/// Drops entries whose `token_length` exceeds the nearest-rank percentile of
/// all lengths. Input order is preserved in both outputs.
pub fn filter_by_token_length(
    entries: Vec<DatasetEntry>,
    percentile: f64,
) -> Result<LengthFilter, DatasetError> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(DatasetError::BadPercentile(percentile));
    }
    if entries.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut lengths: Vec<u64> = entries.iter().map(|e| e.commit.token_length).collect();
    lengths.sort_unstable();
    let threshold = lengths[nearest_rank(lengths.len(), percentile) - 1];
    let (kept, removed) = entries
        .into_iter()
        .partition(|e| e.commit.token_length <= threshold);
    Ok(LengthFilter {
        kept,
        removed,
        threshold,
    })
}

/// Rejects datasets with more non-fix commits than the ratio allows.
pub fn check_ratio(entries: &[DatasetEntry], nvf_per_vf: u32) -> Result<(), DatasetError> {
    let vf = entries.iter().filter(|e| e.label == Label::VF).count();
    let nvf = entries.len() - vf;
    if nvf > vf * nvf_per_vf as usize {
        return Err(DatasetError::RatioExceeded {
            vf,
            nvf,
            ratio: nvf_per_vf,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub vf: usize,
    pub nvf: usize,
    pub removed_by_length: usize,
    pub fix_commits_missing_from_catalog: usize,
}

/// Written next to every dataset as `<dataset>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub created_at: String,
    pub seed: u64,
    pub ratio: u32,
    /// Always `per-repo`.
    pub sampling: String,
    pub tokenizer: String,
    pub percentile: f64,
    pub threshold: u64,
    pub cutoff: NaiveDate,
    pub counts: DatasetCounts,
    pub shortfalls: Vec<Shortfall>,
}

#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub entries: Vec<DatasetEntry>,
    pub metadata: DatasetMetadata,
}

/// Fix commits of post-cutoff CVEs, sampled non-fix commits of the same
/// repositories, token lengths, and the length filter.
///
/// The non-fix pool excludes every commit referenced by any CVE of any date.
/// A commit referenced by several CVEs is labeled with the smallest id.
pub fn build_dataset(
    cves: Vec<CveEntry>,
    catalog: &[Commit],
    spec: &SamplingSpec,
    tokenizer: &dyn Tokenizer,
    percentile: f64,
    cutoff: NaiveDate,
) -> Result<BuiltDataset, DatasetError> {
    let referenced: HashSet<String> = cves
        .iter()
        .flat_map(extract_fix_commit_urls)
        .map(|(repo, hash)| commit_id(&repo, &hash))
        .collect();
    let by_id: HashMap<&str, &Commit> = catalog.iter().map(|c| (c.id.as_str(), c)).collect();

    let (_, mut evaluation) = split_by_date(cves, cutoff);
    evaluation.sort_by(|a, b| a.cve_id.cmp(&b.cve_id));
    let mut vf: BTreeMap<String, (Commit, String)> = BTreeMap::new();
    let mut missing = 0;
    for cve in &evaluation {
        for (repo, hash) in extract_fix_commit_urls(cve) {
            match by_id.get(commit_id(&repo, &hash).as_str()) {
                Some(c) => {
                    vf.entry(c.id.clone())
                        .or_insert_with(|| ((*c).clone(), cve.cve_id.clone()));
                }
                None => missing += 1,
            }
        }
    }
    let vf_commits: Vec<Commit> = vf.values().map(|(c, _)| c.clone()).collect();
    let pool: Vec<Commit> = catalog
        .iter()
        .filter(|c| !referenced.contains(&c.id))
        .cloned()
        .collect();
    let sample = sample_nvf(&vf_commits, &pool, spec)?;

    let mut entries: Vec<DatasetEntry> = vf
        .into_values()
        .map(|(commit, cve)| DatasetEntry {
            commit,
            artifacts: Vec::new(),
            label: Label::VF,
            cve_id: Some(cve),
        })
        .chain(sample.commits.into_iter().map(|commit| DatasetEntry {
            commit,
            artifacts: Vec::new(),
            label: Label::NVF,
            cve_id: None,
        }))
        .collect();
    for e in &mut entries {
        e.commit.token_length = tokenizer.count(&e.commit.patch_text());
    }
    entries.sort_by(|a, b| a.commit.id.cmp(&b.commit.id));

    let (entries, removed, threshold) = if entries.is_empty() {
        (entries, 0, 0)
    } else {
        let f = filter_by_token_length(entries, percentile)?;
        let removed = f.removed.len();
        (f.kept, removed, f.threshold)
    };
    let vf_count = entries.iter().filter(|e| e.label == Label::VF).count();
    let metadata = DatasetMetadata {
        created_at: chrono::Utc::now().to_rfc3339(),
        seed: spec.seed,
        ratio: spec.nvf_per_vf,
        sampling: "per-repo".into(),
        tokenizer: tokenizer.name().to_owned(),
        percentile,
        threshold,
        cutoff,
        counts: DatasetCounts {
            vf: vf_count,
            nvf: entries.len() - vf_count,
            removed_by_length: removed,
            fix_commits_missing_from_catalog: missing,
        },
        shortfalls: sample.shortfalls,
    };
    Ok(BuiltDataset { entries, metadata })
}

pub fn metadata_path(dataset: &Path) -> PathBuf {
    let mut name = dataset
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".meta.json");
    dataset.with_file_name(name)
}

pub fn write_dataset(path: &Path, built: &BuiltDataset) -> Result<(), DatasetError> {
    jsonl::write_atomic(path, &built.entries)?;
    let meta = metadata_path(path);
    let text = serde_json::to_string_pretty(&built.metadata).expect("metadata serializes");
    std::fs::write(&meta, text + "\n").map_err(|source| DatasetError::Io { path: meta, source })
}

/// Loads and validates a dataset. Every record must satisfy the entry
/// invariants and commit ids must be unique.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetEntry>, DatasetError> {
    let values: Vec<serde_json::Value> = jsonl::read(path)?;
    let mut entries = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let entry = validate_entry_value(v).map_err(|vs| DatasetError::Invalid {
            line: i + 1,
            violations: join_violations(&vs),
        })?;
        entries.push(entry);
    }
    if let Err(vs) = validate_dataset(&entries) {
        let (i, _) = vs[0];
        return Err(DatasetError::Invalid {
            line: i + 1,
            violations: join_violations(&vs.into_iter().map(|(_, v)| v).collect::<Vec<_>>()),
        });
    }
    Ok(entries)
}

fn join_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn load_cve_snapshot(path: &Path) -> Result<Vec<CveEntry>, DatasetError> {
    let entries: Vec<CveEntry> = jsonl::read(path)?;
    if let Some(bad) = entries.iter().find(|e| !is_cve_id(&e.cve_id)) {
        return Err(DatasetError::BadCveId(bad.cve_id.clone()));
    }
    Ok(entries)
}

pub fn load_catalog(path: &Path) -> Result<Vec<Commit>, DatasetError> {
    Ok(jsonl::read(path)?)
}

/// Converts one page of the NVD CVE API 2.0 response into snapshot records.
/// Entries without an English description keep the first one available.
pub fn cve_entries_from_nvd(page: &serde_json::Value) -> Result<Vec<CveEntry>, DatasetError> {
    let vulns = page
        .get("vulnerabilities")
        .and_then(|v| v.as_array())
        .ok_or_else(|| DatasetError::Nvd("missing `vulnerabilities` array".into()))?;
    let mut out = Vec::with_capacity(vulns.len());
    for v in vulns {
        let cve = v.get("cve").unwrap_or(v);
        let id = cve
            .get("id")
            .and_then(|s| s.as_str())
            .ok_or_else(|| DatasetError::Nvd("CVE without id".into()))?;
        if !is_cve_id(id) {
            return Err(DatasetError::BadCveId(id.to_owned()));
        }
        let published = cve
            .get("published")
            .and_then(|s| s.as_str())
            .and_then(|s| NaiveDate::parse_from_str(s.get(..10)?, "%Y-%m-%d").ok())
            .ok_or_else(|| DatasetError::Nvd(format!("{id}: missing published date")))?;
        let descriptions = cve
            .get("descriptions")
            .and_then(|d| d.as_array())
            .cloned()
            .unwrap_or_default();
        let description = descriptions
            .iter()
            .find(|d| d.get("lang").and_then(|l| l.as_str()) == Some("en"))
            .or(descriptions.first())
            .and_then(|d| d.get("value"))
            .and_then(|s| s.as_str())
            .unwrap_or_default()
            .to_owned();
        let references: BTreeSet<String> = cve
            .get("references")
            .and_then(|r| r.as_array())
            .into_iter()
            .flatten()
            .filter_map(|r| r.get("url").and_then(|u| u.as_str()).map(str::to_owned))
            .collect();
        out.push(CveEntry {
            cve_id: id.to_owned(),
            description,
            references: references.into_iter().collect(),
            published_at: published,
        });
    }
    Ok(out)
}

/// Pages through the NVD CVE API for CVEs published in `[from, to)`, in
/// windows of at most 120 days as the API requires.
pub fn fetch_nvd(
    transport: &dyn HttpTransport,
    base_url: &str,
    api_key: Option<&str>,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<Vec<CveEntry>, DatasetError> {
    const PAGE: u64 = 2000;
    let mut out = Vec::new();
    let mut window_start = from;
    while window_start < to {
        let window_end = (window_start + chrono::Duration::days(120)).min(to);
        let mut start_index = 0u64;
        loop {
            let url = format!(
                "{base_url}?pubStartDate={}T00:00:00.000&pubEndDate={}T00:00:00.000&resultsPerPage={PAGE}&startIndex={start_index}",
                window_start, window_end
            );
            let mut req = HttpRequest::get(&url);
            if let Some(k) = api_key {
                req = req.header("apiKey", k);
            }
            let resp = transport
                .send(&req)
                .map_err(|e| DatasetError::Nvd(e.to_string()))?;
            if !resp.is_success() {
                return Err(DatasetError::Nvd(format!("{url}: status {}", resp.status)));
            }
            let page: serde_json::Value = serde_json::from_str(&resp.body)
                .map_err(|e| DatasetError::Nvd(format!("{url}: {e}")))?;
            let entries = cve_entries_from_nvd(&page)?;
            let total = page
                .get("totalResults")
                .and_then(|t| t.as_u64())
                .unwrap_or(0);
            let got = entries.len() as u64;
            out.extend(entries.into_iter().filter(|e| e.published_at < to));
            start_index += got;
            if got == 0 || start_index >= total {
                break;
            }
        }
        window_start = window_end;
    }
    out.sort_by(|a, b| a.cve_id.cmp(&b.cve_id));
    out.dedup_by(|a, b| a.cve_id == b.cve_id);
    Ok(out)
}
