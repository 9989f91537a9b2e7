//! Expert review of detection results: questionnaire verdicts, promotion of
//! confirmed fixes into the historical store, and the HTTP API behind the
//! triage console.
//!
//! Detection results are never modified here. Verdicts go to their own
//! append-only file; promotion goes to the vector store.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::CveEntry;
use crate::eval::{score, MetricReport};
use crate::hv::{embed, Embedder, HvError, HvStore};
use crate::jsonl::{self, JsonlError};
use crate::model::{
    ArtifactSummary, Component, DatasetEntry, DetectionResult, FailureTag, HVRecord, Label,
    ThreeAspectSummary, Verdict,
};

pub const REVIEWER_HEADER: &str = "x-reviewer";
pub const DEFAULT_PAGE_SIZE: usize = 20;

/// Yes/no answers to the five review questions, in order: intent of the
/// change, characterisation of the vulnerability, root cause, screening
/// efficiency, overall satisfaction with the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Answers {
    pub explains_intent: bool,
    pub characterizes_vulnerability: bool,
    pub explains_root_cause: bool,
    pub improves_efficiency: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FinalVerdict {
    ConfirmVF,
    RejectVF,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub result_id: String,
    pub reviewer: String,
    pub answers: Answers,
    #[serde(rename = "final")]
    pub final_verdict: FinalVerdict,
    #[serde(default)]
    pub comment: String,
    pub reviewed_at: String,
    /// CVE the reviewer attributes the fix to, used on promotion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cve_id: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("no result `{0}`")]
    UnknownResult(String),
    #[error("`{0}` has no confirming verdict")]
    MissingVerdict(String),
    #[error("`{0}` has no three-aspect summary to embed")]
    MissingSummary(String),
    #[error("`{0}` has no CVE id from the dataset or a reviewer")]
    MissingCveId(String),
    #[error("no historical store is attached")]
    NoStore,
    #[error(transparent)]
    Store(#[from] HvError),
}

/// Append-only verdict file with last-write-wins per (result, reviewer).
pub struct VerdictStore {
    path: PathBuf,
    active: BTreeMap<(String, String), VerdictRecord>,
}

impl VerdictStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ReviewError> {
        let path = path.into();
        let mut active = BTreeMap::new();
        if path.exists() {
            for r in jsonl::read::<VerdictRecord>(&path)? {
                active.insert((r.result_id.clone(), r.reviewer.clone()), r);
            }
        }
        Ok(VerdictStore { path, active })
    }

    /// Durable on return.
    pub fn record(&mut self, r: VerdictRecord) -> Result<(), ReviewError> {
        jsonl::append_durable(&self.path, &r)?;
        self.active
            .insert((r.result_id.clone(), r.reviewer.clone()), r);
        Ok(())
    }

    pub fn for_result(&self, result_id: &str) -> Vec<&VerdictRecord> {
        self.active
            .range((result_id.to_owned(), String::new())..)
            .take_while(|((id, _), _)| id == result_id)
            .map(|(_, r)| r)
            .collect()
    }

    pub fn all(&self) -> impl Iterator<Item = &VerdictRecord> {
        self.active.values()
    }
}

/// Optional overrides supplied with a promotion request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromoteRequest {
    #[serde(default)]
    pub cve_id: Option<String>,
    #[serde(default)]
    pub cve_description: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)] // short-lived, returned once per request
pub enum PromoteOutcome {
    Appended(HVRecord),
    AlreadyPromoted,
}

/// Everything promotion needs besides the store itself.
pub struct PromotionInput<'a> {
    pub result: &'a DetectionResult,
    pub entry: &'a DatasetEntry,
    pub verdicts: &'a [&'a VerdictRecord],
    pub cves: &'a HashMap<String, CveEntry>,
    pub request: &'a PromoteRequest,
}

/// Builds an [`HVRecord`] from a confirmed result and appends it. A result
/// that was promoted before is left alone.
///
/// The CVE id comes from the request, then the reviewers, then the dataset.
/// Its description and date come from the request or the CVE snapshot,
/// falling back to the generated analysis and the commit date.
pub fn promote_to_hv(
    input: PromotionInput<'_>,
    embedder: &dyn Embedder,
    store: &mut HvStore,
) -> Result<PromoteOutcome, ReviewError> {
    let id = &input.result.commit_id;
    if store
        .metadata()
        .iter()
        .any(|r| r.promoted_from.as_deref() == Some(id))
    {
        return Ok(PromoteOutcome::AlreadyPromoted);
    }
    if !input
        .verdicts
        .iter()
        .any(|v| v.final_verdict == FinalVerdict::ConfirmVF)
    {
        return Err(ReviewError::MissingVerdict(id.clone()));
    }
    let summary: &ThreeAspectSummary = input
        .result
        .cci_summary
        .as_ref()
        .filter(|s| s.is_complete())
        .ok_or_else(|| ReviewError::MissingSummary(id.clone()))?;
    let cve_id = input
        .request
        .cve_id
        .clone()
        .or_else(|| input.verdicts.iter().rev().find_map(|v| v.cve_id.clone()))
        .or_else(|| input.entry.cve_id.clone())
        .ok_or_else(|| ReviewError::MissingCveId(id.clone()))?;
    let known = input.cves.get(&cve_id);
    let description = input
        .request
        .cve_description
        .clone()
        .or_else(|| known.map(|c| c.description.clone()))
        .unwrap_or_else(|| input.result.analysis.clone());
    let disclosed_at: NaiveDate = known
        .map(|c| c.published_at)
        .unwrap_or(input.entry.commit.committed_at);

    let record = HVRecord {
        cve_id,
        cve_description: description,
        fix_commit: input.entry.commit.clone(),
        three_aspects: summary.clone(),
        embedding: embed(embedder, summary)?,
        language: input.entry.commit.language,
        disclosed_at,
        promoted_from: Some(id.clone()),
    };
    if store.append(record.clone())? {
        Ok(PromoteOutcome::Appended(record))
    } else {
        Ok(PromoteOutcome::AlreadyPromoted)
    }
}

/// Vector store, where it lives, and how to embed into it.
pub struct HvHandle {
    pub store: RwLock<HvStore>,
    pub path: PathBuf,
    pub embedder: Arc<dyn Embedder>,
}

pub struct ReviewState {
    results: Vec<DetectionResult>,
    index: HashMap<String, usize>,
    dataset: HashMap<String, DatasetEntry>,
    cves: HashMap<String, CveEntry>,
    verdicts: Mutex<VerdictStore>,
    hv: Option<HvHandle>,
    /// Serialises promotions so the store is loaded, grown and saved as one
    /// step.
    promote_lock: Mutex<()>,
}

impl ReviewState {
    pub fn new(
        results: Vec<DetectionResult>,
        dataset: Vec<DatasetEntry>,
        verdicts: VerdictStore,
    ) -> Self {
        let index = results
            .iter()
            .enumerate()
            .map(|(i, r)| (r.commit_id.clone(), i))
            .collect();
        ReviewState {
            results,
            index,
            dataset: dataset
                .into_iter()
                .map(|e| (e.commit.id.clone(), e))
                .collect(),
            cves: HashMap::new(),
            verdicts: Mutex::new(verdicts),
            hv: None,
            promote_lock: Mutex::new(()),
        }
    }

    pub fn with_hv(mut self, hv: HvHandle) -> Self {
        self.hv = Some(hv);
        self
    }

    pub fn with_cves(mut self, cves: Vec<CveEntry>) -> Self {
        self.cves = cves.into_iter().map(|c| (c.cve_id.clone(), c)).collect();
        self
    }

    fn promoted_ids(&self) -> HashSet<String> {
        self.hv
            .as_ref()
            .map(|h| {
                h.store
                    .read()
                    .unwrap()
                    .metadata()
                    .iter()
                    .filter_map(|r| r.promoted_from.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn promote(
        &self,
        id: &str,
        req: &PromoteRequest,
    ) -> Result<(PromoteOutcome, usize), ReviewError> {
        let _guard = self.promote_lock.lock().unwrap();
        let hv = self.hv.as_ref().ok_or(ReviewError::NoStore)?;
        let result = self
            .index
            .get(id)
            .map(|i| &self.results[*i])
            .ok_or_else(|| ReviewError::UnknownResult(id.to_owned()))?;
        let entry = self
            .dataset
            .get(id)
            .ok_or_else(|| ReviewError::UnknownResult(id.to_owned()))?;
        let verdicts = self.verdicts.lock().unwrap();
        let vs = verdicts.for_result(id);
        // grow a copy so readers never see a store that failed to persist
        let mut next = hv.store.read().unwrap().clone();
        let outcome = promote_to_hv(
            PromotionInput {
                result,
                entry,
                verdicts: &vs,
                cves: &self.cves,
                request: req,
            },
            hv.embedder.as_ref(),
            &mut next,
        )?;
        drop(verdicts);
        if matches!(outcome, PromoteOutcome::Appended(_)) {
            next.save(&hv.path)?;
        }
        let count = next.len();
        *hv.store.write().unwrap() = next;
        Ok((outcome, count))
    }
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn api_error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ApiError { error: msg.into() })).into_response()
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::UnknownResult(_) => StatusCode::NOT_FOUND,
            ReviewError::MissingVerdict(_) => StatusCode::CONFLICT,
            ReviewError::MissingSummary(_) | ReviewError::MissingCveId(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ReviewError::NoStore => StatusCode::SERVICE_UNAVAILABLE,
            ReviewError::Store(HvError::DimensionMismatch { .. } | HvError::NonFinite) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        api_error(status, self.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Unreviewed,
    Reviewed,
    Promoted,
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    #[serde(default)]
    pub page: Option<usize>,
    #[serde(default)]
    pub page_size: Option<usize>,
    /// `all`, `unreviewed`, `reviewed`, `promoted`, `yes`, `no`, `failed`,
    /// or, with labels revealed, `fp` and `fn`.
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default)]
    pub reveal: Option<bool>,
}

#[derive(Debug, Deserialize)]
pub struct RevealQuery {
    #[serde(default)]
    pub reveal: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemSummary {
    pub id: String,
    pub repo: String,
    pub title: String,
    pub verdict: Verdict,
    pub inputs_used: Vec<Component>,
    pub failure_tag: Option<FailureTag>,
    pub status: ItemStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemPage {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<ItemSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HvMatchView {
    pub cve_id: String,
    pub description: Option<String>,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemDetail {
    pub id: String,
    pub repo: String,
    pub language: String,
    pub message: String,
    pub diff: String,
    pub verdict: Verdict,
    pub analysis: String,
    pub inputs_used: Vec<Component>,
    pub failure_tag: Option<FailureTag>,
    pub cci_summary: Option<ThreeAspectSummary>,
    pub da_summaries: Vec<ArtifactSummary>,
    pub hv_match: Option<HvMatchView>,
    pub status: ItemStatus,
    pub verdicts: Vec<VerdictRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cve_id: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictBody {
    pub answers: Answers,
    #[serde(rename = "final")]
    pub final_verdict: FinalVerdict,
    #[serde(default)]
    pub comment: String,
    #[serde(default)]
    pub cve_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PromoteResponse {
    pub promoted: bool,
    pub store_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReviewSummary {
    pub total: usize,
    pub reviewed: usize,
    pub promoted: usize,
    pub verdicts: BTreeMap<String, usize>,
    pub finals: BTreeMap<String, usize>,
    /// Only present when labels are revealed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

type Shared = Arc<ReviewState>;

pub fn router(state: Arc<ReviewState>) -> Router {
    Router::new()
        .route("/api/items", get(list_items))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/verdict", post(post_verdict))
        .route("/api/items/{id}/promote", post(post_promote))
        .route("/api/summary", get(get_summary))
        .with_state(state)
}

/// Serves the review API until the process is stopped.
pub async fn serve(state: Arc<ReviewState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn status_of(s: &ReviewState, id: &str, promoted: &HashSet<String>) -> ItemStatus {
    if promoted.contains(id) {
        ItemStatus::Promoted
    } else if s.verdicts.lock().unwrap().for_result(id).is_empty() {
        ItemStatus::Unreviewed
    } else {
        ItemStatus::Reviewed
    }
}

async fn list_items(State(s): State<Shared>, Query(q): Query<ListQuery>) -> Response {
    let reveal = q.reveal.unwrap_or(false);
    let filter = q.filter.as_deref().unwrap_or("all");
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, 500);
    let page = q.page.unwrap_or(1).max(1);
    if matches!(filter, "fp" | "fn") && !reveal {
        return api_error(StatusCode::BAD_REQUEST, "fp/fn filters need reveal=true");
    }
    let promoted = s.promoted_ids();
    let mut items = Vec::new();
    for r in &s.results {
        let entry = s.dataset.get(&r.commit_id);
        let label = entry.map(|e| e.label);
        let status = status_of(&s, &r.commit_id, &promoted);
        let keep = match filter {
            "all" => true,
            "unreviewed" => status == ItemStatus::Unreviewed,
            "reviewed" => status != ItemStatus::Unreviewed,
            "promoted" => status == ItemStatus::Promoted,
            "yes" => r.verdict == Verdict::Yes,
            "no" => r.verdict == Verdict::No,
            "failed" => r.failure_tag.is_some(),
            "fp" => r.verdict == Verdict::Yes && label == Some(Label::NVF),
            "fn" => r.verdict == Verdict::No && label == Some(Label::VF),
            other => {
                return api_error(StatusCode::BAD_REQUEST, format!("unknown filter `{other}`"))
            }
        };
        if !keep {
            continue;
        }
        items.push(ItemSummary {
            id: r.commit_id.clone(),
            repo: entry.map(|e| e.commit.repo.clone()).unwrap_or_default(),
            title: entry
                .and_then(|e| e.commit.message.lines().next())
                .unwrap_or_default()
                .to_owned(),
            verdict: r.verdict,
            inputs_used: r.inputs_used.iter().copied().collect(),
            failure_tag: r.failure_tag,
            status,
            label: label.filter(|_| reveal),
        });
    }
    let total = items.len();
    let items = items
        .into_iter()
        .skip((page - 1) * page_size)
        .take(page_size)
        .collect();
    Json(ItemPage {
        page,
        page_size,
        total,
        items,
    })
    .into_response()
}

async fn get_item(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RevealQuery>,
) -> Response {
    let Some(r) = s.index.get(&id).map(|i| &s.results[*i]) else {
        return ReviewError::UnknownResult(id).into_response();
    };
    let Some(entry) = s.dataset.get(&id) else {
        return ReviewError::UnknownResult(id).into_response();
    };
    let reveal = q.reveal.unwrap_or(false);
    let hv_match = r.hv_match.as_ref().map(|m| {
        let description = s.hv.as_ref().and_then(|h| {
            h.store
                .read()
                .unwrap()
                .metadata()
                .iter()
                .find(|rec| rec.cve_id == m.cve_id)
                .map(|rec| rec.cve_description.clone())
        });
        HvMatchView {
            cve_id: m.cve_id.clone(),
            description,
            distance: m.distance,
        }
    });
    let promoted = s.promoted_ids();
    let detail = ItemDetail {
        id: id.clone(),
        repo: entry.commit.repo.clone(),
        language: entry.commit.language.to_string(),
        message: entry.commit.message.clone(),
        diff: entry.commit.diff.clone(),
        verdict: r.verdict,
        analysis: r.analysis.clone(),
        inputs_used: r.inputs_used.iter().copied().collect(),
        failure_tag: r.failure_tag,
        cci_summary: r.cci_summary.clone(),
        da_summaries: r.da_summaries.clone(),
        hv_match,
        status: status_of(&s, &id, &promoted),
        verdicts: s
            .verdicts
            .lock()
            .unwrap()
            .for_result(&id)
            .into_iter()
            .cloned()
            .collect(),
        label: reveal.then_some(entry.label),
        cve_id: entry.cve_id.clone().filter(|_| reveal),
    };
    Json(detail).into_response()
}

async fn post_verdict(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Result<Json<VerdictBody>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let Some(reviewer) = headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
    else {
        return api_error(StatusCode::BAD_REQUEST, "missing X-Reviewer header");
    };
    if !s.index.contains_key(&id) {
        return ReviewError::UnknownResult(id).into_response();
    }
    let record = VerdictRecord {
        result_id: id,
        reviewer: reviewer.to_owned(),
        answers: body.answers,
        final_verdict: body.final_verdict,
        comment: body.comment,
        reviewed_at: chrono::Utc::now().to_rfc3339(),
        cve_id: body.cve_id,
    };
    let state = s.clone();
    let rec = record.clone();
    let written =
        tokio::task::spawn_blocking(move || state.verdicts.lock().unwrap().record(rec)).await;
    match written {
        Ok(Ok(())) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn post_promote(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<PromoteRequest>>,
) -> Response {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    // embedding may call a remote service through a blocking client
    let done = tokio::task::spawn_blocking(move || s.promote(&id, &req)).await;
    match done {
        Ok(Ok((outcome, store_count))) => Json(PromoteResponse {
            promoted: matches!(outcome, PromoteOutcome::Appended(_)),
            store_count,
        })
        .into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_summary(State(s): State<Shared>, Query(q): Query<RevealQuery>) -> Response {
    let promoted = s.promoted_ids();
    let mut verdicts = BTreeMap::new();
    for r in &s.results {
        *verdicts.entry(format!("{:?}", r.verdict)).or_default() += 1;
    }
    let (reviewed, finals) = {
        let store = s.verdicts.lock().unwrap();
        let mut finals = BTreeMap::new();
        let mut ids = HashSet::new();
        for v in store.all() {
            ids.insert(v.result_id.clone());
            *finals.entry(format!("{:?}", v.final_verdict)).or_default() += 1;
        }
        (ids.len(), finals)
    };
    let metrics = if q.reveal.unwrap_or(false) {
        let labels = s
            .dataset
            .iter()
            .map(|(id, e)| (id.clone(), e.label))
            .collect();
        match score(&s.results, &labels) {
            Ok(m) => Some(m),
            Err(e) => return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    } else {
        None
    };
    Json(ReviewSummary {
        total: s.results.len(),
        reviewed,
        promoted: s
            .results
            .iter()
            .filter(|r| promoted.contains(&r.commit_id))
            .count(),
        verdicts,
        finals,
        metrics,
    })
    .into_response()
}

/// Loads results, dataset and verdicts from disk.
pub fn load_state(
    results: &Path,
    dataset: &Path,
    verdicts: &Path,
) -> Result<ReviewState, Box<dyn std::error::Error + Send + Sync>> {
    let results: Vec<DetectionResult> = jsonl::read(results)?;
    let dataset = crate::dataset::load_dataset(dataset)?;
    Ok(ReviewState::new(
        results,
        dataset,
        VerdictStore::open(verdicts)?,
    ))
}
