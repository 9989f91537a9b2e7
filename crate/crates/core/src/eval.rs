//! Scoring: confusion matrices, precision / recall / F1 / MCC, ablation
//! comparison tables and failure tagging of wrong predictions.
//!
//! Accuracy is not computed: the label distribution is heavily skewed
//! towards non-fixes, where accuracy rewards predicting "no" everywhere.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl::{self, JsonlError};
use crate::model::{
    AblationMode, ConfusionMatrix, DatasetEntry, DetectionResult, FailureTag, Label, TagCategory,
    Verdict,
};

/// How metrics with a zero denominator are reported.
pub const ZERO_DENOMINATOR_CONVENTION: &str = "metrics with a zero denominator are reported as 0";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no label for result `{0}`")]
    MissingLabel(String),
    #[error("more than one result for `{0}`")]
    DuplicateResult(String),
    #[error("{missing} labeled entries have no result (first: `{first}`)")]
    IncompleteResults { missing: usize, first: String },
    #[error("`{0}` was scored on a different label set than the first report")]
    LabelSetMismatch(String),
    #[error("{tag:?} cannot be applied to a {outcome:?}")]
    CategoryMismatch { tag: FailureTag, outcome: Outcome },
    #[error("`{0}` is a correct prediction; only false positives and negatives are tagged")]
    NotAFailure(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn labels_of(entries: &[DatasetEntry]) -> HashMap<String, Label> {
    entries
        .iter()
        .map(|e| (e.commit.id.clone(), e.label))
        .collect()
}

/// Unparseable results carry verdict `No` and are counted as such.
pub fn confusion(
    results: &[DetectionResult],
    labels: &HashMap<String, Label>,
) -> Result<ConfusionMatrix, EvalError> {
    let mut seen = HashSet::new();
    let mut cm = ConfusionMatrix::default();
    for r in results {
        if !seen.insert(r.commit_id.as_str()) {
            return Err(EvalError::DuplicateResult(r.commit_id.clone()));
        }
        let label = labels
            .get(&r.commit_id)
            .ok_or_else(|| EvalError::MissingLabel(r.commit_id.clone()))?;
        match (r.verdict, label) {
            (Verdict::Yes, Label::VF) => cm.tp += 1,
            (Verdict::Yes, Label::NVF) => cm.fp += 1,
            (Verdict::No, Label::VF) => cm.fn_ += 1,
            (Verdict::No, Label::NVF) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    // square roots taken pairwise so large counts cannot overflow
    let den = ((tp + fp) * (tp + fn_)).sqrt() * ((tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den).clamp(-1.0, 1.0);
    Metrics {
        precision,
        recall,
        f1,
        mcc,
    }
}

/// Metric names that fell back to the zero-denominator convention.
pub fn degenerate_metrics(cm: &ConfusionMatrix) -> Vec<&'static str> {
    let mut out = Vec::new();
    if cm.tp + cm.fp == 0 {
        out.push("precision");
    }
    if cm.tp + cm.fn_ == 0 {
        out.push("recall");
    }
    if cm.tp == 0 {
        out.push("f1");
    }
    if cm.tp + cm.fp == 0 || cm.tp + cm.fn_ == 0 || cm.tn + cm.fp == 0 || cm.tn + cm.fn_ == 0 {
        out.push("mcc");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub confusion: ConfusionMatrix,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub unparseable_count: u64,
    pub backend_failure_count: u64,
    /// Fingerprint of the `(commit id, label)` pairs scored.
    pub label_set_digest: String,
    pub convention: String,
    pub degenerate: Vec<String>,
}

impl MetricReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let m = metrics(&cm);
        MetricReport {
            confusion: cm,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            mcc: m.mcc,
            unparseable_count: 0,
            backend_failure_count: 0,
            label_set_digest: String::new(),
            convention: ZERO_DENOMINATOR_CONVENTION.into(),
            degenerate: degenerate_metrics(&cm)
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "TP {}  FP {}  FN {}  TN {}", c.tp, c.fp, c.fn_, c.tn);
        let _ = writeln!(s, "Precision {:.4}", self.precision);
        let _ = writeln!(s, "Recall    {:.4}", self.recall);
        let _ = writeln!(s, "F1        {:.4}", self.f1);
        let _ = writeln!(s, "MCC       {:.4}", self.mcc);
        let _ = writeln!(
            s,
            "Unparseable {} (scored as No), backend failures {}",
            self.unparseable_count, self.backend_failure_count
        );
        if !self.degenerate.is_empty() {
            let _ = writeln!(
                s,
                "Note: {} ({})",
                self.convention,
                self.degenerate.join(", ")
            );
        }
        s
    }
}

pub fn label_set_digest(results: &[DetectionResult], labels: &HashMap<String, Label>) -> String {
    let mut pairs: Vec<(&str, Label)> = results
        .iter()
        .filter_map(|r| labels.get(&r.commit_id).map(|l| (r.commit_id.as_str(), *l)))
        .collect();
    pairs.sort();
    let mut h = Sha256::new();
    for (id, label) in pairs {
        h.update(id.as_bytes());
        h.update(if label == Label::VF {
            b"\tVF\n"
        } else {
            b"\tNV\n"
        });
    }
    hex::encode(h.finalize())
}

/// Scores `results` against labels.
pub fn score(
    results: &[DetectionResult],
    labels: &HashMap<String, Label>,
) -> Result<MetricReport, EvalError> {
    let mut report = MetricReport::from_confusion(confusion(results, labels)?);
    let count = |t| results.iter().filter(|r| r.failure_tag == Some(t)).count() as u64;
    report.unparseable_count = count(FailureTag::Unparseable);
    report.backend_failure_count = count(FailureTag::BackendFailure);
    report.label_set_digest = label_set_digest(results, labels);
    Ok(report)
}

/// Like [`score`], but also requires a result for every dataset entry.
pub fn evaluate(
    results: &[DetectionResult],
    dataset: &[DatasetEntry],
) -> Result<MetricReport, EvalError> {
    let labels = labels_of(dataset);
    let report = score(results, &labels)?;
    let have: HashSet<&str> = results.iter().map(|r| r.commit_id.as_str()).collect();
    let missing: Vec<&str> = dataset
        .iter()
        .map(|e| e.commit.id.as_str())
        .filter(|id| !have.contains(id))
        .collect();
    if let Some(first) = missing.first() {
        return Err(EvalError::IncompleteResults {
            missing: missing.len(),
            first: first.to_string(),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub metrics: Metrics,
    /// This row minus Full; absent when Full was not run.
    pub delta: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Puts several runs side by side. All reports must have been scored on the
/// same labels.
pub fn compare_runs(reports: &[(AblationMode, MetricReport)]) -> Result<AblationTable, EvalError> {
    if let Some((_, first)) = reports.first() {
        if let Some((mode, _)) = reports
            .iter()
            .find(|(_, r)| r.label_set_digest != first.label_set_digest)
        {
            return Err(EvalError::LabelSetMismatch(mode.name()));
        }
    }
    let m = |r: &MetricReport| Metrics {
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
        mcc: r.mcc,
    };
    let full = reports
        .iter()
        .find(|(mode, _)| mode.is_full())
        .map(|(_, r)| m(r));
    let rows = reports
        .iter()
        .map(|(mode, r)| {
            let x = m(r);
            AblationRow {
                mode: mode.name(),
                metrics: x,
                delta: full.map(|f| Metrics {
                    precision: x.precision - f.precision,
                    recall: x.recall - f.recall,
                    f1: x.f1 - f.f1,
                    mcc: x.mcc - f.mcc,
                }),
            }
        })
        .collect();
    Ok(AblationTable { rows })
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let fmt_delta = |d: Option<f64>| match d {
            Some(d) if d != 0.0 => format!(" ({d:+.4})"),
            _ => String::new(),
        };
        let mut s = format!(
            "{:<10} {:>18} {:>18} {:>18} {:>18}\n",
            "Setting", "Precision", "Recall", "F1", "MCC"
        );
        for r in &self.rows {
            let d = r.delta;
            let cell = |v: f64, dv: Option<f64>| format!("{v:.4}{}", fmt_delta(dv));
            let _ = writeln!(
                s,
                "{:<10} {:>18} {:>18} {:>18} {:>18}",
                r.mode,
                cell(r.metrics.precision, d.map(|d| d.precision)),
                cell(r.metrics.recall, d.map(|d| d.recall)),
                cell(r.metrics.f1, d.map(|d| d.f1)),
                cell(r.metrics.mcc, d.map(|d| d.mcc)),
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "mode",
            "precision",
            "recall",
            "f1",
            "mcc",
            "d_precision",
            "d_recall",
            "d_f1",
            "d_mcc",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            let m = r.metrics;
            let mut rec = vec![
                r.mode.clone(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.mcc.to_string(),
            ];
            match r.delta {
                Some(d) => rec.extend([d.precision, d.recall, d.f1, d.mcc].map(|x| x.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    FalsePositive,
    FalseNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagRecord {
    pub result_id: String,
    pub outcome: Outcome,
    pub tag: FailureTag,
    pub note: String,
    pub tagged_at: String,
}

/// Checks that `tag` fits the kind of error `result` made.
pub fn tag_failure(
    result: &DetectionResult,
    label: Label,
    tag: FailureTag,
    note: impl Into<String>,
) -> Result<TagRecord, EvalError> {
    let outcome = match (result.verdict, label) {
        (Verdict::Yes, Label::NVF) => Outcome::FalsePositive,
        (Verdict::No, Label::VF) => Outcome::FalseNegative,
        _ => return Err(EvalError::NotAFailure(result.commit_id.clone())),
    };
    let fits = match tag.category() {
        TagCategory::Either => true,
        TagCategory::FalsePositive => outcome == Outcome::FalsePositive,
        TagCategory::FalseNegative => outcome == Outcome::FalseNegative,
        TagCategory::Pipeline => false,
    };
    if !fits {
        return Err(EvalError::CategoryMismatch { tag, outcome });
    }
    Ok(TagRecord {
        result_id: result.commit_id.clone(),
        outcome,
        tag,
        note: note.into(),
        tagged_at: chrono::Utc::now().to_rfc3339(),
    })
}

/// Append-only tag file; the latest record per result wins.
pub struct TagLog {
    path: PathBuf,
}

impl TagLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TagLog { path: path.into() }
    }

    pub fn append(&self, record: &TagRecord) -> Result<(), EvalError> {
        Ok(jsonl::append_durable(&self.path, record)?)
    }

    pub fn current(&self) -> Result<Vec<TagRecord>, EvalError> {
        if !Path::new(&self.path).exists() {
            return Ok(Vec::new());
        }
        let all: Vec<TagRecord> = jsonl::read(&self.path)?;
        let mut latest: BTreeMap<String, TagRecord> = BTreeMap::new();
        for r in all {
            latest.insert(r.result_id.clone(), r);
        }
        Ok(latest.into_values().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagCount {
    pub outcome: Outcome,
    pub tag: FailureTag,
    pub count: usize,
    /// Share of all tagged cases with the same outcome.
    pub share: f64,
}

pub fn aggregate_tags(records: &[TagRecord]) -> Vec<TagCount> {
    let mut counts: BTreeMap<(Outcome, FailureTag), usize> = BTreeMap::new();
    let mut per_outcome: BTreeMap<Outcome, usize> = BTreeMap::new();
    for r in records {
        *counts.entry((r.outcome, r.tag)).or_default() += 1;
        *per_outcome.entry(r.outcome).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((outcome, tag), count)| TagCount {
            outcome,
            tag,
            count,
            share: count as f64 / per_outcome[&outcome] as f64,
        })
        .collect()
}

pub fn tag_table(counts: &[TagCount]) -> String {
    let mut s = String::new();
    for (outcome, title) in [
        (Outcome::FalsePositive, "False positives"),
        (Outcome::FalseNegative, "False negatives"),
    ] {
        let _ = writeln!(s, "{title}");
        for c in counts.iter().filter(|c| c.outcome == outcome) {
            let _ = writeln!(
                s,
                "  {:<75} {:>5} {:>6.1}%",
                c.tag.description(),
                c.count,
                c.share * 100.0
            );
        }
    }
    s
}
