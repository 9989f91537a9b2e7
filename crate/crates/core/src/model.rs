//! Shared domain types: commits, development artifacts, three-aspect
//! summaries, historical fixes, dataset entries and detection results.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Programming languages admitted into datasets and the historical store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    Java,
    C,
    #[serde(rename = "C++")]
    Cpp,
    Rust,
    JavaScript,
    Python,
    Go,
}

impl Language {
    pub const ALL: [Language; 7] = [
        Language::Java,
        Language::C,
        Language::Cpp,
        Language::Rust,
        Language::JavaScript,
        Language::Python,
        Language::Go,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Java => "Java",
            Language::C => "C",
            Language::Cpp => "C++",
            Language::Rust => "Rust",
            Language::JavaScript => "JavaScript",
            Language::Python => "Python",
            Language::Go => "Go",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("language not in enum: {s}"))
    }
}

/// A code change: the unit of detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Commit {
    /// `<repo>@<40-hex-hash>`
    pub id: String,
    pub message: String,
    pub diff: String,
    /// `owner/name`
    pub repo: String,
    pub language: Language,
    pub committed_at: NaiveDate,
    #[serde(default)]
    pub token_length: u64,
}

impl Commit {
    pub fn new(
        repo: impl Into<String>,
        hash: &str,
        message: impl Into<String>,
        diff: impl Into<String>,
        language: Language,
        committed_at: NaiveDate,
    ) -> Self {
        let repo = repo.into();
        Commit {
            id: commit_id(&repo, hash),
            message: message.into(),
            diff: diff.into(),
            repo,
            language,
            committed_at,
            token_length: 0,
        }
    }

    /// The hash part of the id, if the id is well formed.
    pub fn hash(&self) -> Option<&str> {
        self.id
            .rsplit_once('@')
            .map(|(_, h)| h)
            .filter(|h| is_full_hash(h))
    }

    /// Message, a newline, then the diff. This is the text injected wherever a
    /// prompt asks for the patch.
    pub fn patch_text(&self) -> String {
        format!("{}\n{}", self.message, self.diff)
    }
}

pub fn commit_id(repo: &str, hash: &str) -> String {
    format!("{repo}@{}", hash.to_ascii_lowercase())
}

pub(crate) fn is_full_hash(h: &str) -> bool {
    h.len() == 40 && h.bytes().all(|b| b.is_ascii_hexdigit())
}

pub(crate) fn is_repo_slug(repo: &str) -> bool {
    let mut parts = repo.split('/');
    let ok = |p: Option<&str>| {
        p.is_some_and(|p| {
            !p.is_empty()
                && p.chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        })
    };
    ok(parts.next()) && ok(parts.next()) && parts.next().is_none()
}

pub(crate) fn is_cve_id(id: &str) -> bool {
    let Some(rest) = id.strip_prefix("CVE-") else {
        return false;
    };
    let Some((year, seq)) = rest.split_once('-') else {
        return false;
    };
    year.len() == 4
        && year.bytes().all(|b| b.is_ascii_digit())
        && seq.len() >= 4
        && seq.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArtifactKind {
    IssueReport,
    PullRequest,
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArtifactKind::IssueReport => "Issue Report",
            ArtifactKind::PullRequest => "Pull Request",
        })
    }
}

/// An issue report or pull request linked to a commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevArtifact {
    pub kind: ArtifactKind,
    pub number: u64,
    pub title: String,
    pub body: String,
    pub source_url: String,
    pub linked_commit_id: String,
    /// Open/closed state as reported by the forge. Recorded, not used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyPoint {
    pub label: String,
    pub description: String,
}

impl KeyPoint {
    pub fn new(label: impl Into<String>, description: impl Into<String>) -> Self {
        KeyPoint {
            label: label.into(),
            description: description.into(),
        }
    }
}

/// The three aspects a summary is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aspect {
    Summary,
    Purpose,
    Implications,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Summary, Aspect::Purpose, Aspect::Implications];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Summary => "Summary",
            Aspect::Purpose => "Purpose",
            Aspect::Implications => "Implications",
        }
    }
}

/// Distilled summary / purpose / implications of a commit or artifact.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreeAspectSummary {
    pub summary: Vec<KeyPoint>,
    pub purpose: Vec<KeyPoint>,
    pub implications: Vec<KeyPoint>,
}

impl ThreeAspectSummary {
    pub fn aspect(&self, aspect: Aspect) -> &[KeyPoint] {
        match aspect {
            Aspect::Summary => &self.summary,
            Aspect::Purpose => &self.purpose,
            Aspect::Implications => &self.implications,
        }
    }

    pub fn aspect_mut(&mut self, aspect: Aspect) -> &mut Vec<KeyPoint> {
        match aspect {
            Aspect::Summary => &mut self.summary,
            Aspect::Purpose => &mut self.purpose,
            Aspect::Implications => &mut self.implications,
        }
    }

    pub fn is_complete(&self) -> bool {
        Aspect::ALL.iter().all(|a| !self.aspect(*a).is_empty())
    }
}

/// A historical vulnerability fix held in the retrieval store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HVRecord {
    pub cve_id: String,
    pub cve_description: String,
    pub fix_commit: Commit,
    pub three_aspects: ThreeAspectSummary,
    pub embedding: Vec<f32>,
    pub language: Language,
    pub disclosed_at: NaiveDate,
    /// Set when the record was promoted from a reviewed detection result
    /// rather than ingested from the historical corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub promoted_from: Option<String>,
}

impl HVRecord {
    pub fn is_promoted(&self) -> bool {
        self.promoted_from.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    VF,
    NVF,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub commit: Commit,
    #[serde(default)]
    pub artifacts: Vec<DevArtifact>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cve_id: Option<String>,
}

/// The three enrichment components of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    CCI,
    DA,
    HV,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::CCI => "CCI",
            Component::DA => "DA",
            Component::HV => "HV",
        })
    }
}

/// Which components feed the final prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawMode")]
pub struct AblationMode {
    enabled: BTreeSet<Component>,
    vanilla: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    enabled: BTreeSet<Component>,
    vanilla: bool,
}

impl TryFrom<RawMode> for AblationMode {
    type Error = String;

    fn try_from(raw: RawMode) -> Result<Self, Self::Error> {
        if raw.vanilla && !raw.enabled.is_empty() {
            return Err("vanilla mode cannot enable components".into());
        }
        Ok(AblationMode {
            enabled: raw.enabled,
            vanilla: raw.vanilla,
        })
    }
}

impl AblationMode {
    pub fn full() -> Self {
        AblationMode {
            enabled: [Component::CCI, Component::DA, Component::HV].into(),
            vanilla: false,
        }
    }

    pub fn without(component: Component) -> Self {
        let mut mode = Self::full();
        mode.enabled.remove(&component);
        mode
    }

    pub fn vanilla() -> Self {
        AblationMode {
            enabled: BTreeSet::new(),
            vanilla: true,
        }
    }

    /// The five settings compared in an ablation study, in report order.
    pub fn study() -> [AblationMode; 5] {
        [
            Self::full(),
            Self::without(Component::CCI),
            Self::without(Component::DA),
            Self::without(Component::HV),
            Self::vanilla(),
        ]
    }

    pub fn enabled(&self) -> &BTreeSet<Component> {
        &self.enabled
    }

    pub fn is_enabled(&self, c: Component) -> bool {
        self.enabled.contains(&c)
    }

    pub fn is_vanilla(&self) -> bool {
        self.vanilla
    }

    pub fn is_full(&self) -> bool {
        !self.vanilla && self.enabled.len() == 3
    }

    /// Display name used in ablation tables.
    pub fn name(&self) -> String {
        if self.vanilla {
            return "Vanilla".into();
        }
        if self.is_full() {
            return "Full".into();
        }
        let missing: Vec<String> = [Component::CCI, Component::DA, Component::HV]
            .iter()
            .filter(|c| !self.enabled.contains(c))
            .map(|c| c.to_string())
            .collect();
        format!("w/o {}", missing.join("+"))
    }

    /// Command-line spelling: `full`, `wo-cci`, `wo-da`, `wo-hv`, `vanilla`.
    pub fn slug(&self) -> String {
        if self.vanilla {
            return "vanilla".into();
        }
        if self.is_full() {
            return "full".into();
        }
        let missing: Vec<String> = [Component::CCI, Component::DA, Component::HV]
            .iter()
            .filter(|c| !self.enabled.contains(c))
            .map(|c| c.to_string().to_ascii_lowercase())
            .collect();
        format!("wo-{}", missing.join("-"))
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::full()),
            "vanilla" => Ok(Self::vanilla()),
            other => {
                let Some(rest) = other.strip_prefix("wo-") else {
                    return Err(format!("unknown mode `{s}`"));
                };
                let mut mode = Self::full();
                for part in rest.split('-') {
                    let c = match part {
                        "cci" => Component::CCI,
                        "da" => Component::DA,
                        "hv" => Component::HV,
                        _ => return Err(format!("unknown component `{part}` in mode `{s}`")),
                    };
                    mode.enabled.remove(&c);
                }
                if mode.enabled.is_empty() {
                    return Err("removing every component is not an ablation; use `vanilla`".into());
                }
                Ok(mode)
            }
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvMatch {
    pub cve_id: String,
    pub distance: f64,
}

/// Which side of the confusion matrix a failure tag may be applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TagCategory {
    /// Set by the pipeline, never by a reviewer.
    Pipeline,
    FalsePositive,
    FalseNegative,
    Either,
}

/// Reasons a prediction went wrong. `Unparseable` and `BackendFailure` are set
/// automatically; the rest are assigned by reviewers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureTag {
    Unparseable,
    BackendFailure,
    PotentialUnreportedFix,
    NonVulnSecurityFixAsVF,
    NonFunctionalChange,
    NotSecurityRelated,
    MisledByRetrievedVuln,
    VFAsNonVulnSecurityFix,
    MissedSecurityChange,
    LongContextMiss,
    Other,
}

impl FailureTag {
    pub const REVIEW_TAGS: [FailureTag; 9] = [
        FailureTag::PotentialUnreportedFix,
        FailureTag::NonVulnSecurityFixAsVF,
        FailureTag::NonFunctionalChange,
        FailureTag::NotSecurityRelated,
        FailureTag::MisledByRetrievedVuln,
        FailureTag::VFAsNonVulnSecurityFix,
        FailureTag::MissedSecurityChange,
        FailureTag::LongContextMiss,
        FailureTag::Other,
    ];

    pub fn category(self) -> TagCategory {
        use FailureTag::*;
        match self {
            Unparseable | BackendFailure => TagCategory::Pipeline,
            PotentialUnreportedFix
            | NonVulnSecurityFixAsVF
            | NonFunctionalChange
            | NotSecurityRelated => TagCategory::FalsePositive,
            VFAsNonVulnSecurityFix | MissedSecurityChange | LongContextMiss => {
                TagCategory::FalseNegative
            }
            MisledByRetrievedVuln | Other => TagCategory::Either,
        }
    }

    pub fn description(self) -> &'static str {
        use FailureTag::*;
        match self {
            Unparseable => "Response could not be parsed",
            BackendFailure => "Backend call failed",
            PotentialUnreportedFix => "Potential unreported vulnerability fix",
            NonVulnSecurityFixAsVF => {
                "Non-vulnerability security fix misclassified as vulnerability fix"
            }
            NonFunctionalChange => "Non-functional change",
            NotSecurityRelated => "Failed to realize the change is not related to security",
            MisledByRetrievedVuln => "Misled by retrieved similar vulnerability",
            VFAsNonVulnSecurityFix => {
                "Vulnerability fix misclassified as non-vulnerability security fix"
            }
            MissedSecurityChange => "Unable to identify security related code change",
            LongContextMiss => {
                "Unable to pinpoint vulnerability related code change from long context"
            }
            Other => "Others",
        }
    }
}

/// Three-aspect summary of one development artifact, with enough of the
/// artifact's identity to label it in the final prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactSummary {
    pub kind: ArtifactKind,
    pub number: u64,
    pub summary: ThreeAspectSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionResult {
    pub commit_id: String,
    pub verdict: Verdict,
    pub analysis: String,
    pub inputs_used: BTreeSet<Component>,
    pub hv_match: Option<HvMatch>,
    pub raw_response: String,
    pub failure_tag: Option<FailureTag>,
    /// The commit's own three-aspect summary, when one was produced. Kept so
    /// that reviewed results can be promoted into the historical store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cci_summary: Option<ThreeAspectSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub da_summaries: Vec<ArtifactSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Swap the roles of the positive and negative class.
    pub fn class_swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

/// A broken invariant found in a dataset record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    MalformedId(String),
    MalformedRepo(String),
    LanguageNotInEnum(String),
    LabelCveMismatch { label: Label, cve_present: bool },
    MalformedCveId(String),
    ArtifactNumberZero,
    ArtifactLinkMismatch { number: u64 },
    DuplicateCommitId(String),
    Malformed(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "commit id is empty"),
            Violation::MalformedId(id) => write!(f, "commit id `{id}` is not <repo>@<40-hex>"),
            Violation::MalformedRepo(r) => write!(f, "repo `{r}` is not owner/name"),
            Violation::LanguageNotInEnum(l) => write!(f, "language not in enum: {l}"),
            Violation::LabelCveMismatch { label, cve_present } => write!(
                f,
                "label/cve mismatch: label {label:?} with cve_id {}",
                if *cve_present { "present" } else { "absent" }
            ),
            Violation::MalformedCveId(c) => write!(f, "malformed cve id `{c}`"),
            Violation::ArtifactNumberZero => write!(f, "artifact number must be positive"),
            Violation::ArtifactLinkMismatch { number } => {
                write!(f, "artifact #{number} is linked to a different commit")
            }
            Violation::DuplicateCommitId(id) => write!(f, "duplicate commit id `{id}`"),
            Violation::Malformed(msg) => write!(f, "malformed record: {msg}"),
        }
    }
}

/// Checks every per-record invariant of a dataset entry.
pub fn validate_entry(entry: &DatasetEntry) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let c = &entry.commit;
    if c.id.is_empty() {
        out.push(Violation::EmptyId);
    } else if c.id != commit_id(&c.repo, c.hash().unwrap_or("")) || c.hash().is_none() {
        out.push(Violation::MalformedId(c.id.clone()));
    }
    if !is_repo_slug(&c.repo) {
        out.push(Violation::MalformedRepo(c.repo.clone()));
    }
    match (entry.label, &entry.cve_id) {
        (Label::VF, None) => out.push(Violation::LabelCveMismatch {
            label: Label::VF,
            cve_present: false,
        }),
        (Label::NVF, Some(_)) => out.push(Violation::LabelCveMismatch {
            label: Label::NVF,
            cve_present: true,
        }),
        (Label::VF, Some(cve)) if !is_cve_id(cve) => {
            out.push(Violation::MalformedCveId(cve.clone()))
        }
        _ => {}
    }
    for a in &entry.artifacts {
        if a.number == 0 {
            out.push(Violation::ArtifactNumberZero);
        }
        if a.linked_commit_id != c.id {
            out.push(Violation::ArtifactLinkMismatch { number: a.number });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Validates an untyped record, reporting enum violations that typed
/// deserialization would otherwise turn into an opaque parse error.
pub fn validate_entry_value(value: &serde_json::Value) -> Result<DatasetEntry, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut value = value.clone();
    if let Some(lang) = value.pointer_mut("/commit/language") {
        match lang.as_str().map(Language::from_str) {
            Some(Ok(_)) => {}
            _ => {
                let shown = lang
                    .as_str()
                    .map(str::to_owned)
                    .unwrap_or_else(|| lang.to_string());
                violations.push(Violation::LanguageNotInEnum(shown));
                // keep checking the rest of the record
                *lang = serde_json::Value::String("C".into());
            }
        }
    }
    match serde_json::from_value::<DatasetEntry>(value) {
        Ok(entry) => {
            if let Err(more) = validate_entry(&entry) {
                violations.extend(more);
            }
            if violations.is_empty() {
                Ok(entry)
            } else {
                Err(violations)
            }
        }
        Err(e) => {
            violations.push(Violation::Malformed(e.to_string()));
            Err(violations)
        }
    }
}

/// Record-level checks plus id uniqueness across the whole dataset.
pub fn validate_dataset(entries: &[DatasetEntry]) -> Result<(), Vec<(usize, Violation)>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        if let Err(vs) = validate_entry(e) {
            out.extend(vs.into_iter().map(|v| (i, v)));
        }
        if !seen.insert(e.commit.id.as_str()) {
            out.push((i, Violation::DuplicateCommitId(e.commit.id.clone())));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
