//! A small synthetic corpus for offline runs: commits, a scripted mock
//! backend and a seeded history store. Every component's output carries a
//! distinct marker so tests can tell which text reached a prompt.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde_json::json;

use crate::dataset::CveEntry;
use crate::gateway::MockScript;
use crate::hv::{embed, Embedder, HvError, HvStore};
use crate::model::{
    ArtifactKind, Commit, DatasetEntry, DevArtifact, HVRecord, KeyPoint, Label, Language,
    ThreeAspectSummary,
};

pub const CCI_MARK: &str = "CCI-7f3a";
pub const DA_MARK: &str = "DA-91c2";
pub const HV_DESC_MARK: &str = "HVDESC-44e0";
pub const HV_ASPECT_MARK: &str = "HVASP-d81b";

/// Present in the message of commits the mock model calls fixes.
pub const SECURITY_TAG: &str = "[sec]";

pub const CCI_NEEDLE: &str = "the following software patch:";
pub const DA_NEEDLE: &str = "issue report title";

pub fn cci_reply() -> String {
    format!(
        "Here is the analysis.\n1. Code Change Summary\n- [Bounds check]: {CCI_MARK} adds a length check\n\
         - [Optional Key Point]: tidies an error path\n2. Purpose of the Change\n- [Hardening]: \
         rejects short buffers\n3. Implications of the Change\n- [Stability]: malformed input is refused"
    )
}

pub fn da_reply() -> String {
    format!(
        "1. Summary of the report:\n- [Crash]: {DA_MARK} ASAN report\n2. Purpose of the report:\n\
         - [Bug]: a reproducer is attached\n3. Implications of the report:\n- [Impact]: memory corruption"
    )
}

pub const YES: &str =
    r#"{"analysis": "The patch guards a buffer read.", "vulnerability_fix": "yes"}"#;
pub const NO: &str =
    r#"{"analysis": "The patch is routine maintenance.", "vulnerability_fix": "no"}"#;

/// Rules in lookup order. CCI and DA prompts are recognised first; final
/// prompts answer yes when they show a tagged commit or a DA summary.
pub fn script_rules() -> Vec<(String, String)> {
    vec![
        (CCI_NEEDLE.into(), cci_reply()),
        (DA_NEEDLE.into(), da_reply()),
        (SECURITY_TAG.into(), YES.into()),
        (DA_MARK.into(), YES.into()),
    ]
}

pub fn script() -> MockScript {
    script_rules()
        .into_iter()
        .fold(MockScript::new(), |s, (k, v)| s.with_substring(k, v))
        .with_default(NO)
}

/// Writes [`script`] in the JSONL form `MockScript::load` reads.
pub fn write_script(path: &Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    for (needle, response) in script_rules() {
        writeln!(
            f,
            "{}",
            json!({"match_substring": needle, "response": response})
        )?;
    }
    writeln!(f, "{}", json!({"default_response": NO}))?;
    Ok(())
}

const REPOS: [(&str, Language); 4] = [
    ("gpac/gpac", Language::C),
    ("apache/tika", Language::Java),
    ("ImageMagick/ImageMagick", Language::C),
    ("pallets/werkzeug", Language::Python),
];

pub fn hash(i: usize) -> String {
    format!("{:040x}", 0xabc0_0000_u64 + i as u64)
}

pub fn commit(i: usize) -> Commit {
    let (repo, lang) = REPOS[i % REPOS.len()];
    let tagged = i.is_multiple_of(3);
    let message = if tagged {
        format!(
            "{SECURITY_TAG} check length before copy, fixes #{}",
            100 + i
        )
    } else {
        format!("refactor module {i}")
    };
    let diff = format!(
        "--- a/src/m{i}.c\n+++ b/src/m{i}.c\n@@ -1,2 +1,3 @@\n int f(char *b, int n) {{\n+  if (n > {}) return -1;\n   return g(b, n);",
        16 + i
    );
    let day = 1 + (i % 28) as u32;
    Commit::new(
        repo,
        &hash(i),
        message,
        diff,
        lang,
        NaiveDate::from_ymd_opt(2023, 1 + (i % 12) as u32, day).unwrap(),
    )
}

/// `n` dataset entries; every fourth is a labelled fix and every third
/// carries a linked issue report.
pub fn dataset(n: usize) -> Vec<DatasetEntry> {
    (0..n)
        .map(|i| {
            let c = commit(i);
            let vf = i % 4 == 0;
            let artifacts = if i % 3 == 1 {
                vec![DevArtifact {
                    kind: ArtifactKind::IssueReport,
                    number: 100 + i as u64,
                    title: format!("crash in module {i}"),
                    body: "heap-buffer-overflow on a crafted file".into(),
                    source_url: format!("https://github.com/{}/issues/{}", c.repo, 100 + i),
                    linked_commit_id: c.id.clone(),
                    state: Some("closed".into()),
                }]
            } else {
                Vec::new()
            };
            DatasetEntry {
                commit: c,
                artifacts,
                label: if vf { Label::VF } else { Label::NVF },
                cve_id: vf.then(|| format!("CVE-2023-{:05}", 1000 + i)),
            }
        })
        .collect()
}

fn aspects(tag: &str) -> ThreeAspectSummary {
    ThreeAspectSummary {
        summary: vec![KeyPoint::new(
            "Validation",
            format!("{tag} checks an index"),
        )],
        purpose: vec![KeyPoint::new("Fix", "prevents an out-of-bounds read")],
        implications: vec![KeyPoint::new("Security", "closes a crash vector")],
    }
}

/// Historical fixes, one or more per language used by [`dataset`].
pub fn history(embedder: &dyn Embedder) -> Result<Vec<HVRecord>, HvError> {
    let mut out = Vec::new();
    for (k, (repo, lang)) in REPOS.iter().enumerate() {
        for j in 0..2 {
            let i = 1000 + k * 10 + j;
            let summary = aspects(&format!("{HV_ASPECT_MARK} case {i}"));
            let fix = Commit::new(
                *repo,
                &hash(i),
                format!("fix out-of-bounds read {i}"),
                "+ if (idx >= len) return;",
                *lang,
                NaiveDate::from_ymd_opt(2021, 6, 1 + j as u32).unwrap(),
            );
            out.push(HVRecord {
                cve_id: format!("CVE-2021-{:05}", i),
                cve_description: format!("{HV_DESC_MARK}: out-of-bounds read in {repo}"),
                embedding: embed(embedder, &summary)?,
                fix_commit: fix,
                three_aspects: summary,
                language: *lang,
                disclosed_at: NaiveDate::from_ymd_opt(2021, 7, 1).unwrap(),
                promoted_from: None,
            });
        }
    }
    Ok(out)
}

pub fn store(embedder: &dyn Embedder) -> Result<HvStore, HvError> {
    HvStore::build(history(embedder)?, embedder.dim(), embedder.model())
}

/// CVE snapshot entries for the labelled fixes in `dataset(n)` plus the
/// historical records, with fix-commit reference URLs.
pub fn cves(n: usize) -> Vec<CveEntry> {
    let mut out: Vec<CveEntry> = dataset(n)
        .into_iter()
        .filter_map(|e| {
            let cve = e.cve_id?;
            let c = e.commit;
            Some(CveEntry {
                cve_id: cve,
                description: format!("memory safety issue in {}", c.repo),
                references: vec![format!(
                    "https://github.com/{}/commit/{}",
                    c.repo,
                    c.hash().unwrap()
                )],
                published_at: c.committed_at,
            })
        })
        .collect();
    for (k, (repo, _)) in REPOS.iter().enumerate() {
        for j in 0..2 {
            let i = 1000 + k * 10 + j;
            out.push(CveEntry {
                cve_id: format!("CVE-2021-{:05}", i),
                description: format!("{HV_DESC_MARK}: out-of-bounds read in {repo}"),
                references: vec![format!("https://github.com/{repo}/commit/{}", hash(i))],
                published_at: NaiveDate::from_ymd_opt(2021, 7, 1).unwrap(),
            });
        }
    }
    out
}

/// Every commit of `dataset(n)`, the historical fixes and `extra` unlabelled
/// commits per repository to sample negatives from.
pub fn catalog(n: usize, extra: usize) -> Vec<Commit> {
    let mut out: Vec<Commit> = (0..n).map(commit).collect();
    for (k, (repo, lang)) in REPOS.iter().enumerate() {
        for j in 0..2 {
            let i = 1000 + k * 10 + j;
            out.push(Commit::new(
                *repo,
                &hash(i),
                format!("fix out-of-bounds read {i}"),
                "+ if (idx >= len) return;",
                *lang,
                NaiveDate::from_ymd_opt(2021, 6, 1 + j as u32).unwrap(),
            ));
        }
        for j in 0..extra {
            let i = 5000 + k * 1000 + j;
            out.push(Commit::new(
                *repo,
                &hash(i),
                format!("update docs {i}"),
                format!("- old text {i}\n+ new text {i}"),
                *lang,
                NaiveDate::from_ymd_opt(2023, 2, 1).unwrap(),
            ));
        }
    }
    out
}
