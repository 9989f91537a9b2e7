//! Finds the issue reports and pull requests related to a commit.
//!
//! Two discovery paths are combined: autolink references in the commit
//! message (`#N`, `GH-N`, `owner/name#N`, full issue/PR URLs) and the forge's
//! "pull requests associated with a commit" endpoint. Every discovered
//! reference is then fetched for its title and body.

use std::collections::HashSet;
use std::sync::{Arc, LazyLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{thread_sleeper, Sleeper};
use crate::http::{HttpRequest, HttpTransport};
use crate::model::{is_full_hash, is_repo_slug, ArtifactKind, Commit, DevArtifact};

pub const FORGE_TOKEN_ENV: &str = "VFD_FORGE_TOKEN";
pub const DEFAULT_API_BASE: &str = "https://api.github.com";
pub const DEFAULT_WEB_HOST: &str = "github.com";
pub const DEFAULT_BODY_CHAR_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefSource {
    MessageAutolink,
    PRAssociationEndpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub repo: String,
    pub number: u64,
    pub source: RefSource,
}

impl ArtifactRef {
    fn key(&self) -> (String, u64) {
        (self.repo.to_ascii_lowercase(), self.number)
    }
}

/// Parses autolink references for one forge host.
pub struct AutolinkParser {
    pattern: Regex,
}

impl AutolinkParser {
    pub fn new(web_host: &str) -> Self {
        let host = regex::escape(web_host);
        let pattern = format!(
            r"(?xi)
            (?P<url>https?://(?:www\.)?{host}/(?P<uo>[A-Za-z0-9_.-]+)/(?P<un>[A-Za-z0-9_.-]+)/(?:issues|pull)/(?P<unum>\d+))
            | (?P<xo>\b[A-Za-z0-9][A-Za-z0-9-]*)/(?P<xn>[A-Za-z0-9_.-]+)\#(?P<xnum>\d+)\b
            | \bGH-(?P<gh>\d+)\b
            | (?:^|[^\w/\#&])\#(?P<num>\d+)\b
            "
        );
        AutolinkParser {
            pattern: Regex::new(&pattern).expect("autolink pattern compiles"),
        }
    }

    pub fn parse(&self, message: &str, default_repo: &str) -> Vec<ArtifactRef> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for caps in self.pattern.captures_iter(message) {
            let (repo, num) = if caps.name("url").is_some() {
                (format!("{}/{}", &caps["uo"], &caps["un"]), &caps["unum"])
            } else if caps.name("xo").is_some() {
                (format!("{}/{}", &caps["xo"], &caps["xn"]), &caps["xnum"])
            } else if let Some(n) = caps.name("gh").or(caps.name("num")) {
                (default_repo.to_owned(), n.as_str())
            } else {
                continue;
            };
            let Ok(number) = num.parse::<u64>() else {
                continue;
            };
            if number == 0 || !is_repo_slug(&repo) {
                continue;
            }
            let r = ArtifactRef {
                repo,
                number,
                source: RefSource::MessageAutolink,
            };
            if seen.insert(r.key()) {
                out.push(r);
            }
        }
        out
    }
}

static GITHUB_AUTOLINKS: LazyLock<AutolinkParser> =
    LazyLock::new(|| AutolinkParser::new(DEFAULT_WEB_HOST));

/// Autolink references in `message`; bare `#N` and `GH-N` bind to
/// `default_repo`. Deduplicated, in order of first appearance.
pub fn parse_autolink_refs(message: &str, default_repo: &str) -> Vec<ArtifactRef> {
    GITHUB_AUTOLINKS.parse(message, default_repo)
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ForgeError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("rate limited; retry after {retry_after:?}")]
    RateLimited { retry_after: Duration },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected status {status}: {body}")]
    Unexpected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl ForgeError {
    /// Errors that should abort mining rather than degrade to a warning.
    pub fn is_config(&self) -> bool {
        matches!(self, ForgeError::Config(_))
    }
}

#[derive(Debug, Clone)]
pub struct ForgeConfig {
    pub api_base: String,
    pub web_host: String,
    pub token: Option<String>,
    pub body_char_cap: usize,
    /// Longest total wait spent honoring rate limits for one request.
    pub rate_limit_budget: Duration,
    pub max_in_flight: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            api_base: DEFAULT_API_BASE.into(),
            web_host: DEFAULT_WEB_HOST.into(),
            token: std::env::var(FORGE_TOKEN_ENV).ok(),
            body_char_cap: DEFAULT_BODY_CHAR_CAP,
            rate_limit_budget: Duration::from_secs(15 * 60),
            max_in_flight: 4,
        }
    }
}

/// Artifacts found for one commit plus the non-fatal problems met on the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedArtifacts {
    pub artifacts: Vec<DevArtifact>,
    pub warnings: Vec<String>,
}

pub struct ForgeClient {
    transport: Arc<dyn HttpTransport>,
    config: ForgeConfig,
    autolinks: AutolinkParser,
    sleeper: Sleeper,
}

#[derive(Deserialize)]
struct IssueJson {
    number: u64,
    title: Option<String>,
    body: Option<String>,
    html_url: Option<String>,
    state: Option<String>,
}

impl ForgeClient {
    pub fn new(transport: Arc<dyn HttpTransport>, config: ForgeConfig) -> Self {
        let autolinks = AutolinkParser::new(&config.web_host);
        ForgeClient {
            transport,
            config,
            autolinks,
            sleeper: thread_sleeper(),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &ForgeConfig {
        &self.config
    }

    fn api(&self, path: &str) -> String {
        format!("{}{}", self.config.api_base.trim_end_matches('/'), path)
    }

    fn get_once(&self, url: &str) -> Result<serde_json::Value, ForgeError> {
        let req = HttpRequest::get(url)
            .header("accept", "application/vnd.github+json")
            .bearer(self.config.token.as_deref());
        let resp = self
            .transport
            .send(&req)
            .map_err(|e| ForgeError::Transport(e.0))?;
        match resp.status {
            200..=299 => serde_json::from_str(&resp.body)
                .map_err(|e| ForgeError::Malformed(format!("{url}: {e}"))),
            404 | 410 => Err(ForgeError::NotFound(url.to_owned())),
            403 | 429 => {
                let exhausted = resp.header("x-ratelimit-remaining") == Some("0");
                let retry_after = resp
                    .header("retry-after")
                    .and_then(|s| s.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                let reset = resp
                    .header("x-ratelimit-reset")
                    .and_then(|s| s.trim().parse::<u64>().ok())
                    .map(|reset| {
                        let now = SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .map_or(0, |d| d.as_secs());
                        Duration::from_secs(reset.saturating_sub(now).max(1))
                    });
                if resp.status == 429 || exhausted || retry_after.is_some() {
                    Err(ForgeError::RateLimited {
                        retry_after: retry_after.or(reset).unwrap_or(Duration::from_secs(60)),
                    })
                } else {
                    Err(ForgeError::Unexpected {
                        status: resp.status,
                        body: resp.body,
                    })
                }
            }
            status => Err(ForgeError::Unexpected {
                status,
                body: resp.body,
            }),
        }
    }

    /// GET with rate-limit waits, bounded by the configured budget.
    fn get_json(&self, url: &str) -> Result<serde_json::Value, ForgeError> {
        let mut waited = Duration::ZERO;
        loop {
            match self.get_once(url) {
                Err(ForgeError::RateLimited { retry_after })
                    if waited + retry_after <= self.config.rate_limit_budget =>
                {
                    log::warn!("rate limited on {url}; waiting {retry_after:?}");
                    (self.sleeper)(retry_after);
                    waited += retry_after;
                }
                other => return other,
            }
        }
    }

    pub fn parse_autolink_refs(&self, message: &str, default_repo: &str) -> Vec<ArtifactRef> {
        self.autolinks.parse(message, default_repo)
    }

    pub fn list_associated_prs(
        &self,
        repo: &str,
        commit_hash: &str,
    ) -> Result<Vec<ArtifactRef>, ForgeError> {
        if !is_repo_slug(repo) {
            return Err(ForgeError::Config(format!("malformed repo `{repo}`")));
        }
        if !commit_hash.bytes().all(|b| b.is_ascii_hexdigit()) || commit_hash.len() < 7 {
            return Err(ForgeError::Config(format!(
                "malformed commit hash `{commit_hash}`"
            )));
        }
        let url = self.api(&format!(
            "/repos/{repo}/commits/{commit_hash}/pulls?per_page=100"
        ));
        let value = self.get_json(&url)?;
        let items = value
            .as_array()
            .ok_or_else(|| ForgeError::Malformed(format!("{url}: expected an array")))?;
        let mut out = Vec::new();
        for pr in items {
            let number = pr
                .get("number")
                .and_then(|n| n.as_u64())
                .filter(|n| *n > 0)
                .ok_or_else(|| ForgeError::Malformed(format!("{url}: PR without number")))?;
            let pr_repo = pr
                .pointer("/base/repo/full_name")
                .and_then(|s| s.as_str())
                .unwrap_or(repo);
            out.push(ArtifactRef {
                repo: pr_repo.to_owned(),
                number,
                source: RefSource::PRAssociationEndpoint,
            });
        }
        Ok(out)
    }

    /// Fetches title and body. References from the association endpoint are
    /// read from the pulls endpoint; autolinks go through the issues endpoint,
    /// which also resolves pull request numbers, and fall back to pulls.
    pub fn fetch_artifact(
        &self,
        r: &ArtifactRef,
        linked_commit_id: &str,
    ) -> Result<DevArtifact, ForgeError> {
        let issues = self.api(&format!("/repos/{}/issues/{}", r.repo, r.number));
        let pulls = self.api(&format!("/repos/{}/pulls/{}", r.repo, r.number));
        let (json, kind) = match r.source {
            RefSource::PRAssociationEndpoint => (self.get_json(&pulls)?, ArtifactKind::PullRequest),
            RefSource::MessageAutolink => match self.get_json(&issues) {
                Ok(v) => {
                    let kind = if v.get("pull_request").is_some_and(|p| !p.is_null()) {
                        ArtifactKind::PullRequest
                    } else {
                        ArtifactKind::IssueReport
                    };
                    (v, kind)
                }
                Err(ForgeError::NotFound(_)) => (self.get_json(&pulls)?, ArtifactKind::PullRequest),
                Err(e) => return Err(e),
            },
        };
        let issue: IssueJson = serde_json::from_value(json)
            .map_err(|e| ForgeError::Malformed(format!("{}#{}: {e}", r.repo, r.number)))?;
        let body = issue.body.unwrap_or_default();
        let body = match body.char_indices().nth(self.config.body_char_cap) {
            Some((cut, _)) => body[..cut].to_owned(),
            None => body,
        };
        let kind_path = match kind {
            ArtifactKind::IssueReport => "issues",
            ArtifactKind::PullRequest => "pull",
        };
        Ok(DevArtifact {
            kind,
            number: issue.number,
            title: issue.title.unwrap_or_default(),
            body,
            source_url: issue.html_url.unwrap_or_else(|| {
                format!(
                    "https://{}/{}/{kind_path}/{}",
                    self.config.web_host, r.repo, r.number
                )
            }),
            linked_commit_id: linked_commit_id.to_owned(),
            state: issue.state,
        })
    }

    /// Union of both discovery paths, deduplicated by (repo, number), fetched,
    /// and ordered by (repo, number). Individual failures become warnings.
    pub fn mine_commit_artifacts(&self, commit: &Commit) -> Result<MinedArtifacts, ForgeError> {
        let hash = commit
            .hash()
            .ok_or_else(|| ForgeError::Config(format!("commit id `{}` has no hash", commit.id)))?;
        debug_assert!(is_full_hash(hash));
        let mut warnings = Vec::new();
        let mut refs = self.parse_autolink_refs(&commit.message, &commit.repo);
        match self.list_associated_prs(&commit.repo, hash) {
            Ok(prs) => refs.extend(prs),
            Err(e) if e.is_config() => return Err(e),
            Err(e) => warnings.push(format!("{}: associated PRs: {e}", commit.id)),
        }
        let mut seen = HashSet::new();
        refs.retain(|r| seen.insert(r.key()));

        let cap = self.config.max_in_flight.max(1);
        let mut fetched: Vec<(ArtifactRef, Result<DevArtifact, ForgeError>)> = Vec::new();
        for chunk in refs.chunks(cap) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|r| s.spawn(|| (r.clone(), self.fetch_artifact(r, &commit.id))))
                    .collect();
                fetched.extend(handles.into_iter().map(|h| h.join().expect("fetch thread")));
            });
        }
        fetched.sort_by_key(|a| a.0.key());

        let mut artifacts = Vec::new();
        for (r, res) in fetched {
            match res {
                Ok(a) => artifacts.push(a),
                Err(e) => {
                    let msg = format!("{}: {}#{}: {e}", commit.id, r.repo, r.number);
                    log::warn!("skipping artifact {msg}");
                    warnings.push(msg);
                }
            }
        }
        Ok(MinedArtifacts {
            artifacts,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{Cassette, Interaction, Method};
    use crate::model::Language;
    use chrono::NaiveDate;
    use std::collections::HashMap;
    use std::sync::Mutex;

    fn refs(msg: &str) -> Vec<(String, u64)> {
        parse_autolink_refs(msg, "gpac/gpac")
            .into_iter()
            .map(|r| (r.repo, r.number))
            .collect()
    }

    #[test]
    fn bare_number_binds_to_default_repo() {
        assert_eq!(refs("fixed #2475"), vec![("gpac/gpac".into(), 2475)]);
        assert!(refs("").is_empty());
    }

    #[test]
    fn cross_repo_and_urls() {
        let got = refs("see owner/name#12 and https://github.com/owner2/name2/pull/7");
        assert_eq!(
            got,
            vec![("owner/name".into(), 12), ("owner2/name2".into(), 7)]
        );
    }

    #[test]
    fn noise_is_ignored() {
        assert!(refs("&#1234; color #fff a#3 v1.2#4x https://gitlab.com/a/b/issues/9").is_empty());
    }

    const HASH: &str = "c88df2e202efad214c25b4e586f243b2038779ba";

    fn get(path: &str, status: u16, body: serde_json::Value) -> Interaction {
        Interaction {
            method: Method::Get,
            path: path.into(),
            status,
            headers: HashMap::new(),
            body,
            transport_error: None,
        }
    }

    fn issue(n: u64, pr: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "number": n, "title": format!("title {n}"), "body": format!("body {n}"),
            "html_url": format!("https://github.com/gpac/gpac/issues/{n}"), "state": "closed",
        });
        if pr {
            v["pull_request"] = serde_json::json!({"url": "x"});
        }
        v
    }

    fn client(cassette: Cassette) -> (ForgeClient, Arc<Cassette>) {
        let c = Arc::new(cassette);
        let cfg = ForgeConfig {
            api_base: "http://forge.test".into(),
            token: Some("t".into()),
            ..ForgeConfig::default()
        };
        (
            ForgeClient::new(c.clone(), cfg).with_sleeper(Arc::new(|_| {})),
            c,
        )
    }

    fn commit(message: &str) -> Commit {
        Commit::new(
            "gpac/gpac",
            HASH,
            message,
            "+x",
            Language::C,
            NaiveDate::from_ymd_opt(2023, 5, 2).unwrap(),
        )
    }

    fn pulls_path() -> String {
        format!("/repos/gpac/gpac/commits/{HASH}/pulls?per_page=100")
    }

    #[test]
    fn association_endpoint_lists_prs() {
        let body = serde_json::json!([
            {"number": 5, "base": {"repo": {"full_name": "gpac/gpac"}}},
            {"number": 9},
        ]);
        let (c, cassette) = client(Cassette::new([get(&pulls_path(), 200, body)]));
        let prs = c.list_associated_prs("gpac/gpac", HASH).unwrap();
        assert_eq!(prs.len(), 2);
        assert!(prs
            .iter()
            .all(|r| r.source == RefSource::PRAssociationEndpoint));
        let sent = &cassette.requests()[0];
        assert!(sent
            .headers
            .contains(&("authorization".into(), "Bearer t".into())));
    }

    #[test]
    fn missing_repo_maps_to_not_found() {
        let (c, _) = client(Cassette::default());
        assert!(matches!(
            c.list_associated_prs("gpac/gpac", HASH),
            Err(ForgeError::NotFound(_))
        ));
        assert!(c
            .list_associated_prs("not a repo", HASH)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn fetch_infers_kind() {
        let (c, _) = client(Cassette::new([
            get("/repos/gpac/gpac/issues/1", 200, issue(1, false)),
            get("/repos/gpac/gpac/issues/2", 200, issue(2, true)),
            get("/repos/gpac/gpac/issues/3", 410, serde_json::json!({})),
        ]));
        let r = |n| ArtifactRef {
            repo: "gpac/gpac".into(),
            number: n,
            source: RefSource::MessageAutolink,
        };
        assert_eq!(
            c.fetch_artifact(&r(1), "x").unwrap().kind,
            ArtifactKind::IssueReport
        );
        let pr = c.fetch_artifact(&r(2), "x").unwrap();
        assert_eq!(pr.kind, ArtifactKind::PullRequest);
        assert_eq!(pr.state.as_deref(), Some("closed"));
        assert!(matches!(
            c.fetch_artifact(&r(3), "x"),
            Err(ForgeError::NotFound(_))
        ));
    }

    #[test]
    fn bodies_are_truncated_by_characters() {
        let mut body = issue(1, false);
        body["body"] = "é".repeat(30).into();
        let (mut c, _) = client(Cassette::new([get("/repos/gpac/gpac/issues/1", 200, body)]));
        c.config.body_char_cap = 10;
        let r = ArtifactRef {
            repo: "gpac/gpac".into(),
            number: 1,
            source: RefSource::MessageAutolink,
        };
        assert_eq!(c.fetch_artifact(&r, "x").unwrap().body.chars().count(), 10);
    }

    #[test]
    fn same_number_from_both_paths_is_one_artifact() {
        let (c, _) = client(Cassette::new([
            get(&pulls_path(), 200, serde_json::json!([{"number": 5}])),
            get("/repos/gpac/gpac/issues/5", 200, issue(5, true)),
        ]));
        let mined = c.mine_commit_artifacts(&commit("merge #5")).unwrap();
        assert_eq!(mined.artifacts.len(), 1);
        assert!(mined.warnings.is_empty());
    }

    #[test]
    fn nothing_found_is_empty() {
        let (c, _) = client(Cassette::new([get(
            &pulls_path(),
            200,
            serde_json::json!([]),
        )]));
        assert_eq!(
            c.mine_commit_artifacts(&commit("tidy")).unwrap(),
            MinedArtifacts::default()
        );
    }

    #[test]
    fn one_failed_fetch_degrades_to_warning() {
        let (c, _) = client(Cassette::new([
            get(&pulls_path(), 200, serde_json::json!([])),
            get("/repos/gpac/gpac/issues/1", 200, issue(1, false)),
            get("/repos/gpac/gpac/issues/3", 200, issue(3, false)),
        ]));
        let mined = c
            .mine_commit_artifacts(&commit("fixes #3, #2 and #1"))
            .unwrap();
        let numbers: Vec<_> = mined.artifacts.iter().map(|a| a.number).collect();
        assert_eq!(numbers, vec![1, 3]);
        assert_eq!(mined.warnings.len(), 1);
        assert!(mined.warnings[0].contains("#2"));
    }

    #[test]
    fn rate_limits_are_waited_out_within_budget() {
        let mut limited = get("/repos/gpac/gpac/issues/1", 403, serde_json::json!({}));
        limited
            .headers
            .insert("x-ratelimit-remaining".into(), "0".into());
        limited.headers.insert("retry-after".into(), "30".into());
        let (c, _) = client(Cassette::new([
            limited.clone(),
            get("/repos/gpac/gpac/issues/1", 200, issue(1, false)),
        ]));
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s2 = slept.clone();
        let c = c.with_sleeper(Arc::new(move |d| s2.lock().unwrap().push(d)));
        let r = ArtifactRef {
            repo: "gpac/gpac".into(),
            number: 1,
            source: RefSource::MessageAutolink,
        };
        assert!(c.fetch_artifact(&r, "x").is_ok());
        assert_eq!(*slept.lock().unwrap(), vec![Duration::from_secs(30)]);

        let (mut c, _) = client(Cassette::new([limited]));
        c.config.rate_limit_budget = Duration::from_secs(10);
        assert!(matches!(
            c.fetch_artifact(&r, "x"),
            Err(ForgeError::RateLimited { .. })
        ));
    }
}
