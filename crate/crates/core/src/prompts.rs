//! Prompt templates and parsers for the structured LLM outputs.
//!
//! Templates are kept verbatim as text constants. Substitution is a single
//! literal pass over the template: inserted text is never rescanned, so a
//! commit that happens to contain `{Commit}` renders unchanged.

use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::gateway::ChatRequest;
use crate::model::{
    AblationMode, ArtifactSummary, Aspect, Commit, Component, DevArtifact, KeyPoint,
    ThreeAspectSummary, Verdict,
};

/// Rendered in place of any input block that is disabled or unavailable.
pub const NONE_AVAILABLE: &str = "None available.";

/// Most development artifacts summarized into one final prompt.
pub const MAX_PROMPT_ARTIFACTS: usize = 3;

pub const CCI_SYSTEM: &str = "You are a helpful software developer assistant specializing in software development life-cycle to help other developers understand the characteristics of software patches.";

pub const CCI_USER: &str = "You are given the following software patch: {Commit}
Think step by step and provide an analysis describing the following characteristics.
1. Code Change Summary
2. Purpose of the Change
3. Implications of the Change
Provide the analysis in bullet point format for each characteristic. Each bullet point should start with a key point and then briefly describe a main idea or fact from the text. Ensure each point is concise and captures the essence of the main idea it's summarizing. Here is an example of the desired format:
1. Code Change Summary
- [Key Point]: <description>
- [Optional Key Point]: <description>
2. Purpose of the Change
- [Key Point]: <description>
- [Optional Key Point]: <description>
3. Implications of the Change
- [Key Point]: <description>
- [Optional Key Point]: <description>";

pub const DA_SYSTEM: &str = "You are a helpful software developer assistant specializing in software development lifecycle to help other developers understand characteristics of software components such as patches, issue reports, pull requests, etc.";

pub const DA_USER: &str = "You are given the following Github issue report title and body information in JSON format which is related to a commit:{Commit}
Think step by step and provide an analysis describing the following characteristics.
1. Summary of the report
2. Purpose of the report
3. Implications of the report
Provide the analysis in bullet point format for each characteristic. Each bullet point should start with a key point and then briefly describe a main idea or fact from the text. Ensure each point is concise and captures the essence of the main idea it's summarizing. Include 1-3 key points. Here is an example of the desired format:
1. Summary of the report:
- [Key Point]: <description>
- [Optional Key Point]: <description>
2. Purpose of the report:
- [Key Point]: <description>
- [Optional Key Point]: <description>
3. Implications of the report:
- [Key Point]: <description>
- [Optional Key Point]: <description>";

pub const CAVFD_SYSTEM: &str = "You are a helpful software developer assistant specializing in vulnerability detection to help other developers understand characteristics of software patches and discover potential vulnerabilities.";

pub const CAVFD_USER: &str = r#"You are given the following details for analysis:
1. Patch Content: {Commit}
2. Related Issue Report / Pull Request Summary: {DA component output}
3. Three Aspect Analysis of the Patch: {CCI component output}
4. Similar Historical Vulnerability Fix Information: {HV component output - CVE description}
5. Three Aspect Analysis of the Historical Vulnerability Fix: {HV component output - 3-aspect summary}
Task:
1. Comparison:
- Carefully compare the current patch with the historical vulnerability fix to avoid bias.
- Ensure that you consider the similarities and differences highlighted in the three aspect analyses.
2. Analysis:
- Use the information from the Related Issue Report / Pull Request Summary to understand the context and motivation behind the patch.
- Determine whether the current patch is intended to fix a vulnerability. You must provide evidence if you think its a vulnerability fix.
Your output should follow below syntax:
 {"analysis": "<Detailed analysis of whether the patch is to fix a vulnerability>",
 "vulnerability_fix": "<yes or no>"}"#;

/// Patch-only variant with the simplified task instruction.
pub const VANILLA_USER: &str = r#"You are given the following details for analysis:
1. Patch Content: {Commit}
Task:
- Determine whether the current patch is intended to fix a vulnerability. You must provide evidence if you think it's a vulnerability fix.
Your output should follow below syntax:
 {"analysis": "<Detailed analysis of whether the patch is to fix a vulnerability>",
 "vulnerability_fix": "<yes or no>"}"#;

const P_COMMIT: &str = "Commit";
const P_DA: &str = "DA component output";
const P_CCI: &str = "CCI component output";
const P_HV_DESC: &str = "HV component output - CVE description";
const P_HV_ASPECTS: &str = "HV component output - 3-aspect summary";

const PLACEHOLDERS: [&str; 5] = [P_COMMIT, P_DA, P_CCI, P_HV_DESC, P_HV_ASPECTS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateName {
    CCI,
    DAIRPR,
    CAVFD,
    VanillaCAVFD,
}

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub system: &'static str,
    pub body: &'static str,
}

impl PromptTemplate {
    pub const fn get(name: TemplateName) -> PromptTemplate {
        let (system, body) = match name {
            TemplateName::CCI => (CCI_SYSTEM, CCI_USER),
            TemplateName::DAIRPR => (DA_SYSTEM, DA_USER),
            TemplateName::CAVFD => (CAVFD_SYSTEM, CAVFD_USER),
            TemplateName::VanillaCAVFD => (CAVFD_SYSTEM, VANILLA_USER),
        };
        PromptTemplate { name, system, body }
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.body;
        while let Some(i) = rest.find('{') {
            rest = &rest[i..];
            match PLACEHOLDERS.iter().find(|p| placeholder_at(rest, p)) {
                Some(p) => {
                    out.push(*p);
                    rest = &rest[p.len() + 2..];
                }
                None => rest = &rest[1..],
            }
        }
        out
    }

    /// Substitutes every placeholder in one pass.
    ///
    /// Panics if the template uses a placeholder with no binding; templates
    /// are constants, so that is a programming error.
    pub fn fill(&self, bindings: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body;
        while let Some(i) = rest.find('{') {
            out.push_str(&rest[..i]);
            rest = &rest[i..];
            match PLACEHOLDERS.iter().find(|p| placeholder_at(rest, p)) {
                Some(p) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| k == p)
                        .unwrap_or_else(|| panic!("unbound placeholder {{{p}}}"))
                        .1;
                    out.push_str(value);
                    rest = &rest[p.len() + 2..];
                }
                None => {
                    out.push('{');
                    rest = &rest[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn placeholder_at(s: &str, name: &str) -> bool {
    s.strip_prefix('{')
        .and_then(|r| r.strip_prefix(name))
        .is_some_and(|r| r.starts_with('}'))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("commit has neither message nor diff")]
    EmptyCommit,
    #[error("artifact has neither title nor body")]
    EmptyArtifact,
}

pub fn render_cci(commit: &Commit, model: &str) -> Result<ChatRequest, PromptError> {
    if commit.message.trim().is_empty() && commit.diff.trim().is_empty() {
        return Err(PromptError::EmptyCommit);
    }
    let t = PromptTemplate::get(TemplateName::CCI);
    let user = t.fill(&[(P_COMMIT, &commit.patch_text())]);
    Ok(ChatRequest::new(t.system, user, model))
}

#[derive(Serialize)]
struct TitleBody<'a> {
    title: &'a str,
    body: &'a str,
}

pub fn render_da(artifact: &DevArtifact, model: &str) -> Result<ChatRequest, PromptError> {
    if artifact.title.trim().is_empty() && artifact.body.trim().is_empty() {
        return Err(PromptError::EmptyArtifact);
    }
    let json = serde_json::to_string(&TitleBody {
        title: &artifact.title,
        body: &artifact.body,
    })
    .expect("strings serialize");
    let t = PromptTemplate::get(TemplateName::DAIRPR);
    Ok(ChatRequest::new(
        t.system,
        t.fill(&[(P_COMMIT, &json)]),
        model,
    ))
}

const PATCH_HEADINGS: [&str; 3] = [
    "1. Code Change Summary",
    "2. Purpose of the Change",
    "3. Implications of the Change",
];

const REPORT_HEADINGS: [&str; 3] = [
    "1. Summary of the report:",
    "2. Purpose of the report:",
    "3. Implications of the report:",
];

fn format_aspects(summary: &ThreeAspectSummary, headings: &[&str; 3]) -> String {
    let mut lines = Vec::new();
    for (aspect, heading) in Aspect::ALL.iter().zip(headings) {
        lines.push(heading.to_string());
        for kp in summary.aspect(*aspect) {
            lines.push(format!("- [{}]: {}", kp.label, kp.description));
        }
    }
    lines.join("\n")
}

/// A summary laid out in the same bullet format the templates ask for.
pub fn format_patch_summary(summary: &ThreeAspectSummary) -> String {
    format_aspects(summary, &PATCH_HEADINGS)
}

pub fn format_report_summary(summary: &ThreeAspectSummary) -> String {
    format_aspects(summary, &REPORT_HEADINGS)
}

/// What the historical-vulnerability component contributes to the prompt.
#[derive(Debug, Clone, Copy)]
pub struct HvContext<'a> {
    pub description: &'a str,
    pub three_aspects: &'a ThreeAspectSummary,
}

/// Component outputs available for the final prompt. Any of them may be
/// missing because the component is ablated or because it produced nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct CavfdInputs<'a> {
    pub cci: Option<&'a ThreeAspectSummary>,
    pub da: Option<&'a [ArtifactSummary]>,
    pub hv: Option<HvContext<'a>>,
}

/// Renders the final detection prompt. Inputs of components outside `mode`
/// are ignored, so an ablated component can never leak into the prompt.
pub fn render_cavfd(
    commit: &Commit,
    inputs: &CavfdInputs<'_>,
    mode: &AblationMode,
    model: &str,
) -> ChatRequest {
    let patch = commit.patch_text();
    if mode.is_vanilla() {
        let t = PromptTemplate::get(TemplateName::VanillaCAVFD);
        return ChatRequest::new(t.system, t.fill(&[(P_COMMIT, &patch)]), model);
    }

    let da = inputs
        .da
        .filter(|d| mode.is_enabled(Component::DA) && !d.is_empty())
        .map(|d| {
            d.iter()
                .take(MAX_PROMPT_ARTIFACTS)
                .enumerate()
                .map(|(i, a)| {
                    format!(
                        "\nArtifact {} ({} #{}):\n{}",
                        i + 1,
                        a.kind,
                        a.number,
                        format_report_summary(&a.summary)
                    )
                })
                .collect::<String>()
        })
        .unwrap_or_else(|| NONE_AVAILABLE.to_owned());

    let cci = inputs
        .cci
        .filter(|_| mode.is_enabled(Component::CCI))
        .map(|s| format!("\n{}", format_patch_summary(s)))
        .unwrap_or_else(|| NONE_AVAILABLE.to_owned());

    let hv = inputs.hv.filter(|_| mode.is_enabled(Component::HV));
    let hv_desc = hv
        .map(|h| h.description.to_owned())
        .unwrap_or_else(|| NONE_AVAILABLE.to_owned());
    let hv_aspects = hv
        .map(|h| format!("\n{}", format_patch_summary(h.three_aspects)))
        .unwrap_or_else(|| NONE_AVAILABLE.to_owned());

    let t = PromptTemplate::get(TemplateName::CAVFD);
    let user = t.fill(&[
        (P_COMMIT, &patch),
        (P_DA, &da),
        (P_CCI, &cci),
        (P_HV_DESC, &hv_desc),
        (P_HV_ASPECTS, &hv_aspects),
    ]);
    ChatRequest::new(t.system, user, model)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("missing section: {0}")]
    MissingSection(&'static str),
    #[error("no bullets in section: {0}")]
    NoBullets(&'static str),
    #[error("no object with both `analysis` and `vulnerability_fix` found")]
    NoObjectFound,
    #[error("vulnerability_fix must be yes or no, got {0:?}")]
    BadVerdictValue(String),
}

static BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[-*•]\s+\[([^\]]+)\]\s*:\s*(.*?)\s*$").unwrap());

static HEADING_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\d+\s*[.)]|step\s+\d+\s*[:.)]?)\s*").unwrap());

fn heading_aspect(line: &str) -> Option<Aspect> {
    let mut s = line.trim().trim_start_matches('#').trim();
    s = s.trim_matches(|c| c == '*' || c == '_').trim();
    if let Some(m) = HEADING_NUMBER.find(&s.to_ascii_lowercase()) {
        s = &s[m.end()..];
    }
    let s = s
        .trim_matches(|c| c == '*' || c == '_')
        .trim()
        .trim_end_matches(':')
        .trim_end_matches(['*', '_'])
        .trim_end_matches(':')
        .trim()
        .to_ascii_lowercase();
    match s.as_str() {
        "code change summary" | "summary of the change" | "summary of the report" | "summary" => {
            Some(Aspect::Summary)
        }
        "purpose of the change" | "purpose of the report" | "purpose" => Some(Aspect::Purpose),
        "implications of the change" | "implications of the report" | "implications" => {
            Some(Aspect::Implications)
        }
        _ => None,
    }
}

/// Extracts `- [label]: description` bullets under each of the three section
/// headings. Sections may appear in any order; prose outside bullets is
/// ignored.
pub fn parse_three_aspects(text: &str) -> Result<ThreeAspectSummary, ParseError> {
    let mut out = ThreeAspectSummary::default();
    let mut seen = [false; 3];
    let mut current: Option<Aspect> = None;
    for line in text.lines() {
        if let Some(a) = heading_aspect(line) {
            seen[a as usize] = true;
            current = Some(a);
            continue;
        }
        if let (Some(a), Some(caps)) = (current, BULLET.captures(line)) {
            let label = caps[1].trim();
            if !label.is_empty() {
                out.aspect_mut(a)
                    .push(KeyPoint::new(label, caps[2].to_owned()));
            }
        }
    }
    for a in Aspect::ALL {
        if !seen[a as usize] {
            return Err(ParseError::MissingSection(a.name()));
        }
    }
    for a in Aspect::ALL {
        if out.aspect(a).is_empty() {
            return Err(ParseError::NoBullets(a.name()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictObject {
    pub analysis: String,
    pub vulnerability_fix: Verdict,
}

/// Finds the first well-formed JSON object carrying both `analysis` and
/// `vulnerability_fix`, wherever it sits in the response.
pub fn parse_verdict(text: &str) -> Result<VerdictObject, ParseError> {
    for (i, _) in text.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        let Some(Ok(serde_json::Value::Object(obj))) = stream.next() else {
            continue;
        };
        let (Some(analysis), Some(fix)) = (obj.get("analysis"), obj.get("vulnerability_fix"))
        else {
            continue;
        };
        let Some(analysis) = analysis.as_str() else {
            continue;
        };
        let verdict = match fix.as_str().map(|s| s.trim().to_ascii_lowercase()) {
            Some(v) if v == "yes" => Verdict::Yes,
            Some(v) if v == "no" => Verdict::No,
            Some(_) => {
                return Err(ParseError::BadVerdictValue(
                    fix.as_str().unwrap().to_owned(),
                ))
            }
            None => return Err(ParseError::BadVerdictValue(fix.to_string())),
        };
        return Ok(VerdictObject {
            analysis: analysis.to_owned(),
            vulnerability_fix: verdict,
        });
    }
    Err(ParseError::NoObjectFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArtifactKind, Language};
    use chrono::NaiveDate;

    fn commit(message: &str, diff: &str) -> Commit {
        Commit::new(
            "gpac/gpac",
            "c88df2e202efad214c25b4e586f243b2038779ba",
            message,
            diff,
            Language::C,
            NaiveDate::from_ymd_opt(2023, 5, 2).unwrap(),
        )
    }

    fn summary(tag: &str) -> ThreeAspectSummary {
        ThreeAspectSummary {
            summary: vec![KeyPoint::new(format!("{tag}-s"), "what")],
            purpose: vec![KeyPoint::new(format!("{tag}-p"), "why")],
            implications: vec![KeyPoint::new(format!("{tag}-i"), "impact")],
        }
    }

    #[test]
    fn cci_contains_instructions_and_headings_in_order() {
        let req = render_cci(&commit("fixed #2475", "+x"), "m").unwrap();
        assert_eq!(req.system, CCI_SYSTEM);
        assert!(req.user.contains("Think step by step"));
        let a = req.user.find("1. Code Change Summary").unwrap();
        let b = req.user.find("2. Purpose of the Change").unwrap();
        let c = req.user.find("3. Implications of the Change").unwrap();
        assert!(a < b && b < c);
        assert!(req
            .user
            .starts_with("You are given the following software patch: fixed #2475\n+x\n"));
    }

    #[test]
    fn empty_commit_is_rejected() {
        assert_eq!(
            render_cci(&commit("", " "), "m"),
            Err(PromptError::EmptyCommit)
        );
    }

    #[test]
    fn literal_substitution_does_not_rescan() {
        let req = render_cci(
            &commit("mentions {Commit} and {CCI component output}", "+"),
            "m",
        )
        .unwrap();
        assert!(req
            .user
            .contains("mentions {Commit} and {CCI component output}"));
    }

    #[test]
    fn da_embeds_title_and_body_as_json() {
        let art = DevArtifact {
            kind: ArtifactKind::IssueReport,
            number: 2475,
            title: "Segv in filter_session".into(),
            body: "line1\n\"quoted\"".into(),
            source_url: String::new(),
            linked_commit_id: String::new(),
            state: None,
        };
        let req = render_da(&art, "m").unwrap();
        assert!(req.user.contains(
            r#"related to a commit:{"title":"Segv in filter_session","body":"line1\n\"quoted\""}"#
        ));
        assert!(req.user.contains("2. Purpose of the report"));
        let empty = DevArtifact {
            title: " ".into(),
            body: String::new(),
            ..art
        };
        assert_eq!(render_da(&empty, "m"), Err(PromptError::EmptyArtifact));
    }

    #[test]
    fn templates_declare_expected_placeholders() {
        assert_eq!(
            PromptTemplate::get(TemplateName::CCI).placeholders(),
            vec![P_COMMIT]
        );
        assert_eq!(
            PromptTemplate::get(TemplateName::CAVFD).placeholders(),
            vec![P_COMMIT, P_DA, P_CCI, P_HV_DESC, P_HV_ASPECTS]
        );
    }

    #[test]
    fn ablated_inputs_never_render() {
        let c = commit("msg", "+diff");
        let cci = summary("CCIMARK");
        let hv_aspects = summary("HVMARK");
        let da = vec![ArtifactSummary {
            kind: ArtifactKind::PullRequest,
            number: 7,
            summary: summary("DAMARK"),
        }];
        let inputs = CavfdInputs {
            cci: Some(&cci),
            da: Some(&da),
            hv: Some(HvContext {
                description: "HVDESC",
                three_aspects: &hv_aspects,
            }),
        };
        let full = render_cavfd(&c, &inputs, &AblationMode::full(), "m").user;
        for mark in [
            "CCIMARK",
            "DAMARK",
            "HVMARK",
            "HVDESC",
            "Artifact 1 (Pull Request #7):",
        ] {
            assert!(full.contains(mark), "{mark}");
        }
        assert!(full.contains("2. Analysis:"));

        let no_hv = render_cavfd(&c, &inputs, &AblationMode::without(Component::HV), "m").user;
        assert!(!no_hv.contains("HVMARK") && !no_hv.contains("HVDESC"));
        assert!(no_hv.contains(
            "4. Similar Historical Vulnerability Fix Information: None available.\n5. Three Aspect Analysis of the Historical Vulnerability Fix: None available.\n"
        ));

        let no_cci = render_cavfd(&c, &inputs, &AblationMode::without(Component::CCI), "m").user;
        assert!(!no_cci.contains("CCIMARK") && no_cci.contains("DAMARK"));

        let vanilla = render_cavfd(&c, &inputs, &AblationMode::vanilla(), "m").user;
        assert!(!vanilla.contains("Three Aspect"));
        assert!(!vanilla.contains("MARK"));
        assert!(vanilla
            .contains("Determine whether the current patch is intended to fix a vulnerability"));
        assert!(vanilla.contains("\"vulnerability_fix\""));
    }

    #[test]
    fn artifacts_are_capped() {
        let c = commit("msg", "+diff");
        let da: Vec<_> = (1..=5)
            .map(|n| ArtifactSummary {
                kind: ArtifactKind::IssueReport,
                number: n,
                summary: summary("x"),
            })
            .collect();
        let inputs = CavfdInputs {
            da: Some(&da),
            ..Default::default()
        };
        let user = render_cavfd(&c, &inputs, &AblationMode::full(), "m").user;
        assert!(user.contains("Artifact 3 (Issue Report #3):"));
        assert!(!user.contains("Artifact 4"));
    }

    #[test]
    fn template_example_is_parseable() {
        let example = CCI_USER.split("desired format:\n").nth(1).unwrap();
        let s = parse_three_aspects(example).unwrap();
        assert_eq!(s.summary.len(), 2);
        assert_eq!(s.summary[1].label, "Optional Key Point");
        assert_eq!(s.implications[0].description, "<description>");
        let da_example = DA_USER.split("desired format:\n").nth(1).unwrap();
        assert!(parse_three_aspects(da_example).is_ok());
    }

    #[test]
    fn format_then_parse_round_trips() {
        let s = ThreeAspectSummary {
            summary: vec![
                KeyPoint::new("A", "one"),
                KeyPoint::new("B", "two: with colon"),
            ],
            purpose: vec![KeyPoint::new("C", "three")],
            implications: vec![KeyPoint::new("D", "")],
        };
        assert_eq!(parse_three_aspects(&format_patch_summary(&s)).unwrap(), s);
        assert_eq!(parse_three_aspects(&format_report_summary(&s)).unwrap(), s);
    }

    #[test]
    fn missing_and_empty_sections() {
        let text = "1. Code Change Summary\n- [A]: a\n2. Purpose of the Change\n- [B]: b\n";
        assert_eq!(
            parse_three_aspects(text),
            Err(ParseError::MissingSection("Implications"))
        );
        let text = "1. Code Change Summary\n- [A]: a\n2. Purpose of the Change\nprose only\n3. Implications of the Change\n- [C]: c";
        assert_eq!(
            parse_three_aspects(text),
            Err(ParseError::NoBullets("Purpose"))
        );
    }

    #[test]
    fn heading_variants() {
        for h in [
            "1. Code Change Summary",
            "**1. Code Change Summary:**",
            "### Code Change Summary",
            "1) summary of the report:",
            "Summary:",
        ] {
            assert_eq!(heading_aspect(h), Some(Aspect::Summary), "{h}");
        }
        assert_eq!(heading_aspect("- [Summary]: x"), None);
        assert_eq!(heading_aspect("Summary of everything we saw"), None);
    }

    #[test]
    fn verdict_object_parses() {
        let v = parse_verdict(r#"{"analysis":"bounds check added","vulnerability_fix":"yes"}"#)
            .unwrap();
        assert_eq!(v.vulnerability_fix, Verdict::Yes);
        assert_eq!(v.analysis, "bounds check added");
    }

    #[test]
    fn verdict_inside_chatter_and_fences() {
        let text = "Sure! {not json} Here is my answer:\n```json\n{\"analysis\": \"a {b}\", \"vulnerability_fix\": \" NO \"}\n```\nThanks.";
        let v = parse_verdict(text).unwrap();
        assert_eq!(v.vulnerability_fix, Verdict::No);
        assert_eq!(v.analysis, "a {b}");
    }

    #[test]
    fn verdict_errors() {
        assert_eq!(
            parse_verdict(r#"{"vulnerability_fix":"maybe","analysis":"?"}"#),
            Err(ParseError::BadVerdictValue("maybe".into()))
        );
        assert_eq!(
            parse_verdict(r#"{"analysis":"only analysis"}"#),
            Err(ParseError::NoObjectFound)
        );
        assert_eq!(parse_verdict("yes"), Err(ParseError::NoObjectFound));
        assert_eq!(
            parse_verdict(r#"{"analysis":"x","vulnerability_fix":true}"#),
            Err(ParseError::BadVerdictValue("true".into()))
        );
    }

    #[test]
    fn nested_object_with_both_keys_is_found() {
        let text = r#"{"result": {"analysis": "inner", "vulnerability_fix": "yes"}}"#;
        assert_eq!(parse_verdict(text).unwrap().analysis, "inner");
    }
}
