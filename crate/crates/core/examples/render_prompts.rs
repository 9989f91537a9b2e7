//! Render every prompt the pipeline sends for one commit, without calling a
//! model.
//!
//! ```bash
//! cargo run --example render_prompts
//! ```

use chrono::NaiveDate;
use vfd::model::{
    AblationMode, ArtifactKind, Commit, DevArtifact, KeyPoint, Language, ThreeAspectSummary,
};
use vfd::prompts::{parse_three_aspects, render_cavfd, render_cci, render_da, CavfdInputs};

fn main() {
    let commit = Commit::new(
        "gpac/gpac",
        "b43f9d1a4b4e33d08edaef6d313e6ce4bdf554d3",
        "fixed #2475",
        "-\t\tif (idx < 0) {\n+\t\tif ((idx < 0) || (idx >= 32)) {",
        Language::C,
        NaiveDate::from_ymd_opt(2023, 5, 23).unwrap(),
    );
    let issue = DevArtifact {
        kind: ArtifactKind::IssueReport,
        number: 2475,
        title: "heap-buffer-overflow in naludmx_parse_nal_avc".into(),
        body: "ASAN report attached".into(),
        source_url: "https://github.com/gpac/gpac/issues/2475".into(),
        linked_commit_id: commit.id.clone(),
        state: Some("closed".into()),
    };

    let cci = render_cci(&commit, "any-model").unwrap();
    println!(
        "== CCI system ==\n{}\n== CCI user ==\n{}\n",
        cci.system, cci.user
    );
    let da = render_da(&issue, "any-model").unwrap();
    println!("== DA user ==\n{}\n", da.user);

    // a reply in the format the template asks for
    let reply = "1. Code Change Summary\n- [Bounds check]: rejects SPS ids >= 32\n\
                 2. Purpose of the Change\n- [Memory safety]: avoids reading past the SPS table\n\
                 3. Implications of the Change\n- [Hardening]: crafted streams no longer crash";
    let summary: ThreeAspectSummary = parse_three_aspects(reply).unwrap();
    assert_eq!(
        summary.summary[0],
        KeyPoint::new("Bounds check", "rejects SPS ids >= 32")
    );

    let inputs = CavfdInputs {
        cci: Some(&summary),
        ..Default::default()
    };
    for mode in [AblationMode::full(), AblationMode::vanilla()] {
        let req = render_cavfd(&commit, &inputs, &mode, "any-model");
        println!("== final prompt, {} ==\n{}\n", mode.name(), req.user);
    }
}
