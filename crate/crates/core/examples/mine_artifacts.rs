//! Discover issue reports and pull requests for a commit: autolinks in the
//! message plus the forge's commit-to-PR association endpoint. HTTP is
//! replayed from an in-memory cassette.
//!
//! ```bash
//! cargo run --example mine_artifacts
//! ```

use std::sync::Arc;

use chrono::NaiveDate;
use serde_json::json;
use vfd::forge::{parse_autolink_refs, ForgeClient, ForgeConfig};
use vfd::http::{Cassette, Interaction, Method};
use vfd::model::{Commit, Language};

fn get(path: &str, status: u16, body: serde_json::Value) -> Interaction {
    Interaction {
        method: Method::Get,
        path: path.into(),
        status,
        headers: Default::default(),
        body,
        transport_error: None,
    }
}

fn main() {
    for msg in [
        "fixed #2475",
        "see apache/tika#45 and https://github.com/gpac/gpac/pull/7",
        "bump version",
    ] {
        println!("{msg:?} -> {:?}", parse_autolink_refs(msg, "gpac/gpac"));
    }

    let hash = "b43f9d1a4b4e33d08edaef6d313e6ce4bdf554d3";
    let tape = Arc::new(Cassette::new([
        get(
            &format!("/repos/gpac/gpac/commits/{hash}/pulls?per_page=100"),
            200,
            json!([{"number": 2476}]),
        ),
        get(
            "/repos/gpac/gpac/issues/2475",
            200,
            json!({"number": 2475, "title": "SEGV in naludmx", "body": "ASAN log"}),
        ),
        get(
            "/repos/gpac/gpac/pulls/2476",
            200,
            json!({"number": 2476, "title": "Fix SPS index", "body": "Closes #2475"}),
        ),
        get(
            "/repos/gpac/gpac/issues/31337",
            404,
            json!({"message": "Not Found"}),
        ),
        get(
            "/repos/gpac/gpac/pulls/31337",
            404,
            json!({"message": "Not Found"}),
        ),
    ]));
    let client = ForgeClient::new(
        tape.clone(),
        ForgeConfig {
            token: None,
            ..ForgeConfig::default()
        },
    );
    let commit = Commit::new(
        "gpac/gpac",
        hash,
        "fixed #2475, see #31337",
        "+x",
        Language::C,
        NaiveDate::from_ymd_opt(2023, 5, 23).unwrap(),
    );
    let mined = client.mine_commit_artifacts(&commit).unwrap();
    for a in &mined.artifacts {
        println!("{} #{}: {} ({})", a.kind, a.number, a.title, a.source_url);
    }
    for w in &mined.warnings {
        println!("warning: {w}");
    }
    println!("{} requests replayed", tape.requests().len());
}
