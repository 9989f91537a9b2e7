//! Label wrong predictions with a failure reason and tally them by outcome.
//!
//! ```bash
//! cargo run --example failure_tagging
//! ```

use std::sync::Arc;

use vfd::demo;
use vfd::eval::{aggregate_tags, tag_failure, tag_table, TagLog};
use vfd::gateway::{Gateway, GatewayConfig, MockBackend};
use vfd::model::{AblationMode, FailureTag, Label, Verdict};
use vfd::pipeline::{Detector, DetectorConfig};

fn main() {
    let gateway = Arc::new(Gateway::new(
        Arc::new(MockBackend::new(demo::script())),
        GatewayConfig::default(),
    ));
    let detector = Detector::new(gateway, DetectorConfig::new("mock"));
    let log_path = std::env::temp_dir().join(format!("vfd-tags-{}.jsonl", std::process::id()));
    let log = TagLog::new(&log_path);

    for entry in demo::dataset(24) {
        let r = detector
            .detect(&entry.commit, &entry.artifacts, &AblationMode::vanilla())
            .unwrap();
        let tag = match (r.verdict, entry.label) {
            (Verdict::Yes, Label::NVF) => FailureTag::NonVulnSecurityFixAsVF,
            (Verdict::No, Label::VF) => FailureTag::MissedSecurityChange,
            _ => continue,
        };
        log.append(&tag_failure(&r, entry.label, tag, "demo").unwrap())
            .unwrap();
    }
    print!("{}", tag_table(&aggregate_tags(&log.current().unwrap())));
    std::fs::remove_file(&log_path).ok();
}
