//! Run the full detector on one commit: intent summary, linked-report
//! summaries, nearest historical fix, then the final verdict.
//!
//! ```bash
//! cargo run --example detect_commit
//! ```

use std::sync::Arc;

use vfd::demo;
use vfd::gateway::{Gateway, GatewayConfig, MockBackend};
use vfd::hv::HashProjectionEmbedder;
use vfd::model::AblationMode;
use vfd::pipeline::{Detector, DetectorConfig};

fn main() {
    let backend = Arc::new(MockBackend::new(demo::script()));
    let gateway = Arc::new(Gateway::new(backend.clone(), GatewayConfig::default()));
    let embedder = Arc::new(HashProjectionEmbedder::new(32));
    let store = Arc::new(demo::store(embedder.as_ref()).unwrap());
    let detector = Detector::new(gateway, DetectorConfig::new("mock")).with_hv(embedder, store);

    let entry = &demo::dataset(4)[0];
    let result = detector
        .detect(&entry.commit, &entry.artifacts, &AblationMode::full())
        .unwrap();
    println!("{} -> {:?}", result.commit_id, result.verdict);
    println!("inputs used: {:?}", result.inputs_used);
    if let Some(m) = &result.hv_match {
        println!("nearest historical fix: {m:?}");
    }
    println!("analysis: {}", result.analysis);
    println!("{} model calls", backend.sent().len());
}
