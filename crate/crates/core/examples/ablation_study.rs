//! Run the five ablation settings over a small dataset and compare them.
//!
//! ```bash
//! cargo run --example ablation_study
//! ```

use std::sync::Arc;

use vfd::demo;
use vfd::eval::{compare_runs, evaluate};
use vfd::gateway::{Gateway, GatewayConfig, MockBackend};
use vfd::hv::HashProjectionEmbedder;
use vfd::model::AblationMode;
use vfd::pipeline::{run_dataset, Detector, DetectorConfig, RunManifest, RunOptions};

fn main() {
    let entries = demo::dataset(40);
    let embedder = Arc::new(HashProjectionEmbedder::new(32));
    let store = Arc::new(demo::store(embedder.as_ref()).unwrap());
    let gateway = Arc::new(Gateway::new(
        Arc::new(MockBackend::new(demo::script())),
        GatewayConfig::default(),
    ));
    let detector = Detector::new(gateway, DetectorConfig::new("mock")).with_hv(embedder, store);

    let dir = std::env::temp_dir().join(format!("vfd-ablation-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut reports = Vec::new();
    for mode in AblationMode::study() {
        let out = dir.join(format!("{}.jsonl", mode.slug()));
        let manifest = RunManifest {
            dataset: "demo".into(),
            mode: mode.clone(),
            model: "mock".into(),
            hv_store: None,
            seed: 0,
            started_at: chrono::Utc::now().to_rfc3339(),
            gateway_config_digest: detector.gateway().config_digest(),
            strict_ablation: false,
        };
        run_dataset(&detector, &entries, manifest, &RunOptions::new(&out)).unwrap();
        let results: Vec<_> = vfd::jsonl::read(&out).unwrap();
        reports.push((mode, evaluate(&results, &entries).unwrap()));
    }
    print!("{}", compare_runs(&reports).unwrap().to_text());
    std::fs::remove_dir_all(&dir).ok();
}
