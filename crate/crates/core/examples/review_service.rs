//! Start the review API on a local port, record a reviewer verdict and
//! promote the confirmed fix into the history store.
//!
//! ```bash
//! cargo run --example review_service
//! ```

use std::sync::{Arc, RwLock};

use vfd::demo;
use vfd::gateway::{Gateway, GatewayConfig, MockBackend};
use vfd::hv::HashProjectionEmbedder;
use vfd::model::AblationMode;
use vfd::pipeline::{Detector, DetectorConfig};
use vfd::review::{router, HvHandle, ReviewState, VerdictStore};

fn main() {
    let dir = std::env::temp_dir().join(format!("vfd-review-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let embedder = Arc::new(HashProjectionEmbedder::new(32));
    let store = demo::store(embedder.as_ref()).unwrap();
    store.save(&dir.join("hv.bin")).unwrap();

    let gateway = Arc::new(Gateway::new(
        Arc::new(MockBackend::new(demo::script())),
        GatewayConfig::default(),
    ));
    let detector = Detector::new(gateway, DetectorConfig::new("mock"))
        .with_hv(embedder.clone(), Arc::new(store.clone()));
    let entries = demo::dataset(8);
    let results = entries
        .iter()
        .map(|e| {
            detector
                .detect(&e.commit, &e.artifacts, &AblationMode::full())
                .unwrap()
        })
        .collect();

    let state = ReviewState::new(
        results,
        entries.clone(),
        VerdictStore::open(dir.join("verdicts.jsonl")).unwrap(),
    )
    .with_cves(demo::cves(8))
    .with_hv(HvHandle {
        store: RwLock::new(store),
        path: dir.join("hv.bin"),
        embedder,
    });

    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, router(Arc::new(state))).await });
    println!("review API on {base}");

    let http = reqwest::blocking::Client::new();
    let id = entries[0].commit.id.replace('/', "%2F");
    let show = |r: reqwest::blocking::Response| println!("{} {}", r.status(), r.text().unwrap());

    show(
        http.get(format!("{base}/api/items?page_size=3"))
            .send()
            .unwrap(),
    );
    let verdict = r#"{"answers": {"explains_intent": true, "characterizes_vulnerability": true,
        "explains_root_cause": true, "improves_efficiency": true, "satisfied": true},
        "final": "ConfirmVF", "comment": "length check before copy"}"#;
    show(
        http.post(format!("{base}/api/items/{id}/verdict"))
            .header("content-type", "application/json")
            .header("x-reviewer", "example")
            .body(verdict)
            .send()
            .unwrap(),
    );
    show(
        http.post(format!("{base}/api/items/{id}/promote"))
            .header("content-type", "application/json")
            .body("{}")
            .send()
            .unwrap(),
    );
    show(http.get(format!("{base}/api/summary")).send().unwrap());
    std::fs::remove_dir_all(&dir).ok();
}
