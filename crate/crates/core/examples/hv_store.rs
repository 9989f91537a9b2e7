//! Embed three-aspect summaries of past fixes, persist them, and look up the
//! nearest one for a new commit in the same language.
//!
//! ```bash
//! cargo run --example hv_store
//! ```

use vfd::demo;
use vfd::hv::{canonicalize, embed, HashProjectionEmbedder, HvStore};
use vfd::model::{KeyPoint, Language, ThreeAspectSummary};

fn main() {
    let embedder = HashProjectionEmbedder::new(64);
    let store = demo::store(&embedder).unwrap();
    println!(
        "{} records, dim {}, model {}",
        store.len(),
        store.dim(),
        store.embedding_model()
    );

    let dir = std::env::temp_dir().join(format!("vfd-hv-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("hv.bin");
    store.save(&path).unwrap();
    let store = HvStore::load(&path).unwrap();
    println!("header: {:?}", HvStore::read_header(&path).unwrap());

    let query = ThreeAspectSummary {
        summary: vec![KeyPoint::new("Validation", "checks an index before use")],
        purpose: vec![KeyPoint::new("Fix", "prevents an out-of-bounds read")],
        implications: vec![KeyPoint::new("Security", "closes a crash vector")],
    };
    println!("query text:\n{}", canonicalize(&query));
    let v = embed(&embedder, &query).unwrap();
    for lang in [Language::C, Language::Java, Language::Go] {
        match store.nearest(&v, lang).unwrap() {
            Some(hit) => println!("{lang:?}: {} at {:.4}", hit.record.cve_id, hit.distance),
            None => println!("{lang:?}: no history"),
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}
