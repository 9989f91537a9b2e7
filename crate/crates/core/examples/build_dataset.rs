//! Build an evaluation dataset: split CVEs at the history cutoff, pick fix
//! commits, sample 16 negatives per fix from the same repository and drop
//! the longest patches.
//!
//! ```bash
//! cargo run --example build_dataset
//! ```

use vfd::dataset::{build_dataset, history_cutoff, SamplingSpec, DEFAULT_PERCENTILE};
use vfd::demo;
use vfd::model::Label;
use vfd::tokenize::WordPunctTokenizer;

fn main() {
    let spec = SamplingSpec {
        nvf_per_vf: 16,
        seed: 42,
    };
    let built = build_dataset(
        demo::cves(20),
        &demo::catalog(20, 100),
        &spec,
        &WordPunctTokenizer,
        DEFAULT_PERCENTILE,
        history_cutoff(),
    )
    .expect("demo corpus builds");

    let vf = built
        .entries
        .iter()
        .filter(|e| e.label == Label::VF)
        .count();
    println!(
        "{} entries: {vf} fixes, {} negatives",
        built.entries.len(),
        built.entries.len() - vf
    );
    println!("length threshold: {} tokens", built.metadata.threshold);
    println!("{}", serde_json::to_string_pretty(&built.metadata).unwrap());

    // same seed, same dataset
    let again = build_dataset(
        demo::cves(20),
        &demo::catalog(20, 100),
        &spec,
        &WordPunctTokenizer,
        DEFAULT_PERCENTILE,
        history_cutoff(),
    )
    .unwrap();
    assert_eq!(again.entries, built.entries);
}
