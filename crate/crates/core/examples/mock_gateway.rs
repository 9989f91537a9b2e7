//! Scripted chat backend behind the gateway: substring rules, exact
//! fingerprints, response caching and the in-flight cap.
//!
//! ```bash
//! cargo run --example mock_gateway
//! ```

use std::sync::Arc;

use vfd::gateway::{fingerprint, ChatRequest, Gateway, GatewayConfig, MockBackend, MockScript};

fn main() {
    let pinned = ChatRequest::new("system", "exactly this prompt", "m");
    let script = MockScript::new()
        .with_fingerprint(fingerprint(&pinned), "pinned answer")
        .with_substring(
            "overflow",
            r#"{"analysis": "bounds check", "vulnerability_fix": "yes"}"#,
        )
        .with_default(r#"{"analysis": "docs only", "vulnerability_fix": "no"}"#);
    let backend = Arc::new(MockBackend::new(script));
    let gateway = Gateway::new(
        backend.clone(),
        GatewayConfig {
            max_prompt_tokens: Some(4096),
            max_in_flight: Some(2),
            cache: true,
        },
    );

    for user in [
        "exactly this prompt",
        "fix heap overflow in parser",
        "update README",
    ] {
        let resp = gateway
            .complete(&ChatRequest::new("system", user, "m"))
            .unwrap();
        println!("{user:>30} -> {}", resp.text);
    }
    // answered from the cache, so the backend sees it only once
    gateway
        .complete(&ChatRequest::new("system", "update README", "m"))
        .unwrap();
    println!("backend calls: {}", backend.sent().len());

    let huge = "word ".repeat(10_000);
    let err = gateway
        .complete(&ChatRequest::new("system", huge, "m"))
        .unwrap_err();
    println!("oversized prompt: {err}");
    println!("config digest: {}", gateway.config_digest());
}
