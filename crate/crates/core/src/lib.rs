//! Vulnerability-fix detection for commits.
//!
//! A commit is enriched with a distilled three-aspect summary of its intent,
//! summaries of linked issue reports and pull requests, and the most similar
//! historical vulnerability fix, then a chat model is asked for a yes/no
//! verdict with an analysis a reviewer can read.
//!
//! The crate is organized by stage:
//!
//! - [`model`]: shared record types and dataset validation
//! - [`gateway`]: chat backends (remote and scripted mock)
//! - [`prompts`]: prompt templates and output parsers
//! - [`forge`]: issue / pull request discovery for a commit
//! - [`dataset`]: CVE ingestion, sampling, splitting and length filtering
//! - [`demo`]: a synthetic offline corpus for examples and smoke tests
//! - [`hv`]: embedding and exact nearest-neighbor store of past fixes
//! - [`pipeline`]: per-commit orchestration and dataset runs
//! - [`eval`]: metrics, ablation tables and failure tagging
//! - [`review`]: verdict store, promotion and the HTTP review service
//! - [`cli`]: the `vfd` command line

pub mod cli;
pub mod dataset;
pub mod demo;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod http;
pub mod hv;
pub mod jsonl;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod review;
pub mod tokenize;
