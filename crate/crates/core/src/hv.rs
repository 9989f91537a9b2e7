//! Historical vulnerability store: embeds three-aspect summaries and answers
//! exact nearest-neighbour queries restricted to one language.
//!
//! On disk a store is two files. The vector file holds an 8-byte magic, a
//! little-endian `u32` header length, a JSON [`StoreHeader`], then `count × dim`
//! little-endian `f32`s. The sidecar `<store>.meta.jsonl` holds one
//! [`HVRecord`] per line with an empty `embedding`. Both are replaced
//! atomically and the header carries the sidecar digest so a torn pair is
//! detected on load.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::history_cutoff;
use crate::http::{HttpRequest, HttpTransport};
use crate::jsonl::{self, tmp_path, JsonlError};
use crate::model::{Aspect, HVRecord, Language, ThreeAspectSummary};
use crate::tokenize::WordPunctTokenizer;

pub const DEFAULT_EMBEDDING_MODEL: &str = "gte-Qwen2-7B-instruct";
/// Bump whenever [`canonicalize`] changes; stored vectors are tied to it.
pub const CANONICALIZATION: &str = "canon-v1";
pub const METRIC: &str = "euclidean";
const MAGIC: &[u8; 8] = b"VFDHV\x00\x01\x00";

#[derive(Debug, thiserror::Error)]
pub enum HvError {
    #[error("embedding transport: {0}")]
    Transport(String),
    #[error("expected {expected} dimensions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("{0} was disclosed on or after the historical cutoff")]
    DateViolation(String),
    #[error("store canonicalization `{found}` does not match `{expected}`")]
    Canonicalization { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HvError + '_ {
    move |source| HvError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Fixed-order, fixed-header text fed to the embedder.
pub fn canonicalize(summary: &ThreeAspectSummary) -> String {
    let mut out = String::new();
    for aspect in Aspect::ALL {
        out.push_str(aspect.name());
        out.push_str(":\n");
        for kp in summary.aspect(aspect) {
            out.push_str("- [");
            out.push_str(kp.label.trim());
            out.push_str("]: ");
            out.push_str(kp.description.trim());
            out.push('\n');
        }
    }
    out
}

pub trait Embedder: Send + Sync {
    fn model(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>, HvError>;
}

/// Embeds the canonical form of `summary`, checking length and finiteness.
pub fn embed(embedder: &dyn Embedder, summary: &ThreeAspectSummary) -> Result<Vec<f32>, HvError> {
    let v = embedder.embed_text(&canonicalize(summary))?;
    check_vector(&v, embedder.dim())?;
    Ok(v)
}

fn check_vector(v: &[f32], dim: usize) -> Result<(), HvError> {
    if v.len() != dim {
        return Err(HvError::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(HvError::NonFinite);
    }
    Ok(())
}

/// Offline embedder: each lowercased token adds ±1 to a few FNV-hashed
/// coordinates; the result is L2-normalised. Deterministic across runs and
/// platforms.
#[derive(Debug, Clone)]
pub struct HashProjectionEmbedder {
    dim: usize,
}

impl HashProjectionEmbedder {
    pub const MODEL: &'static str = "hash-projection-v1";
    const PROBES: u64 = 3;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        HashProjectionEmbedder { dim }
    }
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Embedder for HashProjectionEmbedder {
    fn model(&self) -> &str {
        Self::MODEL
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, HvError> {
        let mut acc = vec![0f64; self.dim];
        for tok in WordPunctTokenizer::tokens(text) {
            let tok = tok.to_lowercase();
            for probe in 0..Self::PROBES {
                let h = fnv1a(tok.as_bytes(), probe);
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                acc[(h % self.dim as u64) as usize] += sign;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        Ok(acc.into_iter().map(|x| (x * scale) as f32).collect())
    }
}

/// `POST {input, model}` → `{embedding: [..]}`.
pub struct RemoteEmbedder {
    transport: Arc<dyn HttpTransport>,
    url: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
}

impl RemoteEmbedder {
    pub fn new(transport: Arc<dyn HttpTransport>, url: impl Into<String>, dim: usize) -> Self {
        RemoteEmbedder {
            transport,
            url: url.into(),
            model: DEFAULT_EMBEDDING_MODEL.into(),
            dim,
            api_key: None,
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

impl Embedder for RemoteEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, HvError> {
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f32>,
        }
        let body = serde_json::json!({"input": text, "model": self.model});
        let req = HttpRequest::post_json(&self.url, &body).bearer(self.api_key.as_deref());
        let resp = self
            .transport
            .send(&req)
            .map_err(|e| HvError::Transport(e.to_string()))?;
        if !resp.is_success() {
            return Err(HvError::Transport(format!(
                "status {}: {}",
                resp.status, resp.body
            )));
        }
        let reply: Reply = serde_json::from_str(&resp.body)
            .map_err(|e| HvError::Transport(format!("malformed embedding reply: {e}")))?;
        check_vector(&reply.embedding, self.dim)?;
        Ok(reply.embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub dim: usize,
    pub count: usize,
    pub metric: String,
    pub canonicalization: String,
    pub embedding_model: String,
    pub meta_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvQueryResult {
    pub record: HVRecord,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryOptions {
    /// Skip records promoted from reviewed results, e.g. while evaluating on
    /// the very commits they came from.
    pub exclude_promoted: bool,
}

/// Vectors live in one flat buffer; records keep an empty `embedding` and
/// get it back only when returned from a query.
#[derive(Debug, Clone)]
pub struct HvStore {
    dim: usize,
    embedding_model: String,
    records: Vec<HVRecord>,
    vectors: Vec<f32>,
    by_language: BTreeMap<Language, Vec<usize>>,
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl HvStore {
    pub fn empty(dim: usize, embedding_model: impl Into<String>) -> Self {
        HvStore {
            dim,
            embedding_model: embedding_model.into(),
            records: Vec::new(),
            vectors: Vec::new(),
            by_language: BTreeMap::new(),
        }
    }

    /// Validates and indexes `records`. Every record must carry a `dim`-length
    /// finite embedding and, unless promoted, predate the historical cutoff.
    pub fn build(
        records: Vec<HVRecord>,
        dim: usize,
        embedding_model: impl Into<String>,
    ) -> Result<Self, HvError> {
        let mut store = HvStore::empty(dim, embedding_model);
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    fn validate(&self, r: &HVRecord) -> Result<(), HvError> {
        if !r.is_promoted() && r.disclosed_at >= history_cutoff() {
            return Err(HvError::DateViolation(r.cve_id.clone()));
        }
        check_vector(&r.embedding, self.dim)
    }

    fn push(&mut self, mut r: HVRecord) -> Result<(), HvError> {
        self.validate(&r)?;
        self.vectors.extend_from_slice(&r.embedding);
        r.embedding = Vec::new();
        self.by_language
            .entry(r.language)
            .or_default()
            .push(self.records.len());
        self.records.push(r);
        Ok(())
    }

    /// Adds `record` unless one with the same CVE and fix commit is present.
    /// Returns whether the store changed.
    pub fn append(&mut self, record: HVRecord) -> Result<bool, HvError> {
        let dup = self
            .records
            .iter()
            .any(|r| r.cve_id == record.cve_id && r.fix_commit.id == record.fix_commit.id);
        if dup {
            return Ok(false);
        }
        self.push(record)?;
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embedding_model(&self) -> &str {
        &self.embedding_model
    }

    fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Full record, embedding included.
    pub fn record(&self, i: usize) -> HVRecord {
        let mut r = self.records[i].clone();
        r.embedding = self.vector(i).to_vec();
        r
    }

    /// Records without their embeddings; cheap to scan.
    pub fn metadata(&self) -> &[HVRecord] {
        &self.records
    }

    pub fn records(&self) -> impl Iterator<Item = HVRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    pub fn nearest(
        &self,
        query: &[f32],
        language: Language,
    ) -> Result<Option<HvQueryResult>, HvError> {
        Ok(self
            .nearest_k(query, language, 1, QueryOptions::default())?
            .into_iter()
            .next())
    }

    /// Exact scan over records of `language`, ordered by distance then
    /// `cve_id` then fix-commit id.
    pub fn nearest_k(
        &self,
        query: &[f32],
        language: Language,
        k: usize,
        opts: QueryOptions,
    ) -> Result<Vec<HvQueryResult>, HvError> {
        check_vector(query, self.dim)?;
        let Some(idx) = self.by_language.get(&language) else {
            return Ok(Vec::new());
        };
        let mut scored: Vec<(f64, usize)> = idx
            .iter()
            .filter(|&&i| !(opts.exclude_promoted && self.records[i].is_promoted()))
            .map(|&i| (euclidean(query, self.vector(i)), i))
            .collect();
        let key = |i: usize| (&self.records[i].cve_id, &self.records[i].fix_commit.id);
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| key(a.1).cmp(&key(b.1))));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(distance, i)| HvQueryResult {
                record: self.record(i),
                distance,
            })
            .collect())
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        let mut name = path
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".meta.jsonl");
        path.with_file_name(name)
    }

    /// Writes both files through temp-then-rename; the sidecar goes first so
    /// the vector file (which names its digest) always lands last.
    pub fn save(&self, path: &Path) -> Result<(), HvError> {
        let meta_path = Self::meta_path(path);
        let mut meta = String::new();
        for r in &self.records {
            meta.push_str(&jsonl::to_line(r));
        }
        let header = StoreHeader {
            dim: self.dim,
            count: self.len(),
            metric: METRIC.into(),
            canonicalization: CANONICALIZATION.into(),
            embedding_model: self.embedding_model.clone(),
            meta_sha256: hex::encode(Sha256::digest(meta.as_bytes())),
        };
        write_atomic(&meta_path, meta.as_bytes())?;

        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(12 + header_json.len() + self.vectors.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header_json);
        for x in &self.vectors {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        write_atomic(path, &buf)
    }

    pub fn read_header(path: &Path) -> Result<StoreHeader, HvError> {
        let mut f = std::fs::File::open(path).map_err(io_err(path))?;
        read_header_from(&mut f, path)
    }

    pub fn load(path: &Path) -> Result<Self, HvError> {
        let bad = |message: String| HvError::Format {
            path: path.to_owned(),
            message,
        };
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err(path))?);
        let header = read_header_from(&mut f, path)?;
        if header.canonicalization != CANONICALIZATION {
            return Err(HvError::Canonicalization {
                expected: CANONICALIZATION.into(),
                found: header.canonicalization,
            });
        }
        if header.metric != METRIC {
            return Err(bad(format!("unsupported metric `{}`", header.metric)));
        }
        let mut raw = Vec::new();
        f.read_to_end(&mut raw).map_err(io_err(path))?;
        if raw.len() != header.count * header.dim * 4 {
            return Err(bad(format!(
                "vector block is {} bytes, header implies {}",
                raw.len(),
                header.count * header.dim * 4
            )));
        }
        let vectors: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let meta_path = Self::meta_path(path);
        let meta = std::fs::read(&meta_path).map_err(io_err(&meta_path))?;
        if hex::encode(Sha256::digest(&meta)) != header.meta_sha256 {
            return Err(bad("sidecar digest does not match header".into()));
        }
        let records: Vec<HVRecord> = jsonl::parse_lines(meta.as_slice(), &meta_path)?;
        if records.len() != header.count {
            return Err(bad(format!(
                "sidecar has {} records, header says {}",
                records.len(),
                header.count
            )));
        }
        let mut store = HvStore::empty(header.dim, header.embedding_model);
        for (i, mut r) in records.into_iter().enumerate() {
            r.embedding = vectors[i * header.dim..(i + 1) * header.dim].to_vec();
            store.push(r)?;
        }
        Ok(store)
    }

    /// Distinct `(cve_id, fix commit id)` keys, for idempotence checks.
    pub fn keys(&self) -> HashSet<(String, String)> {
        self.records
            .iter()
            .map(|r| (r.cve_id.clone(), r.fix_commit.id.clone()))
            .collect()
    }
}

fn read_header_from(f: &mut impl Read, path: &Path) -> Result<StoreHeader, HvError> {
    let bad = |message: String| HvError::Format {
        path: path.to_owned(),
        message,
    };
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(bad("not a vector store file".into()));
    }
    let mut len = [0u8; 4];
    f.read_exact(&mut len).map_err(io_err(path))?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    f.read_exact(&mut header).map_err(io_err(path))?;
    serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HvError> {
    let tmp = tmp_path(path);
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{Cassette, Interaction, Method};
    use crate::model::{Commit, KeyPoint};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn summary(desc: &str) -> ThreeAspectSummary {
        ThreeAspectSummary {
            summary: vec![KeyPoint::new("Bounds", desc)],
            purpose: vec![KeyPoint::new("Safety", "prevent overflow")],
            implications: vec![KeyPoint::new("Memory", "no corruption")],
        }
    }

    fn record(cve: &str, lang: Language, v: Vec<f32>) -> HVRecord {
        HVRecord {
            cve_id: cve.into(),
            cve_description: format!("{cve} description"),
            fix_commit: Commit::new(
                "o/r",
                &format!("{:040x}", cve.len() + v.len()),
                "fix",
                "+x",
                lang,
                NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            ),
            three_aspects: summary("x"),
            embedding: v,
            language: lang,
            disclosed_at: NaiveDate::from_ymd_opt(2021, 5, 1).unwrap(),
            promoted_from: None,
        }
    }

    #[test]
    fn canonical_form_is_fixed() {
        assert_eq!(
            canonicalize(&summary("check len")),
            "Summary:\n- [Bounds]: check len\nPurpose:\n- [Safety]: prevent overflow\nImplications:\n- [Memory]: no corruption\n"
        );
    }

    #[test]
    fn mock_is_deterministic_and_sensitive() {
        let e = HashProjectionEmbedder::new(64);
        let a = embed(&e, &summary("check len")).unwrap();
        assert_eq!(a, embed(&e, &summary("check len")).unwrap());
        assert_ne!(a, embed(&e, &summary("check size")).unwrap());
        let norm: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn remote_embedder_dimension_mismatch() {
        let cassette = Cassette::new([Interaction {
            method: Method::Post,
            path: "/embed".into(),
            status: 200,
            headers: Default::default(),
            body: serde_json::json!({"embedding": [0.0, 0.1, 0.2, 0.3, 0.4]}),
            transport_error: None,
        }]);
        let e = RemoteEmbedder::new(Arc::new(cassette), "http://emb.local/embed", 1024);
        assert!(matches!(
            embed(&e, &summary("x")),
            Err(HvError::DimensionMismatch {
                expected: 1024,
                got: 5
            })
        ));
    }

    #[test]
    fn remote_embedder_sends_wire_shape() {
        let cassette = Arc::new(Cassette::new([Interaction {
            method: Method::Post,
            path: "/embed".into(),
            status: 200,
            headers: Default::default(),
            body: serde_json::json!({"embedding": [1.0, 2.0]}),
            transport_error: None,
        }]));
        let e = RemoteEmbedder::new(cassette.clone(), "http://emb.local/embed", 2);
        assert_eq!(e.embed_text("hello").unwrap(), vec![1.0, 2.0]);
        let sent: serde_json::Value =
            serde_json::from_str(cassette.requests()[0].body.as_deref().unwrap()).unwrap();
        assert_eq!(
            sent,
            serde_json::json!({"input": "hello", "model": DEFAULT_EMBEDDING_MODEL})
        );
    }

    #[test]
    fn build_rejects_post_cutoff_records() {
        let mut r = record("CVE-2023-1", Language::C, vec![0.0; 4]);
        r.disclosed_at = NaiveDate::from_ymd_opt(2023, 6, 1).unwrap();
        assert!(matches!(
            HvStore::build(vec![r.clone()], 4, "m"),
            Err(HvError::DateViolation(id)) if id == "CVE-2023-1"
        ));
        r.promoted_from = Some("o/r@1".into());
        assert_eq!(HvStore::build(vec![r], 4, "m").unwrap().len(), 1);
    }

    #[test]
    fn identity_empty_language_and_ties() {
        let store = HvStore::build(
            vec![
                record("CVE-2020-0002", Language::C, vec![1.0, 0.0]),
                record("CVE-2020-0001", Language::C, vec![-1.0, 0.0]),
                record("CVE-2020-0003", Language::Go, vec![0.0, 0.0]),
            ],
            2,
            "m",
        )
        .unwrap();
        let hit = store.nearest(&[1.0, 0.0], Language::C).unwrap().unwrap();
        assert_eq!(
            (hit.record.cve_id.as_str(), hit.distance),
            ("CVE-2020-0002", 0.0)
        );
        assert_eq!(hit.record.embedding, vec![1.0, 0.0]);
        let tie = store.nearest(&[0.0, 0.0], Language::C).unwrap().unwrap();
        assert_eq!(tie.record.cve_id, "CVE-2020-0001");
        assert!(store
            .nearest(&[0.0, 0.0], Language::Rust)
            .unwrap()
            .is_none());
        assert!(store.nearest(&[0.0], Language::C).is_err());
    }

    #[test]
    fn append_is_idempotent_and_exclusion_works() {
        let mut store = HvStore::build(
            vec![record("CVE-2020-0001", Language::C, vec![5.0, 5.0])],
            2,
            "m",
        )
        .unwrap();
        let mut promoted = record("CVE-2024-0001", Language::C, vec![0.0, 0.0]);
        promoted.disclosed_at = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        promoted.promoted_from = Some("x".into());
        assert!(store.append(promoted.clone()).unwrap());
        assert!(!store.append(promoted).unwrap());
        assert_eq!(store.len(), 2);
        let q = [0.0, 0.0];
        assert_eq!(
            store
                .nearest(&q, Language::C)
                .unwrap()
                .unwrap()
                .record
                .cve_id,
            "CVE-2024-0001"
        );
        let hits = store
            .nearest_k(
                &q,
                Language::C,
                5,
                QueryOptions {
                    exclude_promoted: true,
                },
            )
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.cve_id, "CVE-2020-0001");
    }

    #[test]
    fn persistence_roundtrip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hv.store");
        let store = HvStore::build(
            vec![
                record("CVE-2020-0001", Language::C, vec![0.25, -1.5, 3.0]),
                record(
                    "CVE-2020-0002",
                    Language::Java,
                    vec![1.0, 2.0, f32::MIN_POSITIVE],
                ),
            ],
            3,
            "m",
        )
        .unwrap();
        store.save(&path).unwrap();
        let header = HvStore::read_header(&path).unwrap();
        assert_eq!(
            (header.dim, header.count, header.metric.as_str()),
            (3, 2, "euclidean")
        );
        let loaded = HvStore::load(&path).unwrap();
        assert_eq!(
            loaded.records().collect::<Vec<_>>(),
            store.records().collect::<Vec<_>>()
        );

        let meta = HvStore::meta_path(&path);
        let text = std::fs::read_to_string(&meta).unwrap();
        std::fs::write(&meta, text.replace("CVE-2020-0002", "CVE-2020-0009")).unwrap();
        assert!(matches!(HvStore::load(&path), Err(HvError::Format { .. })));
    }

    #[test]
    fn holds_a_full_scale_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dim = 16;
        let records: Vec<_> = (0..25_000)
            .map(|i| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lang = Language::ALL[i % 7];
                record(&format!("CVE-2019-{i:05}"), lang, v)
            })
            .collect();
        let store = HvStore::build(records, dim, "m").unwrap();
        assert_eq!(store.len(), 25_000);
        let q: Vec<f32> = (0..dim).map(|_| 0.0).collect();
        assert!(store.nearest(&q, Language::Go).unwrap().is_some());
    }

    /// Plain scan over every record, no language index, no sorting.
    fn oracle(records: &[HVRecord], q: &[f32], lang: Language) -> Option<(String, f64)> {
        let mut best: Option<(String, f64)> = None;
        for r in records.iter().filter(|r| r.language == lang) {
            let mut s = 0f64;
            for (a, b) in q.iter().zip(&r.embedding) {
                s += (*a as f64 - *b as f64).powi(2);
            }
            let d = s.sqrt();
            let better = match &best {
                None => true,
                Some((id, bd)) => d < *bd || (d == *bd && r.cve_id < *id),
            };
            if better {
                best = Some((r.cve_id.clone(), d));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn nearest_matches_linear_scan(seed in any::<u64>(), n in 1usize..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 8;
            let records: Vec<_> = (0..n)
                .map(|i| {
                    // coarse grid values force frequent exact ties
                    let v = (0..dim).map(|_| rng.random_range(-2i32..=2) as f32 * 0.5).collect();
                    record(&format!("CVE-2020-{:04}", 9999 - i), Language::ALL[rng.random_range(0..3)], v)
                })
                .collect();
            let store = HvStore::build(records.clone(), dim, "m").unwrap();
            for _ in 0..10 {
                let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-2i32..=2) as f32 * 0.5).collect();
                let lang = Language::ALL[rng.random_range(0..4)];
                let got = store.nearest(&q, lang).unwrap();
                if let Some(hit) = &got {
                    prop_assert_eq!(hit.record.language, lang);
                    prop_assert!(hit.distance >= 0.0);
                }
                prop_assert_eq!(got.map(|h| (h.record.cve_id, h.distance)), oracle(&records, &q, lang));
            }
        }
    }
}
