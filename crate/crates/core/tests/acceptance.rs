//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test --test acceptance`.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vfd::dataset::{
    filter_by_token_length, history_cutoff, sample_nvf, split_by_date, CveEntry, SamplingSpec,
};
use vfd::demo;
use vfd::eval::metrics;
use vfd::forge::{parse_autolink_refs, ArtifactRef, RefSource};
use vfd::gateway::{Gateway, GatewayConfig, MockBackend};
use vfd::hv::{HashProjectionEmbedder, HvStore};
use vfd::model::{
    AblationMode, ArtifactSummary, Commit, Component, ConfusionMatrix, DatasetEntry, DevArtifact,
    HVRecord, KeyPoint, Label, Language, ThreeAspectSummary,
};
use vfd::pipeline::{
    run_dataset, Detector, DetectorConfig, PipelineError, RunManifest, RunOptions,
};
use vfd::prompts::{
    parse_three_aspects, render_cavfd, render_cci, render_da, CavfdInputs, HvContext, ParseError,
    CAVFD_SYSTEM,
};

type Check = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            name: "golden prompt fidelity",
            budget: Some(Duration::from_secs(1)),
            run: golden_prompts,
        },
        Criterion {
            name: "three-aspect parser suite",
            budget: None,
            run: parser_suite,
        },
        Criterion {
            name: "metric oracle equivalence",
            budget: Some(Duration::from_secs(5)),
            run: metric_oracle,
        },
        Criterion {
            name: "nearest-neighbour exactness",
            budget: Some(Duration::from_secs(60)),
            run: nn_exactness,
        },
        Criterion {
            name: "dataset builder properties",
            budget: None,
            run: dataset_properties,
        },
        Criterion {
            name: "autolink parser corpus",
            budget: None,
            run: autolink_corpus,
        },
        Criterion {
            name: "end-to-end determinism",
            budget: Some(Duration::from_secs(30)),
            run: end_to_end,
        },
        Criterion {
            name: "crash resume",
            budget: None,
            run: crash_resume,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {} ({detail}; {took:.2?})", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL {} ({why}; {took:.2?})", c.name);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- golden

#[derive(serde::Deserialize)]
struct GoldenInputs {
    commit: Commit,
    artifact: DevArtifact,
    cci: ThreeAspectSummary,
    da: Vec<ArtifactSummary>,
    hv: GoldenHv,
}

#[derive(serde::Deserialize)]
struct GoldenHv {
    description: String,
    three_aspects: ThreeAspectSummary,
}

fn golden_prompts() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden");
    let read =
        |name: &str| std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let inputs: GoldenInputs =
        serde_json::from_str(&read("inputs.json")?).map_err(|e| e.to_string())?;
    let hv = HvContext {
        description: &inputs.hv.description,
        three_aspects: &inputs.hv.three_aspects,
    };
    let full = CavfdInputs {
        cci: Some(&inputs.cci),
        da: Some(&inputs.da),
        hv: Some(hv),
    };
    let rendered = [
        (
            "cci",
            render_cci(&inputs.commit, "m").map_err(|e| e.to_string())?,
        ),
        (
            "da_pr",
            render_da(&inputs.artifact, "m").map_err(|e| e.to_string())?,
        ),
        (
            "cavfd_full",
            render_cavfd(&inputs.commit, &full, &AblationMode::full(), "m"),
        ),
        (
            "vanilla",
            render_cavfd(&inputs.commit, &full, &AblationMode::vanilla(), "m"),
        ),
    ];
    for (name, req) in &rendered {
        let sys = read(&format!("{name}.system.txt"))?;
        let user = read(&format!("{name}.user.txt"))?;
        ensure(req.system == sys, || {
            format!("{name}: system prompt differs")
        })?;
        ensure(req.user == user, || {
            let at = req.user.bytes().zip(user.bytes()).position(|(a, b)| a != b);
            format!("{name}: user prompt differs at byte {at:?}")
        })?;
    }
    Ok(format!("{} prompts byte-identical", rendered.len()))
}

// ---------------------------------------------------------------- parser

fn labels(s: &ThreeAspectSummary) -> [Vec<&str>; 3] {
    [&s.summary, &s.purpose, &s.implications].map(|v| v.iter().map(|k| k.label.as_str()).collect())
}

fn parser_suite() -> Check {
    const CCI_EXAMPLE: &str = "1. Code Change Summary\n- [Key Point]: <description>\n- [Optional Key Point]: <description>\n\
        2. Purpose of the Change\n- [Key Point]: <description>\n- [Optional Key Point]: <description>\n\
        3. Implications of the Change\n- [Key Point]: <description>\n- [Optional Key Point]: <description>";
    const DA_EXAMPLE: &str = "1. Summary of the report:\n- [Key Point]: <description>\n- [Optional Key Point]: <description>\n\
        2. Purpose of the report:\n- [Key Point]: <description>\n- [Optional Key Point]: <description>\n\
        3. Implications of the report:\n- [Key Point]: <description>\n- [Optional Key Point]: <description>";
    let s1 = "1. Code Change Summary\n- [A]: a";
    let s2 = "2. Purpose of the Change\n- [B]: b";
    let s3 = "3. Implications of the Change\n- [C]: c";
    let abc = || Ok([vec!["A"], vec!["B"], vec!["C"]]);
    let kp2 = || {
        Ok([
            vec!["Key Point", "Optional Key Point"],
            vec!["Key Point", "Optional Key Point"],
            vec!["Key Point", "Optional Key Point"],
        ])
    };

    type Expected = Result<[Vec<&'static str>; 3], ParseError>;
    let cases: Vec<(&str, String, Expected)> = vec![
        ("template example (patch)", CCI_EXAMPLE.into(), kp2()),
        ("template example (report)", DA_EXAMPLE.into(), kp2()),
        ("sections 2,1,3", format!("{s2}\n{s1}\n{s3}"), abc()),
        ("sections 3,2,1", format!("{s3}\n{s2}\n{s1}"), abc()),
        (
            "optional key points",
            format!("{s1}\n- [Optional Key Point]: more\n{s2}\n{s3}\n- [Optional Key Point]: x"),
            Ok([vec!["A", "Optional Key Point"], vec!["B"], vec!["C", "Optional Key Point"]]),
        ),
        (
            "surrounding prose",
            format!("Sure! Let me think step by step.\n\n{s1}\nThis matters.\n{s2}\n{s3}\n\nHope this helps."),
            abc(),
        ),
        (
            "markdown headings",
            "### 1. Code Change Summary\n- [A]: a\n**2. Purpose of the Change**\n- [B]: b\n## 3. Implications of the Change:\n- [C]: c".into(),
            abc(),
        ),
        (
            "star bullets and tangled points",
            "1. Code Change Summary\n* [A]: a\n* [A2]: a2\n* [A3]: a3\n2. Purpose of the Change\n- [B]: b\n3. Implications of the Change\n- [C]: c".into(),
            Ok([vec!["A", "A2", "A3"], vec!["B"], vec!["C"]]),
        ),
        ("missing implications", format!("{s1}\n{s2}"), Err(ParseError::MissingSection("Implications"))),
        ("missing summary", format!("{s2}\n{s3}"), Err(ParseError::MissingSection("Summary"))),
        ("empty response", String::new(), Err(ParseError::MissingSection("Summary"))),
        (
            "purpose has prose only",
            format!("{s1}\n2. Purpose of the Change\nIt fixes things.\n{s3}"),
            Err(ParseError::NoBullets("Purpose")),
        ),
        (
            "unbracketed bullets",
            format!("{s1}\n{s2}\n3. Implications of the Change\n- Safety: better"),
            Err(ParseError::NoBullets("Implications")),
        ),
        (
            "missing section wins over empty section",
            "2. Purpose of the Change\n3. Implications of the Change\n- [C]: c".into(),
            Err(ParseError::MissingSection("Summary")),
        ),
    ];
    let mutations = cases.len() - 2;
    for (name, text, want) in &cases {
        let got = parse_three_aspects(text);
        let got_labels = got.as_ref().map(labels).map_err(Clone::clone);
        let want = want.clone();
        ensure(got_labels == want, || {
            format!("{name}: got {got_labels:?}, want {want:?}")
        })?;
        if let Ok(s) = &got {
            let desc_ok = [&s.summary, &s.purpose, &s.implications]
                .iter()
                .all(|v| v.iter().all(|k: &KeyPoint| !k.description.is_empty()));
            ensure(desc_ok, || format!("{name}: empty description"))?;
        }
    }
    Ok(format!("template examples + {mutations} mutations"))
}

// ---------------------------------------------------------------- metrics

fn metric_oracle() -> Check {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let oracle = |tp: f64, fp: f64, fn_: f64, tn: f64| {
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let p = div(tp, tp + fp);
        let r = div(tp, tp + fn_);
        let f1 = div(2.0 * tp, 2.0 * tp + fp + fn_);
        let mcc = div(
            tp * tn - fp * fn_,
            ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt(),
        );
        [p, r, f1, mcc]
    };
    for i in 0..1000 {
        let cells: [u64; 4] = std::array::from_fn(|_| rng.random_range(0..=50));
        let cm = ConfusionMatrix::new(cells[0], cells[1], cells[2], cells[3]);
        let m = metrics(&cm);
        let got = [m.precision, m.recall, m.f1, m.mcc];
        let want = oracle(
            cells[0] as f64,
            cells[1] as f64,
            cells[2] as f64,
            cells[3] as f64,
        );
        for k in 0..4 {
            ensure((got[k] - want[k]).abs() <= TOL, || {
                format!("matrix {i} {cells:?}: metric {k} {} vs {}", got[k], want[k])
            })?;
        }
        ensure(
            (0.0..=1.0).contains(&m.precision)
                && (0.0..=1.0).contains(&m.recall)
                && (0.0..=1.0).contains(&m.f1),
            || format!("matrix {i}: bounds"),
        )?;
        ensure((-1.0..=1.0).contains(&m.mcc), || {
            format!("matrix {i}: mcc bounds")
        })?;
        let swapped = metrics(&cm.class_swapped()).mcc;
        ensure((swapped - m.mcc).abs() <= TOL, || {
            format!("matrix {i}: class swap {swapped} vs {}", m.mcc)
        })?;
    }
    Ok(format!("1000 matrices within {TOL:e}"))
}

// ---------------------------------------------------------------- nearest neighbour

fn nn_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let langs = [Language::C, Language::Java, Language::Python];
    let summary = ThreeAspectSummary {
        summary: vec![KeyPoint::new("s", "s")],
        purpose: vec![KeyPoint::new("p", "p")],
        implications: vec![KeyPoint::new("i", "i")],
    };
    let day = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut queries = 0;
    for s in 0..200 {
        let dim = [8, 64, 1024][s % 3];
        let n = rng.random_range(1..=1000usize);
        let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(n);
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            // a share of exact duplicates forces the tie-break path
            let v = if i > 0 && rng.random_bool(0.1) {
                vectors[rng.random_range(0..i)].clone()
            } else {
                (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
            };
            vectors.push(v.clone());
            let lang = langs[rng.random_range(0..langs.len())];
            records.push(HVRecord {
                cve_id: format!("CVE-2020-{:05}", rng.random_range(0..n * 2)),
                cve_description: String::new(),
                fix_commit: Commit::new("o/r", &format!("{i:040x}"), "m", "d", lang, day),
                three_aspects: summary.clone(),
                embedding: v,
                language: lang,
                disclosed_at: day,
                promoted_from: None,
            });
        }
        let store = HvStore::build(records.clone(), dim, "random").map_err(|e| e.to_string())?;
        for q in 0..50 {
            let query: Vec<f32> = if q % 5 == 0 {
                vectors[rng.random_range(0..n)].clone()
            } else {
                (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
            };
            let lang = langs[rng.random_range(0..langs.len())];
            let want = records
                .iter()
                .filter(|r| r.language == lang)
                .map(|r| {
                    let d: f64 = r
                        .embedding
                        .iter()
                        .zip(&query)
                        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    (d, r)
                })
                .min_by(|a, b| {
                    a.0.total_cmp(&b.0)
                        .then_with(|| a.1.cve_id.cmp(&b.1.cve_id))
                        .then_with(|| a.1.fix_commit.id.cmp(&b.1.fix_commit.id))
                })
                .map(|(_, r)| (r.cve_id.clone(), r.fix_commit.id.clone()));
            let got = store
                .nearest(&query, lang)
                .map_err(|e| e.to_string())?
                .map(|m| (m.record.cve_id, m.record.fix_commit.id));
            ensure(got == want, || {
                format!("store {s} (dim {dim}, n {n}) query {q}: {got:?} vs {want:?}")
            })?;
            queries += 1;
        }
    }
    Ok(format!("{queries} queries agree with linear scan"))
}

// ---------------------------------------------------------------- dataset

fn plain_commit(repo: &str, i: usize, date: NaiveDate) -> Commit {
    Commit::new(repo, &format!("{i:040x}"), "m", "d", Language::C, date)
}

fn dataset_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let day = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();

    // 1:16 sampling with ample pools
    for trial in 0..20 {
        let mut vf = Vec::new();
        let mut pool = Vec::new();
        let mut next = 0;
        for r in 0..rng.random_range(1..6) {
            let repo = format!("owner/repo{r}");
            let k = rng.random_range(1..5);
            for _ in 0..k {
                let c = plain_commit(&repo, next, day);
                next += 1;
                pool.push(c.clone());
                vf.push(c);
            }
            for _ in 0..k * 16 + rng.random_range(0..40) {
                pool.push(plain_commit(&repo, next, day));
                next += 1;
            }
        }
        pool.shuffle(&mut rng);
        let spec = SamplingSpec {
            nvf_per_vf: 16,
            seed: trial,
        };
        let s = sample_nvf(&vf, &pool, &spec).map_err(|e| e.to_string())?;
        let vf_ids: HashSet<_> = vf.iter().map(|c| &c.id).collect();
        let ids: HashSet<_> = s.commits.iter().map(|c| &c.id).collect();
        ensure(s.commits.len() == 16 * vf.len(), || {
            format!("trial {trial}: {} NVF for {} VF", s.commits.len(), vf.len())
        })?;
        ensure(ids.len() == s.commits.len(), || {
            format!("trial {trial}: duplicate NVF")
        })?;
        ensure(ids.is_disjoint(&vf_ids), || {
            format!("trial {trial}: VF sampled as NVF")
        })?;
        ensure(s.shortfalls.is_empty(), || {
            format!("trial {trial}: unexpected shortfall")
        })?;
    }

    // percentile filter vs a sort-based oracle with exact integer ranks
    for trial in 0..100 {
        let n = rng.random_range(1..=500usize);
        let spread = [5u64, 50, 100_000][trial % 3];
        let lengths: Vec<u64> = (0..n).map(|_| rng.random_range(1..=spread)).collect();
        let entries: Vec<DatasetEntry> = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let mut c = plain_commit("o/r", i, day);
                c.token_length = len;
                DatasetEntry {
                    commit: c,
                    artifacts: vec![],
                    label: Label::NVF,
                    cve_id: None,
                }
            })
            .collect();
        let mut sorted = lengths.clone();
        sorted.sort_unstable();
        let rank = (99 * n).div_ceil(100);
        let threshold = sorted[rank - 1];
        let want_kept: Vec<usize> = (0..n).filter(|&i| lengths[i] <= threshold).collect();
        let f = filter_by_token_length(entries, 0.99).map_err(|e| e.to_string())?;
        let kept: Vec<usize> = f
            .kept
            .iter()
            .map(|e| usize::from_str_radix(e.commit.hash().unwrap(), 16).unwrap())
            .collect();
        ensure(f.threshold == threshold, || {
            format!("trial {trial}: threshold {} vs {threshold}", f.threshold)
        })?;
        ensure(kept == want_kept, || {
            format!("trial {trial}: kept set differs")
        })?;
        ensure(f.removed.len() <= n.div_ceil(100), || {
            format!("trial {trial}: removed {} of {n}", f.removed.len())
        })?;
    }

    // date split partitions exactly at the cutoff
    let cutoff = history_cutoff();
    ensure(
        cutoff == NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
        || "cutoff is not 2023-01-01".into(),
    )?;
    let cves: Vec<CveEntry> = (0..2000)
        .map(|i| CveEntry {
            cve_id: format!("CVE-2022-{:05}", i + 1000),
            description: String::new(),
            references: vec![],
            published_at: cutoff + chrono::Days::new(rng.random_range(0..20))
                - chrono::Days::new(10),
        })
        .collect();
    let (hist, eval) = split_by_date(cves.clone(), cutoff);
    ensure(hist.iter().all(|c| c.published_at < cutoff), || {
        "history after cutoff".into()
    })?;
    ensure(eval.iter().all(|c| c.published_at >= cutoff), || {
        "evaluation before cutoff".into()
    })?;
    let mut joined: Vec<_> = hist.iter().chain(&eval).map(|c| c.cve_id.clone()).collect();
    joined.sort();
    let mut all: Vec<_> = cves.iter().map(|c| c.cve_id.clone()).collect();
    all.sort();
    ensure(joined == all, || "split is not a partition".into())?;
    Ok("20 sampling trials, 100 length sets, 2000-CVE split".into())
}

// ---------------------------------------------------------------- autolinks

fn autolink_corpus() -> Check {
    let r = |repo: &str, n: u64| ArtifactRef {
        repo: repo.into(),
        number: n,
        source: RefSource::MessageAutolink,
    };
    let g = |n| r("gpac/gpac", n);
    let corpus: Vec<(&str, Vec<ArtifactRef>)> = vec![
        ("fixed #2475", vec![g(2475)]),
        ("", vec![]),
        (
            "see owner/name#12 and https://github.com/owner2/name2/pull/7",
            vec![r("owner/name", 12), r("owner2/name2", 7)],
        ),
        ("Fix GH-88 crash", vec![g(88)]),
        ("Closes #12, #13 and #12", vec![g(12), g(13)]),
        (
            "Merge pull request #3001 from someone/topic-branch",
            vec![g(3001)],
        ),
        (
            "Refs https://github.com/gpac/gpac/issues/2475",
            vec![g(2475)],
        ),
        ("bump version to 2.3", vec![]),
        ("update CHANGELOG", vec![]),
        ("use colour #123abc in the theme", vec![]),
        ("see https://gitlab.com/foo/bar/issues/5", vec![]),
        ("cross-repo: apache/tika#45", vec![r("apache/tika", 45)]),
        ("avoid double free (#77)", vec![g(77)]),
        ("issue#5 is not linked", vec![]),
        ("escape &#39; in templates", vec![]),
        ("fixes #0", vec![]),
        (
            "Fix #1\n\nAlso see GH-2\nand org/repo#3",
            vec![g(1), g(2), r("org/repo", 3)],
        ),
        (
            "https://github.com/gpac/gpac/pull/2476 and #2476",
            vec![g(2476)],
        ),
        ("see https://github.com/gpac/gpac/commit/abcdef0", vec![]),
        ("Revert \"fix #9\"", vec![g(9)]),
        ("GPAC/GPAC#5 and gpac/gpac#5", vec![r("GPAC/GPAC", 5)]),
        ("see http://www.github.com/a/b/issues/3", vec![r("a/b", 3)]),
    ];
    for (msg, want) in &corpus {
        let got = parse_autolink_refs(msg, "gpac/gpac");
        ensure(&got == want, || format!("{msg:?}: got {got:?}"))?;
    }
    Ok(format!("{} messages", corpus.len()))
}

// ---------------------------------------------------------------- end to end

struct Run {
    bytes: Vec<u8>,
    final_prompts: Vec<String>,
}

fn manifest(mode: &AblationMode, dataset: &Path, detector: &Detector) -> RunManifest {
    RunManifest {
        dataset: dataset.to_owned(),
        mode: mode.clone(),
        model: detector.config().model.clone(),
        hv_store: None,
        seed: 0,
        started_at: "fixed".into(),
        gateway_config_digest: detector.gateway().config_digest(),
        strict_ablation: false,
    }
}

fn demo_detector(store: &Arc<HvStore>) -> (Detector, Arc<MockBackend>) {
    let backend = Arc::new(MockBackend::new(demo::script()));
    let gw = Arc::new(Gateway::new(backend.clone(), GatewayConfig::default()));
    let embedder = Arc::new(HashProjectionEmbedder::new(store.dim()));
    let d = Detector::new(gw, DetectorConfig::new("mock")).with_hv(embedder, store.clone());
    (d, backend)
}

fn run_mode(
    dir: &Path,
    tag: &str,
    mode: &AblationMode,
    entries: &[DatasetEntry],
    store: &Arc<HvStore>,
) -> Result<Run, String> {
    let (d, backend) = demo_detector(store);
    let out = dir.join(format!("{tag}-{}.jsonl", mode.slug()));
    let mut opts = RunOptions::new(&out);
    opts.parallelism = 4;
    run_dataset(&d, entries, manifest(mode, &dir.join("d.jsonl"), &d), &opts)
        .map_err(|e| e.to_string())?;
    let final_prompts = backend
        .sent()
        .into_iter()
        .filter(|r| r.system == CAVFD_SYSTEM)
        .map(|r| r.user)
        .collect();
    Ok(Run {
        bytes: std::fs::read(&out).map_err(|e| e.to_string())?,
        final_prompts,
    })
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let entries = demo::dataset(20);
    let store = Arc::new(demo::store(&HashProjectionEmbedder::new(64)).map_err(|e| e.to_string())?);
    let markers = [
        (Component::CCI, vec![demo::CCI_MARK]),
        (Component::DA, vec![demo::DA_MARK]),
        (
            Component::HV,
            vec![demo::HV_DESC_MARK, demo::HV_ASPECT_MARK],
        ),
    ];
    let mut outputs = HashMap::new();
    for mode in AblationMode::study() {
        let a = run_mode(dir.path(), "a", &mode, &entries, &store)?;
        let b = run_mode(dir.path(), "b", &mode, &entries, &store)?;
        ensure(a.bytes == b.bytes, || {
            format!("{}: runs differ", mode.name())
        })?;
        let lines = a.bytes.iter().filter(|&&c| c == b'\n').count();
        ensure(lines == entries.len(), || {
            format!("{}: {lines} results", mode.name())
        })?;
        ensure(a.final_prompts.len() == entries.len(), || {
            format!("{}: {} final prompts", mode.name(), a.final_prompts.len())
        })?;
        for (component, needles) in &markers {
            let present = needles
                .iter()
                .any(|n| a.final_prompts.iter().any(|p| p.contains(n)));
            let enabled = mode.is_enabled(*component) && !mode.is_vanilla();
            ensure(present == enabled, || {
                format!(
                    "{}: {component:?} text {} final prompts",
                    mode.name(),
                    if present {
                        "leaked into"
                    } else {
                        "missing from"
                    }
                )
            })?;
        }
        if mode.is_vanilla() {
            ensure(
                a.final_prompts.iter().all(|p| !p.contains("Three Aspect")),
                || "vanilla prompt has aspect block".into(),
            )?;
        }
        outputs.insert(mode.slug(), a.bytes);
    }
    ensure(outputs.len() == 5, || "expected five modes".into())?;
    ensure(outputs["full"] != outputs["vanilla"], || {
        "ablation had no effect".into()
    })?;
    Ok("20 commits x 5 modes, byte-identical reruns, no excluded text".into())
}

// ---------------------------------------------------------------- resume

fn crash_resume() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let entries = demo::dataset(30);
    let store = Arc::new(demo::store(&HashProjectionEmbedder::new(32)).map_err(|e| e.to_string())?);
    let mode = AblationMode::full();

    let reference = run_mode(dir.path(), "ref", &mode, &entries, &store)?;

    let out = dir.path().join("crash.jsonl");
    let (d, _) = demo_detector(&store);
    let mut opts = RunOptions::new(&out);
    opts.stop_after = Some(11);
    match run_dataset(
        &d,
        &entries,
        manifest(&mode, &dir.path().join("d.jsonl"), &d),
        &opts,
    ) {
        Err(PipelineError::Interrupted(n)) => ensure(n == 11, || format!("interrupted after {n}"))?,
        other => return Err(format!("expected an interruption, got {other:?}")),
    }
    // a write torn by the kill
    {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&out)
            .map_err(|e| e.to_string())?;
        f.write_all(br#"{"commit_id":"gpac/gpac@00"#)
            .map_err(|e| e.to_string())?;
    }
    let (d, backend) = demo_detector(&store);
    let opts = RunOptions::new(&out);
    let summary = run_dataset(
        &d,
        &entries,
        manifest(&mode, &dir.path().join("d.jsonl"), &d),
        &opts,
    )
    .map_err(|e| e.to_string())?;
    let results: Vec<vfd::model::DetectionResult> =
        vfd::jsonl::read(&out).map_err(|e| e.to_string())?;
    let ids: HashSet<_> = results.iter().map(|r| r.commit_id.as_str()).collect();
    ensure(results.len() == entries.len(), || {
        format!("{} results for {} entries", results.len(), entries.len())
    })?;
    ensure(ids.len() == results.len(), || "duplicate commit ids".into())?;
    ensure(summary.counts.resumed == 11, || {
        format!("resumed {}", summary.counts.resumed)
    })?;
    let finals = backend
        .sent()
        .iter()
        .filter(|r| r.system == CAVFD_SYSTEM)
        .count();
    ensure(finals == entries.len() - 11, || {
        format!("{finals} commits re-run")
    })?;
    let got = std::fs::read(&out).map_err(|e| e.to_string())?;
    ensure(got == reference.bytes, || {
        "resumed file differs from an uninterrupted run".into()
    })?;
    Ok(format!(
        "{} results after resume, none duplicated",
        results.len()
    ))
}
