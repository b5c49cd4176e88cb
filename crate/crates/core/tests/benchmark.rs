use std::collections::BTreeMap;
use std::time::Instant;

use codexity_core::analyzers::{analyze, AnalyzerConfig};
use codexity_core::benchmark::{
    build_manifest, classify_vulnerable_prompt, count_loc, evaluate_strategy, ingest_corpus, ingest_posts, reduction,
    render_table, round_one_filter, round_two_probe, run_benchmark, synthetic_corpus, synthetic_program, BenchError,
    BuildOptions, CompletionRecord, DumpPost, Manifest, MetricsReport, PromptRecord, PromptSource, RunOptions,
    ScriptPlan, SyntheticSpec, DEFAULT_KEYWORDS,
};
use codexity_core::diagnostics::{
    dedupe, summarize, AnalysisReport, AnalyzerKind, Diagnostic, Severity, SourceLocation, VulnerabilityCategory,
};
use codexity_core::llm::{BackendConfig, ChatBackend, LlmError, MockScript, ScriptedMock};
use codexity_core::prompting::PromptBuilder;
use codexity_core::repair::{run_configured_session, Outcome, RepairSession, StrategyConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LISTING_1: &str = include_str!("../fixtures/listing1.c");
const LISTING_2: &str = include_str!("../fixtures/listing2.c");
const PARTIAL: &str = include_str!("../fixtures/partial_prompt.c");

fn fenced(code: &str) -> String {
    format!("```c\n{code}```\n")
}

fn post(id: &str, question: &str, response: &str) -> DumpPost {
    DumpPost {
        id: id.into(),
        source: PromptSource::StackOverflow,
        question: question.into(),
        response: response.into(),
    }
}

fn completion(run_index: usize, vulnerable: bool) -> CompletionRecord {
    CompletionRecord {
        prompt_id: "p".into(),
        run_index,
        temperature: if run_index == 0 { 0.0 } else { 0.8 },
        result: None,
        report: None,
        vulnerable,
        loc_count: 0,
        seconds: 0.0,
        error: None,
    }
}

#[test]
fn classifier_matches_truth_table() {
    let started = Instant::now();
    for mask in 0u32..(1 << 11) {
        let set: Vec<_> = (0..11).map(|i| completion(i, mask & (1 << i) != 0)).collect();
        let greedy_vulnerable = mask & 1 == 1;
        let sampled_vulnerable = (1..11).any(|i| mask & (1 << i) != 0);
        assert_eq!(
            classify_vulnerable_prompt(&set).unwrap(),
            greedy_vulnerable || sampled_vulnerable,
            "mask {mask:011b}"
        );
        let mut reversed = set.clone();
        reversed.reverse();
        assert_eq!(classify_vulnerable_prompt(&reversed).unwrap(), mask != 0);
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn classifier_examples_and_incomplete_sets() {
    let mut only_greedy: Vec<_> = (0..11).map(|i| completion(i, false)).collect();
    only_greedy[0].vulnerable = true;
    assert!(classify_vulnerable_prompt(&only_greedy).unwrap());
    let clean: Vec<_> = (0..11).map(|i| completion(i, false)).collect();
    assert!(!classify_vulnerable_prompt(&clean).unwrap());

    assert!(matches!(
        classify_vulnerable_prompt(&clean[..10]),
        Err(BenchError::IncompleteSet { got: 10 })
    ));
    let mut duplicate = clean.clone();
    duplicate[10].run_index = 3;
    assert!(matches!(classify_vulnerable_prompt(&duplicate), Err(BenchError::IncompleteSet { .. })));
    let mut twelve = clean.clone();
    twelve.push(completion(11, true));
    assert!(matches!(classify_vulnerable_prompt(&twelve), Err(BenchError::IncompleteSet { got: 12 })));
}

#[test]
fn loc_counts() {
    assert_eq!(count_loc(LISTING_1), 11);
    assert_eq!(count_loc(""), 0);
    assert_eq!(count_loc("int a;\n\nint b;   \n  \t\nint c;\n"), 3);
}

#[test]
fn three_post_fixture_keeps_one() {
    let posts = vec![
        post("a", "Reading names in C", &fenced(LISTING_1)),
        post("b", "Sorting in Python", "```python\nsorted(xs)\n```"),
        post("c", "C pointer basics", "A pointer stores an address."),
    ];
    let records = ingest_posts(&posts, &DEFAULT_KEYWORDS);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].prompt_id, "a");
    assert!(ingest_posts(&[], &DEFAULT_KEYWORDS).is_empty());
}

#[test]
fn dump_files_are_read_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.json");
    std::fs::write(&path, serde_json::to_string(&synthetic_corpus(SyntheticSpec::new(10, 4, 2))).unwrap()).unwrap();
    assert_eq!(ingest_corpus(&path, &DEFAULT_KEYWORDS).unwrap().len(), 4);

    std::fs::write(&path, "[]").unwrap();
    assert!(ingest_corpus(&path, &DEFAULT_KEYWORDS).unwrap().is_empty());
    std::fs::write(&path, "{\"posts\": 3}").unwrap();
    assert!(matches!(ingest_corpus(&path, &DEFAULT_KEYWORDS), Err(BenchError::MalformedDump(_))));
}

#[test]
fn five_snippet_round_one() {
    let snippets = [
        LISTING_1.to_string(),
        LISTING_2.to_string(),
        synthetic_program(0, true),
        synthetic_program(1, false),
        synthetic_program(4, false),
    ];
    let records: Vec<PromptRecord> = snippets
        .iter()
        .enumerate()
        .map(|(i, s)| PromptRecord {
            prompt_id: format!("s{i}"),
            source: PromptSource::Synthetic,
            question_text: "q".into(),
            response_snippet: Some(s.clone()),
            non_vulnerable_prefix: None,
            cut_line: None,
        })
        .collect();
    let survivors = round_one_filter(&records, &AnalyzerConfig::default());
    let mut ids: Vec<_> = survivors.iter().map(|r| r.prompt_id.as_str()).collect();
    ids.sort();
    assert_eq!(ids, ["s0", "s2"]);

    let listing = survivors.iter().find(|r| r.prompt_id == "s0").unwrap();
    assert_eq!(listing.cut_line, Some(7));
    let prefix = listing.non_vulnerable_prefix.as_deref().unwrap();
    assert_eq!(prefix.lines().count(), 6);
    assert!(LISTING_1.starts_with(prefix));
    assert!(!analyze(prefix, &AnalyzerConfig::default()).unwrap().is_vulnerable());

    let clean = [records[1].clone(), records[3].clone()];
    assert!(round_one_filter(&clean, &AnalyzerConfig::default()).is_empty());
}

#[test]
fn probe_produces_eleven_ordered_records_with_recomputable_flags() {
    let record = PromptRecord {
        prompt_id: "listing".into(),
        source: PromptSource::StackOverflow,
        question_text: "q".into(),
        response_snippet: Some(LISTING_1.into()),
        non_vulnerable_prefix: Some(PARTIAL.into()),
        cut_line: Some(7),
    };
    let responses: Vec<String> = (0..11)
        .map(|i| match i % 3 {
            0 => fenced(LISTING_1),
            1 => fenced(LISTING_2),
            _ => "Which compiler are you using?".to_string(),
        })
        .collect();
    let mut mock = ScriptedMock::new(responses);
    let analyzer = AnalyzerConfig::default();
    let records = round_two_probe(&record, &mut mock, &analyzer, &PromptBuilder::default()).unwrap();

    assert_eq!(records.len(), 11);
    for (i, rec) in records.iter().enumerate() {
        assert_eq!(rec.run_index, i);
        assert_eq!(rec.temperature, if i == 0 { 0.0 } else { 0.8 });
        assert_eq!(mock.requests()[i].temperature, rec.temperature);
        // Second pass: re-analyze every output independently.
        let expected = match rec.result.as_ref().unwrap().extracted_code.as_deref() {
            None => true,
            Some(code) => analyze(code, &analyzer).unwrap().is_vulnerable(),
        };
        assert_eq!(rec.vulnerable, expected, "run {i}");
    }
    assert!(classify_vulnerable_prompt(&records).unwrap());

    let ineligible = PromptRecord {
        non_vulnerable_prefix: None,
        ..record
    };
    assert!(matches!(
        round_two_probe(&ineligible, &mut ScriptedMock::new(["x"]), &analyzer, &PromptBuilder::default()),
        Err(BenchError::NotEligible(_))
    ));
}

#[test]
fn probe_backend_failures_are_recorded() {
    let record = PromptRecord {
        prompt_id: "short".into(),
        source: PromptSource::Synthetic,
        question_text: "q".into(),
        response_snippet: None,
        non_vulnerable_prefix: Some(PARTIAL.into()),
        cut_line: None,
    };
    let mut mock = ScriptedMock::new(vec![fenced(LISTING_2); 4]);
    let records = round_two_probe(&record, &mut mock, &AnalyzerConfig::default(), &PromptBuilder::default()).unwrap();
    assert_eq!(records.len(), 11);
    assert!(records[..4].iter().all(|r| r.error.is_none()));
    assert!(records[4..].iter().all(|r| r.error.is_some() && !r.vulnerable));
}

// The probe backend for a replay: prompts whose id sorts into the first
// `vulnerable` are completed with the vulnerable program at run 0 only.
fn replay_factory(
    vulnerable_ids: Vec<String>,
) -> impl Fn(&PromptRecord) -> Result<Box<dyn ChatBackend>, LlmError> + Sync {
    move |record| {
        let variant = record.prompt_id.bytes().map(usize::from).sum::<usize>();
        let first = vulnerable_ids.contains(&record.prompt_id);
        let responses: Vec<String> = (0..11)
            .map(|i| fenced(&synthetic_program(variant, first && i == 0)))
            .collect();
        Ok(Box::new(ScriptedMock::new(responses)))
    }
}

#[test]
fn funnel_at_reference_scale() {
    let posts = synthetic_corpus(SyntheticSpec::new(600, 403, 124));
    let analyzer = AnalyzerConfig::default();
    let ingested = ingest_posts(&posts, &DEFAULT_KEYWORDS);
    assert_eq!(ingested.len(), 403);
    let survivors = round_one_filter(&ingested, &analyzer);
    assert_eq!(survivors.len(), 124);

    let mut ids: Vec<String> = survivors.iter().map(|r| r.prompt_id.clone()).collect();
    ids.sort();
    ids.truncate(90);
    let manifest = build_manifest(&posts, &analyzer, &replay_factory(ids.clone()), &BuildOptions::default()).unwrap();
    let s = manifest.stats;
    assert_eq!(
        (s.posts_ingested, s.round_one_survivors, s.probed_prompts, s.completions),
        (403, 124, 124, 1364)
    );
    assert_eq!((s.vulnerable_prompts, s.benchmark_completions), (90, 990));
    let mut got = manifest.vulnerable_prompt_ids.clone();
    got.sort();
    assert_eq!(got, ids);
    assert_eq!(manifest.category_summary.values().sum::<usize>(), 90);
}

#[test]
fn manifest_round_trip_and_tamper_detection() {
    let posts = synthetic_corpus(SyntheticSpec::new(12, 8, 5));
    let analyzer = AnalyzerConfig::default();
    let survivors = round_one_filter(&ingest_posts(&posts, &DEFAULT_KEYWORDS), &analyzer);
    let ids = vec![survivors[0].prompt_id.clone(), survivors[2].prompt_id.clone()];
    let manifest = build_manifest(&posts, &analyzer, &replay_factory(ids), &BuildOptions::default()).unwrap();
    assert_eq!(manifest.stats.vulnerable_prompts, 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    manifest.save(&path).unwrap();
    assert_eq!(Manifest::load(&path).unwrap(), manifest);

    let tamper = |edit: &dyn Fn(&mut Manifest)| {
        let mut m = manifest.clone();
        edit(&mut m);
        assert!(matches!(m.check(), Err(BenchError::Inconsistent(_))));
    };
    tamper(&|m| m.completions[0].vulnerable = !m.completions[0].vulnerable);
    tamper(&|m| {
        m.completions.pop();
        m.stats.completions -= 1;
    });
    tamper(&|m| m.completions[3].temperature = 0.0);
    tamper(&|m| m.stats.benchmark_completions += 1);
    tamper(&|m| {
        m.category_summary.insert("CWE-1".into(), 1);
    });
}

#[test]
fn empty_corpus_builds_an_empty_manifest() {
    let factory = |_: &PromptRecord| -> Result<Box<dyn ChatBackend>, LlmError> { Ok(Box::new(ScriptedMock::new(["x"]))) };
    let m = build_manifest(&[], &AnalyzerConfig::default(), &factory, &BuildOptions::default()).unwrap();
    assert_eq!(m.stats.completions, 0);
    m.check().unwrap();
}

const CATEGORY_TALLY: [(&str, usize); 24] = [
    ("Null Dereference", 384),
    ("Nullptr Dereference", 363),
    ("Resource Leak", 196),
    ("Buffer Overrun L2", 119),
    ("Memory Leak", 109),
    ("CWE-119", 90),
    ("CWE-457", 81),
    ("CWE-401", 66),
    ("Buffer Overrun L3", 62),
    ("CWE-775", 32),
    ("CWE-788", 22),
    ("Buffer Overrun S2", 15),
    ("CWE-686", 15),
    ("Integer Overflow L2", 13),
    ("CWE-758", 12),
    ("CWE-197", 12),
    ("CWE-562", 11),
    ("Buffer Overrun L1", 11),
    ("CWE-467", 10),
    ("Use After Lifetime", 8),
    ("CWE-685", 7),
    ("CWE-476", 4),
    ("Use After Free", 2),
    ("Inferbo Alloc Is Zero", 1),
];

fn finding(line: u32, category: VulnerabilityCategory, analyzer: AnalyzerKind) -> Diagnostic {
    Diagnostic {
        location: SourceLocation::new("candidate.c", line, None),
        category,
        message: "m".into(),
        analyzer,
        severity: Severity::Warning,
    }
}

#[test]
fn category_table_replays_through_dedupe_and_summarize() {
    // Spread the findings over 990 completions. CWE findings in an
    // overlapping family get a same-line native shadow, and every tenth
    // finding a duplicate, all of which dedupe must absorb.
    let mut raw: Vec<Vec<Diagnostic>> = vec![Vec::new(); 990];
    let mut slot = 0usize;
    for (label, count) in CATEGORY_TALLY {
        let category: VulnerabilityCategory = label.parse().unwrap();
        for _ in 0..count {
            let line = 1 + (slot / 990) as u32;
            let report = &mut raw[slot % 990];
            let analyzer = if category.is_cwe() { AnalyzerKind::CppCheck } else { AnalyzerKind::Infer };
            report.push(finding(line, category.clone(), analyzer));
            let shadow: Option<VulnerabilityCategory> = match label {
                "CWE-119" | "CWE-788" => Some("Buffer Overrun L2".parse().unwrap()),
                "CWE-401" => Some("Memory Leak".parse().unwrap()),
                "CWE-775" => Some("Resource Leak".parse().unwrap()),
                "CWE-476" => Some("Null Dereference".parse().unwrap()),
                _ => None,
            };
            if let Some(native) = shadow {
                report.push(finding(line, native, AnalyzerKind::Infer));
            }
            if slot.is_multiple_of(10) {
                report.push(finding(line, category.clone(), analyzer));
            }
            slot += 1;
        }
    }
    let reports: Vec<AnalysisReport> = raw
        .into_iter()
        .map(|d| dedupe(&AnalysisReport::from_diagnostics(AnalyzerKind::CppCheck, d)))
        .collect();
    let summary: BTreeMap<String, usize> = summarize(&reports).into_iter().map(|(c, n)| (c.to_string(), n)).collect();
    let expected: BTreeMap<String, usize> = CATEGORY_TALLY.iter().map(|(l, n)| (l.to_string(), *n)).collect();
    assert_eq!(summary, expected);
    assert_eq!(summary.values().sum::<usize>(), 1645);
}

struct Templates {
    safe: RepairSession,
    vulnerable: RepairSession,
    non_code: RepairSession,
}

fn templates() -> Templates {
    let analyzer = AnalyzerConfig::default();
    let run = |responses: &[String]| {
        let cfg = StrategyConfig::baseline(BackendConfig::mock(MockScript::plain(responses.to_vec())));
        run_configured_session(PARTIAL, &cfg, &analyzer, None).unwrap()
    };
    let t = Templates {
        safe: run(&[fenced(LISTING_2)]),
        vulnerable: run(&[fenced(LISTING_1)]),
        non_code: run(&["Could you share the rest of the program?".to_string()]),
    };
    assert_eq!(
        (t.safe.outcome, t.vulnerable.outcome, t.non_code.outcome),
        (Outcome::Safe, Outcome::VulnerableResidual, Outcome::NonCodeOutput)
    );
    t
}

// `vulnerable` failing sessions out of `total`, a fifth of them non-code.
fn synthetic_log(t: &Templates, vulnerable: usize, total: usize) -> Vec<RepairSession> {
    (0..total)
        .map(|i| {
            let mut s = if i >= vulnerable {
                t.safe.clone()
            } else if i % 5 == 0 {
                t.non_code.clone()
            } else {
                t.vulnerable.clone()
            };
            s.session_id = format!("synthetic-{i}");
            s
        })
        .collect()
}

#[test]
fn reference_rates_arithmetic() {
    let t = templates();
    let rows = [("baseline", 751, 75.9), ("iteration", 157, 15.9), ("preshot-large", 389, 39.3), ("preshot-small", 459, 46.4)];
    let mut metrics = Vec::new();
    for (name, vulnerable, percent) in rows {
        let m = evaluate_strategy(&synthetic_log(&t, vulnerable, 990)).unwrap();
        assert_eq!((m.vulnerable_count, m.total_count), (vulnerable, 990), "{name}");
        assert!((m.vulnerable_percent - percent).abs() < 0.05 + 1e-9, "{name}: {}", m.vulnerable_percent);
        assert_eq!(m.vulnerable_percent, percent);
        metrics.push((name, m));
    }
    assert_eq!(reduction(&metrics[0].1, &metrics[1].1), 60.0);

    let table = render_table(&metrics.iter().map(|(n, m)| (*n, m)).collect::<Vec<_>>());
    assert!(table.contains("751/990"));
    assert!(table.contains("75.9"));
    assert!(table.lines().any(|l| l.starts_with("iteration") && l.contains("15.9")));

    let zero = evaluate_strategy(&synthetic_log(&t, 0, 7)).unwrap();
    assert_eq!(zero.vulnerable_percent, 0.0);
    assert!(matches!(evaluate_strategy(&[]), Err(BenchError::EmptyInput)));
}

#[test]
fn metrics_report_serializes_flat() {
    let t = templates();
    let report = MetricsReport::new("iteration", &synthetic_log(&t, 3, 10)).unwrap();
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["schemaVersion"], 1);
    assert_eq!(json["vulnerableCount"], 3);
    assert_eq!(json["vulnerablePercent"], 30.0);
    assert!(json["avgGenerationSeconds"].is_number());
    assert!(json["avgAnalysisSeconds"].is_number());
    // Two vulnerable sessions with two CWE-119 findings each; non-code has none.
    assert_eq!(json["categorySummary"]["CWE-119"], 4);
    let back: MetricsReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, report);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluation_is_permutation_invariant(vulnerable in 0usize..40, extra in 1usize..40, seed in any::<u64>()) {
        let t = templates();
        let mut log = synthetic_log(&t, vulnerable, vulnerable + extra);
        for (i, s) in log.iter_mut().enumerate() {
            s.iterations[0].result.latency_seconds = (i as f64 * 0.37).sin().abs();
            s.iterations[0].analysis_seconds = (i as f64 * 1.3).cos().abs() * 1e-3;
        }
        let before = evaluate_strategy(&log).unwrap();
        log.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let after = evaluate_strategy(&log).unwrap();
        prop_assert_eq!(before.vulnerable_count, after.vulnerable_count);
        prop_assert_eq!(before.vulnerable_percent.to_bits(), after.vulnerable_percent.to_bits());
        prop_assert_eq!(before.avg_seconds.to_bits(), after.avg_seconds.to_bits());
        prop_assert_eq!(before.avg_generation_seconds.to_bits(), after.avg_generation_seconds.to_bits());
        prop_assert_eq!(before.mean_loc.to_bits(), after.mean_loc.to_bits());
    }
}

fn desk_manifest() -> Manifest {
    let posts = synthetic_corpus(SyntheticSpec::new(30, 20, 20));
    let factory = |record: &PromptRecord| -> Result<Box<dyn ChatBackend>, LlmError> {
        let script = ScriptPlan::AlwaysVulnerable.script(std::slice::from_ref(&record.prompt_id), 11);
        BackendConfig::mock(script).instantiate_for(Some(&record.prompt_id))
    };
    let m = build_manifest(&posts, &AnalyzerConfig::default(), &factory, &BuildOptions::default()).unwrap();
    assert_eq!(m.stats.vulnerable_prompts, 20);
    m
}

#[test]
fn desk_scale_pipeline_reduction() {
    let started = Instant::now();
    let manifest = desk_manifest();
    let ids: Vec<String> = manifest.vulnerable_prompts().map(|p| p.prompt_id.clone()).collect();
    let analyzer = AnalyzerConfig::default();
    let opts = RunOptions::default();

    let second_try = BackendConfig::mock(ScriptPlan::FixesOnSecondTry.script(&ids, 4));
    let baseline = run_benchmark(&manifest, &StrategyConfig::baseline(second_try.clone()), &analyzer, opts).unwrap();
    let iteration = run_benchmark(&manifest, &StrategyConfig::iteration(second_try), &analyzer, opts).unwrap();
    assert_eq!(baseline.len(), 220);
    let b = evaluate_strategy(&baseline).unwrap();
    let r = evaluate_strategy(&iteration).unwrap();
    assert_eq!(b.vulnerable_percent, 100.0);
    assert_eq!(r.vulnerable_percent, 0.0);
    assert_eq!(reduction(&b, &r), 100.0);
    assert!(iteration.iter().all(|s| s.repair_iteration_count == 1));

    let half = BackendConfig::mock(ScriptPlan::FixesHalf.script(&ids, 4));
    let sessions = run_benchmark(&manifest, &StrategyConfig::iteration(half), &analyzer, opts).unwrap();
    let never_fixed = ids.iter().enumerate().filter(|(pos, _)| pos % 2 == 1).count();
    let expected = never_fixed * opts.runs_per_prompt;
    let m = evaluate_strategy(&sessions).unwrap();
    assert_eq!(m.vulnerable_count, expected);
    assert_eq!(m.vulnerable_percent, (1000.0 * expected as f64 / sessions.len() as f64).round() / 10.0);
    for (i, s) in sessions.iter().enumerate() {
        let pos = i / opts.runs_per_prompt;
        assert_eq!(s.outcome == Outcome::Safe, pos % 2 == 0);
        assert_eq!(s.iterations[0].request.temperature, if i % 11 == 0 { 0.0 } else { 0.8 });
    }
    assert!(started.elapsed().as_secs_f64() < 30.0);
}
