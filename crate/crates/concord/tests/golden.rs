//! Golden tests pinning simulator behavior and re-analysis output bytes.
//! Regenerate after an intentional behavior change with
//! `CONCORD_UPDATE_GOLDENS=1 cargo test -p concord --test golden`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use concord::backend::{SimBackend, SimProfile};
use concord::consistency::{run_until_threshold, ConsistencyConfig};
use concord::dataset::{load_dataset, CanonicalAnswer, TaskKind};
use concord::harness::{
    analyze_run, load_trials, method_table, replay_consistency, run_campaign, Campaign,
    MethodSummary, TrialFilter,
};
use concord::pipeline::{run_trial, Method, PipelineConfig, TrialRecord};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

fn updating() -> bool {
    std::env::var("CONCORD_UPDATE_GOLDENS").is_ok_and(|v| v == "1")
}

fn p0_profile() -> SimProfile {
    serde_json::from_str(&std::fs::read_to_string(fixture("profiles/p0.json")).unwrap()).unwrap()
}

fn arith_questions() -> Vec<concord::QuestionRecord> {
    load_dataset(
        &fixture("datasets/arith_small.jsonl"),
        &TaskKind::IntegerGenerative,
    )
    .unwrap()
}

/// Empirical bucket histogram of 100 seeded draws stays within total
/// variation 0.15 of the profile's length weights.
#[test]
fn bucket_histogram_tracks_length_weights() {
    let questions = arith_questions();
    let profile = p0_profile();
    let backend = SimBackend::new(profile.clone(), questions.iter().cloned()).unwrap();
    let pcfg = PipelineConfig::default().with_seed(7);

    let mut histogram = [0usize; 10];
    for draw in 0..100 {
        let trial = run_trial(&questions[0], &Method::Zeroshot, &backend, &pcfg, draw).unwrap();
        let bucket = concord::assign_bucket(trial.reasoning.token_count, &pcfg.bucket)
            .expect("simulated lengths stay within the bucket range");
        histogram[bucket] += 1;
    }

    let weight_total: f64 = profile.length_weights.iter().sum();
    let tv: f64 = histogram
        .iter()
        .zip(&profile.length_weights)
        .map(|(n, w)| (*n as f64 / 100.0 - w / weight_total).abs())
        .sum::<f64>()
        / 2.0;
    assert!(
        tv <= 0.15,
        "total variation {tv:.3} exceeds 0.15: {histogram:?}"
    );
}

#[test]
fn golden_first_trial_of_q1() {
    let questions = arith_questions();
    let backend = SimBackend::new(p0_profile(), questions.iter().cloned()).unwrap();
    let pcfg = PipelineConfig::default().with_seed(0);
    let trial = run_trial(&questions[0], &Method::Zeroshot, &backend, &pcfg, 0).unwrap();

    let path = fixture("golden/trial_q1_draw0.json");
    if updating() {
        std::fs::write(&path, serde_json::to_string_pretty(&trial).unwrap()).unwrap();
        return;
    }
    let expected: TrialRecord =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(trial, expected);
}

#[test]
fn golden_threshold_run_of_q1() {
    let questions = arith_questions();
    let backend = SimBackend::new(p0_profile(), questions.iter().cloned()).unwrap();
    let pcfg = PipelineConfig::default().with_seed(0);
    let cfg = ConsistencyConfig {
        threshold: 12,
        max_samples: 512,
        strict_exceeds: false,
    };
    let (result, trials) =
        run_until_threshold(&questions[0], &Method::Zeroshot, &cfg, &backend, &pcfg).unwrap();

    // The recorded stream replays to the identical outcome.
    assert_eq!(replay_consistency(&questions[0].id, &trials, &cfg), result);

    let path = fixture("golden/consistency_q1.json");
    if updating() {
        std::fs::write(&path, serde_json::to_string_pretty(&result).unwrap()).unwrap();
        return;
    }
    let expected: concord::ConsistencyResult =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(result, expected);
}

/// The committed mini-campaign store re-analyzes to byte-identical
/// outputs.
#[test]
fn golden_store_reanalysis_is_byte_identical() {
    let questions = arith_questions();
    let golds: HashMap<String, CanonicalAnswer> = questions
        .iter()
        .map(|q| (q.id.clone(), q.gold.clone()))
        .collect();
    let cfg = ConsistencyConfig {
        threshold: 3,
        max_samples: 40,
        strict_exceeds: false,
    };

    let store_path = fixture("golden/trials.jsonl");
    let csv_path = fixture("golden/method_table.csv");

    if updating() {
        let dir = tempfile::tempdir().unwrap();
        let campaign = Campaign {
            method: Method::Zeroshot,
            consistency: cfg.clone(),
            pipeline: PipelineConfig::default().with_seed(0),
            in_flight: 1,
            workers: 1,
            config_hash: "golden".to_string(),
            backend_desc: "sim".to_string(),
        };
        let backend = SimBackend::new(p0_profile(), questions.iter().cloned()).unwrap();
        let outcome =
            run_campaign(&campaign, &questions[..3], &backend, dir.path(), false).unwrap();
        std::fs::copy(&outcome.store_path, &store_path).unwrap();
        let summary = MethodSummary::from_results("zeroshot", &outcome.results, &golds);
        std::fs::write(&csv_path, method_table(&[summary])).unwrap();
        return;
    }

    let compute_csv = || {
        let records = load_trials(&store_path, &TrialFilter::default()).unwrap();
        let mut by_question: indexmap::IndexMap<String, Vec<TrialRecord>> =
            indexmap::IndexMap::new();
        for r in records {
            by_question
                .entry(r.question_id.clone())
                .or_default()
                .push(r);
        }
        let results: Vec<_> = by_question
            .iter()
            .map(|(qid, stream)| replay_consistency(qid, stream, &cfg))
            .collect();
        method_table(&[MethodSummary::from_results("zeroshot", &results, &golds)])
    };

    let expected = std::fs::read_to_string(&csv_path).unwrap();
    let first = compute_csv();
    let second = compute_csv();
    assert_eq!(first, second, "re-analysis must be deterministic");
    assert_eq!(
        first, expected,
        "re-analysis must match the committed table"
    );

    // The same store analyzed through the directory entry point agrees.
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(&store_path, dir.path().join("trials.jsonl")).unwrap();
    let results = analyze_run(dir.path(), &cfg).unwrap();
    let via_dir = method_table(&[MethodSummary::from_results("zeroshot", &results, &golds)]);
    assert_eq!(via_dir, expected);
}
