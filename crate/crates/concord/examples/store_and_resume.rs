//! Run a campaign against an on-disk store, then resume it and re-analyze
//! offline: the append-only store plus the manifest make every statistic
//! recomputable and every interrupted run continuable.
//!
//! ```bash
//! cargo run -p concord --example store_and_resume
//! ```

use std::path::Path;

use concord::harness::{analyze_run, load_trials, run_campaign, Campaign, TrialFilter};
use concord::{
    load_dataset, ConsistencyConfig, Method, PipelineConfig, SimBackend, SimProfile, TaskKind,
    TextBackend,
};

fn fixture(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

fn main() -> concord::Result<()> {
    let questions = load_dataset(
        &fixture("datasets/arith_small.jsonl"),
        &TaskKind::IntegerGenerative,
    )?;
    let profile: SimProfile =
        serde_json::from_str(&std::fs::read_to_string(fixture("profiles/p0.json")).unwrap())
            .expect("profile fixture parses");
    let backend = SimBackend::new(profile, questions.iter().cloned())?;

    let campaign = Campaign {
        method: Method::Zeroshot,
        consistency: ConsistencyConfig {
            threshold: 6,
            max_samples: 128,
            strict_exceeds: false,
        },
        pipeline: PipelineConfig::default().with_seed(1),
        in_flight: 4, // draws per question issued concurrently
        workers: 2,   // questions processed in parallel
        config_hash: "example".to_string(),
        backend_desc: backend.describe(),
    };

    let dir = tempfile::tempdir().expect("temp dir");
    let outcome = run_campaign(&campaign, &questions, &backend, dir.path(), false)?;
    println!("store: {}", outcome.store_path.display());
    println!(
        "mean draws per question: {:.1}",
        outcome.manifest.mean_draws_per_question().unwrap_or(0.0)
    );
    println!(
        "totals: {} accepted, {} rejected, {} post-stop",
        outcome.manifest.totals.accepted,
        outcome.manifest.totals.rejected_total(),
        outcome.manifest.totals.post_stop,
    );

    // Resuming a finished run is a no-op; resuming a killed one picks up
    // exactly where the store ends (see the crash test in tests/).
    let resumed = run_campaign(&campaign, &questions, &backend, dir.path(), true)?;
    assert_eq!(resumed.results, outcome.results);
    println!("resume of a finished run redrew nothing");

    // Offline re-analysis audits the manifest and replays the stream.
    let results = analyze_run(dir.path(), &campaign.consistency)?;
    assert_eq!(results, outcome.results);
    let records = load_trials(&outcome.store_path, &TrialFilter::default())?;
    outcome.manifest.audit(&records)?;
    println!("re-analysis matches the live run and the audit is clean");
    Ok(())
}
