//! Record one exhaustive trial stream per question, then replay it at
//! several consistency thresholds and sample counts without re-sampling.
//!
//! ```bash
//! cargo run -p concord --example threshold_sweep
//! ```

use std::path::Path;

use concord::consistency::{run_until_threshold, sweep_sample_counts, sweep_thresholds};
use concord::{
    load_dataset, ConsistencyConfig, Method, PipelineConfig, SimBackend, SimProfile, TaskKind,
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
    let pipeline = PipelineConfig::default().with_seed(11);

    // Record past the largest threshold we intend to replay.
    let record_cfg = ConsistencyConfig {
        threshold: 16,
        max_samples: 256,
        strict_exceeds: false,
    };
    let thresholds = [1, 2, 4, 8, 12, 16];
    let counts = [1, 5, 10, 20, 40];

    let q = &questions[1];
    let (_, stream) = run_until_threshold(q, &Method::Zeroshot, &record_cfg, &backend, &pipeline)?;
    println!(
        "{}: recorded {} draws (gold {})\n",
        q.id,
        stream.len(),
        q.gold
    );

    println!("threshold sweep:");
    for point in sweep_thresholds(&stream, &thresholds) {
        println!(
            "  t={:>2}: modal {:?} x{} after {} draws{}",
            point.threshold,
            point.modal.as_ref().map(|a| a.value().to_string()),
            point.modal_count,
            point.total_draws,
            if point.reached { "" } else { "  [not reached]" },
        );
    }

    println!("\nsample-count sweep:");
    for (n, modal) in counts.iter().zip(sweep_sample_counts(&stream, &counts)) {
        println!(
            "  first {:>2} accepted: modal {:?}",
            n,
            modal.map(|(a, c)| format!("{} x{c}", a.value())),
        );
    }
    Ok(())
}
