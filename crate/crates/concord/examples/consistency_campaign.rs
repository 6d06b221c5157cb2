//! Threshold-stopped self-consistency over a whole dataset, one run per
//! method, printed as an accuracy table.
//!
//! ```bash
//! cargo run -p concord --example consistency_campaign
//! ```

use std::collections::HashMap;
use std::path::Path;

use concord::consistency::run_until_threshold;
use concord::harness::{method_table, MethodSummary};
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
    let pipeline = PipelineConfig::default().with_seed(7);
    let cfg = ConsistencyConfig::default(); // threshold 12, cap 512
    let golds: HashMap<_, _> = questions
        .iter()
        .map(|q| (q.id.clone(), q.gold.clone()))
        .collect();

    let mut rows = Vec::new();
    for method in [
        Method::Zeroshot,
        Method::ZeroshotCot,
        Method::zeroshot_length(),
    ] {
        let results: Vec<_> = questions
            .iter()
            .map(|q| run_until_threshold(q, &method, &cfg, &backend, &pipeline).map(|(r, _)| r))
            .collect::<concord::Result<_>>()?;
        for r in &results {
            println!(
                "{:>16} {}: modal {:?} x{} after {} draws ({} accepted){}",
                method.name(),
                r.question_id,
                r.modal.as_ref().map(|a| a.value().to_string()),
                r.modal_count,
                r.total_draws,
                r.accepted_samples,
                if r.reached_threshold {
                    ""
                } else {
                    "  [cap hit]"
                },
            );
        }
        rows.push(MethodSummary::from_results(method.name(), &results, &golds));
    }

    println!("\n{}", method_table(&rows));
    Ok(())
}
