//! Average sequence probability per length bucket: how unlikely long
//! responses are compared to short ones.
//!
//! ```bash
//! cargo run -p concord --example likelihood_curve
//! ```

use std::path::Path;

use concord::consistency::run_until_threshold;
use concord::harness::likelihood_table;
use concord::{
    likelihood_by_bucket, load_dataset, ConsistencyConfig, Method, PipelineConfig, SimBackend,
    SimProfile, TaskKind,
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
    let pipeline = PipelineConfig::default().with_seed(4);
    let cfg = ConsistencyConfig::default();

    let mut trials = Vec::new();
    for q in &questions {
        let (_, mut stream) = run_until_threshold(q, &Method::Zeroshot, &cfg, &backend, &pipeline)?;
        trials.append(&mut stream);
    }

    let buckets = likelihood_by_bucket(&trials, &pipeline.bucket);
    println!("{}", likelihood_table(&buckets));
    println!("(each bucket is roughly 0.8^10 times less likely than the previous one)");
    Ok(())
}
