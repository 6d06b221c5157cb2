//! Fill ten accepted reasoning texts per token-length bucket for each
//! question, then aggregate modal frequency and accuracy per bucket.
//!
//! ```bash
//! cargo run -p concord --example bucket_protocol
//! ```

use std::path::Path;

use concord::analysis::{classify_cot, judge_params};
use concord::harness::bucket_table;
use concord::{
    bucket_stats, collect_bucketed, load_dataset, BucketedQuestion, PipelineConfig, SimBackend,
    SimJudge, SimProfile, TaskKind,
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
    let pipeline = PipelineConfig::default().with_seed(3);

    let judge = SimJudge;
    let jparams = judge_params();
    let mut collections = Vec::new();
    for q in &questions {
        let mut coll = collect_bucketed(q, &backend, &pipeline)?;
        let short: Vec<usize> = (0..10).filter(|b| !coll.quota_met(*b)).collect();
        println!(
            "{}: {} draws spent, short buckets {:?}",
            q.id, coll.draws_spent, short
        );
        // Label the collected trials so the CoT column means something.
        for trial in coll.buckets.iter_mut().flatten() {
            let answer = trial.answer.clone().expect("accepted");
            trial.cot_label = Some(classify_cot(
                q,
                &trial.reasoning.text,
                &answer,
                &judge,
                &jparams,
            )?);
        }
        collections.push(coll);
    }

    let items: Vec<BucketedQuestion> = questions
        .iter()
        .zip(&collections)
        .map(|(q, c)| BucketedQuestion {
            gold: &q.gold,
            collection: c,
        })
        .collect();
    let stats = bucket_stats(&items, &pipeline.bucket);
    println!("\n{}", bucket_table(&stats, &pipeline.bucket));
    println!("(accuracy climbs with the bucket index while modal frequency stays level)");
    Ok(())
}
