//! Label accepted trials with the blurt heuristic and the judge, then
//! compute the six blurt/CoT conditional probabilities.
//!
//! ```bash
//! cargo run -p concord --example blurt_and_cot_labels
//! ```

use std::collections::HashMap;
use std::path::Path;

use concord::analysis::{classify_cot, judge_params};
use concord::consistency::run_until_threshold;
use concord::harness::{blurt_table, replay_consistency};
use concord::{
    conditional_probabilities, load_dataset, ConsistencyConfig, Method, PipelineConfig, SimBackend,
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
    let pipeline = PipelineConfig::default().with_seed(2);
    let cfg = ConsistencyConfig::default();
    let judge = SimJudge;
    let jparams = judge_params();

    let mut trials = Vec::new();
    let mut results = Vec::new();
    for q in &questions {
        let (_, mut stream) =
            run_until_threshold(q, &Method::zeroshot_length(), &cfg, &backend, &pipeline)?;
        for t in stream.iter_mut().filter(|t| t.is_accepted()) {
            // The blurt flag was set while the trial ran; the CoT label
            // needs a judge call.
            let answer = t.answer.clone().expect("accepted");
            t.cot_label = Some(classify_cot(
                q,
                &t.reasoning.text,
                &answer,
                &judge,
                &jparams,
            )?);
        }
        results.push(replay_consistency(&q.id, &stream, &cfg));
        trials.extend(stream);
    }

    let golds: HashMap<_, _> = questions
        .iter()
        .map(|q| (q.id.clone(), q.gold.clone()))
        .collect();
    let report = conditional_probabilities(&trials, &results, &golds);
    println!("{}", blurt_table(&report));
    println!("(blurted answers are common but CoT-style answers are right more often)");
    Ok(())
}
