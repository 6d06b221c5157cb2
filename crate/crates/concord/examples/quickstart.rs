//! One trial end to end: build the prompts, sample the simulator, filter
//! the response, and inspect the resulting record.
//!
//! ```bash
//! cargo run -p concord --example quickstart
//! ```

use std::path::Path;

use concord::{
    build_reasoning_prompt, load_dataset, run_trial, Method, PipelineConfig, SimBackend,
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
    let pipeline = PipelineConfig::default().with_seed(0);

    let q = &questions[0];
    println!("question: {} (gold {})", q.question, q.gold);
    for method in [
        Method::Zeroshot,
        Method::ZeroshotCot,
        Method::zeroshot_length(),
    ] {
        println!("\n--- {} ---", method.name());
        println!(
            "reasoning prompt: {:?}",
            build_reasoning_prompt(q, &method, &pipeline.templates)
        );
        for draw in 0..3 {
            let trial = run_trial(q, &method, &backend, &pipeline, draw)?;
            println!(
                "draw {draw}: {:>3} tokens, answer {:?}, verdict {:?}",
                trial.reasoning.token_count,
                trial.answer.as_ref().map(|a| a.value().to_string()),
                trial.verdict,
            );
        }
    }
    Ok(())
}
