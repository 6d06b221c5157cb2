//! Manual smoke run against a real OpenAI-compatible endpoint: one
//! question through the full two-stage pipeline, printed for inspection.
//!
//! ```bash
//! export CONCORD_BASE_URL=http://localhost:8000
//! export CONCORD_MODEL=your-model
//! export CONCORD_API_KEY=...   # if the endpoint needs one
//! cargo run -p concord --example live_endpoint_smoke
//! ```

use concord::{
    run_trial, CanonicalAnswer, HttpBackend, HttpConfig, Method, PipelineConfig, QuestionRecord,
    TaskKind,
};

fn main() -> concord::Result<()> {
    env_logger::init();
    let base_url = std::env::var("CONCORD_BASE_URL")
        .expect("set CONCORD_BASE_URL to an OpenAI-compatible server");
    let model = std::env::var("CONCORD_MODEL").expect("set CONCORD_MODEL");

    let backend = HttpBackend::new(HttpConfig {
        base_url,
        model,
        api: Default::default(),
        api_key_env: "CONCORD_API_KEY".to_string(),
        send_top_k: false,
        max_in_flight: 1,
        request_timeout_ms: 120_000,
    })?;

    let question = QuestionRecord {
        id: "smoke1".to_string(),
        question: "A box holds 3 red pens and 9 blue pens. How many pens are in the box?"
            .to_string(),
        gold: CanonicalAnswer::from_normalized("12"),
        task: TaskKind::IntegerGenerative,
    };
    let mut pipeline = PipelineConfig::default();
    pipeline.reasoning_params.max_new_tokens = 128;

    let trial = run_trial(&question, &Method::Zeroshot, &backend, &pipeline, 0)?;
    println!(
        "reasoning ({} tokens): {:?}",
        trial.reasoning.token_count, trial.reasoning.text
    );
    println!("extraction: {:?}", trial.answer_raw);
    println!(
        "answer: {:?}",
        trial.answer.as_ref().map(|a| a.value().to_string())
    );
    println!("verdict: {:?}", trial.verdict);
    println!("bucket: {:?}  blurt: {:?}", trial.bucket, trial.blurt);
    println!(
        "logprobs: {}",
        match &trial.reasoning.token_logprobs {
            Some(lp) => format!("{} entries", lp.len()),
            None => "not reported by the endpoint".to_string(),
        }
    );
    Ok(())
}
