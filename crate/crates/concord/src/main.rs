//! Thin command-line front end over the library. Exits nonzero with one
//! machine-readable JSON error line on stderr when anything fails.

use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use concord::analysis::{fill_buckets, judge_params};
use concord::harness::manifest::RunManifest;
use concord::harness::{
    analyze_run, build_threshold_sweep, classify_store, load_trials, read_results, report_meta,
    run_buckets, run_campaign, write_report, Campaign, MethodSummary, RunConfig, TrialFilter,
    MANIFEST_FILE, RESULTS_FILE, STORE_FILE,
};
use concord::{
    bucket_stats, conditional_probabilities, likelihood_by_bucket, BucketedQuestion,
    CanonicalAnswer, Error, QuestionRecord, Result, TrialRecord,
};

#[derive(Parser)]
#[command(
    name = "concord",
    about = "Length-conditioned self-consistency harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the dataset path from the config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override the method (zeroshot, zeroshot-cot, zeroshot-length).
    #[arg(long)]
    method: Option<String>,
    /// Override the minimum consistency threshold.
    #[arg(long)]
    threshold: Option<u32>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(dataset) = &self.dataset {
            config.dataset.path = dataset.clone();
        }
        if let Some(method) = &self.method {
            config.method = method.clone();
        }
        if let Some(threshold) = self.threshold {
            config.consistency.threshold = threshold;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample every question until the stopping rule fires.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue a previous run in the same output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Fill the per-length-bucket quotas for every question.
    Buckets {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        resume: bool,
    },
    /// Label accepted trials (blurt heuristic + CoT judge).
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        /// Store to label; defaults to <out_dir>/trials.jsonl.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Recompute stopping outcomes from a store and audit the manifest.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Emit a tabular report from stored runs.
    Report {
        /// method-table, bucket-figure, threshold-sweep, blurt-table, or
        /// likelihood-figure.
        kind: String,
        #[command(flatten)]
        common: CommonArgs,
        /// Run directories to read (repeatable; defaults to out_dir).
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        /// Thresholds for the threshold-sweep report.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<u32>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = dispatch() {
        let line = serde_json::json!({ "error": e.to_string() });
        eprintln!("{line}");
        std::process::exit(1);
    }
}

fn dispatch() -> Result<()> {
    match Cli::parse().command {
        Command::Run { common, resume } => cmd_run(&common, resume),
        Command::Buckets { common, resume } => cmd_buckets(&common, resume),
        Command::Classify { common, store } => cmd_classify(&common, store),
        Command::Analyze { common } => cmd_analyze(&common),
        Command::Report {
            kind,
            common,
            runs,
            thresholds,
        } => cmd_report(&kind, &common, runs, thresholds),
    }
}

fn cmd_run(common: &CommonArgs, resume: bool) -> Result<()> {
    let config = common.load()?;
    let questions = config.load_questions()?;
    let backend = config.build_backend(&questions)?;
    let campaign = Campaign {
        method: config.method()?,
        consistency: config.consistency.clone(),
        pipeline: config.pipeline()?,
        in_flight: config.in_flight,
        workers: config.workers,
        config_hash: config.config_hash(),
        backend_desc: backend.describe(),
    };
    let outcome = run_campaign(
        &campaign,
        &questions,
        backend.as_ref(),
        &config.out_dir,
        resume,
    )?;
    let reached = outcome
        .results
        .iter()
        .filter(|r| r.reached_threshold)
        .count();
    println!(
        "run complete: {} questions, {} reached threshold {}, store {}",
        outcome.results.len(),
        reached,
        config.consistency.threshold,
        outcome.store_path.display()
    );
    Ok(())
}

fn cmd_buckets(common: &CommonArgs, resume: bool) -> Result<()> {
    let config = common.load()?;
    let questions = config.load_questions()?;
    let backend = config.build_backend(&questions)?;
    let collections = run_buckets(
        &config.pipeline()?,
        &questions,
        backend.as_ref(),
        &config.out_dir,
        resume,
        &config.config_hash(),
        &backend.describe(),
    )?;
    let complete = collections
        .iter()
        .filter(|c| c.complete(&config.buckets))
        .count();
    println!(
        "buckets complete: {}/{} questions filled every bucket, store {}",
        complete,
        collections.len(),
        config.out_dir.join(STORE_FILE).display()
    );
    Ok(())
}

fn labeled_store_path(store: &std::path::Path) -> PathBuf {
    store.with_extension("labeled.jsonl")
}

fn cmd_classify(common: &CommonArgs, store: Option<PathBuf>) -> Result<()> {
    let config = common.load()?;
    let questions = config.load_questions()?;
    let store_in = store.unwrap_or_else(|| config.out_dir.join(STORE_FILE));
    if !store_in.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "no trial store at {}; run `concord run` or `concord buckets` first",
            store_in.display()
        )));
    }
    let judge = config.build_judge(&questions)?;
    let by_id: HashMap<String, QuestionRecord> =
        questions.into_iter().map(|q| (q.id.clone(), q)).collect();
    let store_out = labeled_store_path(&store_in);
    // Judge calls fan out up to the judge endpoint's in-flight limit.
    let workers = config
        .judge
        .as_ref()
        .and_then(|j| j.http.as_ref())
        .map(|h| h.max_in_flight)
        .unwrap_or(config.in_flight);
    let summary = classify_store(
        &store_in,
        &store_out,
        &by_id,
        judge.as_ref(),
        &judge_params(),
        workers,
    )?;
    println!(
        "classify complete: {} judged ({} unparsable), {} already labeled, {} rejected skipped, labeled store {}",
        summary.judged,
        summary.unparsable,
        summary.already_labeled,
        summary.skipped_rejected,
        store_out.display()
    );
    Ok(())
}

fn cmd_analyze(common: &CommonArgs) -> Result<()> {
    let config = common.load()?;
    let results = analyze_run(&config.out_dir, &config.consistency)?;
    let reached = results.iter().filter(|r| r.reached_threshold).count();
    println!(
        "analyze complete: {} questions replayed, {} reached threshold, results {}",
        results.len(),
        reached,
        config.out_dir.join(RESULTS_FILE).display()
    );
    Ok(())
}

fn golds_of(questions: &[QuestionRecord]) -> HashMap<String, CanonicalAnswer> {
    questions
        .iter()
        .map(|q| (q.id.clone(), q.gold.clone()))
        .collect()
}

/// Prefer the labeled store when one exists next to the raw one.
fn pick_store(run_dir: &std::path::Path) -> Result<PathBuf> {
    let raw = run_dir.join(STORE_FILE);
    let labeled = labeled_store_path(&raw);
    if labeled.exists() {
        return Ok(labeled);
    }
    if raw.exists() {
        return Ok(raw);
    }
    Err(Error::MissingPrerequisite(format!(
        "no trial store in {}; run `concord run` or `concord buckets` first",
        run_dir.display()
    )))
}

fn group_by_question(records: Vec<TrialRecord>) -> indexmap::IndexMap<String, Vec<TrialRecord>> {
    let mut by_question: indexmap::IndexMap<String, Vec<TrialRecord>> = indexmap::IndexMap::new();
    for r in records {
        by_question
            .entry(r.question_id.clone())
            .or_default()
            .push(r);
    }
    by_question
}

fn run_method(run_dir: &std::path::Path) -> Result<String> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        Ok(RunManifest::load(&manifest_path)?.method)
    } else {
        Ok(run_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".to_string()))
    }
}

fn cmd_report(
    kind: &str,
    common: &CommonArgs,
    runs: Vec<PathBuf>,
    thresholds: Vec<u32>,
) -> Result<()> {
    let config = common.load()?;
    let questions = config.load_questions()?;
    let golds = golds_of(&questions);
    let runs = if runs.is_empty() {
        vec![config.out_dir.clone()]
    } else {
        runs
    };
    let report_dir = config.out_dir.join("reports");
    let hash = config.config_hash();

    let files = match kind {
        "method-table" => {
            let mut rows = Vec::new();
            let mut inputs = Vec::new();
            for run_dir in &runs {
                let results_path = run_dir.join(RESULTS_FILE);
                let results = if results_path.exists() {
                    read_results(&results_path)?
                } else {
                    analyze_run(run_dir, &config.consistency)?
                };
                rows.push(MethodSummary::from_results(
                    &run_method(run_dir)?,
                    &results,
                    &golds,
                ));
                inputs.push(results_path);
            }
            let csv = concord::harness::method_table(&rows);
            let meta = report_meta(
                kind,
                Some(&hash),
                &inputs.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
                serde_json::json!({
                    "threshold": config.consistency.threshold,
                    "questions": golds.len(),
                }),
            );
            write_report(&report_dir, "method_table", &csv, &meta)?
        }
        "bucket-figure" => {
            let run_dir = &runs[0];
            let store = pick_store(run_dir)?;
            let records = load_trials(&store, &TrialFilter::default())?;
            let by_question = group_by_question(records);
            let collections: Vec<_> = by_question
                .iter()
                .map(|(qid, stream)| fill_buckets(qid, stream, &config.buckets))
                .collect();
            let items: Vec<BucketedQuestion> = collections
                .iter()
                .filter_map(|c| {
                    golds.get(&c.question_id).map(|gold| BucketedQuestion {
                        gold,
                        collection: c,
                    })
                })
                .collect();
            let stats = bucket_stats(&items, &config.buckets);
            let csv = concord::harness::bucket_table(&stats, &config.buckets);
            let meta = report_meta(
                kind,
                Some(&hash),
                &[store.as_path()],
                serde_json::json!({
                    "per_bucket_quota": config.buckets.per_bucket_quota,
                    "questions": items.len(),
                }),
            );
            write_report(&report_dir, "bucket_figure", &csv, &meta)?
        }
        "threshold-sweep" => {
            if thresholds.is_empty() {
                return Err(Error::Config(
                    "threshold-sweep needs --thresholds, e.g. --thresholds 1,2,4,8,12".into(),
                ));
            }
            let mut rows = Vec::new();
            let mut inputs = Vec::new();
            for run_dir in &runs {
                let store = pick_store(run_dir)?;
                let records = load_trials(&store, &TrialFilter::default())?;
                let by_question = group_by_question(records);
                rows.extend(build_threshold_sweep(
                    &run_method(run_dir)?,
                    &by_question,
                    &golds,
                    &thresholds,
                ));
                inputs.push(store);
            }
            let csv = concord::harness::threshold_sweep_table(&rows);
            let meta = report_meta(
                kind,
                Some(&hash),
                &inputs.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
                serde_json::json!({ "thresholds": thresholds }),
            );
            write_report(&report_dir, "threshold_sweep", &csv, &meta)?
        }
        "blurt-table" => {
            let run_dir = &runs[0];
            let store = run_dir.join(STORE_FILE);
            let labeled = labeled_store_path(&store);
            if !labeled.exists() {
                return Err(Error::MissingPrerequisite(format!(
                    "no labeled store at {}; run `concord classify` first",
                    labeled.display()
                )));
            }
            let records = load_trials(&labeled, &TrialFilter::default())?;
            let results_path = run_dir.join(RESULTS_FILE);
            let results = if results_path.exists() {
                read_results(&results_path)?
            } else {
                analyze_run(run_dir, &config.consistency)?
            };
            let report = conditional_probabilities(&records, &results, &golds);
            let csv = concord::harness::blurt_table(&report);
            let meta = report_meta(
                kind,
                Some(&hash),
                &[labeled.as_path(), results_path.as_path()],
                serde_json::json!({
                    "accepted_trials": records.iter().filter(|t| t.is_accepted() && !t.post_stop).count(),
                }),
            );
            write_report(&report_dir, "blurt_table", &csv, &meta)?
        }
        "likelihood-figure" => {
            let run_dir = &runs[0];
            let store = pick_store(run_dir)?;
            let records = load_trials(&store, &TrialFilter::default())?;
            let buckets = likelihood_by_bucket(&records, &config.buckets);
            let csv = concord::harness::likelihood_table(&buckets);
            let meta = report_meta(
                kind,
                Some(&hash),
                &[store.as_path()],
                serde_json::json!({
                    "trials_with_logprobs": buckets.iter().map(|b| b.n_trials).sum::<usize>(),
                    "trials_missing_logprobs": buckets.iter().map(|b| b.n_missing_logprobs).sum::<usize>(),
                }),
            );
            write_report(&report_dir, "likelihood_figure", &csv, &meta)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown report kind {other:?}; expected one of {}",
                concord::harness::REPORT_KINDS.join(", ")
            )))
        }
    };
    println!("report written: {}", files.table.display());
    Ok(())
}
