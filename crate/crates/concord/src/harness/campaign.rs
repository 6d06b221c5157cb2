//! Campaign drivers: threshold runs with resume and bounded concurrency,
//! the bucket-filling protocol, store labeling, and offline re-analysis.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Condvar, Mutex};

use indexmap::IndexMap;

use crate::analysis::{detect_blurt, BucketedCollection};
use crate::backend::{GenParams, TextBackend};
use crate::consistency::{
    run_until_threshold_with, ConsistencyConfig, ConsistencyResult, ResumeState, RunningTally,
};
use crate::dataset::QuestionRecord;
use crate::error::{Error, Result};
use crate::harness::manifest::{now_ms, RunManifest};
use crate::harness::store::{load_trials, load_trials_for_resume, TrialFilter, TrialStore};
use crate::pipeline::{run_trial, Method, PipelineConfig, TrialRecord};

pub const STORE_FILE: &str = "trials.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "consistency.jsonl";
pub const BUCKETS_FILE: &str = "buckets.json";

/// Re-derive the stopping outcome from a stored stream. Equivalent to the
/// live run whenever the stream is complete; trials marked post-stop are
/// skipped.
pub fn replay_consistency(
    question_id: &str,
    stream: &[TrialRecord],
    cfg: &ConsistencyConfig,
) -> ConsistencyResult {
    let mut tally = RunningTally::new();
    let mut draws = 0usize;
    for t in stream.iter().filter(|t| !t.post_stop) {
        draws += 1;
        if t.is_accepted() {
            if let Some(a) = &t.answer {
                tally.push(a);
                let (modal, count) = tally.modal().expect("just pushed");
                let met = if cfg.strict_exceeds {
                    count > cfg.threshold as usize
                } else {
                    count >= cfg.threshold as usize
                };
                if met {
                    return ConsistencyResult {
                        question_id: question_id.to_string(),
                        modal: Some(modal.clone()),
                        modal_count: count,
                        accepted_samples: tally.accepted(),
                        total_draws: draws,
                        reached_threshold: true,
                    };
                }
            }
        }
    }
    let (modal, modal_count) = match tally.modal() {
        Some((a, c)) => (Some(a.clone()), c),
        None => (None, 0),
    };
    ConsistencyResult {
        question_id: question_id.to_string(),
        modal,
        modal_count,
        accepted_samples: tally.accepted(),
        total_draws: draws,
        reached_threshold: false,
    }
}

/// Sliding window bounding how far draw issuance may run ahead of the
/// serialized stopping check: a permit is taken per issued draw and
/// returned once that draw has been processed in order.
struct DrawWindow {
    permits: Mutex<usize>,
    changed: Condvar,
    stopped: AtomicBool,
}

impl DrawWindow {
    fn new(size: usize) -> Self {
        DrawWindow {
            permits: Mutex::new(size),
            changed: Condvar::new(),
            stopped: AtomicBool::new(false),
        }
    }

    /// Blocks for a permit; returns false once the window is closed.
    fn acquire(&self) -> bool {
        let mut permits = self.permits.lock().unwrap();
        loop {
            if self.stopped.load(Ordering::SeqCst) {
                return false;
            }
            if *permits > 0 {
                *permits -= 1;
                return true;
            }
            permits = self.changed.wait(permits).unwrap();
        }
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.changed.notify_all();
    }

    fn close(&self) {
        self.stopped.store(true, Ordering::SeqCst);
        // Permits are irrelevant past this point; wake all waiters.
        self.changed.notify_all();
    }
}

/// Sample one question with a window of concurrently issued draws.
/// Acceptance and the stopping check run strictly in draw-index order;
/// at most `in_flight` draws are ever issued beyond the last processed
/// one, and draws already in flight when the rule fired are delivered
/// marked post-stop.
#[allow(clippy::too_many_arguments)]
pub fn run_question_concurrent<B: TextBackend + ?Sized>(
    q: &QuestionRecord,
    m: &Method,
    cfg: &ConsistencyConfig,
    backend: &B,
    pipeline: &PipelineConfig,
    resume: ResumeState,
    in_flight: usize,
    mut on_trial: impl FnMut(&TrialRecord) -> Result<()>,
) -> Result<ConsistencyResult> {
    if in_flight <= 1 {
        return run_until_threshold_with(q, m, cfg, backend, pipeline, resume, on_trial);
    }
    cfg.validate()?;
    pipeline.validate()?;

    let mut tally = RunningTally::seed(resume.accepted.iter());
    let met = |count: usize| {
        if cfg.strict_exceeds {
            count > cfg.threshold as usize
        } else {
            count >= cfg.threshold as usize
        }
    };
    let finish = |tally: &RunningTally, draws: usize, reached: bool| {
        let (modal, modal_count) = match tally.modal() {
            Some((a, c)) => (Some(a.clone()), c),
            None => (None, 0),
        };
        ConsistencyResult {
            question_id: q.id.clone(),
            modal,
            modal_count,
            accepted_samples: tally.accepted(),
            total_draws: draws,
            reached_threshold: reached,
        }
    };
    if tally.modal().is_some_and(|(_, c)| met(c)) {
        return Ok(finish(&tally, resume.next_draw as usize, true));
    }

    let next = AtomicU64::new(resume.next_draw);
    let window = DrawWindow::new(in_flight);
    let cap = u64::from(cfg.max_samples);
    let (tx, rx) = mpsc::channel::<(u64, Result<TrialRecord>)>();

    std::thread::scope(|scope| {
        for _ in 0..in_flight {
            let tx = tx.clone();
            let window = &window;
            let next = &next;
            scope.spawn(move || {
                while window.acquire() {
                    let index = next.fetch_add(1, Ordering::SeqCst);
                    if index >= cap {
                        break;
                    }
                    let outcome = run_trial(q, m, backend, pipeline, index);
                    if tx.send((index, outcome)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<u64, Result<TrialRecord>> = BTreeMap::new();
        let mut expected = resume.next_draw;
        let mut decided: Option<ConsistencyResult> = None;
        let mut failed: Option<Error> = None;

        for (index, outcome) in rx {
            pending.insert(index, outcome);
            while failed.is_none() {
                let Some(entry) = pending.remove(&expected) else {
                    break;
                };
                window.release();
                match entry {
                    Err(e) => {
                        window.close();
                        failed = Some(e);
                    }
                    Ok(mut trial) => {
                        expected += 1;
                        if decided.is_some() {
                            trial.post_stop = true;
                            if let Err(e) = on_trial(&trial) {
                                window.close();
                                failed = Some(e);
                            }
                            continue;
                        }
                        if let Err(e) = on_trial(&trial) {
                            window.close();
                            failed = Some(e);
                            continue;
                        }
                        if trial.is_accepted() {
                            if let Some(a) = &trial.answer {
                                tally.push(a);
                                if met(tally.modal().map_or(0, |(_, c)| c)) {
                                    decided = Some(finish(&tally, expected as usize, true));
                                    window.close();
                                }
                            }
                        }
                    }
                }
            }
        }

        if let Some(e) = failed {
            return Err(e);
        }
        Ok(decided.unwrap_or_else(|| finish(&tally, expected as usize, false)))
    })
}

/// Everything fixed for a whole campaign.
pub struct Campaign {
    pub method: Method,
    pub consistency: ConsistencyConfig,
    pub pipeline: PipelineConfig,
    pub in_flight: usize,
    pub workers: usize,
    pub config_hash: String,
    pub backend_desc: String,
}

pub struct CampaignOutcome {
    pub results: Vec<ConsistencyResult>,
    pub manifest: RunManifest,
    pub store_path: PathBuf,
}

struct SharedRun {
    store: TrialStore,
    manifest: RunManifest,
    manifest_path: PathBuf,
}

impl SharedRun {
    fn record(&mut self, trial: &TrialRecord) -> Result<()> {
        self.store.append(trial)?;
        self.manifest.record_trial(trial);
        Ok(())
    }

    fn complete_question(&mut self, question_id: &str) -> Result<()> {
        self.manifest.mark_completed(question_id);
        self.manifest.save(&self.manifest_path)
    }
}

/// Prior work found in the output directory of a resumed run.
struct PriorWork {
    by_question: IndexMap<String, Vec<TrialRecord>>,
    manifest: Option<RunManifest>,
}

fn load_prior(out_dir: &Path, resume: bool) -> Result<PriorWork> {
    let store_path = out_dir.join(STORE_FILE);
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if !store_path.exists() {
        return Ok(PriorWork {
            by_question: IndexMap::new(),
            manifest: None,
        });
    }
    if !resume {
        let len = std::fs::metadata(&store_path).map(|m| m.len()).unwrap_or(0);
        if len > 0 {
            return Err(Error::Config(format!(
                "{} already holds a run; resume it or use a fresh --out directory",
                out_dir.display()
            )));
        }
        return Ok(PriorWork {
            by_question: IndexMap::new(),
            manifest: None,
        });
    }
    let (records, torn) = load_trials_for_resume(&store_path)?;
    if let Some(line) = torn {
        log::warn!(
            "resume dropped torn final line {line} of {}",
            store_path.display()
        );
    }
    let mut by_question: IndexMap<String, Vec<TrialRecord>> = IndexMap::new();
    for r in records {
        by_question
            .entry(r.question_id.clone())
            .or_default()
            .push(r);
    }
    let manifest = manifest_path
        .exists()
        .then(|| RunManifest::load(&manifest_path))
        .transpose()?;
    Ok(PriorWork {
        by_question,
        manifest,
    })
}

fn resume_state(stream: &[TrialRecord]) -> ResumeState {
    ResumeState {
        next_draw: stream.iter().map(|t| t.draw_index + 1).max().unwrap_or(0),
        accepted: stream
            .iter()
            .filter(|t| t.is_accepted() && !t.post_stop)
            .filter_map(|t| t.answer.clone())
            .collect(),
    }
}

/// Execute (or resume) a threshold campaign over a question set, storing
/// every trial and rewriting the manifest after each completed question.
pub fn run_campaign<B: TextBackend + ?Sized>(
    campaign: &Campaign,
    questions: &[QuestionRecord],
    backend: &B,
    out_dir: &Path,
    resume: bool,
) -> Result<CampaignOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let prior = load_prior(out_dir, resume)?;
    let store_path = out_dir.join(STORE_FILE);
    let manifest_path = out_dir.join(MANIFEST_FILE);

    if let Some(prior_manifest) = &prior.manifest {
        if prior_manifest.config_hash != campaign.config_hash {
            log::warn!(
                "resuming under config {} a run recorded under config {}; stored draws keep their original parameters",
                campaign.config_hash,
                prior_manifest.config_hash
            );
        }
    }
    let mut manifest = prior.manifest.clone().unwrap_or_else(|| {
        RunManifest::new(
            campaign.config_hash.clone(),
            campaign.backend_desc.clone(),
            campaign.method.name().to_string(),
        )
    });
    // Counts always come from what is actually on disk.
    let all_prior: Vec<TrialRecord> = prior
        .by_question
        .values()
        .flat_map(|v| v.iter().cloned())
        .collect();
    manifest.reconcile_with(&all_prior);
    manifest.finished_at_ms = None;

    let mut results: Vec<Option<ConsistencyResult>> = vec![None; questions.len()];
    let mut todo: Vec<(usize, ResumeState)> = Vec::new();
    let empty: Vec<TrialRecord> = Vec::new();
    for (idx, q) in questions.iter().enumerate() {
        let stream = prior.by_question.get(&q.id).unwrap_or(&empty);
        let replayed = replay_consistency(&q.id, stream, &campaign.consistency);
        let done = replayed.reached_threshold
            || replayed.total_draws >= campaign.consistency.max_samples as usize
            || (manifest.is_completed(&q.id) && !stream.is_empty());
        if done {
            manifest.mark_completed(&q.id);
            results[idx] = Some(replayed);
        } else {
            todo.push((idx, resume_state(stream)));
        }
    }

    let shared = Mutex::new(SharedRun {
        store: TrialStore::open(&store_path)?,
        manifest,
        manifest_path: manifest_path.clone(),
    });
    let results_mutex = Mutex::new(&mut results);
    let next_todo = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);

    let workers = campaign.workers.max(1).min(todo.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let slot = next_todo.fetch_add(1, Ordering::SeqCst);
                let Some((idx, state)) = todo.get(slot) else {
                    break;
                };
                let q = &questions[*idx];
                let outcome = run_question_concurrent(
                    q,
                    &campaign.method,
                    &campaign.consistency,
                    backend,
                    &campaign.pipeline,
                    state.clone(),
                    campaign.in_flight,
                    |trial| shared.lock().unwrap().record(trial),
                );
                match outcome {
                    Ok(result) => {
                        let completion = shared.lock().unwrap().complete_question(&q.id);
                        if let Err(e) = completion {
                            abort.store(true, Ordering::SeqCst);
                            first_error.lock().unwrap().get_or_insert(e);
                            break;
                        }
                        results_mutex.lock().unwrap()[*idx] = Some(result);
                    }
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        // The partial stream and manifest stay on disk for resume.
        let shared = shared.into_inner().unwrap();
        let _ = shared.manifest.save(&manifest_path);
        return Err(e);
    }

    let mut shared = shared.into_inner().unwrap();
    shared.manifest.finished_at_ms = Some(now_ms());
    shared.manifest.artifacts = vec![
        STORE_FILE.to_string(),
        MANIFEST_FILE.to_string(),
        RESULTS_FILE.to_string(),
    ];
    shared.manifest.save(&manifest_path)?;

    let results: Vec<ConsistencyResult> = results
        .into_iter()
        .map(|r| r.expect("every question resolved"))
        .collect();
    write_results(&out_dir.join(RESULTS_FILE), &results)?;

    Ok(CampaignOutcome {
        results,
        manifest: shared.manifest,
        store_path,
    })
}

pub fn write_results(path: &Path, results: &[ConsistencyResult]) -> Result<()> {
    let mut out = String::new();
    for r in results {
        let line = serde_json::to_string(r).map_err(|e| Error::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ConsistencyResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Store {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Execute (or resume) the bucket-filling protocol over a question set.
pub fn run_buckets<B: TextBackend + ?Sized>(
    pipeline: &PipelineConfig,
    questions: &[QuestionRecord],
    backend: &B,
    out_dir: &Path,
    resume: bool,
    config_hash: &str,
    backend_desc: &str,
) -> Result<Vec<BucketedCollection>> {
    pipeline.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let prior = load_prior(out_dir, resume)?;
    let store_path = out_dir.join(STORE_FILE);
    let manifest_path = out_dir.join(MANIFEST_FILE);

    let mut manifest = prior.manifest.clone().unwrap_or_else(|| {
        RunManifest::new(
            config_hash.to_string(),
            backend_desc.to_string(),
            Method::Zeroshot.name().to_string(),
        )
    });
    let all_prior: Vec<TrialRecord> = prior
        .by_question
        .values()
        .flat_map(|v| v.iter().cloned())
        .collect();
    manifest.reconcile_with(&all_prior);
    manifest.finished_at_ms = None;

    let mut store = TrialStore::open(&store_path)?;
    let empty: Vec<TrialRecord> = Vec::new();
    let mut collections = Vec::with_capacity(questions.len());
    for q in questions {
        let stream = prior.by_question.get(&q.id).unwrap_or(&empty);
        let mut state = crate::analysis::fill_buckets(&q.id, stream, &pipeline.bucket);
        if !(state.complete(&pipeline.bucket)
            || state.draws_spent >= pipeline.bucket.resample_cap as usize)
        {
            state = crate::analysis::resume_bucket_collection(q, backend, pipeline, state, |t| {
                store.append(t)?;
                manifest.record_trial(t);
                Ok(())
            })?;
        }
        manifest.mark_completed(&q.id);
        manifest.save(&manifest_path)?;
        collections.push(state);
    }

    manifest.finished_at_ms = Some(now_ms());
    manifest.artifacts = vec![
        STORE_FILE.to_string(),
        MANIFEST_FILE.to_string(),
        BUCKETS_FILE.to_string(),
    ];
    manifest.save(&manifest_path)?;

    let buckets_path = out_dir.join(BUCKETS_FILE);
    let json = serde_json::to_string_pretty(&collections).map_err(|e| Error::Store {
        path: buckets_path.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&buckets_path, json).map_err(|e| Error::io(&buckets_path, e))?;
    Ok(collections)
}

pub struct ClassifySummary {
    pub judged: usize,
    pub already_labeled: usize,
    pub unparsable: usize,
    pub skipped_rejected: usize,
}

/// Label accepted trials of a store with the judge and write a new
/// labeled store; the input store is never modified. Judge calls for
/// different trials are issued concurrently on up to `workers` threads;
/// output order stays the stream order.
pub fn classify_store<B: TextBackend + ?Sized>(
    store_in: &Path,
    store_out: &Path,
    questions: &HashMap<String, QuestionRecord>,
    judge: &B,
    judge_params: &GenParams,
    workers: usize,
) -> Result<ClassifySummary> {
    let mut records = load_trials(store_in, &TrialFilter::default())?;
    if store_out.exists() {
        return Err(Error::Config(format!(
            "{} already exists; labeling writes a fresh store",
            store_out.display()
        )));
    }

    let mut summary = ClassifySummary {
        judged: 0,
        already_labeled: 0,
        unparsable: 0,
        skipped_rejected: 0,
    };
    let mut to_judge = Vec::new();
    for (idx, t) in records.iter_mut().enumerate() {
        if !t.is_accepted() {
            summary.skipped_rejected += 1;
            continue;
        }
        if !questions.contains_key(&t.question_id) {
            return Err(Error::InvalidInput(format!(
                "store references unknown question {:?}; pass the dataset it was sampled from",
                t.question_id
            )));
        }
        let answer = t.answer.clone().expect("accepted trial has an answer");
        if t.blurt.is_none() {
            let (flag, source) = detect_blurt(&t.reasoning, &answer);
            t.blurt = Some(flag);
            t.blurt_source = Some(source.to_string());
        }
        if t.cot_label.is_none() {
            to_judge.push(idx);
        } else {
            summary.already_labeled += 1;
        }
    }

    // Fan the judge calls out, then fill labels back in stream order.
    let labels: Vec<Result<crate::pipeline::CotLabel>> = {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<crate::pipeline::CotLabel>>>> =
            to_judge.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1).min(to_judge.len().max(1)) {
                scope.spawn(|| loop {
                    let slot = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&record_idx) = to_judge.get(slot) else {
                        break;
                    };
                    let t = &records[record_idx];
                    let q = &questions[&t.question_id];
                    let answer = t.answer.as_ref().expect("accepted");
                    let label = crate::analysis::classify_cot(
                        q,
                        &t.reasoning.text,
                        answer,
                        judge,
                        judge_params,
                    )
                    .map_err(Error::Backend);
                    *slots[slot].lock().unwrap() = Some(label);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot filled"))
            .collect()
    };
    for (record_idx, label) in to_judge.into_iter().zip(labels) {
        let label = label?;
        if label == crate::pipeline::CotLabel::Unparsable {
            summary.unparsable += 1;
        }
        records[record_idx].cot_label = Some(label);
        summary.judged += 1;
    }

    let mut out = TrialStore::open(store_out)?;
    for t in &records {
        out.append(t)?;
    }
    Ok(summary)
}

/// Recompute per-question stopping outcomes from a stored run and audit
/// the manifest against the store.
pub fn analyze_run(out_dir: &Path, cfg: &ConsistencyConfig) -> Result<Vec<ConsistencyResult>> {
    let store_path = out_dir.join(STORE_FILE);
    if !store_path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "no trial store at {}; run `concord run` (or `concord buckets`) first",
            store_path.display()
        )));
    }
    let records = load_trials(&store_path, &TrialFilter::default())?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest = RunManifest::load(&manifest_path)?;
        manifest.audit(&records)?;
    }
    let mut by_question: IndexMap<String, Vec<TrialRecord>> = IndexMap::new();
    for r in records {
        by_question
            .entry(r.question_id.clone())
            .or_default()
            .push(r);
    }
    let results: Vec<ConsistencyResult> = by_question
        .iter()
        .map(|(qid, stream)| replay_consistency(qid, stream, cfg))
        .collect();
    write_results(&out_dir.join(RESULTS_FILE), &results)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{SimBackend, SimProfile};
    use crate::dataset::{CanonicalAnswer, TaskKind};

    fn ca(v: &str) -> CanonicalAnswer {
        CanonicalAnswer::from_normalized(v)
    }

    fn questions(n: usize) -> Vec<QuestionRecord> {
        (0..n)
            .map(|i| QuestionRecord {
                id: format!("q{i}"),
                question: format!("what is item {i}?"),
                gold: ca(if i % 2 == 0 { "4" } else { "7" }),
                task: TaskKind::IntegerGenerative,
            })
            .collect()
    }

    fn profile() -> SimProfile {
        SimProfile {
            length_weights: [1.0; 10],
            correctness: [0.8; 10],
            consistency: 0.8,
            blurt_probability: 0.3,
            noise_probability: 0.1,
            per_token_logprob: Some(0.8f64.ln()),
            answer_vocabulary: vec![ca("4"), ca("7"), ca("9")],
        }
    }

    fn campaign(threshold: u32, in_flight: usize) -> Campaign {
        Campaign {
            method: Method::Zeroshot,
            consistency: ConsistencyConfig {
                threshold,
                max_samples: 64,
                strict_exceeds: false,
            },
            pipeline: PipelineConfig::default().with_seed(3),
            in_flight,
            workers: 1,
            config_hash: "testhash".to_string(),
            backend_desc: "sim".to_string(),
        }
    }

    #[test]
    fn campaign_runs_and_audits() {
        let qs = questions(4);
        let backend = SimBackend::new(profile(), qs.iter().cloned()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_campaign(&campaign(4, 1), &qs, &backend, dir.path(), false).unwrap();
        assert_eq!(outcome.results.len(), 4);
        for r in &outcome.results {
            r.assert_invariants();
            assert!(r.reached_threshold);
        }
        let records = load_trials(&outcome.store_path, &TrialFilter::default()).unwrap();
        outcome.manifest.audit(&records).unwrap();
        assert!(outcome.manifest.finished_at_ms.is_some());

        // Replay from the store matches the live results.
        let replayed = analyze_run(dir.path(), &campaign(4, 1).consistency).unwrap();
        assert_eq!(replayed, outcome.results);
    }

    #[test]
    fn concurrent_draws_match_sequential_results() {
        let qs = questions(3);
        let backend = SimBackend::new(profile(), qs.iter().cloned()).unwrap();
        let cfg = campaign(5, 1);
        let q = &qs[0];
        let mut seq_trials = Vec::new();
        let sequential = run_question_concurrent(
            q,
            &cfg.method,
            &cfg.consistency,
            &backend,
            &cfg.pipeline,
            ResumeState::default(),
            1,
            |t| {
                seq_trials.push(t.clone());
                Ok(())
            },
        )
        .unwrap();

        let mut conc_trials = Vec::new();
        let concurrent = run_question_concurrent(
            q,
            &cfg.method,
            &cfg.consistency,
            &backend,
            &cfg.pipeline,
            ResumeState::default(),
            4,
            |t| {
                conc_trials.push(t.clone());
                Ok(())
            },
        )
        .unwrap();

        assert_eq!(sequential, concurrent);
        // Pre-stop trials are identical; the concurrent run may carry
        // extra post-stop records at the tail.
        let pre_stop: Vec<&TrialRecord> = conc_trials.iter().filter(|t| !t.post_stop).collect();
        assert_eq!(pre_stop.len(), seq_trials.len());
        for (a, b) in seq_trials.iter().zip(pre_stop) {
            assert_eq!(a, b);
        }
        // Delivery was in draw-index order and over-issue stayed within
        // the window.
        for pair in conc_trials.windows(2) {
            assert!(pair[0].draw_index < pair[1].draw_index);
        }
        let post_stop = conc_trials.iter().filter(|t| t.post_stop).count();
        assert!(
            post_stop <= 5,
            "window must bound over-issued draws, got {post_stop}"
        );
    }

    #[test]
    fn classify_labels_accepted_trials_in_order() {
        let qs = questions(2);
        let backend = SimBackend::new(profile(), qs.iter().cloned()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_campaign(&campaign(4, 1), &qs, &backend, dir.path(), false).unwrap();

        let by_id: HashMap<String, QuestionRecord> =
            qs.iter().map(|q| (q.id.clone(), q.clone())).collect();
        let labeled_path = dir.path().join("trials.labeled.jsonl");
        let summary = classify_store(
            &outcome.store_path,
            &labeled_path,
            &by_id,
            &crate::backend::SimJudge,
            &crate::analysis::judge_params(),
            3,
        )
        .unwrap();

        let raw = load_trials(&outcome.store_path, &TrialFilter::default()).unwrap();
        let labeled = load_trials(&labeled_path, &TrialFilter::default()).unwrap();
        assert_eq!(raw.len(), labeled.len());
        let accepted = labeled.iter().filter(|t| t.is_accepted()).count();
        assert_eq!(summary.judged, accepted);
        for (r, l) in raw.iter().zip(&labeled) {
            assert_eq!(
                (&r.question_id, r.draw_index),
                (&l.question_id, l.draw_index)
            );
            if l.is_accepted() {
                assert!(l.cot_label.is_some());
                assert!(l.blurt.is_some());
            } else {
                assert!(l.cot_label.is_none());
            }
        }

        // Re-labeling refuses to clobber the derived store.
        assert!(classify_store(
            &outcome.store_path,
            &labeled_path,
            &by_id,
            &crate::backend::SimJudge,
            &crate::analysis::judge_params(),
            1,
        )
        .is_err());
    }

    #[test]
    fn fresh_out_dir_required_without_resume() {
        let qs = questions(1);
        let backend = SimBackend::new(profile(), qs.iter().cloned()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_campaign(&campaign(2, 1), &qs, &backend, dir.path(), false).unwrap();
        let again = run_campaign(&campaign(2, 1), &qs, &backend, dir.path(), false);
        assert!(matches!(again, Err(Error::Config(_))));
    }

    #[test]
    fn concurrent_crash_leaves_a_resumable_store() {
        use crate::backend::{GenRequest, SampledResponse};
        use crate::error::BackendError;
        use std::sync::atomic::AtomicUsize;

        struct Fuse<'a> {
            inner: &'a SimBackend,
            calls: AtomicUsize,
            fuse: usize,
        }
        impl crate::backend::TextBackend for Fuse<'_> {
            fn generate(&self, r: &GenRequest<'_>) -> Result<SampledResponse, BackendError> {
                if self.calls.fetch_add(1, Ordering::SeqCst) >= self.fuse {
                    return Err(BackendError::Auth("fuse burned".into()));
                }
                self.inner.generate(r)
            }
            fn describe(&self) -> String {
                "fused sim".to_string()
            }
        }

        let qs = questions(5);
        let sim = SimBackend::new(profile(), qs.iter().cloned()).unwrap();
        let mut cfg = campaign(5, 3);
        cfg.workers = 2;

        let reference_dir = tempfile::tempdir().unwrap();
        let reference = run_campaign(&cfg, &qs, &sim, reference_dir.path(), false).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let fused = Fuse {
            inner: &sim,
            calls: AtomicUsize::new(0),
            fuse: 23,
        };
        assert!(run_campaign(&cfg, &qs, &fused, dir.path(), false).is_err());

        // Stored draw indices are contiguous per question despite the
        // windowed issue order.
        let partial = load_trials(&dir.path().join(STORE_FILE), &TrialFilter::default()).unwrap();
        let mut per_question: HashMap<&str, Vec<u64>> = HashMap::new();
        for t in &partial {
            per_question
                .entry(t.question_id.as_str())
                .or_default()
                .push(t.draw_index);
        }
        for (qid, indices) in &per_question {
            let expected: Vec<u64> = (0..indices.len() as u64).collect();
            assert_eq!(indices, &expected, "holes in stream for {qid}");
        }

        let resumed = run_campaign(&cfg, &qs, &sim, dir.path(), true).unwrap();
        assert_eq!(resumed.results, reference.results);
        let records = load_trials(&resumed.store_path, &TrialFilter::default()).unwrap();
        resumed.manifest.audit(&records).unwrap();
    }

    #[test]
    fn resume_skips_completed_questions() {
        let qs = questions(3);
        let backend = SimBackend::new(profile(), qs.iter().cloned()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = run_campaign(&campaign(3, 1), &qs, &backend, dir.path(), false).unwrap();
        let line_count = std::fs::read_to_string(&first.store_path)
            .unwrap()
            .lines()
            .count();
        // Resuming a finished run redraws nothing.
        let second = run_campaign(&campaign(3, 1), &qs, &backend, dir.path(), true).unwrap();
        let line_count_after = std::fs::read_to_string(&second.store_path)
            .unwrap()
            .lines()
            .count();
        assert_eq!(line_count, line_count_after);
        assert_eq!(first.results, second.results);
    }
}
