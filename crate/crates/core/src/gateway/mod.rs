//! Dispatch of planned trials to model backends with caching, retries and a
//! bounded worker pool.

mod cache;
mod http;
mod oracle;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::planner::TrialPlan;
use crate::prompt::{parse_response, ParsedOutcome, Prompt};

pub use cache::{sha256_hex, CacheKey, CachedResponse, ResponseCache};
pub use http::{response_text, ChatHttpBackend};
pub use oracle::{oracle_respond, OracleBackend, OracleConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Retryable: connection problems, timeouts, server errors.
    Transport(String),
    /// Fatal for the whole run.
    Auth(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageLocation {
    File(PathBuf),
    Url(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedImage {
    pub image_id: String,
    pub location: ImageLocation,
    pub content_hash: String,
}

pub struct BackendRequest<'a> {
    pub plan: &'a TrialPlan,
    pub prompt: &'a Prompt,
    /// In attachment order.
    pub images: &'a [ResolvedImage],
}

pub trait Backend: Send + Sync {
    /// Stable identifier that participates in cache keys.
    fn id(&self) -> String;
    fn model(&self) -> &str;
    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ChatHttp,
    SimulatedOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    /// Name of the environment variable holding the API token.
    pub auth_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub parallelism: usize,
    pub oracle: OracleConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::SimulatedOracle,
            endpoint: String::new(),
            auth_env: "MLLM_IQA_API_KEY".into(),
            model: String::new(),
            temperature: 0.0,
            max_tokens: 512,
            max_attempts: 3,
            backoff_base_ms: 500,
            parallelism: 4,
            oracle: OracleConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts < 1 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if self.parallelism < 1 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.oracle.noise_std < 0.0 || !self.oracle.noise_std.is_finite() {
            return Err(Error::Config(
                "oracle noise_std must be a finite value >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self, dataset: &Dataset) -> Result<Box<dyn Backend>> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::SimulatedOracle => {
                Box::new(OracleBackend::from_dataset(dataset, self.oracle.clone()))
            }
            BackendKind::ChatHttp => Box::new(ChatHttpBackend::new(
                &self.endpoint,
                &self.model,
                &self.auth_env,
                self.temperature,
                self.max_tokens,
            )?),
        })
    }

    pub fn execute_options(&self, cache_dir: Option<PathBuf>) -> ExecuteOptions {
        ExecuteOptions {
            max_attempts: self.max_attempts,
            backoff_base_ms: self.backoff_base_ms,
            parallelism: self.parallelism,
            cache_dir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: u64,
    pub prompt_hash: String,
    /// Attachment ids in presentation order.
    pub stimuli: Vec<String>,
    pub raw_response: String,
    pub outcome: ParsedOutcome,
    pub attempts: u32,
    pub latency_ms: u64,
    pub backend_id: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub parallelism: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions {
            max_attempts: 3,
            backoff_base_ms: 500,
            parallelism: 4,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteStats {
    pub trials: usize,
    pub backend_calls: usize,
    pub cache_hits: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone)]
pub struct ExecuteOutput {
    pub results: Vec<TrialResult>,
    pub stats: ExecuteStats,
}

/// Resolves each image id to a file (relative to `base_dir`) or URL and hashes its content.
pub fn resolve_images(
    ids: &[&str],
    dataset: &Dataset,
    base_dir: &Path,
) -> Result<HashMap<String, ResolvedImage>> {
    let mut out = HashMap::with_capacity(ids.len());
    for &id in ids {
        if out.contains_key(id) {
            continue;
        }
        let record = dataset.get(id)?;
        let resolved = if record.uri.starts_with("http://") || record.uri.starts_with("https://") {
            ResolvedImage {
                image_id: id.to_owned(),
                location: ImageLocation::Url(record.uri.clone()),
                content_hash: sha256_hex(record.uri.as_bytes()),
            }
        } else {
            let path = base_dir.join(&record.uri);
            let bytes = fs::read(&path).map_err(|e| {
                Error::Backend(format!(
                    "stimulus `{id}` is not resolvable at {}: {e}",
                    path.display()
                ))
            })?;
            ResolvedImage {
                image_id: id.to_owned(),
                location: ImageLocation::File(path),
                content_hash: sha256_hex(&bytes),
            }
        };
        out.insert(id.to_owned(), resolved);
    }
    Ok(out)
}

struct Job {
    plan: TrialPlan,
    prompt: Prompt,
    prompt_hash: String,
    images: Vec<ResolvedImage>,
    cache_key: String,
}

/// Runs every trial, at most `parallelism` at a time, and returns results in trial order.
///
/// A response that does not parse is re-requested with the identical prompt;
/// transport errors back off exponentially. Both share the `max_attempts`
/// budget, after which the trial is recorded as invalid. An authentication
/// failure aborts the run. Final responses are cached under their
/// [`CacheKey`], so a completed plan never reaches the backend again.
pub fn execute(
    plans: &[TrialPlan],
    backend: &dyn Backend,
    dataset: &Dataset,
    base_dir: &Path,
    options: &ExecuteOptions,
) -> Result<ExecuteOutput> {
    if options.max_attempts < 1 || options.parallelism < 1 {
        return Err(Error::Config(
            "max_attempts and parallelism must be at least 1".into(),
        ));
    }
    let cache = options
        .cache_dir
        .as_ref()
        .map(ResponseCache::open)
        .transpose()?;
    let backend_id = backend.id();
    let all_ids: Vec<&str> = plans
        .iter()
        .flat_map(|p| {
            p.exemplar
                .iter()
                .flat_map(|e| e.reference.iter().chain(&e.images))
                .chain(p.reference.iter())
                .chain(&p.stimuli)
                .map(String::as_str)
        })
        .collect();
    let resolved = resolve_images(&all_ids, dataset, base_dir)?;

    let jobs = plans
        .iter()
        .map(|plan| {
            let prompt = plan.prompt()?;
            let images: Vec<ResolvedImage> = prompt
                .attachments
                .iter()
                .map(|id| resolved[id].clone())
                .collect();
            let hashes: Vec<String> = images.iter().map(|i| i.content_hash.clone()).collect();
            let prompt_hash = sha256_hex(prompt.text.as_bytes());
            let cache_key = CacheKey {
                backend_id: &backend_id,
                model: backend.model(),
                prompt_hash: &prompt_hash,
                content_hashes: &hashes,
            }
            .digest();
            Ok(Job {
                plan: plan.clone(),
                prompt,
                prompt_hash,
                images,
                cache_key,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let next = AtomicUsize::new(0);
    let calls = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let slots: Mutex<Vec<Option<TrialResult>>> = Mutex::new(vec![None; jobs.len()]);

    let worker = || {
        while !abort.load(Ordering::SeqCst) {
            let index = next.fetch_add(1, Ordering::SeqCst);
            let Some(job) = jobs.get(index) else { break };
            match run_job(
                job,
                backend,
                &backend_id,
                cache.as_ref(),
                options,
                &calls,
                &hits,
            ) {
                Ok(result) => slots.lock().unwrap()[index] = Some(result),
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    failure.lock().unwrap().get_or_insert(e);
                }
            }
        }
    };
    let workers = options.parallelism.min(jobs.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(worker);
        }
    });

    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    let mut results: Vec<TrialResult> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job finished"))
        .collect();
    results.sort_by_key(|r| r.trial_id);
    let stats = ExecuteStats {
        trials: results.len(),
        backend_calls: calls.into_inner(),
        cache_hits: hits.into_inner(),
        invalid: results.iter().filter(|r| !r.outcome.is_valid()).count(),
    };
    Ok(ExecuteOutput { results, stats })
}

fn run_job(
    job: &Job,
    backend: &dyn Backend,
    backend_id: &str,
    cache: Option<&ResponseCache>,
    options: &ExecuteOptions,
    calls: &AtomicUsize,
    hits: &AtomicUsize,
) -> Result<TrialResult> {
    let started = Instant::now();
    let result =
        |raw: String, attempts: u32, cache_hit: bool, outcome: ParsedOutcome| TrialResult {
            trial_id: job.plan.trial_id,
            prompt_hash: job.prompt_hash.clone(),
            stimuli: job.prompt.attachments.clone(),
            raw_response: raw,
            outcome,
            attempts,
            latency_ms: started.elapsed().as_millis() as u64,
            backend_id: backend_id.to_owned(),
            cache_hit,
        };
    if let Some(cached) = cache.and_then(|c| c.get(&job.cache_key)) {
        hits.fetch_add(1, Ordering::SeqCst);
        let outcome = parse_response(&cached.raw_response, &job.plan.spec);
        return Ok(result(cached.raw_response, cached.attempts, true, outcome));
    }

    let request = BackendRequest {
        plan: &job.plan,
        prompt: &job.prompt,
        images: &job.images,
    };
    let mut last_raw = String::new();
    let mut last_outcome = None;
    let mut attempts = 0;
    while attempts < options.max_attempts {
        attempts += 1;
        calls.fetch_add(1, Ordering::SeqCst);
        match backend.complete(&request) {
            Ok(raw) => {
                let outcome = parse_response(&raw, &job.plan.spec);
                last_raw = raw;
                let valid = outcome.is_valid();
                last_outcome = Some(outcome);
                if valid {
                    break;
                }
            }
            Err(BackendError::Auth(msg)) => return Err(Error::Auth(msg)),
            Err(BackendError::Transport(msg)) => {
                log::warn!(
                    "trial {}: attempt {attempts} failed: {msg}",
                    job.plan.trial_id
                );
                last_raw.clear();
                last_outcome = Some(ParsedOutcome::Invalid {
                    raw: String::new(),
                    reason: format!("transport error: {msg}"),
                });
                if attempts < options.max_attempts {
                    let delay = options
                        .backoff_base_ms
                        .saturating_mul(1 << (attempts - 1).min(16));
                    thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
    let outcome = last_outcome.expect("at least one attempt");
    let transport_failure = matches!(&outcome, ParsedOutcome::Invalid { reason, .. } if reason.starts_with("transport"));
    // transport failures are not answers; leave them uncached so a later run retries
    if let (Some(cache), false) = (cache, transport_failure) {
        cache.put(
            &job.cache_key,
            &CachedResponse {
                raw_response: last_raw.clone(),
                attempts,
            },
        )?;
    }
    Ok(result(last_raw, attempts, false, outcome))
}

pub fn write_results(results: &[TrialResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_results(text: &str) -> Result<Vec<TrialResult>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
