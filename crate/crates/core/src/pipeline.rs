//! Config-driven select → plan → run → aggregate → report pipeline with a run
//! manifest and digest-based stage skipping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::aggregate::{aggregate, AggregateOptions, Predictions};
use crate::dataset::{load_embeddings, load_expert_scores, load_manifest, Dataset, Scenario};
use crate::error::{Error, Result};
use crate::gateway::{
    execute, read_results, resolve_images, sha256_hex, write_results, BackendConfig, ExecuteStats,
};
use crate::metrics::{grouped_metrics, MetricOptions, MetricReport};
use crate::planner::{plan, read_plans, write_plans, PlannerConfig, TrialPlan};
use crate::prompt::PromptSpec;
use crate::sampler::{
    fuse_experts, sample_uniform, select_difficult, DiversityMode, SamplerConfig, Selection,
    SelectionMode,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsSection {
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_scores: Option<PathBuf>,
    /// Directory image uris are relative to; defaults to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
}

/// Sampler overrides; unset fields take the scenario defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub mode: SelectionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_select: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_select: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity_mode: Option<DiversityMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_normalization: Option<bool>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            mode: SelectionMode::Difficult,
            n_select: None,
            k_select: None,
            lambda: None,
            epsilon: None,
            diversity_mode: None,
            variance_normalization: None,
        }
    }
}

impl SamplerSection {
    pub fn resolve(&self, scenario: Scenario, seed: u64) -> SamplerConfig {
        let base = SamplerConfig::for_scenario(scenario);
        SamplerConfig {
            n_select: self.n_select.unwrap_or(base.n_select),
            k_select: self.k_select.unwrap_or(base.k_select),
            lambda: self.lambda.unwrap_or(base.lambda),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            diversity_mode: self.diversity_mode.unwrap_or(base.diversity_mode),
            variance_normalization: self
                .variance_normalization
                .unwrap_or(base.variance_normalization),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    /// `{single,double,multiple}-{standard,cot,incontext}`.
    pub system: String,
    pub list_size: usize,
    pub pairs_per_image: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        PlannerSection {
            system: "double-standard".into(),
            list_size: 4,
            pairs_per_image: PlannerConfig::default().pairs_per_image,
        }
    }
}

impl PlannerSection {
    pub fn spec(&self, scenario: Scenario) -> Result<PromptSpec> {
        let mut spec = PromptSpec::from_system(&self.system, scenario)?;
        spec.list_size = self.list_size;
        spec.validate()?;
        Ok(spec)
    }

    pub fn config(&self, seed: u64) -> PlannerConfig {
        PlannerConfig {
            seed,
            pairs_per_image: self.pairs_per_image,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Response cache; defaults to `<out_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub inputs: InputsSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub aggregation: AggregateOptions,
    #[serde(default)]
    pub metrics: MetricOptions,
}

impl PipelineConfig {
    /// Parses TOML (`.toml`) or JSON; relative paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.out_dir);
        join(&mut self.inputs.manifest);
        self.cache_dir.iter_mut().for_each(join);
        self.inputs.embeddings.iter_mut().for_each(join);
        self.inputs.expert_scores.iter_mut().for_each(join);
        self.inputs.image_root.iter_mut().for_each(join);
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn image_root(&self) -> PathBuf {
        self.inputs.image_root.clone().unwrap_or_else(|| {
            self.inputs
                .manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default()
        })
    }
}

/// Selection by the configured mode; difficult mode needs embeddings and expert scores.
pub fn select_stage(
    dataset: &Dataset,
    mode: SelectionMode,
    config: &SamplerConfig,
    embeddings: Option<&Path>,
    expert_scores: Option<&Path>,
) -> Result<Selection> {
    match mode {
        SelectionMode::Uniform => sample_uniform(dataset, config),
        SelectionMode::Difficult => {
            let embeddings = embeddings.ok_or_else(|| {
                Error::Config(
                    "difficult selection needs input `embeddings`, which is not configured".into(),
                )
            })?;
            let expert_scores = expert_scores.ok_or_else(|| {
                Error::Config(
                    "difficult selection needs input `expert_scores`, which is not configured"
                        .into(),
                )
            })?;
            let table = load_embeddings(embeddings)?;
            let fusion = fuse_experts(&load_expert_scores(expert_scores)?, dataset)?;
            select_difficult(dataset, &table, &fusion.table, config)
        }
    }
}

pub fn plan_stage(
    dataset: &Dataset,
    selection: &Selection,
    spec: &PromptSpec,
    config: &PlannerConfig,
) -> Result<Vec<TrialPlan>> {
    if selection.scenario != spec.scenario {
        return Err(Error::Config(format!(
            "selection is {} but the prompt system is {}",
            selection.scenario, spec.scenario
        )));
    }
    let pool = if spec.strategy == crate::prompt::NlpStrategy::InContext {
        selection.exemplar_pool(dataset)?
    } else {
        Vec::new()
    };
    plan(&selection.plan_groups(), spec, config, &pool, dataset)
}

pub fn report_stage(
    predictions: &Predictions,
    dataset: &Dataset,
    options: &MetricOptions,
) -> Result<MetricReport> {
    grouped_metrics(predictions, dataset, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    /// Digest over the stage's input files and config section.
    pub input_digest: String,
    /// Output file name → digest.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub stats: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: Value,
    /// Input file → digest.
    pub inputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const STAGES: [&str; 5] = ["select", "plan", "run", "aggregate", "report"];

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn digest_of(parts: &Value) -> String {
    sha256_hex(&serde_json::to_vec(parts).expect("json value serializes"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<String> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    previous: Option<RunManifest>,
    manifest: RunManifest,
}

impl Runner<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    /// A stage is reusable when its inputs digest matches the previous run and
    /// its outputs are still on disk unchanged.
    fn reusable(&self, stage: &str, input_digest: &str) -> Option<StageRecord> {
        let prev = self.previous.as_ref()?.stage(stage)?;
        if prev.status == StageStatus::Failed || prev.input_digest != input_digest {
            return None;
        }
        for (name, digest) in &prev.outputs {
            if file_digest(&self.out(name)).ok()? != *digest {
                return None;
            }
        }
        Some(prev.clone())
    }

    fn stage(
        &mut self,
        name: &str,
        input_digest: String,
        body: impl FnOnce(&Self) -> Result<(BTreeMap<String, String>, Value)>,
    ) -> Result<()> {
        if let Some(mut prev) = self.reusable(name, &input_digest) {
            log::info!("stage {name}: inputs unchanged, reusing outputs");
            self.manifest.notes.push(format!(
                "stage `{name}` skipped: inputs unchanged, previous outputs reused"
            ));
            prev.status = StageStatus::Skipped;
            self.manifest.stages.push(prev);
            return Ok(());
        }
        log::info!("stage {name}: running");
        match body(self) {
            Ok((outputs, stats)) => {
                self.manifest.stages.push(StageRecord {
                    stage: name.into(),
                    status: StageStatus::Completed,
                    input_digest,
                    outputs,
                    error: None,
                    stats,
                });
                Ok(())
            }
            Err(e) => {
                self.manifest.stages.push(StageRecord {
                    stage: name.into(),
                    status: StageStatus::Failed,
                    input_digest,
                    outputs: BTreeMap::new(),
                    error: Some(e.to_string()),
                    stats: Value::Null,
                });
                self.manifest.failed_stage = Some(name.into());
                Err(Error::Stage {
                    stage: name.into(),
                    cause: Box::new(e),
                })
            }
        }
    }

    fn output_digest(&self, stage: &str, file: &str) -> String {
        self.manifest
            .stage(stage)
            .and_then(|s| s.outputs.get(file).cloned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub report: Option<MetricReport>,
}

/// Runs every stage in order, writing artifacts and `run_manifest.json` under `out_dir`.
///
/// On failure the manifest is still written (with `failed_stage` set) and the
/// stage error is returned; artifacts of completed stages are kept.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let previous = fs::read(&manifest_path)
        .ok()
        .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok());
    let mut runner = Runner {
        config,
        previous,
        manifest: RunManifest {
            tool_version: TOOL_VERSION.into(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            started_unix: now_unix(),
            finished_unix: 0,
            stages: Vec::new(),
            failed_stage: None,
            notes: Vec::new(),
        },
    };
    let result = run_stages(&mut runner);
    runner.manifest.finished_unix = now_unix();
    if let Err(e) = &result {
        if runner.manifest.failed_stage.is_none() {
            runner.manifest.failed_stage = Some("setup".into());
            runner.manifest.notes.push(format!("setup failed: {e}"));
        }
    }
    write(&manifest_path, &to_json(&runner.manifest)?)?;
    let report = result?;
    Ok(PipelineOutcome {
        manifest: runner.manifest,
        report: Some(report),
    })
}

fn run_stages(runner: &mut Runner<'_>) -> Result<MetricReport> {
    let config = runner.config;
    let manifest_path = &config.inputs.manifest;
    let manifest_digest = file_digest(manifest_path)?;
    runner
        .manifest
        .inputs
        .insert(manifest_path.display().to_string(), manifest_digest.clone());
    let dataset = load_manifest(manifest_path)?;
    let scenario = dataset.scenario();
    let seed = config.seed;

    // select
    let sampler = config.sampler.resolve(scenario, seed);
    let difficult = config.sampler.mode == SelectionMode::Difficult;
    let mut select_inputs =
        json!({"manifest": manifest_digest, "mode": config.sampler.mode, "sampler": sampler});
    if difficult {
        for (key, path) in [
            ("embeddings", &config.inputs.embeddings),
            ("expert_scores", &config.inputs.expert_scores),
        ] {
            if let Some(path) = path {
                // a missing file is reported by the stage itself
                if let Ok(d) = file_digest(path) {
                    runner
                        .manifest
                        .inputs
                        .insert(path.display().to_string(), d.clone());
                    select_inputs[key] = json!(d);
                }
            }
        }
    }
    runner.stage("select", digest_of(&select_inputs), |r| {
        let selection = select_stage(
            &dataset,
            config.sampler.mode,
            &sampler,
            config.inputs.embeddings.as_deref(),
            config.inputs.expert_scores.as_deref(),
        )?;
        let digest = write(&r.out("selection.json"), &to_json(&selection)?)?;
        let stats = json!({"groups": selection.groups.len(), "images": selection.groups.iter().map(|g| g.result.items.len()).sum::<usize>()});
        Ok((BTreeMap::from([("selection.json".into(), digest)]), stats))
    })?;

    // plan
    let spec = config.planner.spec(scenario)?;
    let planner = config.planner.config(seed);
    let plan_inputs = json!({
        "manifest": manifest_digest,
        "selection": runner.output_digest("select", "selection.json"),
        "spec": spec,
        "planner": planner,
    });
    runner.stage("plan", digest_of(&plan_inputs), |r| {
        let selection: Selection = serde_json::from_slice(
            &fs::read(r.out("selection.json"))
                .map_err(|e| Error::io(r.out("selection.json"), e))?,
        )?;
        let plans = plan_stage(&dataset, &selection, &spec, &planner)?;
        let digest = write(&r.out("plans.jsonl"), write_plans(&plans)?.as_bytes())?;
        Ok((
            BTreeMap::from([("plans.jsonl".into(), digest)]),
            json!({"trials": plans.len()}),
        ))
    })?;
    let plans_path = runner.out("plans.jsonl");
    let plans =
        read_plans(&fs::read_to_string(&plans_path).map_err(|e| Error::io(&plans_path, e))?)?;

    // run
    let image_root = config.image_root();
    let ids: Vec<&str> = plans
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
    let run_inputs = match resolve_images(&ids, &dataset, &image_root) {
        Ok(resolved) => {
            let images: BTreeMap<&String, &String> =
                resolved.iter().map(|(k, v)| (k, &v.content_hash)).collect();
            json!({"plans": runner.output_digest("plan", "plans.jsonl"), "backend": config.backend, "images": images})
        }
        // unresolvable images surface as the run stage's error
        Err(_) => json!({"plans": runner.output_digest("plan", "plans.jsonl"), "unresolved": true}),
    };
    runner.stage("run", digest_of(&run_inputs), |r| {
        let backend = config.backend.build(&dataset)?;
        let options = config.backend.execute_options(Some(config.cache_dir()));
        let output = execute(&plans, backend.as_ref(), &dataset, &image_root, &options)?;
        let digest = write(
            &r.out("trials.jsonl"),
            write_results(&output.results)?.as_bytes(),
        )?;
        Ok((
            BTreeMap::from([("trials.jsonl".into(), digest)]),
            serde_json::to_value::<&ExecuteStats>(&output.stats)?,
        ))
    })?;
    if let Some(StageRecord {
        stats,
        status: StageStatus::Completed,
        ..
    }) = runner.manifest.stage("run")
    {
        let hits = stats["cache_hits"].as_u64().unwrap_or(0);
        if hits > 0 {
            let note = format!(
                "run: {hits} of {} trials answered from the response cache",
                stats["trials"]
            );
            runner.manifest.notes.push(note);
        }
    }

    // aggregate
    let aggregate_inputs = json!({
        "plans": runner.output_digest("plan", "plans.jsonl"),
        "trials": runner.output_digest("run", "trials.jsonl"),
        "aggregation": config.aggregation,
    });
    runner.stage("aggregate", digest_of(&aggregate_inputs), |r| {
        let path = r.out("trials.jsonl");
        let results = read_results(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
        let predictions = aggregate(&plans, &results, &config.aggregation)?;
        let digest = write(&r.out("scales.json"), &to_json(&predictions)?)?;
        let stats =
            json!({"trials": predictions.total_trials, "invalid": predictions.invalid_trials});
        Ok((BTreeMap::from([("scales.json".into(), digest)]), stats))
    })?;

    // report
    let report_inputs = json!({
        "manifest": manifest_digest,
        "scales": runner.output_digest("aggregate", "scales.json"),
        "metrics": config.metrics,
    });
    runner.stage("report", digest_of(&report_inputs), |r| {
        let path = r.out("scales.json");
        let predictions: Predictions =
            serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        let report = report_stage(&predictions, &dataset, &config.metrics)?;
        let json_digest = write(&r.out("report.json"), &to_json(&report)?)?;
        let csv_digest = write(&r.out("report.csv"), report.to_csv().as_bytes())?;
        Ok((
            BTreeMap::from([
                ("report.json".into(), json_digest),
                ("report.csv".into(), csv_digest),
            ]),
            json!({"mean_srcc": report.mean_srcc, "mean_plcc": report.mean_plcc}),
        ))
    })?;
    let path = runner.out("report.json");
    Ok(serde_json::from_slice(
        &fs::read(&path).map_err(|e| Error::io(&path, e))?,
    )?)
}
