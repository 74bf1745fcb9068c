use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mllm_iqa::aggregate::{aggregate, Predictions};
use mllm_iqa::dataset::{load_manifest, Dataset, Scenario};
use mllm_iqa::gateway::{execute, read_results, write_results, BackendKind};
use mllm_iqa::pipeline::{
    plan_stage, report_stage, run_pipeline, select_stage, PipelineConfig, MANIFEST_FILE,
};
use mllm_iqa::planner::{read_plans, write_plans};
use mllm_iqa::sampler::{Selection, SelectionMode};

#[derive(Parser)]
#[command(
    name = "mllm-iqa",
    version,
    about = "Evaluate multimodal models on image quality assessment"
)]
struct Cli {
    /// Run configuration (TOML or JSON); its sections supply defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured backend kind.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    ChatHttp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Difficult,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Fr,
    Nr,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Fr => Scenario::FullReference,
            ScenarioArg::Nr => Scenario::NoReference,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Choose the images to test.
    Select {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Expert score CSV (`image_id,expert_name,raw_score`).
        #[arg(long)]
        experts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build trial plans for one prompting system.
    Plan {
        /// `{single,double,multiple}-{standard,cot,incontext}`
        #[arg(long)]
        system: Option<String>,
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        list_size: Option<usize>,
        #[arg(long)]
        pairs_per_image: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send planned trials to the backend.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory image uris are relative to; defaults to the manifest's directory.
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn trial results into per-image quality scales.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate scales with human scores.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-group rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run every stage from the configuration file.
    Pipeline,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

struct Ctx {
    config: PipelineConfig,
    has_config: bool,
}

impl Ctx {
    fn manifest(&self, flag: Option<PathBuf>) -> Result<(PathBuf, Dataset)> {
        let path = match flag {
            Some(p) => p,
            None if self.has_config => self.config.inputs.manifest.clone(),
            None => bail!("--manifest is required without --config"),
        };
        let dataset = load_manifest(&path)?;
        Ok((path, dataset))
    }
}

fn check_scenario(dataset: &Dataset, scenario: Scenario) -> Result<()> {
    if dataset.scenario() != scenario {
        bail!(
            "manifest is {} but --scenario is {}",
            dataset.scenario(),
            scenario
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let has_config = cli.config.is_some();
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(backend) = cli.backend {
        config.backend.kind = match backend {
            BackendArg::Oracle => BackendKind::SimulatedOracle,
            BackendArg::ChatHttp => BackendKind::ChatHttp,
        };
    }
    let ctx = Ctx { config, has_config };
    let config = &ctx.config;

    match cli.command {
        Command::Select {
            mode,
            scenario,
            manifest,
            embeddings,
            experts,
            out,
        } => {
            let (_, dataset) = ctx.manifest(manifest)?;
            check_scenario(&dataset, scenario.into())?;
            let mode = match mode {
                Some(ModeArg::Difficult) => SelectionMode::Difficult,
                Some(ModeArg::Uniform) => SelectionMode::Uniform,
                None => config.sampler.mode,
            };
            let sampler = config.sampler.resolve(dataset.scenario(), config.seed);
            let selection = select_stage(
                &dataset,
                mode,
                &sampler,
                embeddings
                    .or_else(|| config.inputs.embeddings.clone())
                    .as_deref(),
                experts
                    .or_else(|| config.inputs.expert_scores.clone())
                    .as_deref(),
            )?;
            emit(out.as_deref(), &pretty(&selection)?)
        }
        Command::Plan {
            system,
            scenario,
            selection,
            manifest,
            list_size,
            pairs_per_image,
            out,
        } => {
            let (_, dataset) = ctx.manifest(manifest)?;
            check_scenario(&dataset, scenario.into())?;
            let mut section = config.planner.clone();
            if let Some(system) = system {
                section.system = system;
            }
            if let Some(l) = list_size {
                section.list_size = l;
            }
            if let Some(b) = pairs_per_image {
                section.pairs_per_image = b;
            }
            let spec = section.spec(scenario.into())?;
            let selection: Selection = serde_json::from_str(&read(&selection)?)?;
            let plans = plan_stage(&dataset, &selection, &spec, &section.config(config.seed))?;
            emit(out.as_deref(), &write_plans(&plans)?)
        }
        Command::Run {
            plan,
            manifest,
            image_root,
            cache,
            out,
        } => {
            let (manifest_path, dataset) = ctx.manifest(manifest)?;
            let plans = read_plans(&read(&plan)?)?;
            let root = image_root
                .or_else(|| config.inputs.image_root.clone())
                .unwrap_or_else(|| {
                    manifest_path
                        .parent()
                        .map(Path::to_path_buf)
                        .unwrap_or_default()
                });
            let cache = cache.or_else(|| ctx.has_config.then(|| config.cache_dir()));
            let backend = config.backend.build(&dataset)?;
            let output = execute(
                &plans,
                backend.as_ref(),
                &dataset,
                &root,
                &config.backend.execute_options(cache),
            )?;
            eprintln!(
                "{} trials, {} backend calls, {} cache hits, {} invalid",
                output.stats.trials,
                output.stats.backend_calls,
                output.stats.cache_hits,
                output.stats.invalid
            );
            emit(out.as_deref(), &write_results(&output.results)?)
        }
        Command::Aggregate { input, plan, out } => {
            let plans = read_plans(&read(&plan)?)?;
            let results = read_results(&read(&input)?)?;
            let predictions = aggregate(&plans, &results, &config.aggregation)?;
            emit(out.as_deref(), &pretty(&predictions)?)
        }
        Command::Report {
            input,
            manifest,
            out,
            csv,
        } => {
            let (_, dataset) = ctx.manifest(manifest)?;
            let predictions: Predictions = serde_json::from_str(&read(&input)?)?;
            let report = report_stage(&predictions, &dataset, &config.metrics)?;
            if let Some(csv) = csv {
                fs::write(&csv, report.to_csv())
                    .with_context(|| format!("writing {}", csv.display()))?;
            }
            emit(out.as_deref(), &pretty(&report)?)
        }
        Command::Pipeline => {
            if !ctx.has_config {
                bail!("pipeline needs --config");
            }
            let outcome = run_pipeline(config).with_context(|| {
                format!(
                    "see {} for the failure point",
                    config.out_dir.join(MANIFEST_FILE).display()
                )
            })?;
            for stage in &outcome.manifest.stages {
                eprintln!("{:<10} {:?}", stage.stage, stage.status);
            }
            if let Some(report) = outcome.report {
                let fmt = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.4}"));
                println!(
                    "SRCC {}  PLCC {}",
                    fmt(report.mean_srcc),
                    fmt(report.mean_plcc)
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
