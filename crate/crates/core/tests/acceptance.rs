//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

mod common;

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use mllm_iqa::aggregate::{
    aggregate, gradient, thurstone_map, thurstone_map_from, AggregateOptions, PreferenceMatrix,
    ThurstoneOptions,
};
use mllm_iqa::dataset::{
    Dataset, EmbeddingTable, ExpertScoreTable, ManifestHeader, Role, Scenario,
};
use mllm_iqa::gateway::{
    execute, Backend, BackendError, BackendKind, BackendRequest, ChatHttpBackend, ExecuteOptions,
    OracleBackend, OracleConfig,
};
use mllm_iqa::metrics::{fit_logistic, grouped_metrics, plcc, srcc, MetricOptions};
use mllm_iqa::pipeline::{
    run_pipeline, PipelineConfig, PlannerSection, SamplerSection, StageStatus,
};
use mllm_iqa::planner::{plan_double, plan_multiple, plan_single, PlanGroup, PlannerConfig};
use mllm_iqa::prompt::{
    all_specs, build_prompt, format_outcome, parse_response, Comparison, Exemplar, ExemplarValue,
    NlpStrategy, ParsedOutcome, PromptSpec, Stimuli, StimulusMethod,
};
use mllm_iqa::sampler::{
    select_distorted_fr, select_images_nr, select_references_fr, SamplerConfig, SelectionMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // written negated so NaN fails the check
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

// ---------------------------------------------------------------- criterion 1

fn simulate_case_v(mu: &[f64], per_pair: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let phi = std_normal();
    let m = mu.len();
    let mut counts = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let p = phi.cdf((mu[i] - mu[j]) / 2f64.sqrt());
            for _ in 0..per_pair {
                if rng.gen::<f64>() < p {
                    counts[i][j] += 1.0;
                } else {
                    counts[j][i] += 1.0;
                }
            }
        }
    }
    counts
}

fn ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("i{i:02}")).collect()
}

fn thurstone_recovery() -> Outcome {
    let mut worst_srcc = f64::INFINITY;
    let mut slowest = Duration::ZERO;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let counts = simulate_case_v(&truth, 30, &mut rng);
        let matrix = PreferenceMatrix::from_counts(ids(16), counts).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let scale =
            thurstone_map(&matrix, &ThurstoneOptions::default()).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        ensure!(scale.converged, "seed {seed}: solver did not converge");
        worst_srcc = worst_srcc.min(common::spearman_oracle(&scale.mu, &truth));
    }
    ensure!(worst_srcc >= 0.95, "worst SRCC {worst_srcc:.4} < 0.95");
    ensure!(
        slowest < Duration::from_secs(5),
        "slowest solve {slowest:?} ≥ 5 s"
    );
    Ok(format!(
        "min SRCC over 20 seeds {worst_srcc:.4} (≥ 0.95), slowest solve {slowest:.2?} (< 5 s)"
    ))
}

// ---------------------------------------------------------------- criterion 2

/// Independent Case V log posterior.
fn posterior_oracle(counts: &[Vec<f64>], mu: &[f64], prior_std: f64) -> f64 {
    let phi = std_normal();
    let mut value = 0.0;
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                value += c * phi.cdf((mu[i] - mu[j]) / 2f64.sqrt()).ln();
            }
        }
    }
    value - mu.iter().map(|m| m * m).sum::<f64>() / (2.0 * prior_std * prior_std)
}

/// Coarse-to-fine grid search over [−5, 5]³ finishing at step 1e-3.
fn grid_search_3(counts: &[Vec<f64>], prior_std: f64) -> [f64; 3] {
    let mut center = [0.0; 3];
    let mut half: f64 = 5.0;
    for step in [0.1, 0.01, 0.001] {
        let n = (half / step).round() as i64;
        let mut best = (f64::NEG_INFINITY, center);
        for a in -n..=n {
            for b in -n..=n {
                for c in -n..=n {
                    let mu = [
                        center[0] + a as f64 * step,
                        center[1] + b as f64 * step,
                        center[2] + c as f64 * step,
                    ];
                    let v = posterior_oracle(counts, &mu, prior_std);
                    if v > best.0 {
                        best = (v, mu);
                    }
                }
            }
        }
        center = best.1;
        half = step * 20.0;
    }
    center
}

fn solver_correctness() -> Outcome {
    let opts = ThurstoneOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rel = 0.0f64;
    let h = 1e-5;
    for _ in 0..100 {
        let m = rng.gen_range(3..=10);
        let counts: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            rng.gen_range(0..6) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let mu: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let matrix =
            PreferenceMatrix::from_counts(ids(m), counts.clone()).map_err(|e| e.to_string())?;
        let analytic = gradient(&matrix, &mu, opts.prior_std);
        for k in 0..m {
            let (mut up, mut down) = (mu.clone(), mu.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (posterior_oracle(&counts, &up, opts.prior_std)
                - posterior_oracle(&counts, &down, opts.prior_std))
                / (2.0 * h);
            let rel = (analytic[k] - fd).abs() / fd.abs().max(1.0);
            worst_rel = worst_rel.max(rel);
        }
    }
    ensure!(
        worst_rel <= 1e-6,
        "gradient relative error {worst_rel:.2e} > 1e-6"
    );

    let mut worst_gap = 0.0f64;
    for _ in 0..20 {
        let m = 8;
        let counts: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            rng.gen_range(0..4) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let matrix = PreferenceMatrix::from_counts(ids(m), counts).map_err(|e| e.to_string())?;
        let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let sa = thurstone_map_from(&matrix, &opts, Some(&a)).map_err(|e| e.to_string())?;
        let sb = thurstone_map_from(&matrix, &opts, Some(&b)).map_err(|e| e.to_string())?;
        let gap = sa
            .mu
            .iter()
            .zip(&sb.mu)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst_gap = worst_gap.max(gap);
    }
    ensure!(
        worst_gap <= 1e-6,
        "two starts differ by {worst_gap:.2e} > 1e-6"
    );

    let mut counts = vec![vec![0.0; 3]; 3];
    counts[0][1] = 5.0;
    counts[0][2] = 5.0;
    counts[1][2] = 5.0;
    let matrix =
        PreferenceMatrix::from_counts(ids(3), counts.clone()).map_err(|e| e.to_string())?;
    let scale = thurstone_map(&matrix, &opts).map_err(|e| e.to_string())?;
    let grid = grid_search_3(&counts, opts.prior_std);
    let grid_gap = scale
        .mu
        .iter()
        .zip(&grid)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    ensure!(
        scale.mu[0] > scale.mu[1] && scale.mu[1] > scale.mu[2],
        "M=3 order wrong: {:?}",
        scale.mu
    );
    ensure!(
        grid_gap <= 5e-3,
        "M=3 differs from grid search by {grid_gap:.2e} > 5e-3"
    );
    Ok(format!(
        "grad rel err {worst_rel:.1e} (≤ 1e-6), start gap {worst_gap:.1e} (≤ 1e-6), M=3 grid gap {grid_gap:.1e} (≤ 5e-3)"
    ))
}

// ---------------------------------------------------------------- criterion 3

fn four_pl(eta: [f64; 4], q: f64) -> f64 {
    (eta[0] - eta[1]) / (1.0 + (-(q - eta[2]) / eta[3].abs()).exp()) + eta[1]
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.gen_range(3..=500);
        let ties = cases % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if ties {
                rng.gen_range(0..6) as f64
            } else {
                rng.gen_range(-100.0..100.0)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        if x.windows(2).all(|w| w[0] == w[1]) || y.windows(2).all(|w| w[0] == w[1]) {
            continue;
        }
        let got = srcc(&x, &y).map_err(|e| e.to_string())?;
        worst = worst.max((got - common::spearman_oracle(&x, &y)).abs());
        cases += 1;
    }
    ensure!(
        worst <= 1e-12,
        "SRCC differs from the oracle by {worst:.2e} > 1e-12"
    );

    let eta = [100.0, 0.0, 50.0, 10.0];
    let pred: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..100.0)).collect();
    let target: Vec<f64> = pred.iter().map(|&q| four_pl(eta, q)).collect();
    let fit = fit_logistic(&pred, &target).map_err(|e| e.to_string())?;
    let p = plcc(&pred, &target).map_err(|e| e.to_string())?;
    ensure!(
        fit.residual_rms <= 1e-6,
        "logistic residual RMS {:.2e} > 1e-6",
        fit.residual_rms
    );
    ensure!(p >= 0.999999, "PLCC {p} < 0.999999");
    Ok(format!(
        "SRCC max deviation {worst:.1e} over 1000 pairs (≤ 1e-12), logistic RMS {:.1e} (≤ 1e-6), PLCC {p:.8} (≥ 0.999999)",
        fit.residual_rms
    ))
}

// ---------------------------------------------------------------- criterion 4

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Greedy recursion evaluated from scratch at every step.
fn brute_greedy(
    errors: &[(String, f64)],
    vectors: &HashMap<String, Vec<f64>>,
    n: usize,
    lambda: f64,
) -> Vec<String> {
    let mut chosen: Vec<String> = Vec::new();
    for _ in 0..n {
        let mut best: Option<(f64, &String)> = None;
        for (id, err) in errors {
            if chosen.contains(id) {
                continue;
            }
            let div = chosen
                .iter()
                .map(|c| mse(&vectors[id], &vectors[c]))
                .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))))
                .unwrap_or(0.0);
            let obj = err + lambda * div;
            let better = match best {
                None => true,
                Some((b, bid)) => obj > b || (obj == b && id < bid),
            };
            if better {
                best = Some((obj, id));
            }
        }
        chosen.push(best.unwrap().1.clone());
    }
    chosen
}

fn normalized(pred: f64, mos: f64, std: f64) -> f64 {
    (pred - mos).powi(2) / (std * std + 1.0)
}

fn fr_toy(seed: u64) -> (Dataset, EmbeddingTable, ExpertScoreTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut fused = ExpertScoreTable::default();
    let mut rows = Vec::new();
    for g in 0..6 {
        let group = format!("c{g}");
        let rid = format!("{group}_ref");
        records.push(common::record(&rid, Role::Reference, &group, 100.0, 0.0));
        rows.push((
            rid,
            vec![rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0)],
        ));
        for d in 0..3 {
            let id = format!("{group}_d{d}");
            let mos = rng.gen_range(10.0..90.0);
            let std = rng.gen_range(0.0..6.0);
            records.push(common::record(&id, Role::Distorted, &group, mos, std));
            fused.fused.insert(id, mos + rng.gen_range(-15.0..15.0));
        }
    }
    let header = ManifestHeader {
        scenario: Scenario::FullReference,
        ..ManifestHeader::default()
    };
    (
        Dataset::new(header, records).unwrap(),
        EmbeddingTable::from_rows("toy", rows).unwrap(),
        fused,
    )
}

fn nr_toy(seed: u64, n: usize) -> (Dataset, EmbeddingTable, ExpertScoreTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut fused = ExpertScoreTable::default();
    let mut rows = Vec::new();
    for i in 0..n {
        let id = format!("x{i}");
        let mos = rng.gen_range(10.0..90.0);
        records.push(common::record(
            &id,
            Role::Standalone,
            "",
            mos,
            rng.gen_range(0.0..6.0),
        ));
        fused
            .fused
            .insert(id.clone(), mos + rng.gen_range(-15.0..15.0));
        rows.push((id, vec![rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0)]));
    }
    (
        Dataset::new(ManifestHeader::default(), records).unwrap(),
        EmbeddingTable::from_rows("toy", rows).unwrap(),
        fused,
    )
}

fn vectors_of(
    dataset: &Dataset,
    table: &EmbeddingTable,
    ids: impl Iterator<Item = String>,
) -> HashMap<String, Vec<f64>> {
    let _ = dataset;
    ids.map(|id| {
        let v = table.get(&id).unwrap().to_vec();
        (id, v)
    })
    .collect()
}

fn sampler_correctness() -> Outcome {
    let lambda = 0.01;
    for seed in 0..50 {
        let (ds, emb, fused) = fr_toy(seed);
        let config = SamplerConfig {
            n_select: 3,
            lambda,
            ..SamplerConfig::full_reference()
        };
        let got = select_references_fr(&ds, &emb, &fused, &config)
            .map_err(|e| e.to_string())?
            .ids();
        let errors: Vec<(String, f64)> = ds
            .references()
            .map(|r| {
                let group = ds.group_of(&r.image_id).unwrap();
                let mean = group
                    .distorted
                    .iter()
                    .map(|x| normalized(fused.fused[&x.image_id], x.mos, x.std))
                    .sum::<f64>()
                    / group.distorted.len() as f64;
                (r.image_id.clone(), mean)
            })
            .collect();
        let vectors = vectors_of(&ds, &emb, errors.iter().map(|e| e.0.clone()));
        let want = brute_greedy(&errors, &vectors, 3, lambda);
        ensure!(got == want, "FR seed {seed}: {got:?} != oracle {want:?}");

        let (ds, emb, fused) = nr_toy(seed, 8);
        let config = SamplerConfig {
            n_select: 4,
            lambda,
            ..SamplerConfig::no_reference()
        };
        let got = select_images_nr(&ds, &emb, &fused, &config)
            .map_err(|e| e.to_string())?
            .ids();
        let errors: Vec<(String, f64)> = ds
            .records()
            .iter()
            .map(|r| {
                (
                    r.image_id.clone(),
                    normalized(fused.fused[&r.image_id], r.mos, r.std),
                )
            })
            .collect();
        let vectors = vectors_of(&ds, &emb, errors.iter().map(|e| e.0.clone()));
        let want = brute_greedy(&errors, &vectors, 4, lambda);
        ensure!(got == want, "NR seed {seed}: {got:?} != oracle {want:?}");

        // λ = 0: descending normalized error
        let zero = SamplerConfig {
            n_select: 8,
            lambda: 0.0,
            ..SamplerConfig::no_reference()
        };
        let got = select_images_nr(&ds, &emb, &fused, &zero)
            .map_err(|e| e.to_string())?
            .ids();
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let want: Vec<String> = sorted.into_iter().map(|e| e.0).collect();
        ensure!(
            got == want,
            "NR seed {seed}, λ=0: {got:?} != descending error {want:?}"
        );

        let (ds, _, fused) = fr_toy(seed);
        let group = ds.group("c0").unwrap();
        let k = SamplerConfig {
            k_select: 3,
            lambda: 0.0,
            ..SamplerConfig::full_reference()
        };
        let got = select_distorted_fr(&group, &fused, &k).map_err(|e| e.to_string())?;
        let errs: Vec<f64> = got.items.iter().map(|i| i.error_term).collect();
        ensure!(
            errs.windows(2).all(|w| w[0] >= w[1]),
            "FR top-K not descending: {errs:?}"
        );
    }

    // variance normalization shifts the selection towards low σ
    let mut wins = 0;
    let mut min_corr = f64::INFINITY;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = NormalDist::new(0.0, 1.0).unwrap();
        let n = 200;
        let mut records = Vec::new();
        let mut fused = ExpertScoreTable::default();
        let mut rows = Vec::new();
        let mut sigmas = Vec::new();
        let mut abs_err = Vec::new();
        for i in 0..n {
            let id = format!("s{i:03}");
            let sigma = rng.gen_range(0.5..12.0);
            let mos = rng.gen_range(0.0..100.0);
            let z: f64 = noise.sample(&mut rng);
            let err = sigma * (0.5 + z.abs()) * z.signum();
            records.push(common::record(&id, Role::Standalone, "", mos, sigma));
            fused.fused.insert(id.clone(), mos + err);
            rows.push((id, (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()));
            sigmas.push(sigma);
            abs_err.push(err.abs());
        }
        min_corr = min_corr.min(common::pearson_two_pass(&sigmas, &abs_err));
        let ds = Dataset::new(ManifestHeader::default(), records).unwrap();
        let emb = EmbeddingTable::from_rows("s", rows).unwrap();
        let mean_sigma = |normalize: bool| -> f64 {
            let config = SamplerConfig {
                n_select: 20,
                variance_normalization: normalize,
                ..SamplerConfig::no_reference()
            };
            let ids = select_images_nr(&ds, &emb, &fused, &config).unwrap().ids();
            ids.iter().map(|id| ds.get(id).unwrap().std).sum::<f64>() / ids.len() as f64
        };
        if mean_sigma(true) < mean_sigma(false) {
            wins += 1;
        }
    }
    ensure!(
        min_corr >= 0.5,
        "synthetic corr(σ, |error|) only {min_corr:.3}"
    );
    ensure!(
        wins >= 95,
        "normalized selection had lower mean σ in only {wins}/100 seeds"
    );
    Ok(format!(
        "brute-force greedy match on 50 FR (6 refs) and 50 NR (8 images) instances, λ=0 order checks, \
         σ-shift in {wins}/100 seeds (≥ 95, min corr {min_corr:.2})"
    ))
}

// ---------------------------------------------------------------- criterion 5

fn canonical_prompt(spec: &PromptSpec) -> mllm_iqa::Result<String> {
    let n = spec.stimuli_per_trial();
    let fr = spec.scenario == Scenario::FullReference;
    let images: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let exemplar = (spec.strategy == NlpStrategy::InContext).then(|| Exemplar {
        reference: fr.then(|| "eref".to_owned()),
        images: (0..n).map(|i| format!("e{i}")).collect(),
        value: match spec.method {
            StimulusMethod::Single => ExemplarValue::Score(50.0),
            StimulusMethod::Double => ExemplarValue::Comparison(Comparison::FirstBetter),
            StimulusMethod::Multiple => {
                ExemplarValue::Ranking((0..spec.list_size as u32).collect())
            }
        },
    });
    let stimuli = Stimuli {
        reference: fr.then_some("tref"),
        images: &images,
    };
    Ok(build_prompt(spec, stimuli, exemplar.as_ref())?.text)
}

fn random_description(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 8] = [
        "sharp",
        "blurry",
        "noisy",
        "clean",
        "edges",
        "colour",
        "low contrast",
        "blocky",
    ];
    let n = rng.gen_range(1..6);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn prompt_fidelity() -> Outcome {
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/v1");
    let specs = all_specs();
    ensure!(
        specs.len() == 18,
        "expected 18 prompt systems, found {}",
        specs.len()
    );
    for spec in &specs {
        let path = golden_dir.join(format!("{}.txt", spec.template_id()));
        let golden = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let built = canonical_prompt(spec).map_err(|e| e.to_string())?;
        ensure!(
            built.as_bytes() == golden.as_slice(),
            "{} differs from its golden file",
            spec.template_id()
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let spec = specs[case % specs.len()];
        let description = (spec.strategy == NlpStrategy::Cot && rng.gen_bool(0.8))
            .then(|| random_description(&mut rng));
        let outcome = match spec.method {
            StimulusMethod::Single => ParsedOutcome::Score {
                score: rng.gen_range(0..=10_000) as f64 / 100.0,
                clamped: false,
                description,
            },
            StimulusMethod::Double => ParsedOutcome::Comparison {
                comparison: Comparison::from_code(rng.gen_range(0..3)).unwrap(),
                description,
            },
            StimulusMethod::Multiple => ParsedOutcome::Ranking {
                ranking: (0..spec.list_size)
                    .map(|_| rng.gen_range(0..spec.list_size as u32))
                    .collect(),
                description,
            },
        };
        let text = format_outcome(&outcome, &spec);
        let back = parse_response(&text, &spec);
        ensure!(
            back == outcome,
            "round trip of {outcome:?} via {text:?} gave {back:?}"
        );
    }
    Ok(
        "18/18 prompts byte-identical to golden files; 1000/1000 parse∘format round trips exact"
            .into(),
    )
}

// ---------------------------------------------------------------- criteria 6 & 7

fn nr_config(dir: &Path, n: usize, noise_std: f64, seed: u64) -> PipelineConfig {
    let mut config = PipelineConfig {
        seed,
        out_dir: dir.join("out"),
        cache_dir: Some(dir.join("cache")),
        ..PipelineConfig::default()
    };
    config.inputs.manifest = dir.join("data.jsonl");
    config.sampler = SamplerSection {
        mode: SelectionMode::Uniform,
        n_select: Some(n),
        ..SamplerSection::default()
    };
    config.planner = PlannerSection {
        system: "double-standard".into(),
        list_size: 4,
        pairs_per_image: n - 1,
    };
    config.backend.kind = BackendKind::SimulatedOracle;
    config.backend.oracle = OracleConfig {
        noise_std,
        seed,
        tie_margin: 1.0,
    };
    config
}

fn distinct_mos(n: usize) -> Vec<f64> {
    (0..n).map(|i| 5.0 + 3.0 * ((i * 7) % n) as f64).collect()
}

fn end_to_end_oracle() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = common::nr_dataset(&distinct_mos(30));
    common::materialize(tmp.path(), &dataset);

    let outcome = run_pipeline(&nr_config(tmp.path(), 30, 0.0, 0)).map_err(|e| e.to_string())?;
    let report = outcome.report.ok_or("no report")?;
    let trials = report.total_trials;
    ensure!(
        trials == 435,
        "full round robin over 30 images should be 435 trials, got {trials}"
    );
    let noiseless = report.mean_srcc.ok_or("no SRCC")?;
    ensure!(noiseless == 1.0, "noiseless SRCC {noiseless} != 1.0");

    let mut worst = f64::INFINITY;
    for seed in 1..=10 {
        let dir = tmp.path().join(format!("noisy{seed}"));
        common::materialize(&dir, &dataset);
        let outcome = run_pipeline(&nr_config(&dir, 30, 5.0, seed)).map_err(|e| e.to_string())?;
        worst = worst.min(outcome.report.and_then(|r| r.mean_srcc).ok_or("no SRCC")?);
    }
    let elapsed = start.elapsed();
    ensure!(worst >= 0.9, "noisy SRCC {worst:.4} < 0.9");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?} ≥ 60 s");
    Ok(format!(
        "noiseless SRCC {noiseless} over {trials} trials; min SRCC at noise 5 over 10 seeds {worst:.4} (≥ 0.9); {elapsed:.2?} (< 60 s)"
    ))
}

struct Malformed;

impl Backend for Malformed {
    fn id(&self) -> String {
        "malformed".into()
    }
    fn model(&self) -> &str {
        "none"
    }
    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        // every third trial never answers in the requested format
        if request.plan.trial_id.is_multiple_of(3) {
            Ok("I think this image looks fine.".into())
        } else {
            let oracle = OracleBackend::new(
                request
                    .plan
                    .stimuli
                    .iter()
                    .map(|id| (id.clone(), id[2..].parse::<f64>().unwrap()))
                    .collect(),
                OracleConfig::default(),
            );
            oracle.complete(request)
        }
    }
}

fn gateway_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = common::nr_dataset(&distinct_mos(20));
    common::materialize(tmp.path(), &dataset);
    let config = nr_config(tmp.path(), 20, 5.0, 7);
    let first = run_pipeline(&config).map_err(|e| e.to_string())?;
    let report_path = config.out_dir.join("report.json");
    let first_report = fs::read(&report_path).map_err(|e| e.to_string())?;

    // same out_dir: every stage is reused
    let again = run_pipeline(&config).map_err(|e| e.to_string())?;
    ensure!(
        again
            .manifest
            .stages
            .iter()
            .all(|s| s.status == StageStatus::Skipped),
        "unchanged rerun did not skip every stage"
    );

    // fresh out_dir, shared cache: the run stage executes but the backend is never called
    let mut fresh = config.clone();
    fresh.out_dir = tmp.path().join("out2");
    let second = run_pipeline(&fresh).map_err(|e| e.to_string())?;
    let run = second.manifest.stage("run").ok_or("no run stage")?;
    ensure!(
        run.status == StageStatus::Completed,
        "run stage was not executed"
    );
    let calls = run.stats["backend_calls"].as_u64().unwrap_or(u64::MAX);
    let hits = run.stats["cache_hits"].as_u64().unwrap_or(0);
    let trials = run.stats["trials"].as_u64().unwrap_or(0);
    ensure!(
        calls == 0 && hits == trials,
        "rerun made {calls} calls, {hits}/{trials} cache hits"
    );
    let second_report = fs::read(fresh.out_dir.join("report.json")).map_err(|e| e.to_string())?;
    ensure!(
        first_report == second_report,
        "report bytes differ between runs"
    );
    let _ = first;

    // malformed responses: R = 3 attempts, then excluded and counted
    let groups = [PlanGroup {
        group: "all".into(),
        reference: None,
        images: dataset
            .records()
            .iter()
            .map(|r| r.image_id.clone())
            .collect(),
    }];
    let spec = PromptSpec::new(
        StimulusMethod::Double,
        NlpStrategy::Standard,
        Scenario::NoReference,
    );
    let plans =
        plan_double(&groups, &spec, &PlannerConfig::default()).map_err(|e| e.to_string())?;
    let options = ExecuteOptions {
        max_attempts: 3,
        backoff_base_ms: 0,
        parallelism: 4,
        cache_dir: None,
    };
    let out =
        execute(&plans, &Malformed, &dataset, tmp.path(), &options).map_err(|e| e.to_string())?;
    let expected_invalid = plans.iter().filter(|p| p.trial_id % 3 == 0).count();
    ensure!(
        out.stats.invalid == expected_invalid,
        "{} invalid, expected {expected_invalid}",
        out.stats.invalid
    );
    ensure!(
        out.results
            .iter()
            .filter(|r| !r.outcome.is_valid())
            .all(|r| r.attempts == 3),
        "invalid trials were not retried 3 times"
    );
    let predictions =
        aggregate(&plans, &out.results, &AggregateOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        predictions.invalid_trials == expected_invalid,
        "aggregation counted {} invalid",
        predictions.invalid_trials
    );
    let report = grouped_metrics(&predictions, &dataset, &MetricOptions::default())
        .map_err(|e| e.to_string())?;
    ensure!(
        report.invalid_trials == expected_invalid,
        "report counted {} invalid",
        report.invalid_trials
    );

    // all malformed: nothing usable, still no crash
    let single = PromptSpec::new(
        StimulusMethod::Single,
        NlpStrategy::Standard,
        Scenario::NoReference,
    );
    let single_plans: Vec<_> = plan_single(&groups, &single)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|p| p.trial_id % 3 == 0)
        .collect();
    let out = execute(&single_plans, &Malformed, &dataset, tmp.path(), &options)
        .map_err(|e| e.to_string())?;
    let predictions = aggregate(&single_plans, &out.results, &AggregateOptions::default())
        .map_err(|e| e.to_string())?;
    let report = grouped_metrics(&predictions, &dataset, &MetricOptions::default())
        .map_err(|e| e.to_string())?;
    ensure!(
        report.usable_groups == 0 && report.invalid_rate == 1.0,
        "all-invalid run not reported as such"
    );

    Ok(format!(
        "rerun: 0 backend calls, {hits}/{trials} cache hits, report byte-identical; \
         injected {expected_invalid} malformed trials excluded and counted (R=3)"
    ))
}

// ---------------------------------------------------------------- criterion 8

fn plan_combinatorics() -> Outcome {
    let group = PlanGroup {
        group: "c00".into(),
        reference: Some("c00_ref".into()),
        images: (0..10).map(|i| format!("c00_d{i:02}")).collect(),
    };
    let groups = [group];
    let double = PromptSpec::new(
        StimulusMethod::Double,
        NlpStrategy::Standard,
        Scenario::FullReference,
    );
    let pairs =
        plan_double(&groups, &double, &PlannerConfig::default()).map_err(|e| e.to_string())?;
    ensure!(
        pairs.len() == 45,
        "{} double-stimulus trials, expected 45",
        pairs.len()
    );
    let multiple = PromptSpec::new(
        StimulusMethod::Multiple,
        NlpStrategy::Standard,
        Scenario::FullReference,
    );
    let lists =
        plan_multiple(&groups, &multiple, &PlannerConfig::default()).map_err(|e| e.to_string())?;
    let padded: usize = lists.iter().map(|p| p.padded.len()).sum();
    ensure!(lists.len() == 3, "{} lists, expected 3", lists.len());
    ensure!(
        lists.iter().all(|p| p.stimuli.len() == 4),
        "a list is not of length 4"
    );
    ensure!(padded == 2, "{padded} padded positions, expected 2");
    Ok("K=10: 45 pairs; L=4: 3 lists with 2 flagged repeats".into())
}

// ---------------------------------------------------------------- criterion 9

/// Needs MLLM_IQA_LIVE_ENDPOINT, MLLM_IQA_LIVE_MODEL, MLLM_IQA_LIVE_MANIFEST (an NR
/// manifest with at least 10 images) and the token in MLLM_IQA_API_KEY.
fn live_smoke() -> Option<Outcome> {
    let endpoint = std::env::var("MLLM_IQA_LIVE_ENDPOINT").ok()?;
    let model = std::env::var("MLLM_IQA_LIVE_MODEL").ok()?;
    let manifest = std::path::PathBuf::from(std::env::var("MLLM_IQA_LIVE_MANIFEST").ok()?);
    Some((|| {
        let dataset = mllm_iqa::dataset::load_manifest(&manifest).map_err(|e| e.to_string())?;
        let images: Vec<String> = dataset
            .test_images()
            .take(10)
            .map(|r| r.image_id.clone())
            .collect();
        ensure!(images.len() == 10, "manifest has fewer than 10 images");
        let spec = PromptSpec::new(
            StimulusMethod::Single,
            NlpStrategy::Standard,
            Scenario::NoReference,
        );
        let groups = [PlanGroup {
            group: "all".into(),
            reference: None,
            images,
        }];
        let plans = plan_single(&groups, &spec).map_err(|e| e.to_string())?;
        let backend = ChatHttpBackend::new(&endpoint, &model, "MLLM_IQA_API_KEY", 0.0, 512)
            .map_err(|e| e.to_string())?;
        let root = manifest.parent().unwrap_or(Path::new("."));
        let out = execute(&plans, &backend, &dataset, root, &ExecuteOptions::default())
            .map_err(|e| e.to_string())?;
        let rate = 1.0 - out.stats.invalid as f64 / out.stats.trials as f64;
        ensure!(rate >= 0.8, "parse rate {rate:.2} < 0.80");
        Ok(format!("parse rate {rate:.2} (≥ 0.80)"))
    })())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 thurstone recovery", thurstone_recovery),
        ("2 solver correctness", solver_correctness),
        ("3 metrics oracle equivalence", metrics_oracle),
        ("4 sampler correctness", sampler_correctness),
        ("5 prompt fidelity", prompt_fidelity),
        ("6 end-to-end oracle run", end_to_end_oracle),
        ("7 gateway determinism", gateway_determinism),
        ("8 plan combinatorics", plan_combinatorics),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name}: {why}");
            }
        }
    }
    match live_smoke() {
        None => println!(
            "SKIP  criterion 9 live smoke test: MLLM_IQA_LIVE_ENDPOINT/MODEL/MANIFEST not set"
        ),
        Some(Ok(detail)) => println!("PASS  criterion 9 live smoke test: {detail}"),
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL  criterion 9 live smoke test: {why}");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
