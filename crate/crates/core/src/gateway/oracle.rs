use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest};
use crate::dataset::Dataset;
use crate::prompt::{
    format_outcome, Comparison, NlpStrategy, ParsedOutcome, PromptSpec, StimulusMethod,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub noise_std: f64,
    pub seed: u64,
    /// Latent differences below this are answered as ties.
    pub tie_margin: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            noise_std: 0.0,
            seed: 0,
            tie_margin: 1.0,
        }
    }
}

/// Response of a simulated observer who sees `mos + N(0, noise_std²)` per stimulus.
///
/// The noise stream is keyed by `(seed, trial_id)`, so a trial's answer does not
/// depend on which other trials ran or in what order.
pub fn oracle_respond(
    spec: &PromptSpec,
    mos: &[f64],
    config: &OracleConfig,
    trial_id: u64,
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial_id);
    let noise = Normal::new(0.0, config.noise_std.max(0.0)).expect("finite noise");
    let latent: Vec<f64> = mos.iter().map(|m| m + noise.sample(&mut rng)).collect();
    let description = (spec.strategy == NlpStrategy::Cot).then(|| "simulated observer".to_owned());
    let outcome = match spec.method {
        StimulusMethod::Single => {
            let z = (latent[0] * 100.0).round() / 100.0;
            ParsedOutcome::Score {
                score: z.clamp(0.0, 100.0) + 0.0,
                clamped: false,
                description,
            }
        }
        StimulusMethod::Double => {
            let delta = latent[0] - latent[1];
            let comparison = if delta.abs() < config.tie_margin {
                Comparison::Tie
            } else if delta > 0.0 {
                Comparison::FirstBetter
            } else {
                Comparison::SecondBetter
            };
            ParsedOutcome::Comparison {
                comparison,
                description,
            }
        }
        StimulusMethod::Multiple => ParsedOutcome::Ranking {
            ranking: latent
                .iter()
                .map(|z| latent.iter().filter(|other| *other < z).count() as u32)
                .collect(),
            description,
        },
    };
    format_outcome(&outcome, spec)
}

/// Offline backend answering from human scores (mapped to 0–100).
#[derive(Debug, Clone)]
pub struct OracleBackend {
    scores: HashMap<String, f64>,
    config: OracleConfig,
}

impl OracleBackend {
    pub fn new(scores: HashMap<String, f64>, config: OracleConfig) -> Self {
        OracleBackend { scores, config }
    }

    pub fn from_dataset(dataset: &Dataset, config: OracleConfig) -> Self {
        let scores = dataset
            .records()
            .iter()
            .map(|r| (r.image_id.clone(), dataset.header.to_percent(r.mos)))
            .collect();
        OracleBackend::new(scores, config)
    }
}

impl Backend for OracleBackend {
    fn id(&self) -> String {
        format!(
            "oracle:noise={}:seed={}:tie={}",
            self.config.noise_std, self.config.seed, self.config.tie_margin
        )
    }

    fn model(&self) -> &str {
        "simulated-oracle"
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let mos = request
            .plan
            .stimuli
            .iter()
            .map(|id| {
                self.scores.get(id).copied().ok_or_else(|| {
                    BackendError::Transport(format!("oracle has no score for `{id}`"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(oracle_respond(
            &request.plan.spec,
            &mos,
            &self.config,
            request.plan.trial_id,
        ))
    }
}
