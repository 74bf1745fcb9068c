//! Expert-score fusion and the difficult / uniform sample selectors.
//!
//! Difficult selection ranks candidates by how badly the fused expert misses
//! the human score, scaled down where humans disagree, plus a diversity bonus
//! in embedding space:
//!
//! * FR references: mean over the group of `(d − q)² / (σ² + ε)` `+ λ·Div`
//! * FR distorted images: `(d − q)² / (σ² + ε)`, top-K
//! * NR images: `(q_w − q)² / (σ² + ε) + λ·Div`
//!
//! Selection is greedy, one pick per step, ties broken by image id.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    ContentGroup, Dataset, EmbeddingTable, ExpertScoreTable, ImageRecord, Scenario,
};
use crate::error::{Error, Result};
use crate::metrics::{correlation::is_constant, fit_affine, fit_logistic};
use crate::planner::PlanGroup;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    #[default]
    MinToSet,
    MeanToSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_select: usize,
    pub k_select: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub diversity_mode: DiversityMode,
    pub seed: u64,
    /// Divide squared errors by `σ² + ε`; turning this off leaves plain squared errors.
    pub variance_normalization: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::full_reference()
    }
}

impl SamplerConfig {
    pub fn full_reference() -> Self {
        SamplerConfig {
            n_select: 15,
            k_select: 10,
            lambda: 0.01,
            epsilon: 1.0,
            diversity_mode: DiversityMode::MinToSet,
            seed: 0,
            variance_normalization: true,
        }
    }

    pub fn no_reference() -> Self {
        SamplerConfig {
            n_select: 150,
            ..SamplerConfig::full_reference()
        }
    }

    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::FullReference => Self::full_reference(),
            Scenario::NoReference => Self::no_reference(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_select == 0 || self.k_select == 0 {
            return Err(Error::Sampler(
                "n_select and k_select must be positive".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Sampler(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Sampler(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    fn error_term(&self, prediction: f64, record: &ImageRecord) -> f64 {
        let squared = (prediction - record.mos).powi(2);
        if self.variance_normalization {
            squared / (record.std * record.std + self.epsilon)
        } else {
            squared
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedItem {
    pub image_id: String,
    pub objective: f64,
    pub error_term: f64,
    pub diversity_term: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// In selection order.
    pub items: Vec<SelectedItem>,
}

impl SelectionResult {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.image_id.clone()).collect()
    }
}

/// Mean squared difference between two feature vectors.
fn feature_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Point-to-set distance of `candidate` to `selected`; 0 for an empty set.
pub fn diversity(
    candidate: &str,
    selected: &[String],
    embeddings: &EmbeddingTable,
    mode: DiversityMode,
) -> Result<f64> {
    if selected.is_empty() {
        return Ok(0.0);
    }
    let c = embeddings.get(candidate)?;
    let distances = selected
        .iter()
        .map(|id| {
            let s = embeddings.get(id)?;
            if s.len() != c.len() {
                return Err(Error::Embedding(format!(
                    "dimension mismatch between `{candidate}` and `{id}`"
                )));
            }
            Ok(feature_mse(c, s))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(match mode {
        DiversityMode::MinToSet => distances.into_iter().fold(f64::INFINITY, f64::min),
        DiversityMode::MeanToSet => distances.iter().sum::<f64>() / distances.len() as f64,
    })
}

/// Greedy maximization of `error + λ·Div` with running point-to-set distances.
fn greedy(
    candidates: Vec<(String, f64)>,
    n_select: usize,
    embeddings: Option<&EmbeddingTable>,
    config: &SamplerConfig,
) -> Result<SelectionResult> {
    let vectors: Vec<&[f64]> = match embeddings {
        Some(table) => candidates
            .iter()
            .map(|(id, _)| table.get(id))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    let mut min_dist = vec![f64::INFINITY; candidates.len()];
    let mut sum_dist = vec![0.0; candidates.len()];
    let mut items: Vec<SelectedItem> = Vec::with_capacity(n_select);
    for _ in 0..n_select {
        let div = |c: usize| -> f64 {
            if items.is_empty() || vectors.is_empty() {
                0.0
            } else {
                match config.diversity_mode {
                    DiversityMode::MinToSet => min_dist[c],
                    DiversityMode::MeanToSet => sum_dist[c] / items.len() as f64,
                }
            }
        };
        let (slot, best) = remaining
            .iter()
            .enumerate()
            .map(|(slot, &c)| (slot, c, candidates[c].1 + config.lambda * div(c)))
            .fold(
                None::<(usize, usize, f64)>,
                |acc, (slot, c, obj)| match acc {
                    Some((_, bc, bobj))
                        if bobj > obj || (bobj == obj && candidates[bc].0 < candidates[c].0) =>
                    {
                        acc
                    }
                    _ => Some((slot, c, obj)),
                },
            )
            .map(|(slot, c, _)| (slot, c))
            .expect("caller checked candidate count");
        let diversity_term = div(best);
        items.push(SelectedItem {
            image_id: candidates[best].0.clone(),
            objective: candidates[best].1 + config.lambda * diversity_term,
            error_term: candidates[best].1,
            diversity_term,
        });
        remaining.swap_remove(slot);
        if !vectors.is_empty() {
            for &c in &remaining {
                let d = feature_mse(vectors[c], vectors[best]);
                min_dist[c] = min_dist[c].min(d);
                sum_dist[c] += d;
            }
        }
    }
    Ok(SelectionResult { items })
}

fn check_dims(embeddings: &EmbeddingTable, ids: &[(String, f64)]) -> Result<()> {
    for (id, _) in ids {
        embeddings
            .get(id)
            .map_err(|_| Error::Sampler(format!("missing embedding for `{id}`")))?;
    }
    Ok(())
}

/// Greedy choice of `n_select` references by mean normalized error over each group plus diversity.
pub fn select_references_fr(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    fused: &ExpertScoreTable,
    config: &SamplerConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    let mut candidates = Vec::new();
    for group_id in dataset.group_ids() {
        let group = dataset.group(group_id)?;
        let Some(reference) = group.reference else {
            continue;
        };
        if group.distorted.is_empty() {
            continue;
        }
        let mut total = 0.0;
        for x in &group.distorted {
            total += config.error_term(fused.fused_score(&x.image_id)?, x);
        }
        candidates.push((
            reference.image_id.clone(),
            total / group.distorted.len() as f64,
        ));
    }
    if candidates.len() < config.n_select {
        return Err(Error::Sampler(format!(
            "need {} references, the manifest has {}",
            config.n_select,
            candidates.len()
        )));
    }
    check_dims(embeddings, &candidates)?;
    greedy(candidates, config.n_select, Some(embeddings), config)
}

/// Top-`k_select` distorted images of one group by normalized error.
pub fn select_distorted_fr(
    group: &ContentGroup<'_>,
    fused: &ExpertScoreTable,
    config: &SamplerConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    if group.distorted.len() < config.k_select {
        return Err(Error::Sampler(format!(
            "group `{}` has {} distorted images, fewer than K = {}",
            group.id,
            group.distorted.len(),
            config.k_select
        )));
    }
    let candidates = group
        .distorted
        .iter()
        .map(|x| {
            Ok((
                x.image_id.clone(),
                config.error_term(fused.fused_score(&x.image_id)?, x),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    greedy(candidates, config.k_select, None, config)
}

/// Greedy choice of `n_select` no-reference images by normalized error plus diversity.
pub fn select_images_nr(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    fused: &ExpertScoreTable,
    config: &SamplerConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    let candidates = dataset
        .test_images()
        .map(|x| {
            Ok((
                x.image_id.clone(),
                config.error_term(fused.fused_score(&x.image_id)?, x),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    if candidates.len() < config.n_select {
        return Err(Error::Sampler(format!(
            "need {} images, the manifest has {}",
            config.n_select,
            candidates.len()
        )));
    }
    check_dims(embeddings, &candidates)?;
    greedy(candidates, config.n_select, Some(embeddings), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Difficult,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedGroup {
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub result: SelectionResult,
}

/// Everything a selection run produced: chosen references (FR) and the test
/// images per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub scenario: Scenario,
    pub mode: SelectionMode,
    pub config: SamplerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<SelectionResult>,
    pub groups: Vec<SelectedGroup>,
}

impl Selection {
    pub fn plan_groups(&self) -> Vec<PlanGroup> {
        self.groups
            .iter()
            .map(|g| PlanGroup {
                group: g.group.clone(),
                reference: g.reference.clone(),
                images: g.result.ids(),
            })
            .collect()
    }

    /// Unselected material usable for in-context exemplars: whole unselected
    /// groups (FR) or unselected images (NR).
    pub fn exemplar_pool(&self, dataset: &Dataset) -> Result<Vec<PlanGroup>> {
        match self.scenario {
            Scenario::FullReference => {
                let chosen: Vec<&str> = self.groups.iter().map(|g| g.group.as_str()).collect();
                dataset
                    .group_ids()
                    .filter(|g| !chosen.contains(g))
                    .map(|g| {
                        let group = dataset.group(g)?;
                        Ok(PlanGroup {
                            group: g.to_owned(),
                            reference: group.reference.map(|r| r.image_id.clone()),
                            images: group.distorted.iter().map(|d| d.image_id.clone()).collect(),
                        })
                    })
                    .collect()
            }
            Scenario::NoReference => {
                let chosen: std::collections::HashSet<String> =
                    self.groups.iter().flat_map(|g| g.result.ids()).collect();
                Ok(vec![PlanGroup {
                    group: "pool".into(),
                    reference: None,
                    images: dataset
                        .test_images()
                        .filter(|r| !chosen.contains(&r.image_id))
                        .map(|r| r.image_id.clone())
                        .collect(),
                }])
            }
        }
    }
}

/// Difficult-sample selection for the dataset's scenario.
pub fn select_difficult(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    fused: &ExpertScoreTable,
    config: &SamplerConfig,
) -> Result<Selection> {
    let (references, groups) = match dataset.scenario() {
        Scenario::FullReference => {
            let refs = select_references_fr(dataset, embeddings, fused, config)?;
            let groups = refs
                .items
                .iter()
                .map(|item| {
                    let group = dataset.group_of(&item.image_id)?;
                    Ok(SelectedGroup {
                        group: group.id.clone(),
                        reference: Some(item.image_id.clone()),
                        result: select_distorted_fr(&group, fused, config)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (Some(refs), groups)
        }
        Scenario::NoReference => (
            None,
            vec![SelectedGroup {
                group: crate::aggregate::GLOBAL_GROUP.into(),
                reference: None,
                result: select_images_nr(dataset, embeddings, fused, config)?,
            }],
        ),
    };
    Ok(Selection {
        scenario: dataset.scenario(),
        mode: SelectionMode::Difficult,
        config: config.clone(),
        references,
        groups,
    })
}

fn unscored(ids: impl IntoIterator<Item = String>) -> SelectionResult {
    SelectionResult {
        items: ids
            .into_iter()
            .map(|image_id| SelectedItem {
                image_id,
                objective: 0.0,
                error_term: 0.0,
                diversity_term: 0.0,
            })
            .collect(),
    }
}

/// One uniform draw from each of `k` equal-count mos strata.
pub fn stratified_by_mos(images: &[&ImageRecord], k: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut sorted: Vec<&ImageRecord> = images.to_vec();
    sorted.sort_by(|a, b| {
        a.mos
            .total_cmp(&b.mos)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    let n = sorted.len();
    (0..k)
        .map(|s| {
            let (lo, hi) = (s * n / k, (s + 1) * n / k);
            sorted[rng.gen_range(lo..hi)].image_id.clone()
        })
        .collect()
}

/// Uniform baseline: N references (FR) with K mos-stratified distorted images
/// each, or N images (NR), all drawn with a seeded RNG.
pub fn sample_uniform(dataset: &Dataset, config: &SamplerConfig) -> Result<Selection> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (references, groups) = match dataset.scenario() {
        Scenario::FullReference => {
            let mut refs: Vec<&ImageRecord> = dataset.references().collect();
            refs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
            if refs.len() < config.n_select {
                return Err(Error::Sampler(format!(
                    "need {} references, the manifest has {}",
                    config.n_select,
                    refs.len()
                )));
            }
            let chosen: Vec<String> = refs
                .choose_multiple(&mut rng, config.n_select)
                .map(|r| r.image_id.clone())
                .collect();
            let mut groups = Vec::with_capacity(chosen.len());
            for reference in &chosen {
                let group = dataset.group_of(reference)?;
                if group.distorted.len() < config.k_select {
                    return Err(Error::Sampler(format!(
                        "group `{}` has {} distorted images, fewer than K = {}",
                        group.id,
                        group.distorted.len(),
                        config.k_select
                    )));
                }
                groups.push(SelectedGroup {
                    group: group.id.clone(),
                    reference: Some(reference.clone()),
                    result: unscored(stratified_by_mos(
                        &group.distorted,
                        config.k_select,
                        &mut rng,
                    )),
                });
            }
            (Some(unscored(chosen)), groups)
        }
        Scenario::NoReference => {
            let mut images: Vec<&ImageRecord> = dataset.test_images().collect();
            images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
            if images.len() < config.n_select {
                return Err(Error::Sampler(format!(
                    "need {} images, the manifest has {}",
                    config.n_select,
                    images.len()
                )));
            }
            let chosen = images
                .choose_multiple(&mut rng, config.n_select)
                .map(|r| r.image_id.clone());
            (
                None,
                vec![SelectedGroup {
                    group: crate::aggregate::GLOBAL_GROUP.into(),
                    reference: None,
                    result: unscored(chosen),
                }],
            )
        }
    };
    Ok(Selection {
        scenario: dataset.scenario(),
        mode: SelectionMode::Uniform,
        config: config.clone(),
        references,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ExpertCalibration {
    Logistic {
        expert: String,
        samples: usize,
        residual_rms: f64,
    },
    Affine {
        expert: String,
        samples: usize,
        residual_rms: f64,
    },
    Excluded {
        expert: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub table: ExpertScoreTable,
    pub calibrations: Vec<ExpertCalibration>,
}

enum Remap {
    Logistic(crate::metrics::LogisticFit),
    Affine(crate::metrics::AffineFit),
}

impl Remap {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Remap::Logistic(f) => f.apply(x),
            Remap::Affine(f) => f.apply(x),
        }
    }
}

/// Maps each expert onto the human scale and averages them with equal weights.
///
/// Each expert column is calibrated against mos with the four-parameter
/// logistic; when an affine map (the logistic's large-scale limit) fits at
/// least as well, the affine map is used. Constant columns are dropped.
pub fn fuse_experts(table: &ExpertScoreTable, dataset: &Dataset) -> Result<Fusion> {
    let mut columns: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (id, scores) in &table.raw {
        dataset.get(id)?;
        for (expert, raw) in scores {
            columns
                .entry(expert.clone())
                .or_default()
                .push((id.clone(), *raw));
        }
    }
    let mut calibrations = Vec::new();
    let mut remapped: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (expert, column) in &columns {
        let raw: Vec<f64> = column.iter().map(|(_, r)| *r).collect();
        let mos: Vec<f64> = column
            .iter()
            .map(|(id, _)| dataset.get(id).map(|r| r.mos))
            .collect::<Result<_>>()?;
        if raw.len() < 2 || is_constant(&raw) {
            warn!("expert `{expert}` has a constant score column; excluded from fusion");
            calibrations.push(ExpertCalibration::Excluded {
                expert: expert.clone(),
                reason: "constant scores".into(),
            });
            continue;
        }
        let affine = fit_affine(&raw, &mos);
        let logistic = if raw.len() >= 5 && !is_constant(&mos) {
            fit_logistic(&raw, &mos)
                .ok()
                .filter(|f| f.linear_fallback.is_none())
        } else {
            None
        };
        let remap = match logistic {
            Some(fit) if fit.residual_rms < affine.residual_rms => {
                calibrations.push(ExpertCalibration::Logistic {
                    expert: expert.clone(),
                    samples: raw.len(),
                    residual_rms: fit.residual_rms,
                });
                Remap::Logistic(fit)
            }
            _ => {
                calibrations.push(ExpertCalibration::Affine {
                    expert: expert.clone(),
                    samples: raw.len(),
                    residual_rms: affine.residual_rms,
                });
                Remap::Affine(affine)
            }
        };
        for (id, value) in column {
            let slot = remapped.entry(id.clone()).or_insert((0.0, 0));
            slot.0 += remap.apply(*value);
            slot.1 += 1;
        }
    }
    if remapped.is_empty() {
        return Err(Error::Sampler("no usable expert after calibration".into()));
    }
    let mut out = table.clone();
    out.fused = remapped
        .into_iter()
        .map(|(id, (sum, n))| (id, sum / n as f64))
        .collect();
    if let Some((id, _)) = out.fused.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Sampler(format!(
            "fused score for `{id}` is not finite"
        )));
    }
    Ok(Fusion {
        table: out,
        calibrations,
    })
}
