//! Deterministic trial plans: which images go into which prompt, in what order,
//! with which solved exemplar.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Scenario};
use crate::error::{Error, Result};
use crate::prompt::{
    build_prompt, Comparison, Exemplar, ExemplarValue, NlpStrategy, Prompt, PromptSpec, Stimuli,
    StimulusMethod,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trial_id: u64,
    pub spec: PromptSpec,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Test images in presentation order (the reference, if any, is shown first).
    pub stimuli: Vec<String>,
    /// Positions in `stimuli` that repeat an image to fill a short list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub padded: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar: Option<Exemplar>,
}

impl TrialPlan {
    pub fn prompt(&self) -> Result<Prompt> {
        build_prompt(
            &self.spec,
            Stimuli {
                reference: self.reference.as_deref(),
                images: &self.stimuli,
            },
            self.exemplar.as_ref(),
        )
    }

    /// Reference followed by the test images.
    pub fn presentation(&self) -> Vec<&str> {
        self.reference
            .iter()
            .chain(&self.stimuli)
            .map(String::as_str)
            .collect()
    }
}

/// Images to be tested together: one content group (FR) or the whole selection (NR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanGroup {
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub images: Vec<String>,
}

pub const DEFAULT_PAIRS_PER_IMAGE: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub seed: u64,
    /// Pairs each image takes part in for no-reference double-stimulus plans.
    pub pairs_per_image: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            seed: 0,
            pairs_per_image: DEFAULT_PAIRS_PER_IMAGE,
        }
    }
}

fn check_groups(groups: &[PlanGroup], spec: &PromptSpec) -> Result<()> {
    for g in groups {
        match (spec.scenario, &g.reference) {
            (Scenario::FullReference, None) => {
                return Err(Error::Planner(format!(
                    "group `{}` has no reference image",
                    g.group
                )))
            }
            (Scenario::NoReference, Some(_)) => {
                return Err(Error::Planner(format!(
                    "group `{}` has a reference in a no-reference plan",
                    g.group
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

fn trial(spec: &PromptSpec, group: &PlanGroup, stimuli: Vec<String>) -> TrialPlan {
    TrialPlan {
        trial_id: 0,
        spec: *spec,
        group: group.group.clone(),
        reference: group.reference.clone(),
        stimuli,
        padded: Vec::new(),
        exemplar: None,
    }
}

fn number(mut plans: Vec<TrialPlan>) -> Vec<TrialPlan> {
    for (id, plan) in plans.iter_mut().enumerate() {
        plan.trial_id = id as u64;
    }
    plans
}

/// One trial per test image.
pub fn plan_single(groups: &[PlanGroup], spec: &PromptSpec) -> Result<Vec<TrialPlan>> {
    check_groups(groups, spec)?;
    let plans = groups
        .iter()
        .flat_map(|g| {
            g.images
                .iter()
                .map(move |img| trial(spec, g, vec![img.clone()]))
        })
        .collect();
    Ok(number(plans))
}

/// Pairs for double-stimulus trials.
///
/// FR: every within-group pair. NR: a random `pairs_per_image`-regular pairing
/// (a circulant graph over a seeded permutation), so every image appears in
/// exactly that many distinct pairs. Presentation order within a pair is a
/// seeded coin flip.
pub fn plan_double(
    groups: &[PlanGroup],
    spec: &PromptSpec,
    config: &PlannerConfig,
) -> Result<Vec<TrialPlan>> {
    check_groups(groups, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plans = Vec::new();
    match spec.scenario {
        Scenario::FullReference => {
            for g in groups {
                if g.images.len() < 2 {
                    return Err(Error::Planner(format!(
                        "group `{}` has {} image(s); pairs need at least 2",
                        g.group,
                        g.images.len()
                    )));
                }
                for i in 0..g.images.len() {
                    for j in i + 1..g.images.len() {
                        let (a, b) = (&g.images[i], &g.images[j]);
                        let pair = if rng.gen::<bool>() { [a, b] } else { [b, a] };
                        plans.push(trial(spec, g, pair.map(String::clone).to_vec()));
                    }
                }
            }
        }
        Scenario::NoReference => {
            for g in groups {
                let n = g.images.len();
                let degree = config.pairs_per_image;
                if n < 2 {
                    return Err(Error::Planner(format!("need at least 2 images, got {n}")));
                }
                if degree == 0 || degree > n - 1 || (n * degree) % 2 == 1 {
                    return Err(Error::Planner(format!(
                        "{degree} pairs per image is infeasible for {n} images \
                         (need 1 ≤ B ≤ {} with B·n even; feasible maximum is {})",
                        n - 1,
                        n - 1
                    )));
                }
                let mut order: Vec<&String> = g.images.iter().collect();
                order.shuffle(&mut rng);
                let mut pairs = Vec::with_capacity(n * degree / 2);
                for offset in 1..=degree / 2 {
                    for i in 0..n {
                        pairs.push((order[i], order[(i + offset) % n]));
                    }
                }
                if degree % 2 == 1 {
                    for i in 0..n / 2 {
                        pairs.push((order[i], order[i + n / 2]));
                    }
                }
                pairs.shuffle(&mut rng);
                for (a, b) in pairs {
                    let pair = if rng.gen::<bool>() { [a, b] } else { [b, a] };
                    plans.push(trial(spec, g, pair.map(String::clone).to_vec()));
                }
            }
        }
    }
    Ok(number(plans))
}

/// Lists of `list_size` images for ranking trials.
///
/// Each group is shuffled and cut into lists; a short final list is filled by
/// re-drawing images already placed in other lists, and those positions are
/// recorded in [`TrialPlan::padded`].
pub fn plan_multiple(
    groups: &[PlanGroup],
    spec: &PromptSpec,
    config: &PlannerConfig,
) -> Result<Vec<TrialPlan>> {
    check_groups(groups, spec)?;
    spec.validate()?;
    let l = spec.list_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plans = Vec::new();
    for g in groups {
        if l > g.images.len() {
            return Err(Error::Planner(format!(
                "list size {l} exceeds the {} images of group `{}`",
                g.images.len(),
                g.group
            )));
        }
        let mut order: Vec<String> = g.images.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(l) {
            let mut stimuli = chunk.to_vec();
            let mut padded = Vec::new();
            if stimuli.len() < l {
                let mut candidates: Vec<&String> =
                    order.iter().filter(|id| !chunk.contains(id)).collect();
                candidates.shuffle(&mut rng);
                for id in candidates.into_iter().take(l - stimuli.len()) {
                    padded.push(stimuli.len());
                    stimuli.push(id.clone());
                }
            }
            let mut plan = trial(spec, g, stimuli);
            plan.padded = padded;
            plans.push(plan);
        }
    }
    Ok(number(plans))
}

/// Dispatches on the stimulus method; in-context plans also get exemplars from `pool`.
pub fn plan(
    groups: &[PlanGroup],
    spec: &PromptSpec,
    config: &PlannerConfig,
    exemplar_pool: &[PlanGroup],
    dataset: &Dataset,
) -> Result<Vec<TrialPlan>> {
    let plans = match spec.method {
        StimulusMethod::Single => plan_single(groups, spec)?,
        StimulusMethod::Double => plan_double(groups, spec, config)?,
        StimulusMethod::Multiple => plan_multiple(groups, spec, config)?,
    };
    if spec.strategy == NlpStrategy::InContext {
        assign_exemplars(plans, exemplar_pool, dataset, config.seed)
    } else {
        Ok(plans)
    }
}

fn rank_by_mos(mos: &[f64]) -> Vec<u32> {
    mos.iter()
        .map(|m| mos.iter().filter(|other| *other < m).count() as u32)
        .collect()
}

/// Attaches one solved exemplar to every plan, drawn from `pool` with a seeded RNG.
///
/// The exemplar mirrors the trial: a human score for single-stimulus trials, the
/// human comparison of two images for double-stimulus trials, and the human
/// ranking of a list for multiple-stimulus trials. In the FR scenario the
/// exemplar images come from one pool group and bring its reference along.
pub fn assign_exemplars(
    mut plans: Vec<TrialPlan>,
    pool: &[PlanGroup],
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<TrialPlan>> {
    let Some(first) = plans.first() else {
        return Ok(plans);
    };
    let spec = first.spec;
    let need = spec.stimuli_per_trial();
    let candidates: Vec<&PlanGroup> = pool.iter().filter(|g| g.images.len() >= need).collect();
    if candidates.is_empty() {
        return Err(Error::Planner(format!(
            "exemplar pool has no group with at least {need} image(s)"
        )));
    }
    let pooled: HashSet<&str> = pool
        .iter()
        .flat_map(|g| g.reference.iter().chain(&g.images))
        .map(String::as_str)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e8e3_0000_0001);
    for plan in &mut plans {
        if let Some(id) = plan
            .presentation()
            .into_iter()
            .find(|id| pooled.contains(id))
        {
            return Err(Error::Planner(format!(
                "exemplar pool overlaps the test selection at `{id}`"
            )));
        }
        let group = candidates[rng.gen_range(0..candidates.len())];
        let images: Vec<String> = group
            .images
            .choose_multiple(&mut rng, need)
            .cloned()
            .collect();
        let mos = images
            .iter()
            .map(|id| dataset.get(id).map(|r| r.mos))
            .collect::<Result<Vec<_>>>()?;
        let value = match spec.method {
            StimulusMethod::Single => {
                ExemplarValue::Score(dataset.header.to_percent(mos[0]).clamp(0.0, 100.0))
            }
            StimulusMethod::Double => ExemplarValue::Comparison(match mos[0].total_cmp(&mos[1]) {
                std::cmp::Ordering::Greater => Comparison::FirstBetter,
                std::cmp::Ordering::Less => Comparison::SecondBetter,
                std::cmp::Ordering::Equal => Comparison::Tie,
            }),
            StimulusMethod::Multiple => ExemplarValue::Ranking(rank_by_mos(&mos)),
        };
        plan.exemplar = Some(Exemplar {
            reference: group.reference.clone(),
            images,
            value,
        });
    }
    Ok(plans)
}

pub fn write_plans(plans: &[TrialPlan]) -> Result<String> {
    let mut out = String::new();
    for plan in plans {
        out.push_str(&serde_json::to_string(plan)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_plans(text: &str) -> Result<Vec<TrialPlan>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
