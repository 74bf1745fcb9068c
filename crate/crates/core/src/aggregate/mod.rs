//! Preference matrices built from comparison and ranking outcomes, and latent
//! quality scales recovered from them.

mod thurstone;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::Scenario;
use crate::error::{Error, Result};
use crate::gateway::TrialResult;
use crate::planner::TrialPlan;
use crate::prompt::{expand_ranking, Comparison, ParsedOutcome, StimulusMethod};

pub use thurstone::{
    gradient, hessian, inverse_mills, ln_norm_cdf, log_posterior, thurstone_map,
    thurstone_map_from, QualityScale, ThurstoneOptions,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// A tie adds 0.5 to both directions.
    #[default]
    Half,
    Discard,
}

/// `counts[i][j]` is how often item `i` was preferred over item `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMatrix {
    pub ids: Vec<String>,
    pub counts: Vec<Vec<f64>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PreferenceMatrix {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let m = ids.len();
        Self::from_counts(ids, vec![vec![0.0; m]; m])
    }

    pub fn from_counts(ids: Vec<String>, counts: Vec<Vec<f64>>) -> Result<Self> {
        let m = ids.len();
        if counts.len() != m || counts.iter().any(|row| row.len() != m) {
            return Err(Error::Aggregation(format!("count matrix must be {m}×{m}")));
        }
        for (i, row) in counts.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(Error::Aggregation(format!(
                    "diagonal entry {i} must be zero"
                )));
            }
            if row.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::Aggregation(format!(
                    "row {i} has a negative or non-finite count"
                )));
            }
        }
        let mut index = HashMap::with_capacity(m);
        for (pos, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), pos).is_some() {
                return Err(Error::Aggregation(format!("duplicate item `{id}`")));
            }
        }
        Ok(PreferenceMatrix { ids, counts, index })
    }

    /// Rebuilds the id index after deserialization.
    pub fn reindex(mut self) -> Result<Self> {
        let counts = std::mem::take(&mut self.counts);
        Self::from_counts(self.ids, counts)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Aggregation(format!("unknown item `{id}`")))
    }

    pub fn count(&self, winner: &str, loser: &str) -> Result<f64> {
        Ok(self.counts[self.position(winner)?][self.position(loser)?])
    }

    /// Records one comparison between `first` and `second`.
    pub fn accumulate(
        &mut self,
        first: &str,
        second: &str,
        result: Comparison,
        ties: TiePolicy,
    ) -> Result<()> {
        let i = self.position(first)?;
        let j = self.position(second)?;
        if i == j {
            return Err(Error::Aggregation(format!(
                "cannot compare `{first}` with itself"
            )));
        }
        match (result, ties) {
            (Comparison::FirstBetter, _) => self.counts[i][j] += 1.0,
            (Comparison::SecondBetter, _) => self.counts[j][i] += 1.0,
            (Comparison::Tie, TiePolicy::Half) => {
                self.counts[i][j] += 0.5;
                self.counts[j][i] += 0.5;
            }
            (Comparison::Tie, TiePolicy::Discard) => {}
        }
        Ok(())
    }

    /// Multiplies every count by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        PreferenceMatrix {
            ids: self.ids.clone(),
            counts: self
                .counts
                .iter()
                .map(|row| row.iter().map(|c| c * factor).collect())
                .collect(),
            index: self.index.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    #[serde(default)]
    pub thurstone: ThurstoneOptions,
    #[serde(default)]
    pub ties: TiePolicy,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            thurstone: ThurstoneOptions::default(),
            ties: TiePolicy::Half,
        }
    }
}

/// Per-image predictions for one content group (FR) or the whole set (NR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPrediction {
    pub group: String,
    pub ids: Vec<String>,
    pub values: Vec<f64>,
    pub usable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub valid_trials: usize,
    pub invalid_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<QualityScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PreferenceMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub scenario: Scenario,
    pub system: String,
    pub method: StimulusMethod,
    pub options: AggregateOptions,
    pub total_trials: usize,
    pub invalid_trials: usize,
    pub clamped_trials: usize,
    pub groups: Vec<GroupPrediction>,
}

/// Group key used for no-reference runs, which pool every image.
pub const GLOBAL_GROUP: &str = "all";

struct GroupTrials<'a> {
    ids: Vec<String>,
    trials: Vec<(&'a TrialPlan, &'a ParsedOutcome)>,
}

/// Turns parsed trials into per-group predictions.
///
/// Single-stimulus trials yield mean scores per image. Double- and
/// multiple-stimulus trials are accumulated into one preference matrix per
/// content group (FR) or one global matrix (NR) and scaled with
/// [`thurstone_map`]. Invalid trials are excluded and counted.
pub fn aggregate(
    plans: &[TrialPlan],
    results: &[TrialResult],
    options: &AggregateOptions,
) -> Result<Predictions> {
    let first = plans
        .first()
        .ok_or_else(|| Error::Aggregation("empty trial plan".into()))?;
    let spec = first.spec;
    let by_id: HashMap<u64, &TrialResult> = results.iter().map(|r| (r.trial_id, r)).collect();

    let mut group_of: HashMap<&str, &str> = HashMap::new();
    let mut groups: BTreeMap<String, GroupTrials<'_>> = BTreeMap::new();
    let mut clamped = 0;
    let mut invalid = 0;
    for plan in plans {
        if plan.spec != spec {
            return Err(Error::Aggregation(format!(
                "trial {} uses {} but the plan is {}",
                plan.trial_id, plan.spec, spec
            )));
        }
        let result = by_id
            .get(&plan.trial_id)
            .ok_or_else(|| Error::Aggregation(format!("no result for trial {}", plan.trial_id)))?;
        let key = match spec.scenario {
            Scenario::FullReference => plan.group.clone(),
            Scenario::NoReference => GLOBAL_GROUP.to_owned(),
        };
        let entry = groups.entry(key.clone()).or_insert_with(|| GroupTrials {
            ids: Vec::new(),
            trials: Vec::new(),
        });
        for id in &plan.stimuli {
            if let Some(prev) = group_of.insert(id.as_str(), plan.group.as_str()) {
                if prev != plan.group && spec.scenario == Scenario::FullReference {
                    return Err(Error::Aggregation(format!(
                        "trial {} compares `{id}` across content groups `{prev}` and `{}`",
                        plan.trial_id, plan.group
                    )));
                }
            }
            if !entry.ids.contains(id) {
                entry.ids.push(id.clone());
            }
        }
        if result.outcome.is_clamped() {
            clamped += 1;
        }
        if !result.outcome.is_valid() {
            invalid += 1;
        }
        entry.trials.push((plan, &result.outcome));
    }

    let groups = groups
        .into_iter()
        .map(|(name, trials)| match spec.method {
            StimulusMethod::Single => Ok(score_group(name, trials)),
            _ => scale_group(name, trials, options),
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Predictions {
        scenario: spec.scenario,
        system: spec.system(),
        method: spec.method,
        options: options.clone(),
        total_trials: plans.len(),
        invalid_trials: invalid,
        clamped_trials: clamped,
        groups,
    })
}

fn score_group(group: String, trials: GroupTrials<'_>) -> GroupPrediction {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let (mut valid, mut invalid) = (0, 0);
    for (plan, outcome) in &trials.trials {
        match outcome {
            ParsedOutcome::Score { score, .. } => {
                valid += 1;
                let slot = sums.entry(plan.stimuli[0].as_str()).or_insert((0.0, 0));
                slot.0 += score;
                slot.1 += 1;
            }
            _ => invalid += 1,
        }
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for id in &trials.ids {
        if let Some((sum, n)) = sums.get(id.as_str()) {
            ids.push(id.clone());
            values.push(sum / *n as f64);
        }
    }
    let usable = !ids.is_empty();
    GroupPrediction {
        group,
        note: (!usable).then(|| "no valid trials".to_owned()),
        ids,
        values,
        usable,
        valid_trials: valid,
        invalid_trials: invalid,
        scale: None,
        matrix: None,
    }
}

fn scale_group(
    group: String,
    trials: GroupTrials<'_>,
    options: &AggregateOptions,
) -> Result<GroupPrediction> {
    let mut matrix = PreferenceMatrix::new(trials.ids.clone())?;
    let (mut valid, mut invalid) = (0, 0);
    for (plan, outcome) in &trials.trials {
        match outcome {
            ParsedOutcome::Comparison { comparison, .. } => {
                valid += 1;
                matrix.accumulate(
                    &plan.stimuli[0],
                    &plan.stimuli[1],
                    *comparison,
                    options.ties,
                )?;
            }
            ParsedOutcome::Ranking { ranking, .. } => {
                valid += 1;
                for pair in expand_ranking(ranking, plan.stimuli.len())? {
                    let (a, b) = (&plan.stimuli[pair.first], &plan.stimuli[pair.second]);
                    // a padded list may repeat an image; a self-comparison carries no information
                    if a != b {
                        matrix.accumulate(a, b, pair.result, options.ties)?;
                    }
                }
            }
            ParsedOutcome::Invalid { .. } => invalid += 1,
            ParsedOutcome::Score { .. } => {
                return Err(Error::Aggregation(format!(
                    "trial {} returned a score for a {} plan",
                    plan.trial_id,
                    plan.spec.system()
                )))
            }
        }
    }
    let base = GroupPrediction {
        group,
        ids: trials.ids,
        values: Vec::new(),
        usable: false,
        note: None,
        valid_trials: valid,
        invalid_trials: invalid,
        scale: None,
        matrix: None,
    };
    if matrix.len() < 2 || matrix.total() <= 0.0 {
        let note = if valid == 0 {
            "no valid trials"
        } else {
            "no informative comparisons"
        };
        return Ok(GroupPrediction {
            note: Some(note.to_owned()),
            matrix: Some(matrix),
            ..base
        });
    }
    let scale = thurstone_map(&matrix, &options.thurstone)?;
    let note =
        (!scale.converged).then(|| format!("solver stopped after {} iterations", scale.iterations));
    Ok(GroupPrediction {
        values: scale.mu.clone(),
        usable: true,
        note,
        scale: Some(scale),
        matrix: Some(matrix),
        ..base
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        ["a", "b", "c", "d"][..n]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn accumulate_basic_outcomes() {
        let mut m = PreferenceMatrix::new(ids(2)).unwrap();
        m.accumulate("a", "b", Comparison::FirstBetter, TiePolicy::Half)
            .unwrap();
        assert_eq!(m.count("a", "b").unwrap(), 1.0);
        let mut t = PreferenceMatrix::new(ids(2)).unwrap();
        t.accumulate("a", "b", Comparison::Tie, TiePolicy::Half)
            .unwrap();
        assert_eq!(
            (t.count("a", "b").unwrap(), t.count("b", "a").unwrap()),
            (0.5, 0.5)
        );
        let mut d = PreferenceMatrix::new(ids(2)).unwrap();
        d.accumulate("a", "b", Comparison::Tie, TiePolicy::Discard)
            .unwrap();
        assert_eq!(d.total(), 0.0);
        assert!(m
            .accumulate("a", "a", Comparison::Tie, TiePolicy::Half)
            .is_err());
        assert!(m
            .accumulate("a", "z", Comparison::Tie, TiePolicy::Half)
            .is_err());
    }

    #[test]
    fn expanded_ranking_accumulates_three_units() {
        // ranking [2,0,1]: a≻b, a≻c, c≻b
        let mut m = PreferenceMatrix::new(ids(3)).unwrap();
        let list = ids(3);
        for p in expand_ranking(&[2, 0, 1], 3).unwrap() {
            m.accumulate(&list[p.first], &list[p.second], p.result, TiePolicy::Half)
                .unwrap();
        }
        assert_eq!(m.total(), 3.0);
        assert_eq!(m.count("a", "b").unwrap(), 1.0);
        assert_eq!(m.count("a", "c").unwrap(), 1.0);
        assert_eq!(m.count("c", "b").unwrap(), 1.0);
    }

    #[test]
    fn matrix_validation() {
        assert!(
            PreferenceMatrix::from_counts(ids(2), vec![vec![1.0, 0.0], vec![0.0, 0.0]]).is_err()
        );
        assert!(
            PreferenceMatrix::from_counts(ids(2), vec![vec![0.0, -1.0], vec![0.0, 0.0]]).is_err()
        );
        assert!(
            PreferenceMatrix::from_counts(vec!["a".into(), "a".into()], vec![vec![0.0; 2]; 2])
                .is_err()
        );
    }
}
