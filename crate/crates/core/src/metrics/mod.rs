//! SRCC and logistic-fitted PLCC, computed per content group or globally.

pub mod correlation;
mod logistic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::Predictions;
use crate::dataset::{Dataset, Scenario};
use crate::error::{Error, Result};

pub use correlation::{average_ranks, pearson, srcc};
pub use logistic::{fit_affine, fit_logistic, plcc, plcc_with_fit, AffineFit, LogisticFit};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// Compute one correlation over all images even in the FR scenario
    /// (for datasets whose scores are comparable across contents).
    pub pooled: bool,
    /// Fit one logistic over all groups instead of one per group.
    pub global_fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub srcc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plcc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<LogisticFit>,
    /// Set when the group has no usable SRCC (too few or degenerate predictions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub constant_prediction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario: Scenario,
    pub system: String,
    pub options: MetricOptions,
    pub groups: Vec<GroupMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_srcc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_plcc: Option<f64>,
    pub usable_groups: usize,
    pub total_trials: usize,
    pub invalid_trials: usize,
    pub invalid_rate: f64,
    pub clamp_rate: f64,
    pub aggregation: serde_json::Value,
    pub notes: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

struct Series {
    group: String,
    pred: Vec<f64>,
    target: Vec<f64>,
}

fn group_metrics(
    series: &Series,
    shared_fit: Option<&LogisticFit>,
    notes: &mut Vec<String>,
) -> GroupMetrics {
    let n = series.pred.len();
    let mut row = GroupMetrics {
        group: series.group.clone(),
        n,
        srcc: None,
        plcc: None,
        fit: None,
        excluded: None,
        constant_prediction: correlation::is_constant(&series.pred),
    };
    match srcc(&series.pred, &series.target) {
        Ok(v) => row.srcc = Some(v),
        Err(e) => {
            row.excluded = Some(e.to_string());
            notes.push(format!("group `{}` excluded: {e}", series.group));
            return row;
        }
    }
    if let Some(fit) = shared_fit {
        row.plcc = Some(plcc_with_fit(fit, &series.pred, &series.target));
        return row;
    }
    match fit_logistic(&series.pred, &series.target) {
        Ok(fit) => {
            row.plcc = Some(plcc_with_fit(&fit, &series.pred, &series.target));
            if fit.linear_fallback.is_some() {
                notes.push(format!(
                    "group `{}`: logistic fit fell back to linear",
                    series.group
                ));
            }
            row.fit = Some(fit);
        }
        Err(e) => notes.push(format!("group `{}`: no PLCC ({e})", series.group)),
    }
    row
}

/// SRCC/PLCC of predictions against human scores.
///
/// FR: per content group, then the unweighted mean over usable groups. NR (or
/// `pooled`): one computation over every predicted image.
pub fn grouped_metrics(
    predictions: &Predictions,
    dataset: &Dataset,
    options: &MetricOptions,
) -> Result<MetricReport> {
    let mut notes = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    for group in &predictions.groups {
        if !group.usable {
            notes.push(format!(
                "group `{}` unusable: {}",
                group.group,
                group.note.as_deref().unwrap_or("no predictions")
            ));
            continue;
        }
        let target = group
            .ids
            .iter()
            .map(|id| dataset.get(id).map(|r| r.mos))
            .collect::<Result<Vec<_>>>()?;
        series.push(Series {
            group: group.group.clone(),
            pred: group.values.clone(),
            target,
        });
    }
    let pooled = options.pooled || predictions.scenario == Scenario::NoReference;
    if pooled && series.len() > 1 {
        // per-group scales have independent origins; pooling assumes comparable values
        let mut merged = Series {
            group: crate::aggregate::GLOBAL_GROUP.to_owned(),
            pred: Vec::new(),
            target: Vec::new(),
        };
        for s in series.drain(..) {
            merged.pred.extend(s.pred);
            merged.target.extend(s.target);
        }
        series.push(merged);
    }

    let shared_fit = if options.global_fit && !pooled {
        let pred: Vec<f64> = series.iter().flat_map(|s| s.pred.iter().copied()).collect();
        let target: Vec<f64> = series
            .iter()
            .flat_map(|s| s.target.iter().copied())
            .collect();
        match fit_logistic(&pred, &target) {
            Ok(fit) => Some(fit),
            Err(e) => {
                notes.push(format!("global logistic fit failed: {e}"));
                None
            }
        }
    } else {
        None
    };

    let groups: Vec<GroupMetrics> = series
        .iter()
        .map(|s| group_metrics(s, shared_fit.as_ref(), &mut notes))
        .collect();
    let usable: Vec<&GroupMetrics> = groups.iter().filter(|g| g.srcc.is_some()).collect();
    let total = predictions.total_trials.max(1) as f64;
    Ok(MetricReport {
        scenario: predictions.scenario,
        system: predictions.system.clone(),
        options: *options,
        mean_srcc: mean(usable.iter().filter_map(|g| g.srcc)),
        mean_plcc: mean(usable.iter().filter_map(|g| g.plcc)),
        usable_groups: usable.len(),
        groups,
        total_trials: predictions.total_trials,
        invalid_trials: predictions.invalid_trials,
        invalid_rate: predictions.invalid_trials as f64 / total,
        clamp_rate: predictions.clamped_trials as f64 / total,
        aggregation: serde_json::to_value(&predictions.options)?,
        notes,
    })
}

/// Same protocol for raw per-image scores (e.g. a model or expert score file).
pub fn metrics_for_scores(
    scores: &HashMap<String, f64>,
    dataset: &Dataset,
    options: &MetricOptions,
) -> Result<MetricReport> {
    use crate::aggregate::{AggregateOptions, GroupPrediction};
    let mut groups: std::collections::BTreeMap<String, GroupPrediction> = Default::default();
    let mut ids: Vec<&String> = scores.keys().collect();
    ids.sort();
    for id in ids {
        let record = dataset.get(id)?;
        let key = match dataset.scenario() {
            Scenario::FullReference if !record.content_group.is_empty() => {
                record.content_group.clone()
            }
            _ => crate::aggregate::GLOBAL_GROUP.to_owned(),
        };
        let g = groups
            .entry(key.clone())
            .or_insert_with(|| GroupPrediction {
                group: key,
                ids: Vec::new(),
                values: Vec::new(),
                usable: true,
                note: None,
                valid_trials: 0,
                invalid_trials: 0,
                scale: None,
                matrix: None,
            });
        g.ids.push(id.clone());
        g.values.push(scores[id]);
    }
    if groups.is_empty() {
        return Err(Error::Metrics("no scores".into()));
    }
    let predictions = Predictions {
        scenario: dataset.scenario(),
        system: "scores".into(),
        method: crate::prompt::StimulusMethod::Single,
        options: AggregateOptions::default(),
        total_trials: 0,
        invalid_trials: 0,
        clamped_trials: 0,
        groups: groups.into_values().collect(),
    };
    grouped_metrics(&predictions, dataset, options)
}

impl MetricReport {
    /// Flat per-group rows: `group,n,srcc,plcc,excluded`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut out = String::from("group,n,srcc,plcc,excluded\n");
        for g in &self.groups {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                g.group,
                g.n,
                opt(g.srcc),
                opt(g.plcc),
                g.excluded.as_deref().unwrap_or("").replace(',', ";")
            ));
        }
        out
    }
}
