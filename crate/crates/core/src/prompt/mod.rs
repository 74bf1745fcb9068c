//! Prompt construction for the nine psychophysical × prompting-strategy systems
//! in both scenarios, and parsing of model responses.

mod parse;
mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Scenario;
use crate::error::{Error, Result};

pub use parse::{format_outcome, parse_response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StimulusMethod {
    Single,
    Double,
    Multiple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NlpStrategy {
    Standard,
    Cot,
    #[serde(rename = "incontext")]
    InContext,
}

impl StimulusMethod {
    pub const ALL: [StimulusMethod; 3] = [Self::Single, Self::Double, Self::Multiple];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Double => "double",
            Self::Multiple => "multiple",
        }
    }
}

impl NlpStrategy {
    pub const ALL: [NlpStrategy; 3] = [Self::Standard, Self::Cot, Self::InContext];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Cot => "cot",
            Self::InContext => "incontext",
        }
    }
}

impl FromStr for StimulusMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stimulus method `{s}`")))
    }
}

impl FromStr for NlpStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown prompting strategy `{s}`")))
    }
}

pub const DEFAULT_LIST_SIZE: usize = 4;

fn default_list_size() -> usize {
    DEFAULT_LIST_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    pub method: StimulusMethod,
    pub strategy: NlpStrategy,
    pub scenario: Scenario,
    #[serde(default = "default_list_size")]
    pub list_size: usize,
}

impl PromptSpec {
    pub fn new(method: StimulusMethod, strategy: NlpStrategy, scenario: Scenario) -> Self {
        PromptSpec {
            method,
            strategy,
            scenario,
            list_size: DEFAULT_LIST_SIZE,
        }
    }

    /// Parses a system name such as `double-cot` (scenario supplied separately).
    pub fn from_system(system: &str, scenario: Scenario) -> Result<Self> {
        let (method, strategy) = system.split_once('-').ok_or_else(|| {
            Error::Config(format!("system `{system}` is not `<method>-<strategy>`"))
        })?;
        Ok(PromptSpec::new(
            method.parse()?,
            strategy.parse()?,
            scenario,
        ))
    }

    /// `"{scenario}-{method}-{strategy}"`, e.g. `nr-double-cot`.
    pub fn template_id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.scenario.short(),
            self.method.as_str(),
            self.strategy.as_str()
        )
    }

    pub fn system(&self) -> String {
        format!("{}-{}", self.method.as_str(), self.strategy.as_str())
    }

    /// Test stimuli per trial, excluding any reference.
    pub fn stimuli_per_trial(&self) -> usize {
        match self.method {
            StimulusMethod::Single => 1,
            StimulusMethod::Double => 2,
            StimulusMethod::Multiple => self.list_size,
        }
    }

    /// Images attached to one prompt: references, exemplars and test images.
    pub fn attachment_count(&self) -> usize {
        let per_block =
            self.stimuli_per_trial() + usize::from(self.scenario == Scenario::FullReference);
        match self.strategy {
            NlpStrategy::InContext => 2 * per_block,
            _ => per_block,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == StimulusMethod::Multiple {
            if self.list_size < 2 {
                return Err(Error::Prompt(format!(
                    "list size must be at least 2, got {}",
                    self.list_size
                )));
            }
            if self.attachment_count() > templates::MAX_WORD {
                return Err(Error::Prompt(format!(
                    "list size {} needs {} attachments, more than the wording supports",
                    self.list_size,
                    self.attachment_count()
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PromptSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.template_id())
    }
}

/// Two-alternative outcome with a tie option; the numeric codes are the ones
/// the model is asked to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    SecondBetter,
    FirstBetter,
    Tie,
}

impl Comparison {
    pub fn code(self) -> u8 {
        match self {
            Comparison::SecondBetter => 0,
            Comparison::FirstBetter => 1,
            Comparison::Tie => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Comparison::SecondBetter),
            1 => Some(Comparison::FirstBetter),
            2 => Some(Comparison::Tie),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum ExemplarValue {
    /// Human score on the 0–100 prompt scale.
    Score(f64),
    Comparison(Comparison),
    Ranking(Vec<u32>),
}

/// One solved example shown before the test images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub images: Vec<String>,
    pub value: ExemplarValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_id: String,
    pub text: String,
    /// Image ids in the order the text enumerates them.
    pub attachments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParsedOutcome {
    Score {
        score: f64,
        clamped: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        description: Option<String>,
    },
    Comparison {
        comparison: Comparison,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        description: Option<String>,
    },
    Ranking {
        ranking: Vec<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        description: Option<String>,
    },
    Invalid {
        raw: String,
        reason: String,
    },
}

impl ParsedOutcome {
    pub fn is_valid(&self) -> bool {
        !matches!(self, ParsedOutcome::Invalid { .. })
    }

    pub fn is_clamped(&self) -> bool {
        matches!(self, ParsedOutcome::Score { clamped: true, .. })
    }

    pub fn description(&self) -> Option<&str> {
        match self {
            ParsedOutcome::Score { description, .. }
            | ParsedOutcome::Comparison { description, .. }
            | ParsedOutcome::Ranking { description, .. } => description.as_deref(),
            ParsedOutcome::Invalid { .. } => None,
        }
    }
}

/// Formats a score for a prompt: at most two decimals, no trailing zeros.
pub fn format_score(score: f64) -> String {
    let rounded = (score * 100.0).round() / 100.0;
    format!("{}", rounded + 0.0)
}

fn comparison_clause(scenario: Scenario, comparison: Comparison) -> &'static str {
    match (scenario, comparison) {
        (Scenario::FullReference, Comparison::FirstBetter) => {
            "the second image is more similar to the first image than the third image"
        }
        (Scenario::FullReference, Comparison::SecondBetter) => {
            "the third image is more similar to the first image than the second image"
        }
        (Scenario::FullReference, Comparison::Tie) => {
            "the second image and the third image have the same similarity to the first image"
        }
        (Scenario::NoReference, Comparison::FirstBetter) => {
            "the first image is of better quality than the second image"
        }
        (Scenario::NoReference, Comparison::SecondBetter) => {
            "the second image is of better quality than the first image"
        }
        (Scenario::NoReference, Comparison::Tie) => "the two images have the same quality",
    }
}

/// Label of list position `pos` (0-based) in a ranking answer.
pub(crate) fn ranking_label(spec: &PromptSpec, pos: usize) -> String {
    match (spec.scenario, spec.strategy) {
        (Scenario::FullReference, _) => format!("{} distorted image", templates::ordinal(pos + 1)),
        (Scenario::NoReference, NlpStrategy::InContext) => {
            templates::ordinal(spec.list_size + pos + 1).to_owned()
        }
        (Scenario::NoReference, _) => templates::ordinal(pos + 1).to_owned(),
    }
}

fn exemplar_ranking(spec: &PromptSpec, ranking: &[u32]) -> String {
    ranking
        .iter()
        .enumerate()
        .map(|(pos, rank)| match spec.scenario {
            // the published FR example has no space after the third label
            Scenario::FullReference if pos == 2 => {
                format!("{} distorted image:{rank}", templates::ordinal(pos + 1))
            }
            Scenario::FullReference => {
                format!("{} distorted image: {rank}", templates::ordinal(pos + 1))
            }
            Scenario::NoReference => format!("{}: {rank}", templates::ordinal(pos + 1)),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_labels(spec: &PromptSpec) -> String {
    let shown = spec.list_size.min(3);
    let mut out: String = (0..shown)
        .map(|pos| format!("{}: , ", ranking_label(spec, pos)))
        .collect();
    out.push_str("...");
    out
}

/// The test images of one trial, in presentation order.
#[derive(Debug, Clone, Copy)]
pub struct Stimuli<'a> {
    pub reference: Option<&'a str>,
    pub images: &'a [String],
}

fn check_block(
    spec: &PromptSpec,
    reference: Option<&str>,
    images: usize,
    what: &str,
) -> Result<()> {
    let expected = spec.stimuli_per_trial();
    if images != expected {
        return Err(Error::Prompt(format!(
            "{}: expected {expected} {what} image(s), got {images}",
            spec.template_id()
        )));
    }
    match (spec.scenario, reference) {
        (Scenario::FullReference, None) => Err(Error::Prompt(format!(
            "{}: {what} block needs a reference image",
            spec.template_id()
        ))),
        (Scenario::NoReference, Some(_)) => Err(Error::Prompt(format!(
            "{}: no-reference prompts take no reference image",
            spec.template_id()
        ))),
        _ => Ok(()),
    }
}

/// Renders the prompt text and its ordered attachment list.
pub fn build_prompt(
    spec: &PromptSpec,
    stimuli: Stimuli<'_>,
    exemplar: Option<&Exemplar>,
) -> Result<Prompt> {
    spec.validate()?;
    check_block(spec, stimuli.reference, stimuli.images.len(), "test")?;

    let mut attachments = Vec::with_capacity(spec.attachment_count());
    let mut slots: Vec<(&str, String)> = Vec::new();
    match (spec.strategy, exemplar) {
        (NlpStrategy::InContext, None) => {
            return Err(Error::Prompt(format!(
                "{}: in-context prompt needs an exemplar",
                spec.template_id()
            )))
        }
        (NlpStrategy::InContext, Some(ex)) => {
            check_block(spec, ex.reference.as_deref(), ex.images.len(), "exemplar")?;
            let value = match (&ex.value, spec.method) {
                (ExemplarValue::Score(s), StimulusMethod::Single) => {
                    if !(0.0..=100.0).contains(s) {
                        return Err(Error::Prompt(format!(
                            "exemplar score {s} outside [0, 100]"
                        )));
                    }
                    ("exemplar_score", format_score(*s))
                }
                (ExemplarValue::Comparison(c), StimulusMethod::Double) => (
                    "exemplar_comparison",
                    comparison_clause(spec.scenario, *c).to_owned(),
                ),
                (ExemplarValue::Ranking(r), StimulusMethod::Multiple) => {
                    if r.len() != spec.list_size || r.iter().any(|&v| v as usize >= spec.list_size)
                    {
                        return Err(Error::Prompt(format!(
                            "exemplar ranking {r:?} is not a ranking of {} images",
                            spec.list_size
                        )));
                    }
                    ("exemplar_ranking", exemplar_ranking(spec, r))
                }
                (value, method) => {
                    return Err(Error::Prompt(format!(
                        "exemplar value {value:?} does not fit the {} method",
                        method.as_str()
                    )))
                }
            };
            slots.push(value);
            attachments.extend(ex.reference.iter().cloned());
            attachments.extend(ex.images.iter().cloned());
        }
        (_, Some(_)) => {
            return Err(Error::Prompt(format!(
                "{}: exemplars are only used with in-context prompting",
                spec.template_id()
            )))
        }
        (_, None) => {}
    }
    attachments.extend(stimuli.reference.map(str::to_owned));
    attachments.extend(stimuli.images.iter().cloned());

    if spec.method == StimulusMethod::Multiple {
        let l = spec.list_size;
        let fr = spec.scenario == Scenario::FullReference;
        let in_context = spec.strategy == NlpStrategy::InContext;
        slots.push(("shown", templates::cardinal(attachments.len()).to_owned()));
        slots.push(("list", templates::cardinal(l).to_owned()));
        slots.push(("max_rank", (l - 1).to_string()));
        slots.push(("format_labels", format_labels(spec)));
        slots.push((
            "ord_last_test",
            templates::ordinal(attachments.len()).to_owned(),
        ));
        let block = l + usize::from(fr);
        slots.push(("ord_ex_last", templates::ordinal(block).to_owned()));
        if in_context {
            slots.push(("ord_ref", templates::ordinal(block + 1).to_owned()));
            slots.push((
                "ord_first_test",
                templates::ordinal(block + 1 + usize::from(fr)).to_owned(),
            ));
        }
    }

    let template = templates::template(spec.scenario, spec.method, spec.strategy);
    Ok(Prompt {
        template_id: spec.template_id(),
        text: templates::render(template, &slots),
        attachments,
    })
}

/// One pairwise result between list positions `first < second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseOutcome {
    pub first: usize,
    pub second: usize,
    pub result: Comparison,
}

/// Expands a ranking of `L` stimuli into its `L·(L−1)/2` pairwise outcomes.
/// A higher rank value is the preferred stimulus; equal ranks are ties.
pub fn expand_ranking(ranking: &[u32], list_size: usize) -> Result<Vec<PairwiseOutcome>> {
    if ranking.len() != list_size {
        return Err(Error::Prompt(format!(
            "ranking has {} entries for a list of {list_size}",
            ranking.len()
        )));
    }
    if let Some(bad) = ranking.iter().find(|&&r| r as usize >= list_size) {
        return Err(Error::Prompt(format!(
            "rank {bad} outside [0, {}]",
            list_size - 1
        )));
    }
    let mut out = Vec::with_capacity(list_size * list_size.saturating_sub(1) / 2);
    for first in 0..list_size {
        for second in first + 1..list_size {
            let result = match ranking[first].cmp(&ranking[second]) {
                std::cmp::Ordering::Greater => Comparison::FirstBetter,
                std::cmp::Ordering::Less => Comparison::SecondBetter,
                std::cmp::Ordering::Equal => Comparison::Tie,
            };
            out.push(PairwiseOutcome {
                first,
                second,
                result,
            });
        }
    }
    Ok(out)
}

/// All eighteen (scenario, method, strategy) combinations.
pub fn all_specs() -> Vec<PromptSpec> {
    let mut specs = Vec::with_capacity(18);
    for scenario in [Scenario::FullReference, Scenario::NoReference] {
        for method in StimulusMethod::ALL {
            for strategy in NlpStrategy::ALL {
                specs.push(PromptSpec::new(method, strategy, scenario));
            }
        }
    }
    specs
}
