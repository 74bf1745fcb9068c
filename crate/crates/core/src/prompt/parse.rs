use std::sync::LazyLock;

use regex::Regex;

use super::{ranking_label, Comparison, ParsedOutcome, PromptSpec, StimulusMethod};

static SCORE_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)score\s*:").unwrap());
static DESCRIPTION_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)description\s*:").unwrap());
static LEADING_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\[?\s*\**\s*([-+]?\d+(?:\.\d+)?)").unwrap());
static BRACKETED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\[([^\]]*)\]").unwrap());

/// Renders an outcome in the answer format the prompt asks for.
pub fn format_outcome(outcome: &ParsedOutcome, spec: &PromptSpec) -> String {
    let (payload, description) = match outcome {
        ParsedOutcome::Score {
            score, description, ..
        } => (format!("{score}"), description),
        ParsedOutcome::Comparison {
            comparison,
            description,
        } => (comparison.code().to_string(), description),
        ParsedOutcome::Ranking {
            ranking,
            description,
        } => {
            let items: Vec<String> = ranking
                .iter()
                .enumerate()
                .map(|(pos, r)| format!("{}: {r}", ranking_label(spec, pos)))
                .collect();
            (format!("[{}]", items.join(", ")), description)
        }
        ParsedOutcome::Invalid { raw, .. } => return raw.clone(),
    };
    match description {
        Some(d) => format!("Description: {d}. Score: {payload}"),
        None => format!("Score: {payload}"),
    }
}

enum Payload {
    Score(f64),
    Comparison(Comparison),
    Ranking(Vec<u32>),
}

fn parse_payload(payload: &str, spec: &PromptSpec) -> Result<Payload, String> {
    match spec.method {
        StimulusMethod::Single => {
            let caps = LEADING_NUMBER
                .captures(payload)
                .ok_or_else(|| "no number after `Score:`".to_owned())?;
            let value: f64 = caps[1].parse().map_err(|e| format!("{e}"))?;
            if !value.is_finite() {
                return Err("non-finite score".into());
            }
            Ok(Payload::Score(value))
        }
        StimulusMethod::Double => {
            let caps = LEADING_NUMBER
                .captures(payload)
                .ok_or_else(|| "no comparison code after `Score:`".to_owned())?;
            let value: f64 = caps[1].parse().map_err(|e| format!("{e}"))?;
            if value.fract() != 0.0 || !(0.0..=2.0).contains(&value) {
                return Err(format!("comparison code {value} not in {{0, 1, 2}}"));
            }
            Ok(Payload::Comparison(
                Comparison::from_code(value as u8).expect("checked range"),
            ))
        }
        StimulusMethod::Multiple => {
            let caps = BRACKETED
                .captures(payload)
                .ok_or_else(|| "no bracketed ranking after `Score:`".to_owned())?;
            let ranking = caps[1]
                .split(',')
                .map(str::trim)
                .filter(|item| !item.is_empty() && *item != "...")
                .map(|item| {
                    let value = item.rsplit(':').next().unwrap_or(item).trim();
                    value
                        .parse::<u32>()
                        .map_err(|_| format!("rank `{value}` is not a non-negative integer"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if ranking.len() != spec.list_size {
                return Err(format!(
                    "expected {} ranks, found {}",
                    spec.list_size,
                    ranking.len()
                ));
            }
            if let Some(bad) = ranking.iter().find(|&&r| r as usize >= spec.list_size) {
                return Err(format!("rank {bad} outside [0, {}]", spec.list_size - 1));
            }
            Ok(Payload::Ranking(ranking))
        }
    }
}

fn description_before(text: &str, marker_start: usize) -> Option<String> {
    let head = &text[..marker_start];
    let m = DESCRIPTION_MARKER.find_iter(head).last()?;
    let desc = head[m.end()..].trim();
    let desc = desc.strip_suffix('.').unwrap_or(desc).trim();
    (!desc.is_empty()).then(|| desc.to_owned())
}

/// Extracts the last well-formed `Score:` answer from a model response.
///
/// Never fails: anything unparseable comes back as [`ParsedOutcome::Invalid`]
/// with the raw text kept.
pub fn parse_response(text: &str, spec: &PromptSpec) -> ParsedOutcome {
    let markers: Vec<_> = SCORE_MARKER.find_iter(text).collect();
    let mut reason = "no `Score:` marker".to_owned();
    for (k, marker) in markers.iter().enumerate().rev() {
        let end = markers.get(k + 1).map_or(text.len(), |next| next.start());
        let payload = &text[marker.end()..end];
        match parse_payload(payload, spec) {
            Ok(parsed) => {
                let description = description_before(text, marker.start());
                return match parsed {
                    Payload::Score(value) => {
                        let clamped = value.clamp(0.0, 100.0);
                        ParsedOutcome::Score {
                            score: clamped,
                            clamped: clamped != value,
                            description,
                        }
                    }
                    Payload::Comparison(comparison) => ParsedOutcome::Comparison {
                        comparison,
                        description,
                    },
                    Payload::Ranking(ranking) => ParsedOutcome::Ranking {
                        ranking,
                        description,
                    },
                };
            }
            Err(why) => reason = why,
        }
    }
    ParsedOutcome::Invalid {
        raw: text.to_owned(),
        reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Scenario;
    use crate::prompt::NlpStrategy;

    fn spec(method: StimulusMethod, strategy: NlpStrategy) -> PromptSpec {
        PromptSpec::new(method, strategy, Scenario::NoReference)
    }

    #[test]
    fn plain_score() {
        let out = parse_response(
            "Score: 85",
            &spec(StimulusMethod::Single, NlpStrategy::Standard),
        );
        assert_eq!(
            out,
            ParsedOutcome::Score {
                score: 85.0,
                clamped: false,
                description: None
            }
        );
    }

    #[test]
    fn cot_tie() {
        let out = parse_response(
            "Description: both look equally noisy. Score: 2",
            &spec(StimulusMethod::Double, NlpStrategy::Cot),
        );
        assert_eq!(
            out,
            ParsedOutcome::Comparison {
                comparison: Comparison::Tie,
                description: Some("both look equally noisy".into())
            }
        );
    }

    #[test]
    fn ranking_list() {
        let out = parse_response(
            "Score: [first: 2, second: 0, third: 1, fourth: 3]",
            &spec(StimulusMethod::Multiple, NlpStrategy::Standard),
        );
        assert!(
            matches!(out, ParsedOutcome::Ranking { ranking, .. } if ranking == vec![2, 0, 1, 3])
        );
    }

    #[test]
    fn fr_ranking_labels() {
        let s = PromptSpec::new(
            StimulusMethod::Multiple,
            NlpStrategy::Standard,
            Scenario::FullReference,
        );
        let out = parse_response(
            "Score: [first distorted image: 1, second distorted image: 1, third distorted image:0, fourth distorted image: 3]",
            &s,
        );
        assert!(
            matches!(out, ParsedOutcome::Ranking { ranking, .. } if ranking == vec![1, 1, 0, 3])
        );
    }

    #[test]
    fn last_score_wins() {
        let s = spec(StimulusMethod::Single, NlpStrategy::Cot);
        let out = parse_response("Description: a Score: 30 would be harsh. Score: 55.5", &s);
        assert!(matches!(out, ParsedOutcome::Score { score, .. } if score == 55.5));
        // a malformed trailing marker falls back to the previous well-formed one
        let out = parse_response("Score: 40. Final Score: unsure", &s);
        assert!(matches!(out, ParsedOutcome::Score { score, .. } if score == 40.0));
    }

    #[test]
    fn clamps_out_of_range() {
        let out = parse_response(
            "Score: 120",
            &spec(StimulusMethod::Single, NlpStrategy::Standard),
        );
        assert_eq!(
            out,
            ParsedOutcome::Score {
                score: 100.0,
                clamped: true,
                description: None
            }
        );
    }

    #[test]
    fn garbage_is_invalid_not_error() {
        let s = spec(StimulusMethod::Double, NlpStrategy::Standard);
        for text in ["I cannot help with that.", "Score: 3", "Score: 1.5", ""] {
            let out = parse_response(text, &s);
            assert!(
                matches!(&out, ParsedOutcome::Invalid { raw, .. } if raw == text),
                "{text}: {out:?}"
            );
        }
        let m = spec(StimulusMethod::Multiple, NlpStrategy::Standard);
        assert!(!parse_response("Score: [first: 1, second: 2]", &m).is_valid());
        assert!(
            !parse_response("Score: [first: 1, second: 2, third: 0, fourth: 4]", &m).is_valid()
        );
    }
}
