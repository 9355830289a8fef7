//! Message formats for the two agents.
//!
//! The hypothesis agent answers in a two-line `Hypothesis: ... / Confidence: ...`
//! format with an integer confidence on a 0-10 scale. The decision agent
//! answers in a Thought / Action / Action Input block terminated by a
//! `<submit>` sentinel. Both prompt templates live under `assets/` and are
//! instantiated here; parsing is total and tolerant of case and whitespace,
//! but strict about names: an action input must match a catalog entry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TestCatalog;
use crate::env::ObservedState;

/// Clip constant for the level -> probability map. Keeps confidences inside
/// the open interval (0, 1) so log-based rewards stay finite.
pub const CONFIDENCE_EPSILON: f64 = 0.05;

/// Sentinel ending a decision-agent generation.
pub const SUBMIT_SENTINEL: &str = "<submit>";

pub const HYPOTHESIS_PROMPT_TEMPLATE: &str =
    include_str!("../assets/hypothesis_prompt.txt");
pub const DECISION_PROMPT_TEMPLATE: &str =
    include_str!("../assets/decision_prompt.txt");

/// Line introducing the observed state in the hypothesis template. The remote
/// adapter splits the rendered prompt here to separate the system message
/// from the per-step user turn.
pub const HYPOTHESIS_STATE_MARKER: &str =
    "Here is some information on the patient:\n";
pub const DECISION_STATE_MARKER: &str =
    "Here is some context on the patient:\n";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("confidence level {0} is outside 0..=10")]
    LevelOutOfRange(u8),
    #[error("class index {0} is outside the catalog")]
    ClassOutOfRange(usize),
}

/// Maps a verbalized 0-10 confidence level to a probability, linearly with
/// clipping: `clamp(level/10, 0.05, 0.95)`.
pub fn level_to_confidence(level: u8) -> Result<f64, ProtocolError> {
    if level > 10 {
        return Err(ProtocolError::LevelOutOfRange(level));
    }
    let c = f64::from(level) / 10.0;
    Ok(c.clamp(CONFIDENCE_EPSILON, 1.0 - CONFIDENCE_EPSILON))
}

/// A parsed hypothesis-agent answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutput {
    pub class_idx: usize,
    /// Canonical class label from the catalog.
    pub hypothesis: String,
    /// Raw verbalized confidence level, 0..=10.
    pub level: u8,
    /// `level_to_confidence(level)`.
    pub confidence: f64,
}

impl HypothesisOutput {
    pub fn new(
        class_idx: usize,
        level: u8,
        catalog: &TestCatalog,
    ) -> Result<Self, ProtocolError> {
        let hypothesis = catalog
            .classes()
            .get(class_idx)
            .ok_or(ProtocolError::ClassOutOfRange(class_idx))?
            .clone();
        Ok(Self {
            class_idx,
            hypothesis,
            level,
            confidence: level_to_confidence(level)?,
        })
    }

    /// Same hypothesis with a different confidence level (used by confidence
    /// exploration).
    pub fn with_level(&self, level: u8) -> Result<Self, ProtocolError> {
        Ok(Self {
            class_idx: self.class_idx,
            hypothesis: self.hypothesis.clone(),
            level,
            confidence: level_to_confidence(level)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionKind {
    Test,
    Diagnosis,
}

/// A parsed decision-agent answer. `input` is canonicalized to the catalog
/// spelling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionOutput {
    pub thought: Option<String>,
    pub kind: DecisionKind,
    pub input: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseErrorReason {
    MissingField,
    UnknownClass,
    UnknownTest,
    BadConfidence,
    NoSentinel,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{reason:?} at {span:?}")]
pub struct ParseError {
    pub reason: ParseErrorReason,
    /// The offending text span (or the name of the missing field).
    pub span: String,
}

impl ParseError {
    fn new(reason: ParseErrorReason, span: impl Into<String>) -> Self {
        Self {
            reason,
            span: span.into(),
        }
    }
}

fn join_lines(items: &[String]) -> String {
    items.join("\n")
}

/// Instantiates the hypothesis-agent prompt for an observed state.
pub fn render_hypothesis_prompt(
    state: &ObservedState,
    catalog: &TestCatalog,
) -> String {
    HYPOTHESIS_PROMPT_TEMPLATE
        .replace("{class_list}", &join_lines(catalog.classes()))
        .replace("{observed_state}", &state.serialize_text())
}

/// Instantiates the decision-agent prompt for an observed state and the
/// current hypothesis. The confidence slot carries the raw 0-10 level.
pub fn render_decision_prompt(
    state: &ObservedState,
    hyp: &HypothesisOutput,
    catalog: &TestCatalog,
) -> String {
    DECISION_PROMPT_TEMPLATE
        .replace("{class_list}", &join_lines(catalog.classes()))
        .replace("{test_list}", &join_lines(catalog.tests()))
        .replace("{observed_state}", &state.serialize_text())
        .replace("{hypothesis}", &hyp.hypothesis)
        .replace("{confidence}", &hyp.level.to_string())
}

/// Renders a hypothesis answer in the wire format accepted by
/// [`parse_hypothesis`].
pub fn format_hypothesis_answer(output: &HypothesisOutput) -> String {
    format!(
        "Hypothesis: {}\nConfidence: {}",
        output.hypothesis, output.level
    )
}

/// Renders a decision answer in the wire format accepted by
/// [`parse_decision`].
pub fn format_decision_answer(output: &DecisionOutput) -> String {
    let kind = match output.kind {
        DecisionKind::Test => "Test",
        DecisionKind::Diagnosis => "Diagnosis",
    };
    let thought = output.thought.as_deref().unwrap_or("");
    format!(
        "Thought: {thought}\nAction: {kind}\nAction Input: {}\n{SUBMIT_SENTINEL}",
        output.input
    )
}

/// If `line` starts (after leading whitespace) with `field` followed by an
/// optional gap and a colon, returns the value after the colon, trimmed.
/// `field` must be ASCII.
fn strip_field<'t>(line: &'t str, field: &str) -> Option<&'t str> {
    let trimmed = line.trim_start();
    let bytes = trimmed.as_bytes();
    let fb = field.as_bytes();
    if bytes.len() < fb.len() || !bytes[..fb.len()].eq_ignore_ascii_case(fb) {
        return None;
    }
    // The matched prefix is ASCII, so this slice is on a char boundary.
    let rest = trimmed[fb.len()..].trim_start();
    rest.strip_prefix(':').map(str::trim)
}

/// First occurrence of a field in `text`, with the byte offset one past the
/// end of its line.
fn find_field<'t>(text: &'t str, field: &str) -> Option<(&'t str, usize)> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        offset += line.len();
        if let Some(value) = strip_field(line.trim_end_matches('\n'), field) {
            return Some((value, offset));
        }
    }
    None
}

/// Extracts the first `Hypothesis:` and `Confidence:` lines from a
/// hypothesis-agent generation.
pub fn parse_hypothesis(
    text: &str,
    catalog: &TestCatalog,
) -> Result<HypothesisOutput, ParseError> {
    let (hyp_value, _) = find_field(text, "Hypothesis").ok_or_else(|| {
        ParseError::new(ParseErrorReason::MissingField, "Hypothesis")
    })?;
    let (conf_value, _) = find_field(text, "Confidence").ok_or_else(|| {
        ParseError::new(ParseErrorReason::MissingField, "Confidence")
    })?;
    let class_idx = catalog.match_class(hyp_value).ok_or_else(|| {
        ParseError::new(ParseErrorReason::UnknownClass, hyp_value)
    })?;
    let level: u8 = conf_value
        .parse::<i64>()
        .ok()
        .filter(|l| (0..=10).contains(l))
        .map(|l| l as u8)
        .ok_or_else(|| {
            ParseError::new(ParseErrorReason::BadConfidence, conf_value)
        })?;
    HypothesisOutput::new(class_idx, level, catalog).map_err(|_| {
        ParseError::new(ParseErrorReason::BadConfidence, conf_value)
    })
}

/// Extracts the Thought / Action / Action Input block preceding the first
/// `<submit>` sentinel. The sentinel may be omitted only when the action
/// input line closes the generation.
pub fn parse_decision(
    text: &str,
    catalog: &TestCatalog,
) -> Result<DecisionOutput, ParseError> {
    let (region, has_sentinel) = match text.find(SUBMIT_SENTINEL) {
        Some(pos) => (&text[..pos], true),
        None => (text, false),
    };

    let thought = find_field(region, "Thought").map(|(v, _)| v.to_string());
    let action = find_action_field(region).ok_or_else(|| {
        ParseError::new(ParseErrorReason::MissingField, "Action")
    })?;
    let (input_value, input_end) = find_field(region, "Action Input")
        .ok_or_else(|| {
            ParseError::new(ParseErrorReason::MissingField, "Action Input")
        })?;

    if !has_sentinel && !region[input_end..].trim().is_empty() {
        return Err(ParseError::new(
            ParseErrorReason::NoSentinel,
            region[input_end..].trim(),
        ));
    }

    let kind = if action.eq_ignore_ascii_case("test") {
        DecisionKind::Test
    } else if action.eq_ignore_ascii_case("diagnosis") {
        DecisionKind::Diagnosis
    } else {
        return Err(ParseError::new(ParseErrorReason::MissingField, action));
    };

    let input = match kind {
        DecisionKind::Test => {
            let idx = catalog.match_test(input_value).ok_or_else(|| {
                ParseError::new(ParseErrorReason::UnknownTest, input_value)
            })?;
            catalog.tests()[idx].clone()
        }
        DecisionKind::Diagnosis => {
            let idx = catalog.match_class(input_value).ok_or_else(|| {
                ParseError::new(ParseErrorReason::UnknownClass, input_value)
            })?;
            catalog.classes()[idx].clone()
        }
    };

    Ok(DecisionOutput {
        thought,
        kind,
        input,
    })
}

/// The `Action:` field, skipping `Action Input:` lines.
fn find_action_field(text: &str) -> Option<&str> {
    for line in text.lines() {
        if strip_field(line, "Action Input").is_some() {
            continue;
        }
        if let Some(value) = strip_field(line, "Action") {
            return Some(value);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reset;
    use crate::env::PatientRecord;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn catalog() -> TestCatalog {
        TestCatalog::default_abdominal()
    }

    fn fresh_state() -> ObservedState {
        let record = PatientRecord {
            id: "p0".into(),
            diagnosis: "appendicitis".into(),
            history: "Patient admitted with abdominal pain.".into(),
            tests: BTreeMap::new(),
        };
        reset(&record)
    }

    #[test]
    fn confidence_map_hits_midpoint_and_clip_bounds() {
        assert_eq!(level_to_confidence(5).unwrap(), 0.5);
        assert_eq!(level_to_confidence(0).unwrap(), 0.05);
        assert_eq!(level_to_confidence(10).unwrap(), 0.95);
        assert!(level_to_confidence(11).is_err());
    }

    #[test]
    fn confidence_map_is_monotone_within_bounds() {
        let mut prev = 0.0;
        for level in 0..=10u8 {
            let c = level_to_confidence(level).unwrap();
            assert!(c >= prev);
            assert!((0.05..=0.95).contains(&c));
            prev = c;
        }
    }

    #[test]
    fn hypothesis_prompt_ends_with_history_for_fresh_state() {
        let state = fresh_state();
        let prompt = render_hypothesis_prompt(&state, &catalog());
        assert!(prompt.ends_with("Patient admitted with abdominal pain."));
        assert!(prompt.contains("appendicitis\ncholecystitis\ndiverticulitis\npancreatitis"));
    }

    #[test]
    fn hypothesis_prompt_includes_revealed_results() {
        let mut state = fresh_state();
        state
            .revealed
            .insert("Ultrasound".into(), "Ultrasound: finding_2".into());
        let prompt = render_hypothesis_prompt(&state, &catalog());
        assert!(prompt.contains("Ultrasound: finding_2"));
    }

    #[test]
    fn decision_prompt_lists_tests_and_carries_hypothesis() {
        let cat = catalog();
        let hyp = HypothesisOutput::new(0, 7, &cat).unwrap();
        let state = fresh_state();
        let prompt = render_decision_prompt(&state, &hyp, &cat);
        for name in cat.tests() {
            assert!(prompt.contains(name.as_str()), "missing {name}");
        }
        assert!(prompt
            .ends_with("The current hypothesis is appendicitis with confidence 7."));
        // Purity.
        assert_eq!(prompt, render_decision_prompt(&state, &hyp, &cat));
    }

    #[test]
    fn parses_simple_hypothesis_answer() {
        let out =
            parse_hypothesis("Hypothesis: appendicitis\nConfidence: 7", &catalog())
                .unwrap();
        assert_eq!(out.class_idx, 0);
        assert_eq!(out.level, 7);
        assert_eq!(out.confidence, 0.7);
    }

    #[test]
    fn unknown_class_and_missing_fields_are_classified() {
        let cat = catalog();
        let err =
            parse_hypothesis("Hypothesis: influenza\nConfidence: 7", &cat)
                .unwrap_err();
        assert_eq!(err.reason, ParseErrorReason::UnknownClass);
        let err = parse_hypothesis("Confidence: 7", &cat).unwrap_err();
        assert_eq!(err.reason, ParseErrorReason::MissingField);
        let err = parse_hypothesis(
            "Hypothesis: appendicitis\nConfidence: eleven",
            &cat,
        )
        .unwrap_err();
        assert_eq!(err.reason, ParseErrorReason::BadConfidence);
        let err = parse_hypothesis(
            "Hypothesis: appendicitis\nConfidence: 11",
            &cat,
        )
        .unwrap_err();
        assert_eq!(err.reason, ParseErrorReason::BadConfidence);
    }

    #[test]
    fn hypothesis_answers_round_trip_for_all_classes_and_levels() {
        let cat = catalog();
        for class_idx in 0..cat.n_classes() {
            for level in 0..=10u8 {
                let out = HypothesisOutput::new(class_idx, level, &cat).unwrap();
                let parsed =
                    parse_hypothesis(&format_hypothesis_answer(&out), &cat)
                        .unwrap();
                assert_eq!(parsed, out);
            }
        }
    }

    #[test]
    fn parses_transcript_example_test_action() {
        let text = "Thought: Given the symptoms, I should order a Physical Examination first.\nAction: Test\nAction Input: Physical Examination\n<submit>";
        let out = parse_decision(text, &catalog()).unwrap();
        assert_eq!(out.kind, DecisionKind::Test);
        assert_eq!(out.input, "Physical Examination");
        assert!(out.thought.unwrap().contains("Physical Examination"));
    }

    #[test]
    fn parses_transcript_example_diagnosis_action() {
        let text = "Thought: The CT shows clear inflammation of the appendix.\nAction: Diagnosis\nAction Input: appendicitis\n<submit>";
        let out = parse_decision(text, &catalog()).unwrap();
        assert_eq!(out.kind, DecisionKind::Diagnosis);
        assert_eq!(out.input, "appendicitis");
    }

    #[test]
    fn decorated_test_names_are_rejected() {
        let text = "Action: Test\nAction Input: CT scan of abdomen\n<submit>";
        let err = parse_decision(text, &catalog()).unwrap_err();
        assert_eq!(err.reason, ParseErrorReason::UnknownTest);
    }

    #[test]
    fn missing_sentinel_is_tolerated_at_end_of_text() {
        let text = "Action: Test\nAction Input: CT";
        let out = parse_decision(text, &catalog()).unwrap();
        assert_eq!(out.input, "CT");
    }

    #[test]
    fn trailing_prose_without_sentinel_is_no_sentinel() {
        let text = "Action: Test\nAction Input: CT\nNow let me think about what comes next.";
        let err = parse_decision(text, &catalog()).unwrap_err();
        assert_eq!(err.reason, ParseErrorReason::NoSentinel);
    }

    #[test]
    fn only_the_first_field_occurrence_counts() {
        let cat = catalog();
        let text = "Hypothesis: appendicitis\nConfidence: 3\nHypothesis: pancreatitis\nConfidence: 9";
        let out = parse_hypothesis(text, &cat).unwrap();
        assert_eq!(out.hypothesis, "appendicitis");
        assert_eq!(out.level, 3);

        let text = "Action: Test\nAction Input: CT\n<submit>\nAction: Diagnosis\nAction Input: pancreatitis\n<submit>";
        let out = parse_decision(text, &cat).unwrap();
        assert_eq!(out.kind, DecisionKind::Test);
        assert_eq!(out.input, "CT");
    }

    proptest! {
        #[test]
        fn parsing_is_total(text in ".{0,400}") {
            let cat = catalog();
            let _ = parse_hypothesis(&text, &cat);
            let _ = parse_decision(&text, &cat);
        }

        #[test]
        fn parsed_decisions_stay_inside_the_catalog(text in ".{0,400}") {
            let cat = catalog();
            if let Ok(out) = parse_decision(&text, &cat) {
                match out.kind {
                    DecisionKind::Test => {
                        prop_assert!(cat.test_index(&out.input).is_some())
                    }
                    DecisionKind::Diagnosis => {
                        prop_assert!(cat.class_index(&out.input).is_some())
                    }
                }
            }
        }
    }
}
