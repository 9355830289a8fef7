//! Episodic diagnosis environment.
//!
//! An episode starts from a patient's history, reveals one test result per
//! accepted request, and terminates when a diagnosis is committed, the retry
//! budget is burned by rejected actions, or the step budget runs out. The
//! environment is deterministic given the patient record: replaying a recorded
//! action sequence reproduces the trace byte for byte.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TestCatalog;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record {id}: diagnosis {diagnosis:?} is not a catalog class")]
    UnknownDiagnosis { id: String, diagnosis: String },
    #[error("record {id}: test {test:?} is not a catalog test")]
    UnknownTest { id: String, test: String },
    #[error("record {id}: history must be non-empty")]
    EmptyHistory { id: String },
}

#[derive(Debug, Error)]
pub enum EnvUsageError {
    #[error("step called on a terminal episode")]
    SteppedTerminal,
}

/// One patient: ground-truth diagnosis, admission history, and the test
/// results that exist for this patient. A test absent from `tests` is
/// unavailable for the whole episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub id: String,
    pub diagnosis: String,
    pub history: String,
    pub tests: BTreeMap<String, String>,
}

impl PatientRecord {
    pub fn validate(&self, catalog: &TestCatalog) -> Result<(), RecordError> {
        if catalog.class_index(&self.diagnosis).is_none() {
            return Err(RecordError::UnknownDiagnosis {
                id: self.id.clone(),
                diagnosis: self.diagnosis.clone(),
            });
        }
        if self.history.is_empty() {
            return Err(RecordError::EmptyHistory {
                id: self.id.clone(),
            });
        }
        for name in self.tests.keys() {
            if catalog.test_index(name).is_none() {
                return Err(RecordError::UnknownTest {
                    id: self.id.clone(),
                    test: name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Default reply templates. These strings are part of the wire contract and
/// are overridable through [`EpisodeConfig`].
pub const UNAVAILABLE_TEMPLATE: &str =
    "The requested test is not available. Please choose a different action.";
pub const DUPLICATE_TEMPLATE: &str =
    "This test was already requested. Please choose a different action.";
pub const INVALID_TEMPLATE: &str =
    "Invalid action. Please choose a different action.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Maximum environment transitions before the episode is cut off.
    pub step_budget: u32,
    /// Number of consecutive rejected actions that ends the episode.
    pub retry_budget: u32,
    pub unavailable_template: String,
    pub duplicate_template: String,
    pub invalid_template: String,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            step_budget: 25,
            retry_budget: 3,
            unavailable_template: UNAVAILABLE_TEMPLATE.to_string(),
            duplicate_template: DUPLICATE_TEMPLATE.to_string(),
            invalid_template: INVALID_TEMPLATE.to_string(),
        }
    }
}

/// The information revealed so far: what both agents are allowed to see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedState {
    pub history: String,
    /// Revealed test results in reveal order.
    pub revealed: IndexMap<String, String>,
    /// Every test name asked for so far, including rejected attempts.
    pub requested: BTreeSet<String>,
    /// Number of environment transitions taken.
    pub step: u32,
    /// Current run of consecutive rejected actions.
    pub retries_used: u32,
}

impl ObservedState {
    /// Text form used in prompts: the history, then each revealed result in
    /// reveal order, verbatim.
    pub fn serialize_text(&self) -> String {
        if self.revealed.is_empty() {
            return self.history.clone();
        }
        let mut out = self.history.clone();
        out.push_str("\n\n");
        let lines: Vec<&str> =
            self.revealed.values().map(|s| s.as_str()).collect();
        out.push_str(&lines.join("\n"));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvAction {
    RequestTest(String),
    Diagnose(String),
    Malformed(String),
}

impl std::fmt::Display for EnvAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvAction::RequestTest(t) => write!(f, "Test: {t}"),
            EnvAction::Diagnose(c) => write!(f, "Diagnosis: {c}"),
            EnvAction::Malformed(r) => write!(f, "Malformed: {r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationKind {
    /// A requested result was revealed; the text is the result verbatim.
    Revealed,
    /// The test exists in the catalog but not for this patient.
    Unavailable,
    /// The test was already asked for in this episode.
    Duplicate,
    /// Unknown test, unknown class, or malformed action.
    Invalid,
    /// A diagnosis was committed; the text is the predicted class.
    Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    CorrectDiagnosis,
    WrongDiagnosis,
    /// Retry budget exhausted or episode aborted by the harness.
    InvalidTermination,
    /// Step budget exhausted without a diagnosis.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub kind: OutcomeKind,
    pub predicted: Option<String>,
    /// Number of revealed tests at termination. Rejected requests do not count.
    pub tests_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub terminal: bool,
    pub outcome: Option<EpisodeOutcome>,
}

/// A single episode over one patient record. Single-owner state machine; all
/// randomness lives with the caller.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    record: &'a PatientRecord,
    catalog: &'a TestCatalog,
    config: &'a EpisodeConfig,
    state: ObservedState,
    outcome: Option<EpisodeOutcome>,
}

/// Builds the initial observed state for a record: history only, nothing
/// revealed, nothing requested.
pub fn reset(record: &PatientRecord) -> ObservedState {
    ObservedState {
        history: record.history.clone(),
        revealed: IndexMap::new(),
        requested: BTreeSet::new(),
        step: 0,
        retries_used: 0,
    }
}

/// Tests that still have an unrevealed result for this patient. Debug/oracle
/// support only; agents never see this.
pub fn available_tests(
    state: &ObservedState,
    record: &PatientRecord,
) -> BTreeSet<String> {
    record
        .tests
        .keys()
        .filter(|name| !state.revealed.contains_key(*name))
        .cloned()
        .collect()
}

impl<'a> Episode<'a> {
    pub fn start(
        record: &'a PatientRecord,
        catalog: &'a TestCatalog,
        config: &'a EpisodeConfig,
    ) -> Result<Self, RecordError> {
        record.validate(catalog)?;
        Ok(Self {
            record,
            catalog,
            config,
            state: reset(record),
            outcome: None,
        })
    }

    pub fn state(&self) -> &ObservedState {
        &self.state
    }

    pub fn record(&self) -> &PatientRecord {
        self.record
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn outcome(&self) -> Option<&EpisodeOutcome> {
        self.outcome.as_ref()
    }

    /// Force-terminate the episode from outside the action loop (e.g. an
    /// agent backend failed permanently).
    pub fn abort_invalid(&mut self) -> EpisodeOutcome {
        let outcome = EpisodeOutcome {
            kind: OutcomeKind::InvalidTermination,
            predicted: None,
            tests_used: self.state.revealed.len(),
        };
        self.outcome = Some(outcome.clone());
        outcome
    }

    /// Advance the episode by one action.
    pub fn step(
        &mut self,
        action: &EnvAction,
    ) -> Result<StepResult, EnvUsageError> {
        if self.is_terminal() {
            return Err(EnvUsageError::SteppedTerminal);
        }
        self.state.step += 1;

        let observation = match action {
            EnvAction::Diagnose(class) => {
                if let Some(idx) = self.catalog.class_index(class) {
                    let predicted = self.catalog.classes()[idx].clone();
                    let kind = if predicted == self.record.diagnosis {
                        OutcomeKind::CorrectDiagnosis
                    } else {
                        OutcomeKind::WrongDiagnosis
                    };
                    self.outcome = Some(EpisodeOutcome {
                        kind,
                        predicted: Some(predicted.clone()),
                        tests_used: self.state.revealed.len(),
                    });
                    return Ok(StepResult {
                        observation: Observation {
                            kind: ObservationKind::Diagnosis,
                            text: predicted,
                        },
                        terminal: true,
                        outcome: self.outcome.clone(),
                    });
                }
                self.reject(ObservationKind::Invalid)
            }
            EnvAction::RequestTest(name) => {
                match self.catalog.test_index(name) {
                    None => self.reject(ObservationKind::Invalid),
                    Some(_) => {
                        if self.state.requested.contains(name) {
                            self.reject(ObservationKind::Duplicate)
                        } else {
                            self.state.requested.insert(name.clone());
                            match self.record.tests.get(name) {
                                Some(result) => {
                                    self.state
                                        .revealed
                                        .insert(name.clone(), result.clone());
                                    self.state.retries_used = 0;
                                    Observation {
                                        kind: ObservationKind::Revealed,
                                        text: result.clone(),
                                    }
                                }
                                None => self.reject(ObservationKind::Unavailable),
                            }
                        }
                    }
                }
            }
            EnvAction::Malformed(_) => self.reject(ObservationKind::Invalid),
        };

        // Budget checks, retries first.
        if self.state.retries_used >= self.config.retry_budget {
            self.outcome = Some(EpisodeOutcome {
                kind: OutcomeKind::InvalidTermination,
                predicted: None,
                tests_used: self.state.revealed.len(),
            });
        } else if self.state.step > self.config.step_budget {
            self.outcome = Some(EpisodeOutcome {
                kind: OutcomeKind::BudgetExhausted,
                predicted: None,
                tests_used: self.state.revealed.len(),
            });
        }

        Ok(StepResult {
            observation,
            terminal: self.outcome.is_some(),
            outcome: self.outcome.clone(),
        })
    }

    fn reject(&mut self, kind: ObservationKind) -> Observation {
        self.state.retries_used += 1;
        let text = match kind {
            ObservationKind::Unavailable => &self.config.unavailable_template,
            ObservationKind::Duplicate => &self.config.duplicate_template,
            _ => &self.config.invalid_template,
        };
        Observation {
            kind,
            text: text.clone(),
        }
    }
}
