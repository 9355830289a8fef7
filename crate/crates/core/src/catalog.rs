//! Test and diagnosis catalog: the closed vocabulary of requestable tests and
//! admissible diagnosis classes an episode is played over.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog test list must be non-empty")]
    EmptyTests,
    #[error("catalog class list must be non-empty")]
    EmptyClasses,
    #[error("duplicate test name in catalog: {0}")]
    DuplicateTest(String),
    #[error("duplicate class name in catalog: {0}")]
    DuplicateClass(String),
}

/// Ordered, duplicate-free lists of test names and diagnosis classes.
///
/// Construction is validated, so a `TestCatalog` value is always well-formed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCatalog", into = "RawCatalog")]
pub struct TestCatalog {
    tests: Vec<String>,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawCatalog {
    tests: Vec<String>,
    classes: Vec<String>,
}

impl TryFrom<RawCatalog> for TestCatalog {
    type Error = CatalogError;
    fn try_from(raw: RawCatalog) -> Result<Self, CatalogError> {
        TestCatalog::new(raw.tests, raw.classes)
    }
}

impl From<TestCatalog> for RawCatalog {
    fn from(c: TestCatalog) -> Self {
        RawCatalog {
            tests: c.tests,
            classes: c.classes,
        }
    }
}

/// The default emergency-department abdominal work-up: twelve tests, four conditions.
pub const DEFAULT_TESTS: [&str; 12] = [
    "Physical Examination",
    "CT",
    "MRI",
    "Radiograph",
    "Ultrasound",
    "Complete Blood Count",
    "Basic Metabolic Panel",
    "Comprehensive Metabolic Panel",
    "Renal Function Panel",
    "Liver Function Panel",
    "Urinalysis",
    "Electrolyte Panel",
];

pub const DEFAULT_CLASSES: [&str; 4] = [
    "appendicitis",
    "cholecystitis",
    "diverticulitis",
    "pancreatitis",
];

impl TestCatalog {
    pub fn new(
        tests: Vec<String>,
        classes: Vec<String>,
    ) -> Result<Self, CatalogError> {
        if tests.is_empty() {
            return Err(CatalogError::EmptyTests);
        }
        if classes.is_empty() {
            return Err(CatalogError::EmptyClasses);
        }
        for (i, t) in tests.iter().enumerate() {
            if tests[..i].contains(t) {
                return Err(CatalogError::DuplicateTest(t.clone()));
            }
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(CatalogError::DuplicateClass(c.clone()));
            }
        }
        Ok(Self { tests, classes })
    }

    /// The default twelve-test, four-class abdominal catalog.
    pub fn default_abdominal() -> Self {
        Self {
            tests: DEFAULT_TESTS.iter().map(|s| s.to_string()).collect(),
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn tests(&self) -> &[String] {
        &self.tests
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_tests(&self) -> usize {
        self.tests.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Exact-name lookup.
    pub fn test_index(&self, name: &str) -> Option<usize> {
        self.tests.iter().position(|t| t == name)
    }

    /// Exact-name lookup.
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Case-insensitive lookup after trimming surrounding whitespace.
    pub fn match_test(&self, raw: &str) -> Option<usize> {
        let needle = raw.trim();
        self.tests
            .iter()
            .position(|t| t.eq_ignore_ascii_case(needle))
    }

    /// Case-insensitive lookup after trimming surrounding whitespace.
    pub fn match_class(&self, raw: &str) -> Option<usize> {
        let needle = raw.trim();
        self.classes
            .iter()
            .position(|c| c.eq_ignore_ascii_case(needle))
    }
}

impl Default for TestCatalog {
    fn default() -> Self {
        Self::default_abdominal()
    }
}
