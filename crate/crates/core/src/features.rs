//! Fixed-length feature encoding of observed states for the parametric heads.
//!
//! Layout, in order: one observed indicator per catalog test, one finding
//! one-hot block per test (all zeros while unobserved), a hypothesis one-hot,
//! a confidence scalar (both zero when no hypothesis is attached), and a
//! trailing bias entry. The encoding is derived from a generative model's
//! finding vocabulary; a revealed result text outside that vocabulary is an
//! encoding error.

use thiserror::Error;

use crate::catalog::TestCatalog;
use crate::env::{EnvAction, ObservedState};
use crate::protocol::HypothesisOutput;
use crate::synth::GenerativeModel;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("test {0:?} is not in the catalog")]
    UnknownTest(String),
    #[error("result text {text:?} for test {test:?} is outside the finding vocabulary")]
    UnknownFinding { test: String, text: String },
}

/// Number of verbalized confidence levels (0..=10).
pub const N_LEVELS: usize = 11;

#[derive(Debug, Clone)]
pub struct Featurizer {
    catalog: TestCatalog,
    /// Exact result texts per test, indexed by finding.
    test_variants: Vec<Vec<String>>,
    /// Start of each test's finding one-hot block.
    block_offsets: Vec<usize>,
    base_dim: usize,
}

impl Featurizer {
    pub fn from_model(model: &GenerativeModel) -> Self {
        let catalog = model.catalog.clone();
        let test_variants: Vec<Vec<String>> = (0..catalog.n_tests())
            .map(|t| {
                (0..model.tests[t].findings.len())
                    .map(|f| model.result_text(t, f))
                    .collect()
            })
            .collect();
        Self::from_variants(catalog, test_variants)
    }

    pub fn from_variants(
        catalog: TestCatalog,
        test_variants: Vec<Vec<String>>,
    ) -> Self {
        assert_eq!(catalog.n_tests(), test_variants.len());
        let n_tests = catalog.n_tests();
        let mut block_offsets = Vec::with_capacity(n_tests);
        let mut offset = n_tests;
        for variants in &test_variants {
            block_offsets.push(offset);
            offset += variants.len();
        }
        // hypothesis one-hot + confidence scalar + bias
        let base_dim = offset + catalog.n_classes() + 2;
        Self {
            catalog,
            test_variants,
            block_offsets,
            base_dim,
        }
    }

    pub fn catalog(&self) -> &TestCatalog {
        &self.catalog
    }

    /// Length of the state feature vector.
    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    /// Length of the confidence-head input: state features plus a class
    /// one-hot for the hypothesis under consideration.
    pub fn conf_dim(&self) -> usize {
        self.base_dim + self.catalog.n_classes()
    }

    /// Decision action space: one request per test, one diagnosis per class,
    /// and a trailing reserved slot for malformed actions.
    pub fn n_actions(&self) -> usize {
        self.catalog.n_tests() + self.catalog.n_classes() + 1
    }

    pub fn invalid_action_index(&self) -> usize {
        self.n_actions() - 1
    }

    fn hyp_offset(&self) -> usize {
        self.base_dim - self.catalog.n_classes() - 2
    }

    fn conf_offset(&self) -> usize {
        self.base_dim - 2
    }

    fn bias_offset(&self) -> usize {
        self.base_dim - 1
    }

    /// Encodes a state; the hypothesis block is zero when `hyp` is absent.
    pub fn featurize(
        &self,
        state: &ObservedState,
        hyp: Option<&HypothesisOutput>,
    ) -> Result<Vec<f64>, FeatureError> {
        let mut v = vec![0.0; self.base_dim];
        v[self.bias_offset()] = 1.0;
        for (name, text) in &state.revealed {
            let t = self
                .catalog
                .test_index(name)
                .ok_or_else(|| FeatureError::UnknownTest(name.clone()))?;
            let finding = self.test_variants[t]
                .iter()
                .position(|variant| variant == text)
                .ok_or_else(|| FeatureError::UnknownFinding {
                    test: name.clone(),
                    text: text.clone(),
                })?;
            v[t] = 1.0;
            v[self.block_offsets[t] + finding] = 1.0;
        }
        if let Some(h) = hyp {
            v[self.hyp_offset() + h.class_idx] = 1.0;
            v[self.conf_offset()] = h.confidence;
        }
        Ok(v)
    }

    /// Confidence-head input: base features with a class one-hot appended.
    pub fn conf_features(&self, base: &[f64], class_idx: usize) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.conf_dim());
        g.extend_from_slice(base);
        let mut onehot = vec![0.0; self.catalog.n_classes()];
        onehot[class_idx] = 1.0;
        g.extend_from_slice(&onehot);
        g
    }

    /// Sampling mask for the decision head: already-requested tests and the
    /// reserved invalid slot are excluded.
    pub fn decision_mask(&self, state: &ObservedState) -> Vec<bool> {
        let mut mask = vec![false; self.n_actions()];
        for (t, name) in self.catalog.tests().iter().enumerate() {
            if state.requested.contains(name) {
                mask[t] = true;
            }
        }
        mask[self.invalid_action_index()] = true;
        mask
    }

    pub fn action_to_env(&self, idx: usize) -> EnvAction {
        let n_tests = self.catalog.n_tests();
        let n_classes = self.catalog.n_classes();
        if idx < n_tests {
            EnvAction::RequestTest(self.catalog.tests()[idx].clone())
        } else if idx < n_tests + n_classes {
            EnvAction::Diagnose(self.catalog.classes()[idx - n_tests].clone())
        } else {
            EnvAction::Malformed("reserved invalid action".to_string())
        }
    }
}
