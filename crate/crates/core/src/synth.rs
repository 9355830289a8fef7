//! Synthetic patient generator with an exact posterior.
//!
//! Each test (and the admission history, treated as an always-present
//! pseudo-test) draws a categorical finding whose distribution interpolates
//! between uniform and a class-specific peak: informativeness 0 carries no
//! class signal, informativeness 1 is fully decisive. Because the generative
//! process is known, the class posterior given any observed findings is exact
//! — that posterior is the reference oracle the trained agents are measured
//! against.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TestCatalog;
use crate::env::{ObservedState, PatientRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("priors must have one entry per class and sum to 1")]
    BadPriors,
    #[error("model for test {0:?} is invalid: {1}")]
    BadTestModel(String, String),
    #[error("test model count must match the catalog")]
    WrongTestCount,
    #[error("split fractions must be positive and sum to 1")]
    BadSplit,
    #[error("{n} patients cannot fill three non-empty splits")]
    TooFewPatients { n: usize },
    #[error("posterior has zero total mass")]
    ZeroMass,
    #[error("unknown finding text {text:?} for {origin}")]
    UnknownFinding { origin: String, text: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// Categorical finding distribution for one test: a uniform base mixed with a
/// per-class peak at weight `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingModel {
    /// Finding labels; the vocabulary of this test.
    pub findings: Vec<String>,
    /// Informativeness in [0, 1].
    pub lambda: f64,
    /// Per-class peak finding index.
    pub peaks: Vec<usize>,
}

impl FindingModel {
    pub fn uniform_labels(prefix: &str, k: usize, lambda: f64, peaks: Vec<usize>) -> Self {
        Self {
            findings: (0..k).map(|i| format!("{prefix}_{i}")).collect(),
            lambda,
            peaks,
        }
    }

    /// P(finding | class).
    pub fn likelihood(&self, finding: usize, class: usize) -> f64 {
        let base = (1.0 - self.lambda) / self.findings.len() as f64;
        if self.peaks[class] == finding {
            base + self.lambda
        } else {
            base
        }
    }

    /// The full outcome distribution for one class.
    pub fn outcome_distribution(&self, class: usize) -> Vec<f64> {
        (0..self.findings.len())
            .map(|f| self.likelihood(f, class))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for f in 0..self.findings.len() {
            acc += self.likelihood(f, class);
            if u < acc {
                return f;
            }
        }
        self.findings.len() - 1
    }

    fn validate(&self, n_classes: usize) -> Result<(), String> {
        if self.findings.is_empty() {
            return Err("empty finding vocabulary".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.peaks.len() != n_classes {
            return Err("peaks must have one entry per class".into());
        }
        if self.peaks.iter().any(|&p| p >= self.findings.len()) {
            return Err("peak index outside the vocabulary".into());
        }
        for (i, f) in self.findings.iter().enumerate() {
            if self.findings[..i].contains(f) {
                return Err(format!("duplicate finding label {f:?}"));
            }
        }
        Ok(())
    }
}

/// Full synthetic patient model: class priors, a history pseudo-test, and one
/// finding model plus availability rate per catalog test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub catalog: TestCatalog,
    pub priors: Vec<f64>,
    pub history: FindingModel,
    pub tests: Vec<FindingModel>,
    /// Per-test probability that the result exists for a sampled patient.
    pub availability: Vec<f64>,
}

/// Findings recovered from an observed state, as vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservedFindings {
    pub history: Option<usize>,
    /// (test index, finding index) pairs.
    pub tests: Vec<(usize, usize)>,
}

impl GenerativeModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        let n_classes = self.catalog.n_classes();
        if self.priors.len() != n_classes
            || (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.priors.iter().any(|p| *p < 0.0)
        {
            return Err(SynthError::BadPriors);
        }
        self.history
            .validate(n_classes)
            .map_err(|e| SynthError::BadTestModel("history".into(), e))?;
        if self.tests.len() != self.catalog.n_tests()
            || self.availability.len() != self.catalog.n_tests()
        {
            return Err(SynthError::WrongTestCount);
        }
        for (i, t) in self.tests.iter().enumerate() {
            let name = &self.catalog.tests()[i];
            t.validate(n_classes)
                .map_err(|e| SynthError::BadTestModel(name.clone(), e))?;
            if !(0.0..=1.0).contains(&self.availability[i]) {
                return Err(SynthError::BadTestModel(
                    name.clone(),
                    format!("availability {} outside [0, 1]", self.availability[i]),
                ));
            }
        }
        Ok(())
    }

    /// The exact result text stored in records and shown to agents.
    pub fn result_text(&self, test_idx: usize, finding: usize) -> String {
        format!(
            "{}: {}",
            self.catalog.tests()[test_idx],
            self.tests[test_idx].findings[finding]
        )
    }

    /// The admission-history prose encoding a (usually weak) class signal.
    pub fn history_text(&self, finding: usize) -> String {
        format!(
            "Patient admitted to the emergency department with acute abdominal pain. Presentation: {}.",
            self.history.findings[finding]
        )
    }

    /// Draws one patient. Availability is independent per test
    /// (missing-at-random).
    pub fn sample_patient<R: Rng + ?Sized>(
        &self,
        id: impl Into<String>,
        rng: &mut R,
    ) -> PatientRecord {
        let class = sample_categorical(&self.priors, rng);
        let hist_finding = self.history.sample(class, rng);
        let mut tests = BTreeMap::new();
        for (t, model) in self.tests.iter().enumerate() {
            let present: f64 = rng.gen();
            if present < self.availability[t] {
                let finding = model.sample(class, rng);
                tests.insert(
                    self.catalog.tests()[t].clone(),
                    self.result_text(t, finding),
                );
            }
        }
        PatientRecord {
            id: id.into(),
            diagnosis: self.catalog.classes()[class].clone(),
            history: self.history_text(hist_finding),
            tests,
        }
    }

    /// Recovers vocabulary indices from the texts in an observed state.
    pub fn parse_state(
        &self,
        state: &ObservedState,
    ) -> Result<ObservedFindings, SynthError> {
        let history = Some(
            (0..self.history.findings.len())
                .find(|&f| self.history_text(f) == state.history)
                .ok_or_else(|| SynthError::UnknownFinding {
                    origin: "history".into(),
                    text: state.history.clone(),
                })?,
        );
        let mut tests = Vec::with_capacity(state.revealed.len());
        for (name, text) in &state.revealed {
            let test_idx = self.catalog.test_index(name).ok_or_else(|| {
                SynthError::UnknownFinding {
                    origin: name.clone(),
                    text: text.clone(),
                }
            })?;
            let finding = (0..self.tests[test_idx].findings.len())
                .find(|&f| self.result_text(test_idx, f) == *text)
                .ok_or_else(|| SynthError::UnknownFinding {
                    origin: name.clone(),
                    text: text.clone(),
                })?;
            tests.push((test_idx, finding));
        }
        Ok(ObservedFindings { history, tests })
    }

    /// Exact class posterior given observed findings. Availability is
    /// missing-at-random and does not enter the likelihood. The result is
    /// invariant to duplicate-free reordering of the findings.
    pub fn exact_posterior(
        &self,
        findings: &ObservedFindings,
    ) -> Result<Vec<f64>, SynthError> {
        let n = self.catalog.n_classes();
        let mut sorted = findings.tests.clone();
        sorted.sort_unstable();
        let mut post: Vec<f64> = self.priors.clone();
        if let Some(h) = findings.history {
            for (c, p) in post.iter_mut().enumerate() {
                *p *= self.history.likelihood(h, c);
            }
        }
        for &(t, f) in &sorted {
            for (c, p) in post.iter_mut().enumerate() {
                *p *= self.tests[t].likelihood(f, c);
            }
        }
        let total: f64 = post.iter().sum();
        if total <= 0.0 {
            return Err(SynthError::ZeroMass);
        }
        for p in post.iter_mut() {
            *p /= total;
        }
        debug_assert_eq!(post.len(), n);
        Ok(post)
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 2_400,
            seed: 0,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<PatientRecord>,
    pub val: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

impl DatasetSplits {
    /// Per-class record counts for one split.
    pub fn class_counts(records: &[PatientRecord], catalog: &TestCatalog) -> Vec<usize> {
        let mut counts = vec![0; catalog.n_classes()];
        for r in records {
            if let Some(c) = catalog.class_index(&r.diagnosis) {
                counts[c] += 1;
            }
        }
        counts
    }
}

/// Samples `n_patients` from the model and partitions them with a
/// seed-derived permutation. Patient `i` always draws from rng stream `i`, so
/// the same seed regenerates the same records regardless of batching.
pub fn generate_dataset(
    config: &SyntheticConfig,
    model: &GenerativeModel,
) -> Result<DatasetSplits, SynthError> {
    model.validate()?;
    if config.split.iter().any(|f| *f <= 0.0)
        || (config.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(SynthError::BadSplit);
    }
    let n = config.n_patients;
    let n_train = (n as f64 * config.split[0]).floor() as usize;
    let n_val = (n as f64 * config.split[1]).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(SynthError::TooFewPatients { n });
    }

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        records.push(model.sample_patient(format!("p{i:05}"), &mut rng));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    split_rng.set_stream(u64::MAX);
    order.shuffle(&mut split_rng);

    let pick = |idxs: &[usize]| -> Vec<PatientRecord> {
        idxs.iter().map(|&i| records[i].clone()).collect()
    };
    Ok(DatasetSplits {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

/// Built-in model presets.
pub mod presets {
    use super::*;

    pub const ONE_DECISIVE_TEST: &str = "one-decisive-test";
    pub const UNIFORM_NOISE: &str = "uniform-noise";
    pub const GRADED: &str = "graded";

    /// Index of the decisive test in [`one_decisive_test`]: Ultrasound.
    pub const DECISIVE_TEST_INDEX: usize = 4;

    pub fn by_name(name: &str) -> Result<GenerativeModel, SynthError> {
        match name {
            ONE_DECISIVE_TEST => Ok(one_decisive_test()),
            UNIFORM_NOISE => Ok(uniform_noise()),
            GRADED => Ok(graded()),
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }

    fn base_test(lambda: f64) -> FindingModel {
        FindingModel::uniform_labels("finding", 3, lambda, vec![0, 1, 2, 0])
    }

    /// One fully decisive, always-available test; everything else is noise.
    /// The shortest good policy requests the decisive test, then diagnoses.
    pub fn one_decisive_test() -> GenerativeModel {
        let catalog = TestCatalog::default_abdominal();
        let mut tests: Vec<FindingModel> =
            (0..catalog.n_tests()).map(|_| base_test(0.0)).collect();
        tests[DECISIVE_TEST_INDEX] =
            FindingModel::uniform_labels("finding", 4, 1.0, vec![0, 1, 2, 3]);
        let mut availability = vec![0.8; catalog.n_tests()];
        availability[DECISIVE_TEST_INDEX] = 1.0;
        GenerativeModel {
            catalog,
            priors: vec![0.25; 4],
            history: FindingModel::uniform_labels(
                "presentation",
                3,
                0.15,
                vec![0, 1, 2, 0],
            ),
            tests,
            availability,
        }
    }

    /// No test carries any class signal; class priors are skewed so the
    /// correctness rate of a hypothesis depends on which class it names.
    /// Made for confidence-calibration training.
    pub fn uniform_noise() -> GenerativeModel {
        let catalog = TestCatalog::default_abdominal();
        let tests: Vec<FindingModel> =
            (0..catalog.n_tests()).map(|_| base_test(0.0)).collect();
        let availability = vec![0.8; catalog.n_tests()];
        GenerativeModel {
            catalog,
            priors: vec![0.4, 0.3, 0.2, 0.1],
            history: FindingModel::uniform_labels(
                "presentation",
                3,
                0.0,
                vec![0, 1, 2, 0],
            ),
            tests,
            availability,
        }
    }

    /// Mixed informativeness: two strong tests, a tail of weak ones.
    pub fn graded() -> GenerativeModel {
        let catalog = TestCatalog::default_abdominal();
        let lambdas = [
            0.8, 0.5, 0.35, 0.25, 0.2, 0.15, 0.1, 0.05, 0.0, 0.0, 0.0, 0.0,
        ];
        let tests: Vec<FindingModel> = lambdas
            .iter()
            .enumerate()
            .map(|(i, &lambda)| {
                if i < 2 {
                    FindingModel::uniform_labels(
                        "finding",
                        4,
                        lambda,
                        vec![0, 1, 2, 3],
                    )
                } else {
                    base_test(lambda)
                }
            })
            .collect();
        GenerativeModel {
            catalog,
            priors: vec![0.25; 4],
            history: FindingModel::uniform_labels(
                "presentation",
                3,
                0.2,
                vec![0, 1, 2, 0],
            ),
            tests,
            availability: vec![0.85; 12],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn presets_validate() {
        for name in [presets::ONE_DECISIVE_TEST, presets::UNIFORM_NOISE, presets::GRADED] {
            presets::by_name(name).unwrap().validate().unwrap();
        }
        assert!(presets::by_name("nonsense").is_err());
    }

    #[test]
    fn posterior_with_nothing_observed_is_the_prior() {
        let model = presets::one_decisive_test();
        let post = model.exact_posterior(&ObservedFindings::default()).unwrap();
        for p in post {
            assert_relative_eq!(p, 0.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn posterior_after_one_decisive_finding_matches_hand_normalization() {
        // Test with likelihoods [0.8, 0.2, 0.2, 0.2]: lambda 0.6 over a
        // 2-finding vocabulary, peak at finding 0 for class 0 only.
        let mut model = presets::uniform_noise();
        model.priors = vec![0.25; 4];
        model.tests[0] =
            FindingModel::uniform_labels("finding", 2, 0.6, vec![0, 1, 1, 1]);
        let post = model
            .exact_posterior(&ObservedFindings {
                history: None,
                tests: vec![(0, 0)],
            })
            .unwrap();
        assert_relative_eq!(post[0], 0.8 / 1.4, max_relative = 1e-12);
        assert_relative_eq!(post[1], 0.2 / 1.4, max_relative = 1e-12);
        assert_relative_eq!(post[2], 0.2 / 1.4, max_relative = 1e-12);
        assert_relative_eq!(post[3], 0.2 / 1.4, max_relative = 1e-12);
    }

    #[test]
    fn posterior_is_order_invariant() {
        let model = presets::graded();
        let a = model
            .exact_posterior(&ObservedFindings {
                history: Some(1),
                tests: vec![(0, 2), (3, 1), (7, 0)],
            })
            .unwrap();
        let b = model
            .exact_posterior(&ObservedFindings {
                history: Some(1),
                tests: vec![(7, 0), (0, 2), (3, 1)],
            })
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decisive_finding_pins_the_posterior_on_the_true_class() {
        let model = presets::one_decisive_test();
        for class in 0..4 {
            let post = model
                .exact_posterior(&ObservedFindings {
                    history: None,
                    tests: vec![(presets::DECISIVE_TEST_INDEX, class)],
                })
                .unwrap();
            assert!(post[class] >= 0.97, "class {class}: {post:?}");
        }
    }

    #[test]
    fn zero_lambda_findings_carry_no_class_information() {
        let model = presets::uniform_noise();
        for t in &model.tests {
            for f in 0..t.findings.len() {
                let l0 = t.likelihood(f, 0);
                for c in 1..4 {
                    assert_relative_eq!(t.likelihood(f, c), l0);
                }
            }
        }
    }

    #[test]
    fn full_availability_yields_all_tests() {
        let mut model = presets::one_decisive_test();
        model.availability = vec![1.0; 12];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rec = model.sample_patient("p0", &mut rng);
        assert_eq!(rec.tests.len(), 12);
        rec.validate(&model.catalog).unwrap();
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let model = presets::graded();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            model.sample_patient("p1", &mut rng)
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn parse_state_round_trips_sampled_records() {
        let model = presets::graded();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..20 {
            let rec = model.sample_patient(format!("p{i}"), &mut rng);
            let mut state = crate::env::reset(&rec);
            for (name, text) in &rec.tests {
                state.revealed.insert(name.clone(), text.clone());
            }
            let findings = model.parse_state(&state).unwrap();
            assert!(findings.history.is_some());
            assert_eq!(findings.tests.len(), rec.tests.len());
        }
    }

    #[test]
    fn parse_state_rejects_foreign_texts() {
        let model = presets::uniform_noise();
        let rec = PatientRecord {
            id: "x".into(),
            diagnosis: "appendicitis".into(),
            history: "something the model never wrote".into(),
            tests: BTreeMap::new(),
        };
        let state = crate::env::reset(&rec);
        assert!(matches!(
            model.parse_state(&state),
            Err(SynthError::UnknownFinding { .. })
        ));
    }

    #[test]
    fn splits_have_expected_sizes_and_are_deterministic() {
        let model = presets::uniform_noise();
        let cfg = SyntheticConfig {
            n_patients: 10,
            seed: 1,
            split: [0.8, 0.1, 0.1],
        };
        let a = generate_dataset(&cfg, &model).unwrap();
        assert_eq!(a.train.len(), 8);
        assert_eq!(a.val.len(), 1);
        assert_eq!(a.test.len(), 1);
        let b = generate_dataset(&cfg, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_datasets_are_rejected() {
        let model = presets::uniform_noise();
        let cfg = SyntheticConfig {
            n_patients: 2,
            seed: 1,
            split: [0.8, 0.1, 0.1],
        };
        assert!(matches!(
            generate_dataset(&cfg, &model),
            Err(SynthError::TooFewPatients { .. })
        ));
    }

    #[test]
    fn class_frequencies_track_the_priors() {
        let model = presets::uniform_noise();
        let cfg = SyntheticConfig {
            n_patients: 10_000,
            seed: 9,
            split: [0.8, 0.1, 0.1],
        };
        let splits = generate_dataset(&cfg, &model).unwrap();
        let mut all = splits.train;
        all.extend(splits.val);
        all.extend(splits.test);
        let counts = DatasetSplits::class_counts(&all, &model.catalog);
        let n = all.len() as f64;
        for (c, &count) in counts.iter().enumerate() {
            let p = model.priors[c];
            let sigma = (p * (1.0 - p) / n).sqrt();
            let freq = count as f64 / n;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "class {c}: freq {freq} vs prior {p}"
            );
        }
    }
}
