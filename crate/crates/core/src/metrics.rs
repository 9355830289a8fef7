//! Evaluation metrics: class-wise accuracy, micro/macro F1 with the fallback
//! and fifth-class rules, expected calibration error, and average test count.
//!
//! A prediction without a valid final diagnosis falls back to the hypothesis
//! agent's last classification; if that is also missing, the record counts as
//! a fifth always-wrong class, which is excluded from the macro F1 average
//! but still hurts recall of its truth class. ECE scores the hypothesis
//! agent: correctness is "last hypothesis equals truth" at the verbalized
//! confidence.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TestCatalog;
use crate::env::{EpisodeConfig, PatientRecord};
use crate::harness::{run_episode, EpisodeDriver, EpisodeTrace, HarnessError};
use crate::policy::{ActMode, AgentBackend};
use crate::rewards::DecisionRewardConfig;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot compute metrics over zero records")]
    Empty,
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("at least one calibration bin is required")]
    NoBins,
}

/// Final outcome of one evaluated episode, reduced to what the metrics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Committed diagnosis, absent when the episode ended without one.
    pub final_prediction: Option<usize>,
    /// The hypothesis agent's last classification, if any.
    pub last_hypothesis: Option<usize>,
    pub truth: usize,
    /// The hypothesis agent's final confidence; absent with the hypothesis.
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectiveLabel {
    Class(usize),
    /// Bookkeeping label for records with no valid prediction at all.
    Fifth,
}

/// Fallback rule: the committed diagnosis, else the last hypothesis, else the
/// fifth wrong class.
pub fn effective_prediction(record: &PredictionRecord) -> EffectiveLabel {
    match (record.final_prediction, record.last_hypothesis) {
        (Some(class), _) => EffectiveLabel::Class(class),
        (None, Some(class)) => EffectiveLabel::Class(class),
        (None, None) => EffectiveLabel::Fifth,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracies {
    /// Per truth class; `None` when the class has no records.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over the defined classes.
    pub mean: f64,
}

pub fn classwise_accuracy(
    records: &[PredictionRecord],
    n_classes: usize,
) -> Result<ClassAccuracies, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut totals = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    for record in records {
        totals[record.truth] += 1;
        if effective_prediction(record) == EffectiveLabel::Class(record.truth)
        {
            correct[record.truth] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = totals
        .iter()
        .zip(&correct)
        .map(|(&total, &c)| {
            if total == 0 {
                None
            } else {
                Some(c as f64 / total as f64)
            }
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(ClassAccuracies { per_class, mean })
}

/// Micro and macro F1 over effective predictions. Micro treats the fifth
/// class as an always-wrong label (so it equals plain accuracy); macro
/// averages per-class F1 over the real classes present in truths or
/// predictions, with no fifth-class term.
pub fn micro_macro_f1(
    records: &[PredictionRecord],
    n_classes: usize,
) -> Result<(f64, f64), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    // Index n_classes holds the fifth class.
    let mut tp = vec![0usize; n_classes + 1];
    let mut fp = vec![0usize; n_classes + 1];
    let mut fn_ = vec![0usize; n_classes + 1];
    for record in records {
        let predicted = match effective_prediction(record) {
            EffectiveLabel::Class(c) => c,
            EffectiveLabel::Fifth => n_classes,
        };
        if predicted == record.truth {
            tp[predicted] += 1;
        } else {
            fp[predicted] += 1;
            fn_[record.truth] += 1;
        }
    }

    let tp_sum: usize = tp.iter().sum();
    let fp_sum: usize = fp.iter().sum();
    let fn_sum: usize = fn_.iter().sum();
    let micro_p = safe_div(tp_sum, tp_sum + fp_sum);
    let micro_r = safe_div(tp_sum, tp_sum + fn_sum);
    let micro = harmonic(micro_p, micro_r);

    let mut f1_sum = 0.0;
    let mut f1_count = 0usize;
    for class in 0..n_classes {
        let present = records.iter().any(|r| {
            r.truth == class
                || effective_prediction(r) == EffectiveLabel::Class(class)
        });
        if !present {
            continue;
        }
        let precision = safe_div(tp[class], tp[class] + fp[class]);
        let recall = safe_div(tp[class], tp[class] + fn_[class]);
        f1_sum += harmonic(precision, recall);
        f1_count += 1;
    }
    let macro_f1 = if f1_count == 0 {
        0.0
    } else {
        f1_sum / f1_count as f64
    };
    Ok((micro, macro_f1))
}

fn safe_div(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

impl CalibrationReport {
    /// Bin table as CSV for external plotting of calibration curves.
    pub fn bins_csv(&self) -> String {
        let mut out =
            String::from("bin_lower,bin_upper,count,mean_conf,accuracy\n");
        for bin in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                bin.lower, bin.upper, bin.count, bin.mean_confidence,
                bin.accuracy
            ));
        }
        out
    }

    pub fn write_bins_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.bins_csv())
            .map_err(|e| HarnessError::io(path, e))
    }
}

/// Expected calibration error of the hypothesis agent over equal-width bins.
/// Records without a hypothesis (and hence without a confidence) are skipped.
pub fn ece(
    records: &[PredictionRecord],
    n_bins: usize,
) -> Result<CalibrationReport, MetricsError> {
    if n_bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let scored: Vec<(f64, bool)> = records
        .iter()
        .filter_map(|r| {
            r.confidence.map(|c| (c, r.last_hypothesis == Some(r.truth)))
        })
        .collect();
    if scored.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sums = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for &(confidence, is_correct) in &scored {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::BadConfidence(confidence));
        }
        let idx =
            ((confidence * n_bins as f64).floor() as usize).min(n_bins - 1);
        counts[idx] += 1;
        conf_sums[idx] += confidence;
        if is_correct {
            correct[idx] += 1;
        }
    }
    let n = scored.len() as f64;
    let mut bins = Vec::with_capacity(n_bins);
    let mut total = 0.0;
    for i in 0..n_bins {
        let lower = i as f64 / n_bins as f64;
        let upper = (i + 1) as f64 / n_bins as f64;
        let (mean_confidence, accuracy) = if counts[i] == 0 {
            (0.0, 0.0)
        } else {
            (
                conf_sums[i] / counts[i] as f64,
                correct[i] as f64 / counts[i] as f64,
            )
        };
        if counts[i] > 0 {
            total +=
                (counts[i] as f64 / n) * (accuracy - mean_confidence).abs();
        }
        bins.push(CalibrationBin {
            lower,
            upper,
            count: counts[i],
            mean_confidence,
            accuracy,
        });
    }
    Ok(CalibrationReport { bins, ece: total })
}

/// Mean number of revealed tests per episode; rejected requests don't count.
pub fn avg_test_count(traces: &[EpisodeTrace]) -> Result<f64, MetricsError> {
    if traces.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total: usize = traces.iter().map(|t| t.outcome.tests_used).sum();
    Ok(total as f64 / traces.len() as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub n_bins: usize,
    pub mode: ActMode,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_bins: 10,
            mode: ActMode::Greedy,
            seed: 0,
        }
    }
}

/// Full evaluation report over one record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub class_labels: Vec<String>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub ece: f64,
    pub avg_tests: f64,
    /// Final hypothesis vs truth, independent of the committed diagnosis.
    pub hypothesis_accuracy: f64,
    pub calibration: CalibrationReport,
}

impl EvalReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (label, acc) in
            self.class_labels.iter().zip(&self.per_class_accuracy)
        {
            out.push_str(&format!(
                "accuracy/{label},{}\n",
                acc.map(|a| a.to_string()).unwrap_or_default()
            ));
        }
        out.push_str(&format!("accuracy/mean,{}\n", self.mean_accuracy));
        out.push_str(&format!("f1/micro,{}\n", self.micro_f1));
        out.push_str(&format!("f1/macro,{}\n", self.macro_f1));
        out.push_str(&format!("ece,{}\n", self.ece));
        out.push_str(&format!("avg_tests,{}\n", self.avg_tests));
        out.push_str(&format!(
            "hypothesis_accuracy,{}\n",
            self.hypothesis_accuracy
        ));
        out.push_str(&format!("n_episodes,{}\n", self.n_episodes));
        out
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.summary_csv())
            .map_err(|e| HarnessError::io(path, e))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "evaluation over {} episodes", self.n_episodes)?;
        writeln!(f, "{:<28} {:>10}", "metric", "value")?;
        for (label, acc) in
            self.class_labels.iter().zip(&self.per_class_accuracy)
        {
            match acc {
                Some(a) => writeln!(
                    f,
                    "{:<28} {:>10.4}",
                    format!("accuracy {label}"),
                    a
                )?,
                None => writeln!(
                    f,
                    "{:<28} {:>10}",
                    format!("accuracy {label}"),
                    "n/a"
                )?,
            }
        }
        writeln!(f, "{:<28} {:>10.4}", "mean accuracy", self.mean_accuracy)?;
        writeln!(f, "{:<28} {:>10.4}", "micro F1", self.micro_f1)?;
        writeln!(f, "{:<28} {:>10.4}", "macro F1", self.macro_f1)?;
        writeln!(f, "{:<28} {:>10.4}", "ECE", self.ece)?;
        writeln!(f, "{:<28} {:>10.4}", "avg tests", self.avg_tests)?;
        writeln!(
            f,
            "{:<28} {:>10.4}",
            "hypothesis accuracy", self.hypothesis_accuracy
        )
    }
}

/// Converts a finished trace into the record the metrics consume.
pub fn prediction_from_trace(
    trace: &EpisodeTrace,
    catalog: &TestCatalog,
) -> PredictionRecord {
    let last = trace.last_hypothesis();
    PredictionRecord {
        final_prediction: trace
            .outcome
            .predicted
            .as_deref()
            .and_then(|c| catalog.class_index(c)),
        last_hypothesis: last.map(|h| h.class_idx),
        truth: catalog
            .class_index(&trace.truth)
            .expect("trace truth is a catalog class"),
        confidence: last.map(|h| h.confidence),
    }
}

/// Runs one episode per record (greedy by default) and assembles the full
/// report. Deterministic given backend, records, and seed.
pub fn evaluate(
    backend: &AgentBackend,
    records: &[PatientRecord],
    catalog: &TestCatalog,
    episode_config: &EpisodeConfig,
    decision_rewards: &DecisionRewardConfig,
    options: &EvalOptions,
) -> Result<EvalReport, HarnessError> {
    if records.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let driver = EpisodeDriver {
        catalog,
        episode_config,
        decision_rewards,
        mode: options.mode,
        explore_prob: None,
    };
    let mut traces = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(i as u64);
        let rollout = run_episode(record, backend, backend, &driver, &mut rng)?;
        traces.push(rollout.trace);
    }
    report_from_traces(&traces, catalog, options.n_bins)
}

/// Metrics over already-collected traces.
pub fn report_from_traces(
    traces: &[EpisodeTrace],
    catalog: &TestCatalog,
    n_bins: usize,
) -> Result<EvalReport, HarnessError> {
    let predictions: Vec<PredictionRecord> = traces
        .iter()
        .map(|t| prediction_from_trace(t, catalog))
        .collect();
    let accuracies = classwise_accuracy(&predictions, catalog.n_classes())?;
    let (micro_f1, macro_f1) =
        micro_macro_f1(&predictions, catalog.n_classes())?;
    let calibration = ece(&predictions, n_bins)?;
    let avg_tests = avg_test_count(traces)?;
    let hypothesis_accuracy = predictions
        .iter()
        .filter(|p| p.last_hypothesis == Some(p.truth))
        .count() as f64
        / predictions.len() as f64;
    Ok(EvalReport {
        n_episodes: traces.len(),
        class_labels: catalog.classes().to_vec(),
        per_class_accuracy: accuracies.per_class,
        mean_accuracy: accuracies.mean,
        micro_f1,
        macro_f1,
        ece: calibration.ece,
        avg_tests,
        hypothesis_accuracy,
        calibration,
    })
}
