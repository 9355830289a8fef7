//! Episode runner, dataset persistence, episode logs, and run configuration.
//!
//! `run_episode` realizes the agent loop: hypothesis, decision, environment
//! step, repeated until the episode terminates. It returns both a
//! protocol-level trace (states, outputs, observations, rewards) and the
//! per-step tensors a trainer needs. Datasets are JSONL, one record per line,
//! with a strict schema; configuration is a sectioned TOML file.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::TestCatalog;
use crate::env::{
    EnvAction, EnvUsageError, Episode, EpisodeConfig, EpisodeOutcome,
    Observation, ObservedState, PatientRecord, RecordError,
};
use crate::metrics::MetricsError;
use crate::policy::{
    decision_act, hypothesis_act, masked_log_softmax, ActMode, AgentBackend,
    PolicyError,
};
use crate::protocol::HypothesisOutput;
use crate::remote::{RemoteConfig, RemoteSession};
use crate::rewards::{
    explore_confidence, CalibrationRewardConfig, DecisionRewardConfig,
    ExplorationSchedule, RewardError,
};
use crate::synth::SyntheticConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvUsageError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Record(_)
                | Self::Line { .. }
                | Self::Config(_)
                | Self::Synth(_)
        )
    }
}

/// One step of a finished episode: the state the agents saw, what they did,
/// and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub state: ObservedState,
    pub hypothesis: Option<HypothesisOutput>,
    pub action: EnvAction,
    pub observation: Observation,
    /// Terminal decision reward on the final step, 0 elsewhere.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub record_id: String,
    pub truth: String,
    pub steps: Vec<TraceStep>,
    pub outcome: EpisodeOutcome,
}

impl EpisodeTrace {
    pub fn last_hypothesis(&self) -> Option<&HypothesisOutput> {
        self.steps.iter().rev().find_map(|s| s.hypothesis.as_ref())
    }

    /// Human-readable rendering for the single-episode CLI.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "episode {}  truth: {}\n",
            self.record_id, self.truth
        );
        for (i, step) in self.steps.iter().enumerate() {
            let hyp = match &step.hypothesis {
                Some(h) => format!("{} (level {})", h.hypothesis, h.level),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "step {:>2} | hypothesis: {} | action: {} | {:?}: {} | reward {}\n",
                i + 1,
                hyp,
                step.action,
                step.observation.kind,
                step.observation.text,
                step.reward
            ));
        }
        out.push_str(&format!(
            "outcome: {:?}  predicted: {}  tests used: {}\n",
            self.outcome.kind,
            self.outcome.predicted.as_deref().unwrap_or("-"),
            self.outcome.tests_used
        ));
        out
    }
}

/// One hypothesis-agent invocation with everything a policy update needs.
#[derive(Debug, Clone)]
pub struct HypInvocation {
    pub base_features: Vec<f64>,
    pub conf_features: Vec<f64>,
    pub class_idx: usize,
    pub class_logp: f64,
    /// Executed level (after exploration, if any).
    pub level: u8,
    /// Log-prob of the executed level under the policy at collection time.
    pub level_logp: f64,
    pub correct: bool,
    pub truth_class: usize,
}

/// One decision-agent invocation for the decision head.
#[derive(Debug, Clone)]
pub struct DecisionStepRecord {
    pub features: Vec<f64>,
    pub action_idx: usize,
    pub logp: f64,
    /// Sampling mask at this step (true = excluded).
    pub mask: Vec<bool>,
}

/// Trace plus training tensors for one episode. The tensor vectors are empty
/// for non-parametric backends.
#[derive(Debug, Clone)]
pub struct EpisodeRollout {
    pub trace: EpisodeTrace,
    pub hyp_steps: Vec<HypInvocation>,
    pub decision_steps: Vec<DecisionStepRecord>,
    pub terminal_reward: f64,
}

/// Everything an episode needs besides the record and the backends.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeDriver<'a> {
    pub catalog: &'a TestCatalog,
    pub episode_config: &'a EpisodeConfig,
    pub decision_rewards: &'a DecisionRewardConfig,
    pub mode: ActMode,
    /// Probability of replacing the sampled confidence level this episode.
    pub explore_prob: Option<f64>,
}

/// Plays one full episode: hypothesis, decision, environment step, until
/// terminal. A permanent backend failure (remote transport, or a hypothesis
/// generation that never parses) aborts the episode as an invalid
/// termination.
pub fn run_episode<R: Rng + ?Sized>(
    record: &PatientRecord,
    hyp_backend: &AgentBackend,
    dec_backend: &AgentBackend,
    driver: &EpisodeDriver,
    rng: &mut R,
) -> Result<EpisodeRollout, HarnessError> {
    let mut episode =
        Episode::start(record, driver.catalog, driver.episode_config)?;
    let truth_class = driver
        .catalog
        .class_index(&record.diagnosis)
        .expect("validated at start");
    let mut session = RemoteSession::default();
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut hyp_steps = Vec::new();
    let mut decision_steps = Vec::new();

    while !episode.is_terminal() {
        let state_before = episode.state().clone();

        let hyp_act = match hypothesis_act(
            hyp_backend,
            &state_before,
            driver.catalog,
            driver.mode,
            rng,
        ) {
            Ok(act) => act,
            Err(PolicyError::RemoteParse(_)) | Err(PolicyError::Transport(_)) => {
                episode.abort_invalid();
                break;
            }
            Err(e) => return Err(e.into()),
        };

        let mut executed = hyp_act.output.clone();
        let mut level_logp = hyp_act.level_logp;
        if let Some(p) = driver.explore_prob {
            let new_level = explore_confidence(executed.level, p, rng);
            if new_level != executed.level {
                executed = executed
                    .with_level(new_level)
                    .expect("replacement level is in range");
                if let (Some(params), Some((_, conf))) =
                    (hyp_backend.params(), hyp_act.features.as_ref())
                {
                    let logps = masked_log_softmax(
                        &params.confidence_logits(conf),
                        None,
                    );
                    level_logp = logps[new_level as usize];
                }
            }
        }
        if let Some((base, conf)) = hyp_act.features {
            hyp_steps.push(HypInvocation {
                base_features: base,
                conf_features: conf,
                class_idx: executed.class_idx,
                class_logp: hyp_act.class_logp,
                level: executed.level,
                level_logp,
                correct: executed.class_idx == truth_class,
                truth_class,
            });
        }

        let dec = match decision_act(
            dec_backend,
            &state_before,
            &executed,
            driver.catalog,
            driver.mode,
            &mut session,
            rng,
        ) {
            Ok(act) => act,
            Err(PolicyError::Transport(_)) | Err(PolicyError::RemoteParse(_)) => {
                episode.abort_invalid();
                break;
            }
            Err(e) => return Err(e.into()),
        };

        let result = episode.step(&dec.action)?;
        session.record_observation(result.observation.text.clone());
        if let (Some(action_idx), Some(features), Some(mask)) =
            (dec.action_idx, dec.features, dec.mask)
        {
            decision_steps.push(DecisionStepRecord {
                features,
                action_idx,
                logp: dec.logp,
                mask,
            });
        }
        steps.push(TraceStep {
            state: state_before,
            hypothesis: Some(executed),
            action: dec.action,
            observation: result.observation,
            reward: 0.0,
        });
    }

    let outcome = episode.outcome().expect("loop exits terminal").clone();
    let terminal_reward = driver.decision_rewards.reward(&outcome);
    if let Some(last) = steps.last_mut() {
        last.reward = terminal_reward;
    }
    Ok(EpisodeRollout {
        trace: EpisodeTrace {
            record_id: record.id.clone(),
            truth: record.diagnosis.clone(),
            steps,
            outcome,
        },
        hyp_steps,
        decision_steps,
        terminal_reward,
    })
}

// ---------------------------------------------------------------------------
// Dataset persistence (JSONL, strict schema)
// ---------------------------------------------------------------------------

/// Reads one validated record per line. Errors carry the 1-based line number.
pub fn load_records(
    path: &Path,
    catalog: &TestCatalog,
) -> Result<Vec<PatientRecord>, HarnessError> {
    let file =
        fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord =
            serde_json::from_str(&line).map_err(|e| HarnessError::Line {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        record.validate(catalog).map_err(|e| HarnessError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_records(
    path: &Path,
    records: &[PatientRecord],
) -> Result<(), HarnessError> {
    let mut out = String::new();
    for record in records {
        out.push_str(
            &serde_json::to_string(record).expect("records always serialize"),
        );
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

// ---------------------------------------------------------------------------
// Episode logs (JSONL event stream)
// ---------------------------------------------------------------------------

/// One logged environment transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogEntry {
    pub episode_id: String,
    pub step: u32,
    pub state_digest: String,
    pub hypothesis: Option<(String, u8)>,
    pub action: EnvAction,
    pub observation: Observation,
    pub reward: f64,
}

/// Stable digest of an observed state.
pub fn state_digest(state: &ObservedState) -> String {
    let serialized =
        serde_json::to_string(state).expect("states always serialize");
    let hash = Sha256::digest(serialized.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in &hash[..8] {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

pub fn trace_log_entries(trace: &EpisodeTrace) -> Vec<EpisodeLogEntry> {
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| EpisodeLogEntry {
            episode_id: trace.record_id.clone(),
            step: i as u32 + 1,
            state_digest: state_digest(&step.state),
            hypothesis: step
                .hypothesis
                .as_ref()
                .map(|h| (h.hypothesis.clone(), h.level)),
            action: step.action.clone(),
            observation: step.observation.clone(),
            reward: step.reward,
        })
        .collect()
}

pub fn append_log_entries(
    path: &Path,
    entries: &[EpisodeLogEntry],
) -> Result<(), HarnessError> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    for entry in entries {
        let line =
            serde_json::to_string(entry).expect("entries always serialize");
        writeln!(file, "{line}").map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(())
}

pub fn read_log_entries(
    path: &Path,
) -> Result<Vec<EpisodeLogEntry>, HarnessError> {
    let file =
        fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| {
            HarnessError::Line {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            }
        })?);
    }
    Ok(entries)
}

/// Replays logged actions through a fresh episode and checks that the
/// environment reproduces the logged observations exactly.
pub fn replay_matches(
    record: &PatientRecord,
    catalog: &TestCatalog,
    config: &EpisodeConfig,
    entries: &[EpisodeLogEntry],
) -> Result<bool, HarnessError> {
    let mut episode = Episode::start(record, catalog, config)?;
    for entry in entries {
        if state_digest(episode.state()) != entry.state_digest {
            return Ok(false);
        }
        let result = episode.step(&entry.action)?;
        if result.observation != entry.observation {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub dataset_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub log_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("out/checkpoints"),
            log_dir: PathBuf::from("out/logs"),
        }
    }
}

/// Reward constants, exposed under the `[rewards]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardsSection {
    pub epsilon: f64,
    pub r_pos: f64,
    pub r_neg: f64,
    pub r_invalid: f64,
    pub explore_p0: f64,
    pub explore_decay: f64,
}

impl Default for RewardsSection {
    fn default() -> Self {
        let calibration = CalibrationRewardConfig::default();
        let decision = DecisionRewardConfig::default();
        let exploration = ExplorationSchedule::default();
        Self {
            epsilon: calibration.epsilon,
            r_pos: decision.r_pos,
            r_neg: decision.r_neg,
            r_invalid: decision.r_invalid,
            explore_p0: exploration.p0,
            explore_decay: exploration.decay,
        }
    }
}

impl RewardsSection {
    pub fn calibration(&self) -> Result<CalibrationRewardConfig, RewardError> {
        CalibrationRewardConfig::new(self.epsilon)
    }

    pub fn decision(&self) -> DecisionRewardConfig {
        DecisionRewardConfig {
            r_pos: self.r_pos,
            r_neg: self.r_neg,
            r_invalid: self.r_invalid,
        }
    }

    pub fn exploration(&self) -> ExplorationSchedule {
        ExplorationSchedule {
            p0: self.explore_p0,
            decay: self.explore_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// Calibration bins.
    pub n_bins: usize,
    /// Evaluate by sampling instead of greedy argmax.
    pub sampling_eval: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            n_bins: 10,
            sampling_eval: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    /// Preset name understood by `synth::presets::by_name`.
    pub preset: String,
    pub n_patients: usize,
    /// Dataset seed; falls back to the global seed when absent.
    pub data_seed: Option<u64>,
    pub split: [f64; 3],
}

impl Default for SynthSection {
    fn default() -> Self {
        let base = SyntheticConfig::default();
        Self {
            preset: "one-decisive-test".to_string(),
            n_patients: base.n_patients,
            data_seed: None,
            split: base.split,
        }
    }
}

/// Full run configuration: one TOML file drives every subcommand. `seed` is
/// mandatory; everything else has documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub env: EpisodeConfig,
    #[serde(default)]
    pub rewards: RewardsSection,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub remote: RemoteConfig,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            paths: PathsSection::default(),
            env: EpisodeConfig::default(),
            rewards: RewardsSection::default(),
            trainer: TrainConfig::default(),
            metrics: MetricsSection::default(),
            synth: SynthSection::default(),
            remote: RemoteConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let config: Self = toml::from_str(&text).map_err(|e| {
            HarnessError::Config(format!("{}: {e}", path.display()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.rewards
            .calibration()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        crate::synth::presets::by_name(&self.synth.preset)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.trainer.validate().map_err(HarnessError::Config)?;
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.synth.data_seed.unwrap_or(self.seed)
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_patients: self.synth.n_patients,
            seed: self.data_seed(),
            split: self.synth.split,
        }
    }

    /// Serializes the fully resolved configuration; written next to every
    /// run's outputs so the run can be reproduced from them alone.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join("resolved-config.toml");
        fs::write(&path, self.to_toml())
            .map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }
}

/// Split summary printed by `gen-data`.
pub fn describe_splits(
    splits: &crate::synth::DatasetSplits,
    catalog: &TestCatalog,
) -> String {
    use crate::synth::DatasetSplits;
    let mut out = String::new();
    for (name, records) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        let counts = DatasetSplits::class_counts(records, catalog);
        let pairs: Vec<String> = catalog
            .classes()
            .iter()
            .zip(&counts)
            .map(|(c, n)| format!("{c}={n}"))
            .collect();
        out.push_str(&format!(
            "{name}: {} records ({})\n",
            records.len(),
            pairs.join(", ")
        ));
    }
    out
}
