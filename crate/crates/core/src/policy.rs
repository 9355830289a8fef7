//! Agent backends.
//!
//! Four interchangeable implementations of the two agent roles: trainable
//! linear heads over state features, an exact-posterior oracle with myopic
//! information-gain test selection, a fixed scripted plan, and a remote
//! chat-completions adapter. Sampling is the only source of randomness; the
//! caller owns the rng stream.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TestCatalog;
use crate::env::{EnvAction, ObservedState};
use crate::features::{FeatureError, Featurizer, N_LEVELS};
use crate::protocol::{HypothesisOutput, ParseError, ProtocolError};
use crate::remote::{RemoteAgent, RemoteSession};
use crate::synth::{GenerativeModel, SynthError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("remote generation failed to parse after retries: {0}")]
    RemoteParse(ParseError),
    #[error("remote transport failure: {0}")]
    Transport(String),
    #[error("scripted plan must contain at least one action")]
    EmptyPlan,
}

/// Head shapes are fixed by the catalog and finding vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShapes {
    pub base_dim: usize,
    pub conf_dim: usize,
    pub n_classes: usize,
    pub n_actions: usize,
}

impl HeadShapes {
    pub fn for_featurizer(f: &Featurizer) -> Self {
        Self {
            base_dim: f.base_dim(),
            conf_dim: f.conf_dim(),
            n_classes: f.catalog().n_classes(),
            n_actions: f.n_actions(),
        }
    }
}

/// Trainable parameters: three linear softmax heads plus two scalar value
/// baselines. Flat row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shapes: HeadShapes,
    /// n_classes x base_dim.
    pub class_head: Vec<f64>,
    /// N_LEVELS x conf_dim.
    pub confidence_head: Vec<f64>,
    /// n_actions x base_dim.
    pub decision_head: Vec<f64>,
    /// conf_dim.
    pub value_head_h: Vec<f64>,
    /// base_dim.
    pub value_head_d: Vec<f64>,
}

impl PolicyParams {
    /// All-zero initialization: every head samples uniformly.
    pub fn zeros(shapes: HeadShapes) -> Self {
        Self {
            shapes,
            class_head: vec![0.0; shapes.n_classes * shapes.base_dim],
            confidence_head: vec![0.0; N_LEVELS * shapes.conf_dim],
            decision_head: vec![0.0; shapes.n_actions * shapes.base_dim],
            value_head_h: vec![0.0; shapes.conf_dim],
            value_head_d: vec![0.0; shapes.base_dim],
        }
    }

    /// Zero init except the confidence head, which puts nearly all its mass
    /// on one level regardless of input. Mirrors the over-confident behavior
    /// of an untrained agent that almost always verbalizes the same high
    /// confidence.
    pub fn overconfident(shapes: HeadShapes, level: u8, logit: f64) -> Self {
        let mut params = Self::zeros(shapes);
        let bias_col = shapes.base_dim - 1;
        params.confidence_head[level as usize * shapes.conf_dim + bias_col] =
            logit;
        params
    }

    pub fn class_logits(&self, base: &[f64]) -> Vec<f64> {
        matvec(
            &self.class_head,
            self.shapes.n_classes,
            self.shapes.base_dim,
            base,
        )
    }

    pub fn confidence_logits(&self, conf_input: &[f64]) -> Vec<f64> {
        matvec(
            &self.confidence_head,
            N_LEVELS,
            self.shapes.conf_dim,
            conf_input,
        )
    }

    pub fn decision_logits(&self, base: &[f64]) -> Vec<f64> {
        matvec(
            &self.decision_head,
            self.shapes.n_actions,
            self.shapes.base_dim,
            base,
        )
    }

    pub fn value_h(&self, conf_input: &[f64]) -> f64 {
        dot(&self.value_head_h, conf_input)
    }

    pub fn value_d(&self, base: &[f64]) -> f64 {
        dot(&self.value_head_d, base)
    }

    pub fn is_finite(&self) -> bool {
        self.class_head.iter().all(|x| x.is_finite())
            && self.confidence_head.iter().all(|x| x.is_finite())
            && self.decision_head.iter().all(|x| x.is_finite())
            && self.value_head_h.iter().all(|x| x.is_finite())
            && self.value_head_d.iter().all(|x| x.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matvec(w: &[f64], rows: usize, dim: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * dim);
    debug_assert_eq!(x.len(), dim);
    (0..rows).map(|r| dot(&w[r * dim..(r + 1) * dim], x)).collect()
}

/// Log-probabilities of a masked softmax; masked entries are -inf.
pub fn masked_log_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let excluded = |i: usize| mask.map_or(false, |m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded(*i))
        .map(|(_, v)| (v - max).exp())
        .sum();
    let lse = max + sum.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if excluded(i) {
                f64::NEG_INFINITY
            } else {
                v - lse
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Draws an index from log-probabilities. Greedy takes the argmax with ties
/// broken toward the lowest index.
pub fn choose_index<R: Rng + ?Sized>(
    logps: &[f64],
    mode: ActMode,
    rng: &mut R,
) -> usize {
    match mode {
        ActMode::Greedy => {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in logps.iter().enumerate() {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last_valid = 0;
            for (i, &lp) in logps.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                last_valid = i;
                acc += lp.exp();
                if u < acc {
                    return i;
                }
            }
            last_valid
        }
    }
}

/// A fixed plan: constant hypothesis, actions indexed by environment step
/// (the last action repeats once the plan runs out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub hypothesis_class: usize,
    pub hypothesis_level: u8,
    pub plan: Vec<EnvAction>,
}

impl ScriptedPolicy {
    pub fn new(
        hypothesis_class: usize,
        hypothesis_level: u8,
        plan: Vec<EnvAction>,
    ) -> Result<Self, PolicyError> {
        if plan.is_empty() {
            return Err(PolicyError::EmptyPlan);
        }
        Ok(Self {
            hypothesis_class,
            hypothesis_level,
            plan,
        })
    }

    /// Diagnose `class` at the first step, never requesting anything.
    pub fn immediate_diagnose(
        class: &str,
        level: u8,
        catalog: &TestCatalog,
    ) -> Result<Self, PolicyError> {
        let idx = catalog.class_index(class).unwrap_or(0);
        Self::new(idx, level, vec![EnvAction::Diagnose(class.to_string())])
    }
}

/// An agent implementation. One backend value can serve both agent roles.
pub enum AgentBackend {
    Parametric {
        params: PolicyParams,
        featurizer: Featurizer,
    },
    BayesOracle {
        model: GenerativeModel,
        /// Diagnose once the posterior maximum reaches this threshold.
        tau: f64,
    },
    Scripted(ScriptedPolicy),
    Remote(RemoteAgent),
}

impl AgentBackend {
    pub fn parametric(params: PolicyParams, featurizer: Featurizer) -> Self {
        Self::Parametric { params, featurizer }
    }

    pub fn params(&self) -> Option<&PolicyParams> {
        match self {
            Self::Parametric { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut PolicyParams> {
        match self {
            Self::Parametric { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn featurizer(&self) -> Option<&Featurizer> {
        match self {
            Self::Parametric { featurizer, .. } => Some(featurizer),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Parametric { .. } => "parametric",
            Self::BayesOracle { .. } => "oracle",
            Self::Scripted(_) => "scripted",
            Self::Remote(_) => "remote",
        }
    }
}

/// One hypothesis-agent invocation.
#[derive(Debug, Clone)]
pub struct HypothesisAct {
    pub output: HypothesisOutput,
    pub class_logp: f64,
    pub level_logp: f64,
    /// Base and confidence-head feature vectors; parametric backends only.
    pub features: Option<(Vec<f64>, Vec<f64>)>,
}

/// One decision-agent invocation.
#[derive(Debug, Clone)]
pub struct DecisionAct {
    pub action: EnvAction,
    pub logp: f64,
    /// Index into the decision head's action space; parametric backends only.
    pub action_idx: Option<usize>,
    pub features: Option<Vec<f64>>,
    pub mask: Option<Vec<bool>>,
}

pub fn hypothesis_act<R: Rng + ?Sized>(
    backend: &AgentBackend,
    state: &ObservedState,
    catalog: &TestCatalog,
    mode: ActMode,
    rng: &mut R,
) -> Result<HypothesisAct, PolicyError> {
    match backend {
        AgentBackend::Parametric { params, featurizer } => {
            let base = featurizer.featurize(state, None)?;
            let class_logps =
                masked_log_softmax(&params.class_logits(&base), None);
            let class_idx = choose_index(&class_logps, mode, rng);
            let conf = featurizer.conf_features(&base, class_idx);
            let level_logps =
                masked_log_softmax(&params.confidence_logits(&conf), None);
            let level = choose_index(&level_logps, mode, rng);
            let output = HypothesisOutput::new(class_idx, level as u8, catalog)?;
            Ok(HypothesisAct {
                output,
                class_logp: class_logps[class_idx],
                level_logp: level_logps[level],
                features: Some((base, conf)),
            })
        }
        AgentBackend::BayesOracle { model, .. } => {
            let post = oracle_posterior(model, state)?;
            let class_idx = argmax(&post);
            let level = round_half_up_level(post[class_idx]);
            let output = HypothesisOutput::new(class_idx, level, catalog)?;
            Ok(HypothesisAct {
                output,
                class_logp: 0.0,
                level_logp: 0.0,
                features: None,
            })
        }
        AgentBackend::Scripted(script) => {
            let output = HypothesisOutput::new(
                script.hypothesis_class,
                script.hypothesis_level,
                catalog,
            )?;
            Ok(HypothesisAct {
                output,
                class_logp: 0.0,
                level_logp: 0.0,
                features: None,
            })
        }
        AgentBackend::Remote(agent) => {
            let output = agent.hypothesis_call(state, catalog)?;
            Ok(HypothesisAct {
                output,
                class_logp: 0.0,
                level_logp: 0.0,
                features: None,
            })
        }
    }
}

pub fn decision_act<R: Rng + ?Sized>(
    backend: &AgentBackend,
    state: &ObservedState,
    hyp: &HypothesisOutput,
    catalog: &TestCatalog,
    mode: ActMode,
    session: &mut RemoteSession,
    rng: &mut R,
) -> Result<DecisionAct, PolicyError> {
    match backend {
        AgentBackend::Parametric { params, featurizer } => {
            let features = featurizer.featurize(state, Some(hyp))?;
            let mask = featurizer.decision_mask(state);
            let logps = masked_log_softmax(
                &params.decision_logits(&features),
                Some(&mask),
            );
            let idx = choose_index(&logps, mode, rng);
            Ok(DecisionAct {
                action: featurizer.action_to_env(idx),
                logp: logps[idx],
                action_idx: Some(idx),
                features: Some(features),
                mask: Some(mask),
            })
        }
        AgentBackend::BayesOracle { model, tau } => {
            let post = oracle_posterior(model, state)?;
            let best = argmax(&post);
            let candidates: Vec<usize> = (0..catalog.n_tests())
                .filter(|&t| !state.requested.contains(&catalog.tests()[t]))
                .collect();
            let action = if post[best] >= *tau || candidates.is_empty() {
                EnvAction::Diagnose(catalog.classes()[best].clone())
            } else {
                let pick = candidates
                    .iter()
                    .copied()
                    .map(|t| (t, expected_entropy_reduction(model, &post, t)))
                    .fold((candidates[0], f64::NEG_INFINITY), |acc, (t, g)| {
                        if g > acc.1 {
                            (t, g)
                        } else {
                            acc
                        }
                    })
                    .0;
                EnvAction::RequestTest(catalog.tests()[pick].clone())
            };
            Ok(DecisionAct {
                action,
                logp: 0.0,
                action_idx: None,
                features: None,
                mask: None,
            })
        }
        AgentBackend::Scripted(script) => {
            let idx = (state.step as usize).min(script.plan.len() - 1);
            Ok(DecisionAct {
                action: script.plan[idx].clone(),
                logp: 0.0,
                action_idx: None,
                features: None,
                mask: None,
            })
        }
        AgentBackend::Remote(agent) => {
            let action = agent.decision_call(state, hyp, catalog, session)?;
            Ok(DecisionAct {
                action,
                logp: 0.0,
                action_idx: None,
                features: None,
                mask: None,
            })
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Verbalized level for a posterior maximum: round half up on a 0-10 scale.
fn round_half_up_level(p: f64) -> u8 {
    (((10.0 * p) + 0.5).floor() as u8).min(10)
}

fn oracle_posterior(
    model: &GenerativeModel,
    state: &ObservedState,
) -> Result<Vec<f64>, PolicyError> {
    let findings = model.parse_state(state)?;
    Ok(model.exact_posterior(&findings)?)
}

fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Myopic expected information gain of one test under the current posterior:
/// H(post) minus the expected posterior entropy after observing the test.
fn expected_entropy_reduction(
    model: &GenerativeModel,
    post: &[f64],
    test_idx: usize,
) -> f64 {
    let test = &model.tests[test_idx];
    let h0 = entropy(post);
    let mut expected = 0.0;
    for f in 0..test.findings.len() {
        let joint: Vec<f64> = post
            .iter()
            .enumerate()
            .map(|(c, p)| p * test.likelihood(f, c))
            .collect();
        let pf: f64 = joint.iter().sum();
        if pf <= 0.0 {
            continue;
        }
        let cond: Vec<f64> = joint.iter().map(|j| j / pf).collect();
        expected += pf * entropy(&cond);
    }
    h0 - expected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reset;
    use crate::synth::presets;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (GenerativeModel, Featurizer, TestCatalog) {
        let model = presets::one_decisive_test();
        let featurizer = Featurizer::from_model(&model);
        let catalog = model.catalog.clone();
        (model, featurizer, catalog)
    }

    fn fresh_state(model: &GenerativeModel, seed: u64) -> ObservedState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        reset(&model.sample_patient("p0", &mut rng))
    }

    #[test]
    fn zero_params_sample_uniformly_over_classes_and_levels() {
        let (model, featurizer, catalog) = setup();
        let params = PolicyParams::zeros(HeadShapes::for_featurizer(&featurizer));
        let backend = AgentBackend::parametric(params, featurizer);
        let state = fresh_state(&model, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut class_counts = vec![0usize; 4];
        let mut level_counts = vec![0usize; 11];
        let n = 40_000;
        for _ in 0..n {
            let act =
                hypothesis_act(&backend, &state, &catalog, ActMode::Sample, &mut rng)
                    .unwrap();
            class_counts[act.output.class_idx] += 1;
            level_counts[act.output.level as usize] += 1;
            assert_relative_eq!(act.class_logp, (0.25f64).ln());
            assert_relative_eq!(act.level_logp, (1.0f64 / 11.0).ln());
        }
        for c in class_counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02);
        }
        for l in level_counts {
            assert!((l as f64 / n as f64 - 1.0 / 11.0).abs() < 0.02);
        }
    }

    #[test]
    fn sampled_log_probs_match_direct_recomputation() {
        let (model, featurizer, catalog) = setup();
        let shapes = HeadShapes::for_featurizer(&featurizer);
        let mut params = PolicyParams::zeros(shapes);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for w in params.decision_head.iter_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
        for w in params.class_head.iter_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
        let backend = AgentBackend::parametric(params, featurizer.clone());
        let mut state = fresh_state(&model, 3);
        state.requested.insert("CT".into());
        let hyp = HypothesisOutput::new(1, 4, &catalog).unwrap();
        let mut session = RemoteSession::default();
        for _ in 0..200 {
            let act = decision_act(
                &backend,
                &state,
                &hyp,
                &catalog,
                ActMode::Sample,
                &mut session,
                &mut rng,
            )
            .unwrap();
            let params = backend.params().unwrap();
            let f = featurizer.featurize(&state, Some(&hyp)).unwrap();
            let logps = masked_log_softmax(
                &params.decision_logits(&f),
                Some(&featurizer.decision_mask(&state)),
            );
            assert_relative_eq!(
                act.logp,
                logps[act.action_idx.unwrap()],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn masking_forbids_duplicates_and_exhausted_tests_force_diagnoses() {
        let (model, featurizer, catalog) = setup();
        let params = PolicyParams::zeros(HeadShapes::for_featurizer(&featurizer));
        let backend = AgentBackend::parametric(params, featurizer);
        let mut state = fresh_state(&model, 4);
        for name in catalog.tests() {
            state.requested.insert(name.clone());
        }
        let hyp = HypothesisOutput::new(0, 5, &catalog).unwrap();
        let mut session = RemoteSession::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let act = decision_act(
                &backend,
                &state,
                &hyp,
                &catalog,
                ActMode::Sample,
                &mut session,
                &mut rng,
            )
            .unwrap();
            assert!(
                matches!(act.action, EnvAction::Diagnose(_)),
                "got {:?}",
                act.action
            );
        }
    }

    #[test]
    fn oracle_reports_argmax_class_and_rounded_level() {
        // Uniform posterior: first class by catalog order, level
        // round-half-up(2.5) = 3.
        let mut model = presets::one_decisive_test();
        model.history.lambda = 0.0;
        let catalog = model.catalog.clone();
        let backend = AgentBackend::BayesOracle {
            model: model.clone(),
            tau: 0.9,
        };
        let state = fresh_state(&model, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let act =
            hypothesis_act(&backend, &state, &catalog, ActMode::Greedy, &mut rng)
                .unwrap();
        assert_eq!(act.output.class_idx, 0);
        assert_eq!(act.output.level, 3);
    }

    #[test]
    fn oracle_level_follows_posterior_max() {
        // Posterior [4/7, 1/7, 1/7, 1/7] maps to level 6.
        assert_eq!(round_half_up_level(4.0 / 7.0), 6);
        assert_eq!(round_half_up_level(0.25), 3);
        assert_eq!(round_half_up_level(1.0), 10);
        assert_eq!(round_half_up_level(0.0), 0);
    }

    #[test]
    fn oracle_with_zero_tau_diagnoses_immediately() {
        let (model, _, catalog) = setup();
        let backend = AgentBackend::BayesOracle {
            model: model.clone(),
            tau: 0.0,
        };
        let state = fresh_state(&model, 8);
        let hyp = HypothesisOutput::new(0, 5, &catalog).unwrap();
        let mut session = RemoteSession::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let act = decision_act(
            &backend,
            &state,
            &hyp,
            &catalog,
            ActMode::Greedy,
            &mut session,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(act.action, EnvAction::Diagnose(_)));
    }

    #[test]
    fn oracle_with_tau_one_requests_until_no_candidates_remain() {
        let model = presets::uniform_noise();
        let catalog = model.catalog.clone();
        let backend = AgentBackend::BayesOracle {
            model: model.clone(),
            tau: 1.0,
        };
        let mut state = fresh_state(&model, 10);
        let hyp = HypothesisOutput::new(0, 5, &catalog).unwrap();
        let mut session = RemoteSession::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..catalog.n_tests() {
            let act = decision_act(
                &backend,
                &state,
                &hyp,
                &catalog,
                ActMode::Greedy,
                &mut session,
                &mut rng,
            )
            .unwrap();
            match act.action {
                EnvAction::RequestTest(name) => {
                    assert!(!state.requested.contains(&name));
                    state.requested.insert(name);
                }
                other => panic!("expected request, got {other:?}"),
            }
        }
        let act = decision_act(
            &backend,
            &state,
            &hyp,
            &catalog,
            ActMode::Greedy,
            &mut session,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(act.action, EnvAction::Diagnose(_)));
    }

    #[test]
    fn oracle_requests_the_decisive_test_first() {
        let (model, _, catalog) = setup();
        let backend = AgentBackend::BayesOracle {
            model: model.clone(),
            tau: 0.9,
        };
        let state = fresh_state(&model, 12);
        let hyp = HypothesisOutput::new(0, 3, &catalog).unwrap();
        let mut session = RemoteSession::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let act = decision_act(
            &backend,
            &state,
            &hyp,
            &catalog,
            ActMode::Greedy,
            &mut session,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            act.action,
            EnvAction::RequestTest(
                catalog.tests()[presets::DECISIVE_TEST_INDEX].clone()
            )
        );

        // Independent check: brute-force expected information gain over all
        // tests agrees with the oracle's pick.
        let post = oracle_posterior(&model, &state).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for t in 0..catalog.n_tests() {
            let gain = expected_entropy_reduction(&model, &post, t);
            if gain > best.1 {
                best = (t, gain);
            }
        }
        assert_eq!(best.0, presets::DECISIVE_TEST_INDEX);
        assert!(best.1 > 0.5, "decisive gain should be large: {}", best.1);
    }

    #[test]
    fn argmax_is_invariant_under_monotone_transformations() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let mut post: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = post.iter().sum();
            for p in post.iter_mut() {
                *p /= total;
            }
            let base = argmax(&post);
            let sq: Vec<f64> = post.iter().map(|p| p * p).collect();
            let log: Vec<f64> = post.iter().map(|p| p.ln()).collect();
            assert_eq!(argmax(&sq), base);
            assert_eq!(argmax(&log), base);
        }
    }

    #[test]
    fn scripted_immediate_diagnose_is_a_one_action_plan() {
        let (model, _, catalog) = setup();
        let script =
            ScriptedPolicy::immediate_diagnose("appendicitis", 9, &catalog)
                .unwrap();
        let backend = AgentBackend::Scripted(script);
        let state = fresh_state(&model, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let hyp =
            hypothesis_act(&backend, &state, &catalog, ActMode::Greedy, &mut rng)
                .unwrap();
        assert_eq!(hyp.output.hypothesis, "appendicitis");
        assert_eq!(hyp.output.level, 9);
        let mut session = RemoteSession::default();
        let act = decision_act(
            &backend,
            &state,
            &hyp.output,
            &catalog,
            ActMode::Greedy,
            &mut session,
            &mut rng,
        )
        .unwrap();
        assert_eq!(act.action, EnvAction::Diagnose("appendicitis".into()));
        assert!(ScriptedPolicy::new(0, 5, vec![]).is_err());
    }
}
