//! Reward machinery for the three training objectives.
//!
//! Confidence calibration is a betting game: log(c) when the hypothesis is
//! right, log(1-c) when it is wrong, affinely rescaled to [-1, 1]. The
//! decision agent earns a fixed terminal reward keyed on the episode outcome.
//! Confidence exploration replaces the sampled level with a random different
//! one at a decaying probability.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EpisodeOutcome, OutcomeKind};
use crate::protocol::CONFIDENCE_EPSILON;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("epsilon {0} must lie in (0, 0.5)")]
    BadEpsilon(f64),
    #[error("confidence {c} outside the clip range [{lo}, {hi}]")]
    ConfidenceOutOfRange { c: f64, lo: f64, hi: f64 },
}

/// Betting-game reward scaled to [-1, 1]. `L = ln(eps)` and `U = ln(1-eps)`
/// bound the raw log reward for any clipped confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRewardConfig {
    pub epsilon: f64,
}

impl Default for CalibrationRewardConfig {
    fn default() -> Self {
        Self {
            epsilon: CONFIDENCE_EPSILON,
        }
    }
}

impl CalibrationRewardConfig {
    pub fn new(epsilon: f64) -> Result<Self, RewardError> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(RewardError::BadEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    /// `ln(eps)`, the smallest raw reward.
    pub fn lower_bound(&self) -> f64 {
        self.epsilon.ln()
    }

    /// `ln(1-eps)`, the largest raw reward.
    pub fn upper_bound(&self) -> f64 {
        (1.0 - self.epsilon).ln()
    }

    /// The scaled betting reward for one hypothesis of confidence `c`.
    pub fn reward(&self, correct: bool, c: f64) -> Result<f64, RewardError> {
        let lo = self.epsilon;
        let hi = 1.0 - self.epsilon;
        if !(lo..=hi).contains(&c) {
            return Err(RewardError::ConfidenceOutOfRange { c, lo, hi });
        }
        let raw = if correct { c.ln() } else { (1.0 - c).ln() };
        let (l, u) = (self.lower_bound(), self.upper_bound());
        Ok(2.0 * (raw - l) / (u - l) - 1.0)
    }
}

/// Terminal reward for the decision agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionRewardConfig {
    pub r_pos: f64,
    pub r_neg: f64,
    pub r_invalid: f64,
}

impl Default for DecisionRewardConfig {
    fn default() -> Self {
        Self {
            r_pos: 1.0,
            r_neg: -1.0,
            r_invalid: -1.5,
        }
    }
}

impl DecisionRewardConfig {
    /// Depends only on the outcome kind; the tests taken along the way do
    /// not shape the reward.
    pub fn reward(&self, outcome: &EpisodeOutcome) -> f64 {
        match outcome.kind {
            OutcomeKind::CorrectDiagnosis => self.r_pos,
            OutcomeKind::WrongDiagnosis => self.r_neg,
            OutcomeKind::InvalidTermination | OutcomeKind::BudgetExhausted => {
                self.r_invalid
            }
        }
    }
}

/// Multiplicatively decaying exploration probability: `p_t = p0 * decay^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationSchedule {
    pub p0: f64,
    pub decay: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            p0: 0.9,
            decay: 0.995,
        }
    }
}

impl ExplorationSchedule {
    pub fn prob(&self, t: u64) -> f64 {
        self.p0 * self.decay.powf(t as f64)
    }
}

/// With probability `p_t`, replaces `level` by a uniformly drawn different
/// level in 0..=10. The caller recomputes the executed level's log-prob under
/// the policy for training.
pub fn explore_confidence<R: Rng + ?Sized>(
    level: u8,
    p_t: f64,
    rng: &mut R,
) -> u8 {
    if rng.gen::<f64>() >= p_t {
        return level;
    }
    let draw = rng.gen_range(0..10u8);
    // Skip over the current level so the replacement always differs.
    if draw >= level {
        draw + 1
    } else {
        draw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_maxes_out_at_honest_extremes() {
        let cfg = CalibrationRewardConfig::default();
        assert_relative_eq!(cfg.reward(true, 0.95).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(cfg.reward(false, 0.05).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(cfg.reward(true, 0.05).unwrap(), -1.0, epsilon = 1e-12);
        assert_relative_eq!(cfg.reward(false, 0.95).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn reward_at_half_confidence_matches_closed_form() {
        let cfg = CalibrationRewardConfig::default();
        // 2 (ln 0.5 - ln 0.05) / (ln 0.95 - ln 0.05) - 1
        let expected = 2.0 * (0.5f64.ln() - 0.05f64.ln())
            / (0.95f64.ln() - 0.05f64.ln())
            - 1.0;
        let got = cfg.reward(true, 0.5).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-12);
        assert_relative_eq!(got, 0.564023, max_relative = 1e-5);
    }

    #[test]
    fn reward_is_monotone_in_confidence() {
        let cfg = CalibrationRewardConfig::default();
        let cs: Vec<f64> = (0..=10u8)
            .map(|l| crate::protocol::level_to_confidence(l).unwrap())
            .collect();
        for w in cs.windows(2) {
            assert!(cfg.reward(true, w[1]).unwrap() > cfg.reward(true, w[0]).unwrap());
            assert!(cfg.reward(false, w[1]).unwrap() < cfg.reward(false, w[0]).unwrap());
        }
    }

    #[test]
    fn out_of_clip_confidence_is_a_usage_error() {
        let cfg = CalibrationRewardConfig::default();
        assert!(cfg.reward(true, 0.01).is_err());
        assert!(cfg.reward(true, 0.99).is_err());
        assert!(CalibrationRewardConfig::new(0.0).is_err());
        assert!(CalibrationRewardConfig::new(0.5).is_err());
    }

    #[test]
    fn decision_reward_keys_only_on_outcome_kind() {
        let cfg = DecisionRewardConfig::default();
        let outcome = |kind, tests_used| EpisodeOutcome {
            kind,
            predicted: None,
            tests_used,
        };
        assert_eq!(cfg.reward(&outcome(OutcomeKind::CorrectDiagnosis, 0)), 1.0);
        assert_eq!(cfg.reward(&outcome(OutcomeKind::CorrectDiagnosis, 9)), 1.0);
        assert_eq!(cfg.reward(&outcome(OutcomeKind::WrongDiagnosis, 2)), -1.0);
        assert_eq!(
            cfg.reward(&outcome(OutcomeKind::InvalidTermination, 0)),
            -1.5
        );
        assert_eq!(cfg.reward(&outcome(OutcomeKind::BudgetExhausted, 5)), -1.5);
    }

    #[test]
    fn exploration_schedule_decays_multiplicatively() {
        let s = ExplorationSchedule::default();
        assert_relative_eq!(s.prob(0), 0.9);
        assert_relative_eq!(s.prob(1), 0.8955, max_relative = 1e-12);
        let constant = ExplorationSchedule { p0: 0.4, decay: 1.0 };
        assert_relative_eq!(constant.prob(1_000), 0.4);
        for t in 0..50 {
            assert!(s.prob(t + 1) <= s.prob(t));
        }
    }

    #[test]
    fn exploration_extremes_behave() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for level in 0..=10u8 {
            for _ in 0..50 {
                assert_eq!(explore_confidence(level, 0.0, &mut rng), level);
                assert_ne!(explore_confidence(level, 1.0, &mut rng), level);
            }
        }
    }

    #[test]
    fn exploration_replacement_levels_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2_000 {
            let level = rng.gen_range(0..=10u8);
            let replaced = explore_confidence(level, 1.0, &mut rng);
            assert!(replaced <= 10);
        }
    }

    #[test]
    fn exploration_frequency_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut replaced = 0;
        for _ in 0..n {
            if explore_confidence(5, 0.5, &mut rng) != 5 {
                replaced += 1;
            }
        }
        let freq = replaced as f64 / n as f64;
        assert!((0.49..=0.51).contains(&freq), "freq = {freq}");
    }
}
