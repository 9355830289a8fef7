//! Trainable two-agent harness for sequential clinical diagnosis.
//!
//! A hypothesis agent names the most likely condition with a verbalized
//! confidence; a decision agent either requests the next test or commits to a
//! diagnosis. Episodes play out in a deterministic environment over patient
//! records, and three objectives train the loop: supervised hypothesis
//! generation, a betting-game calibration reward on the confidence, and a
//! terminal diagnosis reward on the decisions. A synthetic patient generator
//! with an exact posterior provides a desk-scale reference to measure the
//! trained agents against.

pub mod catalog;
pub mod env;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod protocol;
pub mod remote;
pub mod rewards;
pub mod synth;
pub mod trainer;

pub use catalog::TestCatalog;
pub use env::{
    EnvAction, Episode, EpisodeConfig, EpisodeOutcome, ObservedState,
    OutcomeKind, PatientRecord,
};
pub use policy::{ActMode, AgentBackend, PolicyParams};
pub use protocol::HypothesisOutput;
pub use synth::GenerativeModel;
