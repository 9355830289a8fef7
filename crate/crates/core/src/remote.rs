//! Remote text-generation backend speaking an OpenAI-compatible
//! chat-completions contract.
//!
//! The hypothesis agent is stateless: every invocation sends the system
//! template plus one user turn carrying the serialized observed state. The
//! decision agent is conversational: the system template is sent once and
//! observations/generations accumulate as alternating user/assistant turns.
//! Parse failures trigger bounded re-prompting; a decision generation that
//! still fails to parse becomes a malformed action, while transport failures
//! surface as errors.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::TestCatalog;
use crate::env::{EnvAction, ObservedState};
use crate::policy::PolicyError;
use crate::protocol::{
    parse_decision, parse_hypothesis, render_decision_prompt,
    render_hypothesis_prompt, DecisionKind, HypothesisOutput,
};

/// Sent after an unparseable generation to ask for a compliant retry.
pub const REFORMAT_NOTICE: &str =
    "Your answer did not follow the required format. Please answer again using exactly the specified format.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL up to and including the API prefix, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// Upper bound on concurrent requests through one agent.
    pub max_in_flight: usize,
    /// Re-prompts allowed after an unparseable generation.
    pub parse_retries: u32,
    /// Immediate retries after a transport failure.
    pub transport_retries: u32,
    /// Name of an environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".to_string(),
            model: "default".to_string(),
            temperature: 0.0,
            timeout_secs: 60,
            max_in_flight: 4,
            parse_retries: 2,
            transport_retries: 2,
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// Counting gate bounding in-flight requests.
struct FlightGate {
    limit: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

impl FlightGate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            state: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> FlightPermit<'_> {
        let mut count = self.state.lock().expect("gate poisoned");
        while *count >= self.limit {
            count = self.cv.wait(count).expect("gate poisoned");
        }
        *count += 1;
        FlightPermit { gate: self }
    }
}

struct FlightPermit<'a> {
    gate: &'a FlightGate,
}

impl Drop for FlightPermit<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.state.lock().expect("gate poisoned");
        *count -= 1;
        self.gate.cv.notify_one();
    }
}

/// Per-episode conversation state for the decision agent. Ignored by
/// non-remote backends.
#[derive(Debug, Default)]
pub struct RemoteSession {
    messages: Vec<ChatMessage>,
    pending_observation: Option<String>,
    started: bool,
}

impl RemoteSession {
    /// Records the environment's reply so the next decision turn carries it.
    pub fn record_observation(&mut self, text: impl Into<String>) {
        self.pending_observation = Some(text.into());
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }
}

pub struct RemoteAgent {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: FlightGate,
}

impl RemoteAgent {
    pub fn new(config: RemoteConfig) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        let gate = FlightGate::new(config.max_in_flight);
        Ok(Self {
            config,
            client,
            gate,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// One stateless hypothesis exchange with bounded re-prompting.
    pub fn hypothesis_call(
        &self,
        state: &ObservedState,
        catalog: &TestCatalog,
    ) -> Result<HypothesisOutput, PolicyError> {
        let rendered = render_hypothesis_prompt(state, catalog);
        let (system, user) = split_prompt(&rendered, &state.serialize_text());
        let mut messages = vec![
            ChatMessage::new("system", system),
            ChatMessage::new("user", user),
        ];
        let mut last_err = None;
        for _ in 0..=self.config.parse_retries {
            let content = self.complete(&messages)?;
            match parse_hypothesis(&content, catalog) {
                Ok(output) => return Ok(output),
                Err(err) => {
                    messages.push(ChatMessage::new("assistant", content));
                    messages.push(ChatMessage::new("user", REFORMAT_NOTICE));
                    last_err = Some(err);
                }
            }
        }
        Err(PolicyError::RemoteParse(last_err.expect("at least one attempt")))
    }

    /// One conversational decision exchange. Returns a malformed action when
    /// every re-prompt fails to parse.
    pub fn decision_call(
        &self,
        state: &ObservedState,
        hyp: &HypothesisOutput,
        catalog: &TestCatalog,
        session: &mut RemoteSession,
    ) -> Result<EnvAction, PolicyError> {
        let hypothesis_line = format!(
            "The current hypothesis is {} with confidence {}.",
            hyp.hypothesis, hyp.level
        );
        if !session.started {
            let rendered = render_decision_prompt(state, hyp, catalog);
            let (system, user) = split_prompt(
                &rendered,
                &format!("{}\n{}", state.serialize_text(), hypothesis_line),
            );
            session.messages.push(ChatMessage::new("system", system));
            session.messages.push(ChatMessage::new("user", user));
            session.started = true;
        } else {
            let observation = session
                .pending_observation
                .take()
                .unwrap_or_default();
            session.messages.push(ChatMessage::new(
                "user",
                format!("{observation}\n{hypothesis_line}"),
            ));
        }

        let mut last_err = None;
        for _ in 0..=self.config.parse_retries {
            let content = self.complete(&session.messages)?;
            session
                .messages
                .push(ChatMessage::new("assistant", content.clone()));
            match parse_decision(&content, catalog) {
                Ok(out) => {
                    let action = match out.kind {
                        DecisionKind::Test => EnvAction::RequestTest(out.input),
                        DecisionKind::Diagnosis => EnvAction::Diagnose(out.input),
                    };
                    return Ok(action);
                }
                Err(err) => {
                    session
                        .messages
                        .push(ChatMessage::new("user", REFORMAT_NOTICE));
                    last_err = Some(err);
                }
            }
        }
        let err = last_err.expect("at least one attempt");
        Ok(EnvAction::Malformed(err.to_string()))
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, PolicyError> {
        let _permit = self.gate.acquire();
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = ChatRequest {
            model: &self.config.model,
            temperature: self.config.temperature,
            messages,
        };
        let mut last_err = String::new();
        for _ in 0..=self.config.transport_retries {
            let mut request = self.client.post(&url).json(&body);
            if let Some(var) = &self.config.api_key_env {
                if let Ok(key) = std::env::var(var) {
                    request = request.bearer_auth(key);
                }
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_server_error() {
                        last_err = format!("server error: {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(PolicyError::Transport(format!(
                            "request failed: {status}"
                        )));
                    }
                    let parsed: ChatResponse = response
                        .json()
                        .map_err(|e| PolicyError::Transport(e.to_string()))?;
                    let first = parsed.choices.into_iter().next().ok_or_else(
                        || PolicyError::Transport("empty choices".to_string()),
                    )?;
                    return Ok(first.message.content);
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(PolicyError::Transport(last_err))
    }
}

/// Splits a rendered prompt into (system, user) at the observed-state slot:
/// everything before the state stays in the system message and `user_text`
/// becomes the user turn.
fn split_prompt(rendered: &str, user_text: &str) -> (String, String) {
    match rendered.find(user_text) {
        Some(pos) if !user_text.is_empty() => (
            rendered[..pos].trim_end().to_string(),
            format!("{}{}", user_text, &rendered[pos + user_text.len()..]),
        ),
        _ => (rendered.to_string(), user_text.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_prompt_keeps_template_head_in_system() {
        let rendered = "HEAD\nHere is some information on the patient:\nSTATE TEXT";
        let (system, user) = split_prompt(rendered, "STATE TEXT");
        assert_eq!(system, "HEAD\nHere is some information on the patient:");
        assert_eq!(user, "STATE TEXT");
    }

    #[test]
    fn split_prompt_carries_trailing_template_into_user() {
        let rendered = "HEAD:\nSTATE\nThe current hypothesis is x with confidence 3.";
        let (system, user) =
            split_prompt(rendered, "STATE\nThe current hypothesis is x with confidence 3.");
        assert_eq!(system, "HEAD:");
        assert!(user.ends_with("confidence 3."));
    }

    #[test]
    fn flight_gate_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let gate = Arc::new(FlightGate::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let gate = gate.clone();
            let active = active.clone();
            let peak = peak.clone();
            handles.push(std::thread::spawn(move || {
                let _permit = gate.acquire();
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                active.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
