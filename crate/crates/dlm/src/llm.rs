//! Prompt construction, response parsing, and the language-model backends.
//!
//! Two backends sit behind one interface: a scripted transcript that replays
//! canned responses in order (tests and offline runs are fully deterministic
//! and network-free) and an HTTP chat-completions client for live runs. Any
//! provider speaking the `{model, messages, temperature}` JSON shape works;
//! the credential is read from an environment variable named in the config,
//! never from a file.

use crate::reward::{self, Expr};
use crate::rmab::{CATEGORIES, RESERVED_FEATURES};
use crate::tasks::TaskSpec;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

/// Sampling temperature for reward generation queries.
pub const GENERATION_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for reflection queries.
pub const REFLECTION_TEMPERATURE: f64 = 0.0;

/// The literal answer-format instruction used in reflection prompts.
pub const REFLECTION_ANSWER_PHRASE: &str = "The best reward function is at index:";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no $$$-delimited code block in the response")]
    MissingDelimiter,
    #[error("candidate reward failed to parse: {0}")]
    BadCandidate(#[from] reward::RewardError),
    #[error("candidate reward references hidden sensitive feature {0}")]
    SensitiveFeature(usize),
    #[error("reflection response lacks the answer phrase '{REFLECTION_ANSWER_PHRASE}'")]
    MissingAnswerPhrase,
    #[error("reflection chose index {got}, but only {count} candidates were shown")]
    IndexOutOfRange { got: usize, count: usize },
    #[error("scripted transcript exhausted after {0} responses")]
    TranscriptExhausted(usize),
    #[error("failed to read transcript {path}: {source}")]
    TranscriptIo {
        path: String,
        source: std::io::Error,
    },
    #[error("transcript {path} is not a JSON array of strings: {source}")]
    TranscriptFormat {
        path: String,
        source: serde_json::Error,
    },
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("http request failed after {attempts} attempts: {message}")]
    Http { attempts: usize, message: String },
    #[error("unexpected response shape: {message}; body: {body}")]
    Decode { message: String, body: String },
}

/// The feature catalog block shared by both prompt kinds: indices 7-42,
/// each exactly once, with the reserved indices collapsed to one hidden
/// line.
pub fn feature_catalog() -> String {
    let mut out = String::from("Index Name DataType\n[sensitive feature hidden]\n");
    for category in &CATEGORIES {
        for (g, name) in category.catalog.iter().enumerate() {
            let _ = writeln!(out, " {}. {} - Binary", category.start + g, name);
        }
    }
    out
}

/// Assemble the reward-generation prompt: objective, feature catalog, syntax
/// rules, one worked example, and the best previous attempts (the in-context
/// history that carries winners forward between iterations).
pub fn build_generation_prompt(task: &TaskSpec, prior_best: &[String]) -> String {
    let mut p = String::new();
    let _ = writeln!(
        p,
        "Create a Python reward function for RL in phone call resource allocation to mothers \
         in India, with the objective of prioritizing higher states and: {goal}. The function \
         should use 'state' (value is either 0,1) and features 'agent_feats' (length 43 array) \
         to direct the RL agent. Here is a description of the features you may use: ",
        goal = task.prompt
    );
    p.push_str(&feature_catalog());
    p.push_str(
        " Your task:\n\
         1. Write a simple, single-line Python reward function. Exclude the word 'return' and \
         exclude non-standard libraries. Format your code with triple $ signs: \
         $$$[YOUR FUNCTION]$$$. \n\
         2. Provide an explanation on how this function prioritizes the specified group. Format \
         your explanation with triple quotes. \n\
         Note that HIGHER states are always preferred, so ensure reward increases as state \
         increases. Make sure reward is always positive and increasing with state. \n\
         Avoid using bitwise operators &, |. Using and, or instead. \n\
         Example Prompt: While prioritizing all, emphasize agents that are both older and richer \n\
         Let's think about this step by step. We want to give reward only for agents that are \
         older, which corresponds to feature 11, and rich which corresponds to feature 42. This \
         corresponds to a condition of (agent_feats[11] and agent_feats[42]). In addition, we \
         always only want to give reward when the state is 1, since the agent gets reward only \
         when it is in a listening state. Therefore, our reward function should be: state * \
         (agent_feats[11] and agent_feats[42]).\n\
         Example Response:\n\
         Python Code: '$$$ state * 0.1 + 2 * state * (agent_feats[11] and agent_feats[42]) $$$'\n\
         Explanation: '''This function rewards older, richer agents in higher states, aligning \
         with the goal.'''\n",
    );
    let _ = writeln!(
        p,
        "Come up with a unique new reward for the specified goal: {goal}. Here are your best \
         previous attempts: ",
        goal = task.prompt
    );
    for prior in prior_best {
        let _ = writeln!(p, "{prior}");
    }
    p
}

/// Extract the first `$$$ ... $$$` block and parse it as a reward
/// expression. Candidates touching the hidden sensitive features are
/// rejected outright.
pub fn parse_generation_response(text: &str) -> Result<Expr, LlmError> {
    let start = text.find("$$$").ok_or(LlmError::MissingDelimiter)?;
    let rest = &text[start + 3..];
    let end = rest.find("$$$").ok_or(LlmError::MissingDelimiter)?;
    let source = rest[..end].trim();
    let expr = reward::parse(source)?;
    if let Some(&k) = reward::used_features(&expr)
        .iter()
        .find(|&&k| k < RESERVED_FEATURES)
    {
        return Err(LlmError::SensitiveFeature(k));
    }
    Ok(expr)
}

/// Assemble the reflection prompt: every candidate's reward next to its
/// state-feature distribution, closing with the exact answer-format
/// instruction. `candidates` pairs each rendered reward with its rendered
/// outcome report.
pub fn build_reflection_prompt(task: &TaskSpec, candidates: &[(String, String)]) -> String {
    assert!(
        !candidates.is_empty(),
        "reflection requires at least one trained candidate"
    );
    let mut p = String::new();
    let _ = writeln!(
        p,
        "My goal was to create a Python reward function for RL in resource allocation, with \
         the objective of: {goal} I tried several reward functions for this task. Below, I \
         have the given reward function, and the corresponding distribution of accumulated \
         positive states across the agent features. A description of the features is as \
         follows:",
        goal = task.prompt
    );
    p.push_str(&feature_catalog());
    p.push_str(
        "\nBelow are the reward functions I used and their corresponding reward distributions:\n",
    );
    for (i, (source, outcome)) in candidates.iter().enumerate() {
        let _ = write!(
            p,
            "\nIndex {i}:\nReward Function: {source}\nReflection:\n'\n{outcome}\n"
        );
    }
    let _ = write!(
        p,
        "\nBased on the above reward distributions and the given goal: {goal}, please identify \
         the index of the most effective reward function. Provide your answer EXACTLY IN the \
         following format: '{REFLECTION_ANSWER_PHRASE} [INDEX]'.\n",
        goal = task.prompt
    );
    p
}

/// Parse the integer following the literal answer phrase; it must index one
/// of the `count` candidates shown.
pub fn parse_reflection_response(text: &str, count: usize) -> Result<usize, LlmError> {
    let at = text
        .find(REFLECTION_ANSWER_PHRASE)
        .ok_or(LlmError::MissingAnswerPhrase)?;
    let rest = &text[at + REFLECTION_ANSWER_PHRASE.len()..];
    let digits: String = rest
        .trim_start_matches([' ', '\t', '['])
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    if digits.is_empty() {
        return Err(LlmError::MissingAnswerPhrase);
    }
    let got: usize = digits.parse().map_err(|_| LlmError::MissingAnswerPhrase)?;
    if got >= count {
        return Err(LlmError::IndexOutOfRange { got, count });
    }
    Ok(got)
}

/// Ordered transcript of canned responses; each completion consumes the next
/// entry and records the prompt it was asked.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTranscript {
    responses: Vec<String>,
    cursor: usize,
    /// Prompts seen so far, for assertions in tests and traces.
    pub prompts: Vec<String>,
}

impl ScriptedTranscript {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            cursor: 0,
            prompts: Vec::new(),
        }
    }

    /// Load a transcript from a JSON array-of-strings fixture file.
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|source| LlmError::TranscriptIo {
            path: path.display().to_string(),
            source,
        })?;
        let responses: Vec<String> =
            serde_json::from_str(&text).map_err(|source| LlmError::TranscriptFormat {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self::new(responses))
    }

    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        self.prompts.push(prompt.to_string());
        let response = self
            .responses
            .get(self.cursor)
            .ok_or(LlmError::TranscriptExhausted(self.responses.len()))?;
        self.cursor += 1;
        Ok(response.clone())
    }
}

/// Connection settings for the HTTP backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of a chat-completions endpoint.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key; an empty name
    /// sends no authorization header.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "DLM_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

/// Blocking chat-completions client with bounded exponential-backoff
/// retries on transport errors, 429 and 5xx.
pub struct HttpLlm {
    pub config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(config: HttpConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Self {
            config,
            agent: ureq::Agent::new_with_config(agent_config),
        }
    }

    fn api_key(&self) -> Result<Option<String>, LlmError> {
        if self.config.api_key_env.is_empty() {
            return Ok(None);
        }
        std::env::var(&self.config.api_key_env)
            .map(Some)
            .map_err(|_| LlmError::MissingCredential(self.config.api_key_env.clone()))
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, LlmError> {
        let key = self.api_key()?;
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        });

        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut request = self.agent.post(&self.config.url);
            if let Some(key) = &key {
                request = request.header("authorization", &format!("Bearer {key}"));
            }
            let outcome = request.send_json(&body);

            let retryable: String =
                match outcome {
                    Ok(mut response) => {
                        let status = response.status().as_u16();
                        let text = response
                            .body_mut()
                            .read_to_string()
                            .unwrap_or_else(|e| format!("<unreadable body: {e}>"));
                        if (200..300).contains(&status) {
                            let parsed: ChatResponse =
                                serde_json::from_str(&text).map_err(|e| LlmError::Decode {
                                    message: e.to_string(),
                                    body: text.clone(),
                                })?;
                            let choice = parsed.choices.into_iter().next().ok_or_else(|| {
                                LlmError::Decode {
                                    message: "response has no choices".into(),
                                    body: text.clone(),
                                }
                            })?;
                            return Ok(choice.message.content);
                        }
                        if status == 429 || (500..600).contains(&status) {
                            format!("HTTP {status}: {text}")
                        } else {
                            return Err(LlmError::Http {
                                attempts,
                                message: format!("HTTP {status}: {text}"),
                            });
                        }
                    }
                    Err(e) => e.to_string(),
                };

            if attempts > self.config.max_retries {
                return Err(LlmError::Http {
                    attempts,
                    message: retryable,
                });
            }
            let backoff = Duration::from_millis(250 * (1 << (attempts - 1).min(6)));
            std::thread::sleep(backoff);
        }
    }
}

/// A configured language model.
pub enum LlmBackend {
    Scripted(ScriptedTranscript),
    Http(Box<HttpLlm>),
}

impl LlmBackend {
    pub fn scripted(responses: Vec<String>) -> Self {
        Self::Scripted(ScriptedTranscript::new(responses))
    }

    /// Run one completion. Scripted backends ignore the temperature.
    pub fn complete(&mut self, prompt: &str, temperature: f64) -> Result<String, LlmError> {
        match self {
            Self::Scripted(t) => t.complete(prompt),
            Self::Http(h) => h.complete(prompt, temperature),
        }
    }

    /// Short descriptor recorded in run manifests.
    pub fn descriptor(&self) -> String {
        match self {
            Self::Scripted(t) => format!("scripted ({} responses)", t.responses.len()),
            Self::Http(h) => format!("http ({} @ {})", h.config.model, h.config.url),
        }
    }
}
