//! Completion backends: the canonical-answer oracle, a scripted mock, and an
//! OpenAI-compatible completions client.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkTask;
use crate::synth::{API_BASE_ENV, API_KEY_ENV};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub input: &'a str,
    pub max_new_tokens: usize,
    pub greedy: bool,
    pub stop: &'a [String],
    /// The task being evaluated, when there is one.
    pub task: Option<&'a BenchmarkTask>,
}

pub trait CompletionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String>;
}

/// Answers with the task's canonical middle.
#[derive(Debug, Default, Clone)]
pub struct OracleBackend;

impl CompletionBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        request
            .task
            .map(|t| t.canonical_middle.clone())
            .ok_or_else(|| Error::Backend("oracle backend needs a benchmark task".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scripted {
    Text(String),
    Error { error: String },
}

/// Per-task scripted answers; tasks without a script fall back to the
/// oracle.
#[derive(Debug, Clone, Default)]
pub struct ScriptedCompletions {
    scripts: HashMap<String, Scripted>,
}

impl ScriptedCompletions {
    pub fn new(scripts: HashMap<String, Scripted>) -> Self {
        ScriptedCompletions { scripts }
    }

    /// Reads a JSON object mapping task ids to either a completion string or
    /// `{"error": "..."}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(serde_json::from_str(&text)?))
    }

    pub fn with(mut self, task_id: impl Into<String>, script: Scripted) -> Self {
        self.scripts.insert(task_id.into(), script);
        self
    }
}

impl CompletionBackend for ScriptedCompletions {
    fn name(&self) -> &str {
        "scripted"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        let id = request.task.map(|t| t.task_id.as_str()).unwrap_or("");
        match self.scripts.get(id) {
            Some(Scripted::Text(text)) => Ok(text.clone()),
            Some(Scripted::Error { error }) => Err(Error::Backend(error.clone())),
            None => OracleBackend.generate(request),
        }
    }
}

/// OpenAI-compatible `/completions` client (prompt in, text out).
pub struct CompletionsClient {
    base_url: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
}

impl CompletionsClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        CompletionsClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn from_env(model: impl Into<String>) -> Result<Self> {
        let base = std::env::var(API_BASE_ENV)
            .map_err(|_| Error::Config(format!("{API_BASE_ENV} is not set")))?;
        Ok(Self::new(base, std::env::var(API_KEY_ENV).ok(), model))
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

/// OpenAI-style endpoints accept at most four stop sequences.
const MAX_STOP: usize = 4;

impl CompletionBackend for CompletionsClient {
    fn name(&self) -> &str {
        &self.model
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        let body = CompletionBody {
            model: &self.model,
            prompt: request.input,
            max_tokens: request.max_new_tokens,
            temperature: if request.greedy { 0.0 } else { 1.0 },
            stop: &request.stop[..request.stop.len().min(MAX_STOP)],
        };
        let mut req = self
            .client
            .post(format!("{}/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Backend(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Backend(format!("HTTP {status}: {text}")));
        }
        let reply: CompletionReply = resp.json().map_err(|e| Error::Backend(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| Error::Backend("response has no choices".into()))
    }
}
