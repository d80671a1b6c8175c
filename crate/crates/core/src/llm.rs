//! Chat-completion client: prompt construction, transport with retry,
//! and structured-answer parsing including refusal detection.
//!
//! The wire protocol is the OpenAI-style chat-completion JSON shape;
//! cloud APIs and common local-model gateways both speak it, so one
//! transport covers every backend. Requests default to temperature 0
//! for deterministic, reproducible answers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Global request counter; the safety tests assert it stays untouched
/// during static-engine runs.
static TOTAL_REQUESTS: AtomicU64 = AtomicU64::new(0);

pub fn total_http_requests() -> u64 {
    TOTAL_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("rendered prompt is {rendered} chars, budget {budget}; chunking required")]
    PromptTooLarge { rendered: usize, budget: usize },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after retries")]
    RateLimited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Canonical single-text rendering of a message list; the golden-file
/// tests compare these bytes.
pub fn render_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str("### ");
        out.push_str(&m.role);
        out.push('\n');
        out.push_str(&m.content);
        out.push('\n');
    }
    out
}

/// Prompt framing styles: separate system/user messages, or the
/// `[INST] <<SYS>>` inline framing instruction-tuned llama-family
/// models expect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptStyle {
    SystemUser,
    InstSys,
}

impl PromptStyle {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_lowercase().as_str() {
            "system-user" => Some(PromptStyle::SystemUser),
            "inst-sys" => Some(PromptStyle::InstSys),
            _ => None,
        }
    }
}

const DEOBF_SYSTEM: &str = "You are a malware analyst. Your job is to find URLs in obfuscated code. Follow the instructions. Do not provide any explanations. Encode your responses as JSON.";

const INST_SYS_SYSTEM: &str = "Follow the instructions. Do not provide any explanations. Encode your responses as JSON. Your responses must start with ```json and end with ```.";

const DEOBF_TASK: &str = "Simplify the attached powershell code before the loop. Remove the code after the loop. There are some lines with dead code, many strings are broken down to shorter ones. Process the resulting strings using concatenation and replacements, making the necessary evaluations. You will often find short strings adjacent with the plus sign, concatenate them. Then look for additions of parentheses with strings. Concatenate them too. Replace unicode characters. Now try to deobfuscate the code. There are URLs concatenated in a string which must be split with the same character, e.g., *,@. All URLS start with http or https. Return the URLs that you will find in the longest string after the operation within a json without any additional text. If you don't find URLs, return the longest string using the key kk in the returned json removing space characters and split it using * or @. The code is: ";

const CTI_SYSTEM: &str = "You are a malware analyst. Your job is to understand what a malicious powershell script does. Do not provide any explanations. Encode your responses as JSON.";

const CTI_TASK: &str = "Suppress all output and return only a JSON which contains the description of what the following powershell script does and the mitre att&ck methods that it uses. For each method return only the ID and the name. The code is: ";

const STRIP_COMMENTS_TASK: &str = "Remove all comments from the attached powershell code. Return only the resulting code without any additional text. The code is: ";

const RENAME_VARS_TASK: &str = "Replace the variable names in the attached powershell code with shorter and more readable ones. Return only the resulting code without any additional text. The code is: ";

fn fenced(code: &str) -> String {
    format!("```\n{code}\n```")
}

fn rendered_size(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| m.role.len() + m.content.len()).sum()
}

fn check_budget(messages: Vec<ChatMessage>, max_chars: usize) -> Result<Vec<ChatMessage>, LlmError> {
    let rendered = rendered_size(&messages);
    if rendered > max_chars {
        return Err(LlmError::PromptTooLarge {
            rendered,
            budget: max_chars,
        });
    }
    Ok(messages)
}

fn task_messages(
    task: &str,
    code: &str,
    style: PromptStyle,
    system_user_system: &str,
    max_chars: usize,
) -> Result<Vec<ChatMessage>, LlmError> {
    assert!(!code.is_empty(), "code must be non-empty");
    let user_body = format!("{task}{}", fenced(code));
    let messages = match style {
        PromptStyle::SystemUser => vec![
            ChatMessage::system(system_user_system),
            ChatMessage::user(user_body),
        ],
        PromptStyle::InstSys => vec![ChatMessage::user(format!(
            "[INST]\n<<SYS>>\n{INST_SYS_SYSTEM}\n<</SYS>>\n{user_body}\n[/INST]"
        ))],
    };
    check_budget(messages, max_chars)
}

/// Deobfuscation task prompt for the chosen framing.
pub fn build_deobf_prompt(
    code: &str,
    style: PromptStyle,
    max_chars: usize,
) -> Result<Vec<ChatMessage>, LlmError> {
    task_messages(DEOBF_TASK, code, style, DEOBF_SYSTEM, max_chars)
}

/// Threat-intelligence task prompt (description + MITRE ATT&CK
/// methods as JSON).
pub fn build_cti_prompt(code: &str, max_chars: usize) -> Result<Vec<ChatMessage>, LlmError> {
    task_messages(CTI_TASK, code, PromptStyle::SystemUser, CTI_SYSTEM, max_chars)
}

fn default_temperature() -> f64 {
    0.0
}
fn default_max_tokens() -> u32 {
    4096
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    2
}
fn default_max_chars() -> usize {
    24_000
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_in_flight() -> usize {
    4
}
fn default_refusal_patterns() -> Vec<String> {
    vec![
        "i'm sorry, i cannot".to_string(),
        "i'm designed solely to process".to_string(),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_max_chars")]
    pub max_chars: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_refusal_patterns")]
    pub refusal_patterns: Vec<String>,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout(),
            retries: default_retries(),
            max_chars: default_max_chars(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
            refusal_patterns: default_refusal_patterns(),
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, LlmError> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Transport(format!("read {}: {e}", path.display())))?;
        serde_json::from_str(&data)
            .map_err(|e| LlmError::Transport(format!("parse {}: {e}", path.display())))
    }
}

/// Environment variable carrying the API key; never read from config
/// files, which end up committed next to corpora.
pub const API_KEY_ENV: &str = "PSDEOB_API_KEY";
/// Optional endpoint override.
pub const ENDPOINT_ENV: &str = "PSDEOB_ENDPOINT";

/// Counting semaphore bounding in-flight requests.
struct InFlight {
    slots: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn new(cap: usize) -> Self {
        InFlight {
            slots: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut slots = self.slots.lock().expect("poisoned");
        while *slots == 0 {
            slots = self.cv.wait(slots).expect("poisoned");
        }
        *slots -= 1;
    }

    fn release(&self) {
        *self.slots.lock().expect("poisoned") += 1;
        self.cv.notify_one();
    }
}

/// Shareable chat-completion client. Each call is independent;
/// parallel callers are bounded by the configured in-flight cap.
pub struct LlmClient {
    pub config: LlmConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    in_flight: InFlight,
    requests: AtomicU64,
}

impl LlmClient {
    pub fn new(mut config: LlmConfig) -> Self {
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.is_empty() {
                config.endpoint = endpoint;
            }
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        let cap = config.max_in_flight;
        LlmClient {
            config,
            agent,
            api_key,
            in_flight: InFlight::new(cap),
            requests: AtomicU64::new(0),
        }
    }

    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Send one chat completion and return the assistant text.
    /// Retries transport failures, HTTP 5xx and 429 with exponential
    /// backoff; 401/403 fail immediately.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": messages,
        });
        self.in_flight.acquire();
        let result = self.complete_with_retries(&body);
        self.in_flight.release();
        result
    }

    fn complete_with_retries(&self, body: &serde_json::Value) -> Result<String, LlmError> {
        let mut last_error = LlmError::Transport("no attempt made".into());
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(body) {
                Ok(text) => return Ok(text),
                Err(e @ LlmError::Auth(_)) | Err(e @ LlmError::PromptTooLarge { .. }) => {
                    return Err(e)
                }
                Err(e) => last_error = e,
            }
        }
        Err(last_error)
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, LlmError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        TOTAL_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        match status {
            401 | 403 => return Err(LlmError::Auth(status)),
            429 => return Err(LlmError::RateLimited),
            s if s >= 500 => return Err(LlmError::Transport(format!("HTTP {s}"))),
            s if !(200..300).contains(&s) => {
                return Err(LlmError::Transport(format!("HTTP {s}")))
            }
            _ => {}
        }
        let parsed: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Transport(format!("malformed completion body: {e}")))?;
        parsed
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::Transport("completion body missing content".into()))
    }
}

/// What the model answered, already classified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmAnswer {
    UrlList(Vec<String>),
    /// The `kk` fallback payload.
    LongestString(String),
    Cti(CtiPayload),
    Refusal(String),
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtiPayload {
    pub description: String,
    pub methods: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedAnswer {
    Deobf,
    Cti,
}

/// True iff the text matches a refusal pattern, case-insensitively.
pub fn classify_refusal(raw: &str, patterns: &[String]) -> bool {
    let lowered = raw.to_lowercase();
    patterns.iter().any(|p| lowered.contains(&p.to_lowercase()))
}

fn strip_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    // drop the info string (e.g. `json`) on the opening fence line
    let rest = match rest.find('\n') {
        Some(idx) => &rest[idx + 1..],
        None => rest,
    };
    rest.strip_suffix("```").map(str::trim).unwrap_or(rest.trim())
}

fn url_entries(items: &[serde_json::Value]) -> Option<Vec<String>> {
    if !items.iter().all(|i| i.is_string()) {
        return None;
    }
    // entries that fail URL validation are dropped, so a UrlList only
    // ever carries candidates the extractor accepts
    Some(
        items
            .iter()
            .filter_map(|i| i.as_str())
            .map(str::trim)
            .filter(|s| crate::extract::validate_url(s).is_some())
            .map(str::to_string)
            .collect(),
    )
}

fn parse_deobf_json(value: &serde_json::Value) -> LlmAnswer {
    if let Some(items) = value.as_array() {
        return match url_entries(items) {
            Some(urls) => LlmAnswer::UrlList(urls),
            None => LlmAnswer::Malformed,
        };
    }
    if let Some(object) = value.as_object() {
        if let Some(kk) = object.get("kk").and_then(|v| v.as_str()) {
            return LlmAnswer::LongestString(kk.to_string());
        }
        for candidate in object.values() {
            if let Some(items) = candidate.as_array() {
                match url_entries(items) {
                    // an empty array is a legitimate "found nothing"
                    Some(urls) if !urls.is_empty() || items.is_empty() => {
                        return LlmAnswer::UrlList(urls)
                    }
                    _ => {}
                }
            }
        }
    }
    LlmAnswer::Malformed
}

fn parse_cti_json(value: &serde_json::Value) -> LlmAnswer {
    let Some(object) = value.as_object() else {
        return LlmAnswer::Malformed;
    };
    let Some(description) = object.get("description").and_then(|v| v.as_str()) else {
        return LlmAnswer::Malformed;
    };
    let Some(raw_methods) = object.get("mitre_attack_methods").and_then(|v| v.as_array())
    else {
        return LlmAnswer::Malformed;
    };
    let mut methods = Vec::with_capacity(raw_methods.len());
    for entry in raw_methods {
        let id = entry
            .get("ID")
            .or_else(|| entry.get("id"))
            .and_then(|v| v.as_str());
        let name = entry.get("name").and_then(|v| v.as_str());
        match (id, name) {
            (Some(id), Some(name)) => methods.push((id.to_string(), name.to_string())),
            _ => return LlmAnswer::Malformed,
        }
    }
    LlmAnswer::Cti(CtiPayload {
        description: description.to_string(),
        methods,
    })
}

/// Classify a raw model answer. Refusal patterns are checked before any
/// JSON parsing; markdown code fences are stripped; unparseable input
/// maps to `Malformed`, never an error.
pub fn parse_json_response(
    raw: &str,
    expected: ExpectedAnswer,
    refusal_patterns: &[String],
) -> LlmAnswer {
    if classify_refusal(raw, refusal_patterns) {
        return LlmAnswer::Refusal(raw.trim().to_string());
    }
    let body = strip_fences(raw);
    let Ok(value) = serde_json::from_str::<serde_json::Value>(body) else {
        return LlmAnswer::Malformed;
    };
    match expected {
        ExpectedAnswer::Deobf => parse_deobf_json(&value),
        ExpectedAnswer::Cti => parse_cti_json(&value),
    }
}

/// One-shot deobfuscation through the model; on oversized input, fall
/// back to the three-round sequence (strip comments, shorten variable
/// names, then fold-and-extract).
pub fn deobfuscate_via_llm(
    client: &LlmClient,
    code: &str,
    style: PromptStyle,
) -> Result<LlmAnswer, LlmError> {
    let budget = client.config.max_chars;
    match build_deobf_prompt(code, style, budget) {
        Ok(messages) => {
            let raw = client.complete(&messages)?;
            Ok(parse_json_response(
                &raw,
                ExpectedAnswer::Deobf,
                &client.config.refusal_patterns,
            ))
        }
        Err(LlmError::PromptTooLarge { .. }) => {
            // the budget bounds the final reasoning prompt; the two
            // mechanical cleanup rounds may carry the oversized code
            // since each round shrinks it
            let mut current = code.to_string();
            for task in [STRIP_COMMENTS_TASK, RENAME_VARS_TASK] {
                let messages =
                    task_messages(task, &current, style, DEOBF_SYSTEM, usize::MAX)?;
                let answer = client.complete(&messages)?;
                if classify_refusal(&answer, &client.config.refusal_patterns) {
                    return Ok(LlmAnswer::Refusal(answer.trim().to_string()));
                }
                current = strip_fences(&answer).to_string();
            }
            let messages = build_deobf_prompt(&current, style, budget)?;
            let raw = client.complete(&messages)?;
            Ok(parse_json_response(
                &raw,
                ExpectedAnswer::Deobf,
                &client.config.refusal_patterns,
            ))
        }
        Err(e) => Err(e),
    }
}
