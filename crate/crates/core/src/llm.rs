//! Prompt assembly, chat-completion transport and the four LLM-driven
//! discovery phases.
//!
//! Every prompt is the interface description, then the phase goal and the
//! algorithm listings, then the output-format restriction. Template text
//! lives in versioned files under `templates/`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Version tag of the embedded templates.
pub const TEMPLATE_VERSION: &str = "v1";

/// The seven arguments every candidate function must take, in order.
pub const SIGNATURE_ARGS: [&str; 7] = [
    "history_populations",
    "fitness_scores",
    "best_individual",
    "new_individuals_numbers",
    "current_iteration",
    "maximum_iteration",
    "hyperparameters",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "KC")]
    Kc,
    #[serde(rename = "KR")]
    Kr,
    #[serde(rename = "II")]
    Ii,
    #[serde(rename = "DI")]
    Di,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Kc, Phase::Kr, Phase::Ii, Phase::Di];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Kc => "KC",
            Phase::Kr => "KR",
            Phase::Ii => "II",
            Phase::Di => "DI",
        }
    }

    /// Prefix of mock response files, e.g. `kr-1.txt`.
    pub fn file_prefix(self) -> &'static str {
        match self {
            Phase::Kc => "kc",
            Phase::Kr => "kr",
            Phase::Ii => "ii",
            Phase::Di => "di",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("missing template {0}")]
    MissingTemplate(String),
    #[error("template io: {0}")]
    TemplateIo(String),
    #[error("scores must not be supplied to {0} prompts")]
    ScoreNotAllowed(Phase),
    #[error("{0} prompt needs {1}")]
    MissingInput(Phase, &'static str),
    #[error("llm configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: usize, message: String },
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no fenced code block in response")]
    NoCodeBlock,
    #[error("expected one code block, found {0}")]
    MultipleCodeBlocks(usize),
    #[error("GenerateSample with the seven-argument signature not found")]
    SignatureMissing,
}

/// Template set for one prompt version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub interface: String,
    pub kc_goal: String,
    pub kr_goal: String,
    pub ii_goal: String,
    pub di_goal: String,
    pub di_goal_empty: String,
    pub format_code: String,
    pub format_kc: String,
}

const TEMPLATE_FILES: [&str; 8] = [
    "interface.txt",
    "kc_goal.txt",
    "kr_goal.txt",
    "ii_goal.txt",
    "di_goal.txt",
    "di_goal_empty.txt",
    "format_code.txt",
    "format_kc.txt",
];

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            interface: include_str!("../templates/v1/interface.txt").into(),
            kc_goal: include_str!("../templates/v1/kc_goal.txt").into(),
            kr_goal: include_str!("../templates/v1/kr_goal.txt").into(),
            ii_goal: include_str!("../templates/v1/ii_goal.txt").into(),
            di_goal: include_str!("../templates/v1/di_goal.txt").into(),
            di_goal_empty: include_str!("../templates/v1/di_goal_empty.txt").into(),
            format_code: include_str!("../templates/v1/format_code.txt").into(),
            format_kc: include_str!("../templates/v1/format_kc.txt").into(),
        }
    }
}

impl PromptTemplates {
    /// Loads a template set from a directory holding the same file names as
    /// `templates/v1`.
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut texts = HashMap::new();
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(LlmError::MissingTemplate(path.display().to_string()));
            }
            let text = fs::read_to_string(&path).map_err(|e| LlmError::TemplateIo(e.to_string()))?;
            texts.insert(name, text);
        }
        let mut take = |name: &str| texts.remove(name).expect("loaded above");
        Ok(Self {
            interface: take("interface.txt"),
            kc_goal: take("kc_goal.txt"),
            kr_goal: take("kr_goal.txt"),
            ii_goal: take("ii_goal.txt"),
            di_goal: take("di_goal.txt"),
            di_goal_empty: take("di_goal_empty.txt"),
            format_code: take("format_code.txt"),
            format_kc: take("format_kc.txt"),
        })
    }
}

/// One algorithm listed in a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptAlgorithm {
    pub source: String,
    pub score: Option<f64>,
}

impl PromptAlgorithm {
    pub fn new(source: impl Into<String>, score: Option<f64>) -> Self {
        Self { source: source.into(), score }
    }
}

/// Phase-specific prompt inputs beyond the algorithm list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptExtras {
    /// Number of algorithms requested (KR, DI).
    pub count: usize,
    /// The algorithm being classified (KC).
    pub candidate: Option<String>,
    /// Cluster ids matching the algorithm list (KC).
    pub cluster_ids: Vec<usize>,
    /// Whether KC may answer with a new cluster.
    pub allow_new_cluster: bool,
}

fn code_block(source: &str) -> String {
    let body = source.trim_end_matches('\n');
    format!("```python\n{body}\n```\n")
}

fn format_score(score: f64) -> String {
    format!("{score:.6}")
}

fn section(text: &str) -> String {
    let mut s = text.trim_end_matches('\n').to_string();
    s.push('\n');
    s
}

/// Assembles the prompt for one phase.
pub fn build_prompt(
    templates: &PromptTemplates,
    phase: Phase,
    algorithms: &[PromptAlgorithm],
    extras: &PromptExtras,
) -> Result<String, LlmError> {
    if phase == Phase::Di && algorithms.iter().any(|a| a.score.is_some()) {
        return Err(LlmError::ScoreNotAllowed(phase));
    }
    let count = extras.count.max(1).to_string();
    let mut body = String::new();
    let format = match phase {
        Phase::Kc => {
            let candidate =
                extras.candidate.as_deref().ok_or(LlmError::MissingInput(phase, "a candidate"))?;
            if extras.cluster_ids.len() != algorithms.len() {
                return Err(LlmError::MissingInput(phase, "one cluster id per centroid"));
            }
            body.push_str(&section(&templates.kc_goal));
            for (id, algo) in extras.cluster_ids.iter().zip(algorithms) {
                body.push_str(&format!("\n### Cluster {id}\n"));
                body.push_str(&code_block(&algo.source));
            }
            body.push_str("\n### New algorithm\n");
            body.push_str(&code_block(candidate));
            let new_clause = if extras.allow_new_cluster {
                ", or \"CLUSTER NEW\" if its methodology is distinct from every cluster"
            } else {
                ""
            };
            templates.format_kc.replace("{new_clause}", new_clause)
        }
        Phase::Kr | Phase::Ii | Phase::Di => {
            if phase == Phase::Ii && algorithms.len() != 1 {
                return Err(LlmError::MissingInput(phase, "exactly one algorithm"));
            }
            let goal = match phase {
                Phase::Kr => &templates.kr_goal,
                Phase::Ii => &templates.ii_goal,
                _ if algorithms.is_empty() => &templates.di_goal_empty,
                _ => &templates.di_goal,
            };
            body.push_str(&section(&goal.replace("{count}", &count)));
            for (k, algo) in algorithms.iter().enumerate() {
                body.push_str(&format!("\n### Algorithm {}\n", k + 1));
                if let Some(score) = algo.score {
                    body.push_str(&format!("Score: {}\n", format_score(score)));
                }
                body.push_str(&code_block(&algo.source));
            }
            let n = if phase == Phase::Ii { "1".to_string() } else { count };
            templates.format_code.replace("{count}", &n)
        }
    };
    Ok(format!("{}\n{}\n{}", section(&templates.interface), body, section(&format)))
}

/// All fenced code blocks of a response, in order.
fn code_blocks(response: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in response.lines() {
        let trimmed = line.trim_start();
        match current.as_mut() {
            None if trimmed.starts_with("```") => current = Some(Vec::new()),
            None => {}
            Some(_) if trimmed.starts_with("```") => {
                let lines = current.take().expect("inside block");
                blocks.push(lines.join("\n") + "\n");
            }
            Some(lines) => lines.push(line),
        }
    }
    blocks
}

/// Whether `source` defines `GenerateSample` with the seven expected
/// arguments.
pub fn has_signature(source: &str) -> bool {
    let mut rest = source;
    while let Some(pos) = rest.find("def GenerateSample") {
        let after = &rest[pos + "def GenerateSample".len()..];
        let after = after.trim_start();
        if let Some(args) = after.strip_prefix('(').and_then(|a| a.split_once(')')).map(|(a, _)| a) {
            let names: Vec<&str> = args
                .split(',')
                .map(|a| a.split(['=', ':']).next().unwrap_or("").trim())
                .filter(|a| !a.is_empty())
                .collect();
            if names == SIGNATURE_ARGS {
                return true;
            }
        }
        rest = &rest[pos + 1..];
    }
    false
}

/// Extracts the single fenced code block of a response and checks its
/// signature.
pub fn extract_candidate(response: &str) -> Result<String, ExtractError> {
    let blocks = code_blocks(response);
    match blocks.len() {
        0 => Err(ExtractError::NoCodeBlock),
        1 if has_signature(&blocks[0]) => Ok(blocks.into_iter().next().expect("one block")),
        1 => Err(ExtractError::SignatureMissing),
        n => Err(ExtractError::MultipleCodeBlocks(n)),
    }
}

/// Every code block of a response that carries a valid signature.
pub fn extract_candidates(response: &str) -> Vec<String> {
    code_blocks(response).into_iter().filter(|b| has_signature(b)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying (network trouble, rate limiting, server errors).
    Transient(String),
    Fatal(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, phase: Phase, prompt: &str) -> Result<String, TransportError>;

    /// Replay position per phase, for transports that have one.
    fn counters(&self) -> Option<BTreeMap<Phase, usize>> {
        None
    }

    fn restore_counters(&self, _counters: &BTreeMap<Phase, usize>) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    #[serde(alias = "model")]
    pub model_name: String,
    pub temperature: f64,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub mock_dir: Option<PathBuf>,
    pub max_retries: usize,
    pub timeout_seconds: u64,
    /// Base delay of the exponential backoff, in milliseconds.
    pub backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            model_name: "gpt-4-1106-preview".into(),
            temperature: 0.7,
            endpoint: None,
            api_key_env: None,
            mock_dir: None,
            max_retries: 3,
            timeout_seconds: 120,
            backoff_ms: 500,
        }
    }
}

/// OpenAI-style chat-completion endpoint.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    model: String,
    temperature: f64,
}

impl HttpTransport {
    pub fn new(endpoint: String, api_key: String, model: String, temperature: f64, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, endpoint, api_key, model, temperature }
    }
}

/// Request body in the chat-completion messages format.
pub fn chat_request_body(model: &str, temperature: f64, prompt: &str) -> Value {
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [{"role": "user", "content": prompt}],
    })
}

/// Pulls the assistant text out of a chat-completion response.
pub fn parse_chat_response(body: &Value) -> Result<String, String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| format!("no choices[0].message.content in {body}"))
}

impl Transport for HttpTransport {
    fn send(&self, _phase: Phase, prompt: &str) -> Result<String, TransportError> {
        let body = chat_request_body(&self.model, self.temperature, prompt);
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(TransportError::Transient(format!("http status {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError::Fatal(format!("http status {status}: {text}")));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Fatal(format!("malformed response: {e}")))?;
        parse_chat_response(&value).map_err(TransportError::Fatal)
    }
}

/// Replays canned responses from `<dir>/<phase>-<n>.txt`.
///
/// Each phase keeps its own counter starting at 1. When the next numbered
/// file does not exist the available files of that phase are cycled.
pub struct MockTransport {
    dir: PathBuf,
    counters: Mutex<BTreeMap<Phase, usize>>,
}

impl MockTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), counters: Mutex::new(BTreeMap::new()) }
    }

    fn files_for(&self, phase: Phase) -> Vec<(usize, PathBuf)> {
        let prefix = format!("{}-", phase.file_prefix());
        let mut files: Vec<(usize, PathBuf)> = fs::read_dir(&self.dir)
            .into_iter()
            .flatten()
            .filter_map(Result::ok)
            .filter_map(|d| {
                let name = d.file_name().to_string_lossy().into_owned();
                let seq = name.strip_prefix(&prefix)?.strip_suffix(".txt")?.parse().ok()?;
                Some((seq, d.path()))
            })
            .collect();
        files.sort();
        files
    }
}

impl Transport for MockTransport {
    /// Number of responses served so far, per phase.
    fn counters(&self) -> Option<BTreeMap<Phase, usize>> {
        Some(self.counters.lock().expect("mock counters").clone())
    }

    fn restore_counters(&self, counters: &BTreeMap<Phase, usize>) {
        *self.counters.lock().expect("mock counters") = counters.clone();
    }

    fn send(&self, phase: Phase, _prompt: &str) -> Result<String, TransportError> {
        let served = {
            let mut counters = self.counters.lock().expect("mock counters");
            let c = counters.entry(phase).or_insert(0);
            *c += 1;
            *c
        };
        let exact = self.dir.join(format!("{}-{served}.txt", phase.file_prefix()));
        let path = if exact.is_file() {
            exact
        } else {
            let files = self.files_for(phase);
            if files.is_empty() {
                return Err(TransportError::Fatal(format!(
                    "no mock responses for {phase} in {}",
                    self.dir.display()
                )));
            }
            files[(served - 1) % files.len()].1.clone()
        };
        fs::read_to_string(&path).map_err(|e| TransportError::Fatal(format!("{}: {e}", path.display())))
    }
}

/// A completed call and how many attempts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: usize,
}

/// Transport plus retry policy.
pub struct LlmClient {
    transport: Box<dyn Transport>,
    max_retries: usize,
    backoff: Duration,
}

impl LlmClient {
    pub fn new(transport: Box<dyn Transport>, max_retries: usize, backoff: Duration) -> Self {
        Self { transport, max_retries, backoff }
    }

    /// Builds the transport named by the configuration: mock replay when
    /// `mock_dir` is set, otherwise HTTP with the key read from
    /// `api_key_env`.
    pub fn from_config(cfg: &LlmConfig) -> Result<Self, LlmError> {
        if !(0.0..=2.0).contains(&cfg.temperature) {
            return Err(LlmError::Config(format!("temperature {} outside [0, 2]", cfg.temperature)));
        }
        let backoff = Duration::from_millis(cfg.backoff_ms);
        if let Some(dir) = &cfg.mock_dir {
            if !dir.is_dir() {
                return Err(LlmError::Config(format!("mock_dir {} is not a directory", dir.display())));
            }
            return Ok(Self::new(Box::new(MockTransport::new(dir.clone())), cfg.max_retries, backoff));
        }
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Config("either mock_dir or endpoint must be set".into()))?;
        let env = cfg
            .api_key_env
            .as_deref()
            .ok_or_else(|| LlmError::Config("api_key_env must be set".into()))?;
        let key = std::env::var(env)
            .map_err(|_| LlmError::Config(format!("environment variable {env} is not set")))?;
        let transport = HttpTransport::new(
            endpoint,
            key,
            cfg.model_name.clone(),
            cfg.temperature,
            Duration::from_secs(cfg.timeout_seconds),
        );
        Ok(Self::new(Box::new(transport), cfg.max_retries, backoff))
    }

    pub fn complete(&self, phase: Phase, prompt: &str) -> Result<Completion, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.transport.send(phase, prompt) {
                Ok(text) => return Ok(Completion { text, attempts }),
                Err(TransportError::Fatal(message)) => {
                    return Err(LlmError::Exhausted { attempts, message })
                }
                Err(TransportError::Transient(message)) if attempts > self.max_retries => {
                    return Err(LlmError::Exhausted { attempts, message })
                }
                Err(TransportError::Transient(message)) => {
                    log::warn!("{phase} call failed ({message}); retrying");
                    let factor = 1u32.checked_shl(attempts as u32 - 1).unwrap_or(u32::MAX);
                    thread::sleep(self.backoff.saturating_mul(factor));
                }
            }
        }
    }

    pub fn transport(&self) -> &dyn Transport {
        self.transport.as_ref()
    }
}

/// Outcome of a knowledge-categorisation query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KcVerdict {
    Existing(usize),
    New,
    /// The reply was unusable; the candidate goes to the best cluster.
    Fallback(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KcReply {
    Cluster(usize),
    New,
}

fn parse_kc_reply(reply: &str) -> Option<KcReply> {
    let cleaned: String = reply.replace('`', " ").replace(['"', '\'', '.', ':', '*'], " ");
    let words: Vec<String> = cleaned.split_whitespace().map(str::to_ascii_uppercase).collect();
    let mut found = None;
    for (i, w) in words.iter().enumerate() {
        if w != "CLUSTER" {
            continue;
        }
        let verdict = match words.get(i + 1).map(String::as_str) {
            Some("NEW" | "DISTINCT" | "NONE") => KcReply::New,
            Some(v) => match v.parse() {
                Ok(n) => KcReply::Cluster(n),
                Err(_) => continue,
            },
            None => continue,
        };
        if found.is_some_and(|f| f != verdict) {
            return None;
        }
        found = Some(verdict);
    }
    if found.is_none() && words.len() == 1 {
        found = words[0].parse().ok().map(KcReply::Cluster);
    }
    found
}

/// The four LLM-driven phases over one client and template set.
pub struct Gateway {
    pub client: LlmClient,
    pub templates: PromptTemplates,
}

/// Candidates produced by a generation phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub candidates: Vec<String>,
    pub requested: usize,
    pub raw: String,
}

/// Outcome of an incremental-innovation call.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub source: String,
    pub passthrough: bool,
    pub raw: String,
}

impl Gateway {
    pub fn new(client: LlmClient, templates: PromptTemplates) -> Self {
        Self { client, templates }
    }

    /// Client from `cfg`, templates from `templates_dir` or the built-in set.
    pub fn from_config(cfg: &LlmConfig, templates_dir: Option<&Path>) -> Result<Self, LlmError> {
        let templates = match templates_dir {
            Some(dir) => PromptTemplates::from_dir(dir)?,
            None => PromptTemplates::default(),
        };
        Ok(Self::new(LlmClient::from_config(cfg)?, templates))
    }

    /// Assigns `candidate` to one of `centroids` (ordered best first), or
    /// to a new cluster when `allow_new` and the model says it is distinct.
    pub fn kc_classify(
        &self,
        candidate: &str,
        centroids: &[(usize, String)],
        allow_new: bool,
    ) -> Result<KcVerdict, LlmError> {
        if centroids.is_empty() {
            return Ok(KcVerdict::New);
        }
        let algorithms: Vec<PromptAlgorithm> =
            centroids.iter().map(|(_, s)| PromptAlgorithm::new(s.clone(), None)).collect();
        let extras = PromptExtras {
            count: 1,
            candidate: Some(candidate.to_string()),
            cluster_ids: centroids.iter().map(|(id, _)| *id).collect(),
            allow_new_cluster: allow_new,
        };
        let prompt = build_prompt(&self.templates, Phase::Kc, &algorithms, &extras)?;
        for _ in 0..2 {
            let reply = self.client.complete(Phase::Kc, &prompt)?.text;
            match parse_kc_reply(&reply) {
                Some(KcReply::Cluster(id)) if centroids.iter().any(|(c, _)| *c == id) => {
                    return Ok(KcVerdict::Existing(id))
                }
                Some(KcReply::New) if allow_new => return Ok(KcVerdict::New),
                _ => log::warn!("unusable KC reply: {:?}", reply.trim()),
            }
        }
        log::warn!("KC fell back to cluster {}", centroids[0].0);
        Ok(KcVerdict::Fallback(centroids[0].0))
    }

    /// Recombines scored algorithms into up to `count` new candidates.
    pub fn kr_generate(&self, selected: &[(String, f64)], count: usize) -> Result<Generated, LlmError> {
        let algorithms: Vec<PromptAlgorithm> =
            selected.iter().map(|(s, score)| PromptAlgorithm::new(s.clone(), Some(*score))).collect();
        self.generate(Phase::Kr, &algorithms, count)
    }

    /// Asks for `count` candidates distinct from the given centroids.
    pub fn di_generate(&self, centroids: &[String], count: usize) -> Result<Generated, LlmError> {
        let algorithms: Vec<PromptAlgorithm> =
            centroids.iter().map(|s| PromptAlgorithm::new(s.clone(), None)).collect();
        self.generate(Phase::Di, &algorithms, count)
    }

    fn generate(&self, phase: Phase, algorithms: &[PromptAlgorithm], count: usize) -> Result<Generated, LlmError> {
        let count = count.max(1);
        let extras = PromptExtras { count, ..PromptExtras::default() };
        let prompt = build_prompt(&self.templates, phase, algorithms, &extras)?;
        let raw = self.client.complete(phase, &prompt)?.text;
        let mut candidates = extract_candidates(&raw);
        if candidates.is_empty() {
            return Err(ExtractError::NoCodeBlock.into());
        }
        if candidates.len() < count {
            log::warn!("{phase} returned {} of {count} requested candidates", candidates.len());
        }
        candidates.truncate(count);
        Ok(Generated { candidates, requested: count, raw })
    }

    /// Slightly modifies one candidate; falls back to the input when the
    /// reply has no usable code block.
    pub fn ii_refine(&self, candidate: &str) -> Result<Refined, LlmError> {
        let prompt = build_prompt(
            &self.templates,
            Phase::Ii,
            &[PromptAlgorithm::new(candidate, None)],
            &PromptExtras { count: 1, ..PromptExtras::default() },
        )?;
        let raw = self.client.complete(Phase::Ii, &prompt)?.text;
        match extract_candidate(&raw) {
            Ok(source) => Ok(Refined { source, passthrough: false, raw }),
            Err(e) => {
                log::warn!("II reply rejected ({e}); keeping the input candidate");
                Ok(Refined { source: candidate.to_string(), passthrough: true, raw })
            }
        }
    }
}
