//! Vetting and execution of candidate generator scripts in worker
//! processes.
//!
//! The worker command receives the path of the candidate file as its last
//! argument, one JSON request on standard input and answers with one JSON
//! document `{"new_individuals": [[...], ...]}` on standard output. Exit
//! status 2 means the candidate failed to load.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::generators::NativeGenerator;
use crate::search::{validate_batch, GenerateRequest, Generator, Genes, Hyperparams, SearchError, SearchState};

/// Version of the vet fixture in `fixtures/`.
pub const VET_FIXTURE_VERSION: u32 = 1;
const VET_FIXTURE: &str = include_str!("../fixtures/vet_request_v1.json");

/// Exit status a worker uses when the candidate does not load.
pub const LOAD_FAILURE_EXIT: i32 = 2;

const STDERR_KEEP: usize = 4096;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailKind {
    CompileError,
    Timeout,
    Crash,
    SchemaViolation,
    OutOfRange,
    ResourceExceeded,
}

impl FailKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailKind::CompileError => "compile_error",
            FailKind::Timeout => "timeout",
            FailKind::Crash => "crash",
            FailKind::SchemaViolation => "schema_violation",
            FailKind::OutOfRange => "out_of_range",
            FailKind::ResourceExceeded => "resource_exceeded",
        }
    }
}

impl fmt::Display for FailKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxFailure {
    pub kind: FailKind,
    pub reason: String,
}

impl SandboxFailure {
    fn new(kind: FailKind, reason: impl Into<String>) -> Self {
        Self { kind, reason: reason.into() }
    }
}

impl fmt::Display for SandboxFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.reason)
    }
}

impl std::error::Error for SandboxFailure {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub wall_clock_timeout_seconds: u64,
    pub memory_cap_bytes: u64,
    pub max_output_bytes: u64,
    /// Worker command; the candidate file path is appended.
    pub worker: Vec<String>,
}

impl SandboxPolicy {
    pub fn vet() -> Self {
        Self { wall_clock_timeout_seconds: 30, ..Self::run() }
    }

    pub fn run() -> Self {
        Self {
            wall_clock_timeout_seconds: 120,
            memory_cap_bytes: 2 << 30,
            max_output_bytes: 1 << 20,
            worker: vec!["python3".into(), "-m".into(), "tngps_guest".into()],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.wall_clock_timeout_seconds == 0 || self.memory_cap_bytes == 0 || self.max_output_bytes == 0 {
            return Err("sandbox limits must be positive".into());
        }
        if self.worker.is_empty() {
            return Err("sandbox worker command is empty".into());
        }
        Ok(())
    }
}

/// Sandbox section of a discovery configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub vet_timeout_seconds: u64,
    pub run_timeout_seconds: u64,
    pub memory_cap_bytes: u64,
    pub max_output_bytes: u64,
    pub worker: Vec<String>,
    /// Run candidates that match a reference listing natively.
    pub native_listings: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        let run = SandboxPolicy::run();
        Self {
            vet_timeout_seconds: SandboxPolicy::vet().wall_clock_timeout_seconds,
            run_timeout_seconds: run.wall_clock_timeout_seconds,
            memory_cap_bytes: run.memory_cap_bytes,
            max_output_bytes: run.max_output_bytes,
            worker: run.worker,
            native_listings: true,
        }
    }
}

impl SandboxConfig {
    fn policy(&self, timeout: u64) -> SandboxPolicy {
        SandboxPolicy {
            wall_clock_timeout_seconds: timeout,
            memory_cap_bytes: self.memory_cap_bytes,
            max_output_bytes: self.max_output_bytes,
            worker: self.worker.clone(),
        }
    }

    pub fn vet_policy(&self) -> SandboxPolicy {
        self.policy(self.vet_timeout_seconds)
    }

    pub fn run_policy(&self) -> SandboxPolicy {
        self.policy(self.run_timeout_seconds)
    }
}

/// One generator call over the wire; field names follow the generator
/// signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuestRequest {
    pub history_populations: BTreeMap<usize, Vec<Genes>>,
    pub fitness_scores: BTreeMap<usize, Vec<f64>>,
    pub best_individual: Option<Genes>,
    pub new_individuals_numbers: usize,
    pub current_iteration: usize,
    pub maximum_iteration: usize,
    pub hyperparameters: Hyperparams,
    pub seed: u64,
}

impl GuestRequest {
    pub fn from_generate(req: &GenerateRequest<'_>, seed: u64) -> Self {
        Self {
            history_populations: req.state.history_populations.clone(),
            fitness_scores: req.state.fitness_scores.clone(),
            best_individual: req.state.best_individual.clone(),
            new_individuals_numbers: req.count,
            current_iteration: req.state.current_iteration,
            maximum_iteration: req.max_iterations,
            hyperparameters: req.hyperparams.clone(),
            seed,
        }
    }

    /// The fixed request used to vet candidates.
    pub fn vet_fixture() -> Self {
        serde_json::from_str(VET_FIXTURE).expect("vet fixture is valid JSON")
    }

    pub fn gene_len(&self) -> Option<usize> {
        self.best_individual
            .as_ref()
            .or_else(|| self.history_populations.values().flatten().next())
            .map(Vec::len)
    }

    pub fn code_upperbound(&self) -> usize {
        self.hyperparameters.code_upperbound()
    }

    pub fn state(&self) -> SearchState {
        SearchState {
            history_populations: self.history_populations.clone(),
            fitness_scores: self.fitness_scores.clone(),
            best_individual: self.best_individual.clone(),
            best_score: None,
            current_iteration: self.current_iteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuestResponse {
    pub new_individuals: Vec<Genes>,
}

fn integral(v: &Value) -> Option<i64> {
    if let Some(i) = v.as_i64() {
        return Some(i);
    }
    let f = v.as_f64()?;
    (f.fract() == 0.0 && f.abs() < 9e15).then_some(f as i64)
}

/// Parses and checks a worker response against the request.
pub fn parse_response(stdout: &[u8], req: &GuestRequest) -> Result<GuestResponse, SandboxFailure> {
    let schema = |msg: String| SandboxFailure::new(FailKind::SchemaViolation, msg);
    let value: Value = serde_json::from_slice(stdout).map_err(|e| schema(format!("response is not JSON: {e}")))?;
    let rows = value
        .get("new_individuals")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("response lacks a new_individuals list".into()))?;
    if rows.len() != req.new_individuals_numbers {
        return Err(schema(format!("expected {} individuals, got {}", req.new_individuals_numbers, rows.len())));
    }
    let expected_len = req.gene_len();
    let upper = req.code_upperbound() as i64;
    let mut raw = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let genes = row.as_array().ok_or_else(|| schema(format!("individual {k} is not a list")))?;
        let genes: Vec<i64> = genes
            .iter()
            .map(integral)
            .collect::<Option<_>>()
            .ok_or_else(|| schema(format!("individual {k} has a non-integer gene")))?;
        let want = expected_len.unwrap_or_else(|| raw.first().map_or(genes.len(), Vec::len));
        if genes.len() != want {
            return Err(schema(format!("individual {k} has {} genes, expected {want}", genes.len())));
        }
        raw.push(genes);
    }
    for (k, genes) in raw.iter().enumerate() {
        if let Some(g) = genes.iter().find(|&&g| g < 1 || g > upper) {
            return Err(SandboxFailure::new(
                FailKind::OutOfRange,
                format!("individual {k} has gene {g} outside [1, {upper}]"),
            ));
        }
    }
    let new_individuals = raw.into_iter().map(|g| g.into_iter().map(|v| v as usize).collect()).collect();
    Ok(GuestResponse { new_individuals })
}

/// Reads up to `cap` bytes; sets `overflow` if more were available.
fn read_capped<R: Read>(mut r: R, cap: usize, overflow: &AtomicBool) -> Vec<u8> {
    let mut out = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) if out.len() + n > cap => {
                overflow.store(true, Ordering::SeqCst);
                break;
            }
            Ok(n) => out.extend_from_slice(&buf[..n]),
        }
    }
    out
}

fn tail(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    let text = text.trim();
    let start = text.len().saturating_sub(STDERR_KEEP);
    let start = (start..=text.len()).find(|&i| text.is_char_boundary(i)).unwrap_or(text.len());
    text[start..].to_string()
}

fn kill_group(pid: u32) {
    // SAFETY: signalling a process group created by setsid in the child.
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
}

/// Runs one worker process to completion or until a limit is hit and
/// returns its standard output.
fn run_worker(source: &str, request: &[u8], policy: &SandboxPolicy) -> Result<Vec<u8>, SandboxFailure> {
    let crash = |msg: String| SandboxFailure::new(FailKind::Crash, msg);
    policy.validate().map_err(crash)?;
    let dir = tempfile::tempdir().map_err(|e| crash(format!("temp dir: {e}")))?;
    let path = dir.path().join("candidate.py");
    std::fs::write(&path, source).map_err(|e| crash(format!("write candidate: {e}")))?;

    let mut cmd = Command::new(&policy.worker[0]);
    cmd.args(&policy.worker[1..])
        .arg(&path)
        .current_dir(dir.path())
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("OPENBLAS_NUM_THREADS", "1")
        .env("OMP_NUM_THREADS", "1")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(pp) = std::env::var_os("PYTHONPATH") {
        cmd.env("PYTHONPATH", pp);
    }
    let mem = policy.memory_cap_bytes as libc::rlim_t;
    // SAFETY: only async-signal-safe calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setsid() < 0 {
                return Err(std::io::Error::last_os_error());
            }
            let limit = libc::rlimit { rlim_cur: mem, rlim_max: mem };
            if libc::setrlimit(libc::RLIMIT_AS, &limit) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            Ok(())
        });
    }
    let mut child = cmd.spawn().map_err(|e| crash(format!("cannot start worker {:?}: {e}", policy.worker[0])))?;
    let pid = child.id();

    let mut stdin = child.stdin.take().expect("piped stdin");
    let request = request.to_vec();
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&request);
    });
    let overflow = Arc::new(AtomicBool::new(false));
    let stdout = child.stdout.take().expect("piped stdout");
    let cap = policy.max_output_bytes as usize;
    let flag = overflow.clone();
    let reader = thread::spawn(move || read_capped(stdout, cap, &flag));
    let stderr = child.stderr.take().expect("piped stderr");
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.take(1 << 20).read_to_end(&mut buf);
        buf
    });

    let timeout = Duration::from_secs(policy.wall_clock_timeout_seconds);
    let started = Instant::now();
    let mut failure = None;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) => {}
            Err(e) => {
                failure = Some(crash(format!("wait: {e}")));
                break None;
            }
        }
        if overflow.load(Ordering::SeqCst) {
            failure = Some(SandboxFailure::new(
                FailKind::ResourceExceeded,
                format!("output exceeded {} bytes", policy.max_output_bytes),
            ));
            break None;
        }
        if started.elapsed() >= timeout {
            failure = Some(SandboxFailure::new(
                FailKind::Timeout,
                format!("no response within {} s", policy.wall_clock_timeout_seconds),
            ));
            break None;
        }
        thread::sleep(POLL);
    };
    kill_group(pid);
    if status.is_none() {
        let _ = child.wait();
    }
    let _ = writer.join();
    let out = reader.join().unwrap_or_default();
    let err = tail(&err_reader.join().unwrap_or_default());
    if let Some(f) = failure {
        return Err(f);
    }
    let status = status.expect("exited");
    if overflow.load(Ordering::SeqCst) {
        return Err(SandboxFailure::new(
            FailKind::ResourceExceeded,
            format!("output exceeded {} bytes", policy.max_output_bytes),
        ));
    }
    if status.success() {
        return Ok(out);
    }
    let memory = err.contains("MemoryError") || err.contains("Cannot allocate memory");
    let kind = match (status.code(), status.signal()) {
        _ if memory => FailKind::ResourceExceeded,
        (Some(LOAD_FAILURE_EXIT), _) => FailKind::CompileError,
        (_, Some(libc::SIGKILL | libc::SIGXCPU)) => FailKind::ResourceExceeded,
        _ => FailKind::Crash,
    };
    Err(SandboxFailure::new(kind, format!("worker exited with {status}: {err}")))
}

/// Executes a candidate once against `req` and checks the response.
pub fn run_guest_generator(
    source: &str,
    req: &GuestRequest,
    policy: &SandboxPolicy,
) -> Result<Vec<Genes>, SandboxFailure> {
    let request = serde_json::to_vec(req).expect("request serializes");
    let stdout = run_worker(source, &request, policy)?;
    Ok(parse_response(&stdout, req)?.new_individuals)
}

/// Runs a candidate against the vet fixture.
pub fn vet_candidate(source: &str, policy: &SandboxPolicy) -> Result<(), SandboxFailure> {
    run_guest_generator(source, &GuestRequest::vet_fixture(), policy).map(|_| ())
}

/// Runs a native generator against the vet fixture under the same output
/// checks as a guest.
pub fn vet_native(g: NativeGenerator) -> Result<(), SandboxFailure> {
    let req = GuestRequest::vet_fixture();
    let out = run_native(g, &req).map_err(|e| SandboxFailure::new(FailKind::Crash, e.to_string()))?;
    let len = req.gene_len().expect("fixture has history");
    validate_batch(&out, req.new_individuals_numbers, len, req.code_upperbound())
        .map_err(|e| SandboxFailure::new(FailKind::SchemaViolation, e))
}

/// Serves a guest request with a native generator, seeding its RNG from
/// the request seed.
pub fn run_native(g: NativeGenerator, req: &GuestRequest) -> Result<Vec<Genes>, SearchError> {
    use rand::SeedableRng;
    let state = req.state();
    let len = req.gene_len().unwrap_or(0);
    let gen_req = GenerateRequest {
        state: &state,
        count: req.new_individuals_numbers,
        max_iterations: req.maximum_iteration,
        gene_len: len,
        hyperparams: &req.hyperparameters,
    };
    g.generate_batch(&gen_req, &mut ChaCha8Rng::seed_from_u64(req.seed))
}

/// A candidate script used as a search generator through the sandbox.
pub struct GuestGenerator {
    name: String,
    source: String,
    policy: SandboxPolicy,
    last_failure: Option<SandboxFailure>,
}

impl GuestGenerator {
    pub fn new(name: impl Into<String>, source: impl Into<String>, policy: SandboxPolicy) -> Self {
        Self { name: name.into(), source: source.into(), policy, last_failure: None }
    }

    /// The failure that ended the last generate call, if it failed in the
    /// sandbox.
    pub fn last_failure(&self) -> Option<&SandboxFailure> {
        self.last_failure.as_ref()
    }
}

impl Generator for GuestGenerator {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn generate(&mut self, req: &GenerateRequest<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<Genes>, SearchError> {
        let request = GuestRequest::from_generate(req, u64::from(rng.next_u32()));
        run_guest_generator(&self.source, &request, &self.policy).map_err(|f| {
            let msg = format!("{}: {f}", self.name);
            self.last_failure = Some(f);
            SearchError::Generator(msg)
        })
    }
}
