//! The discovery loop: idea dropout, knowledge recombination, incremental
//! and diversity innovation, vetting, scoring, categorisation and pool
//! update, iterated with a checkpoint after every iteration.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/pool/<id>/{algorithm.txt,meta.json}
//! <out>/checkpoint.json
//! <out>/run_log.jsonl
//! <out>/raw/<iteration>-<phase>.txt
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::FitConfig;
use crate::format;
use crate::generators::NativeGenerator;
use crate::listings;
use crate::llm::{Gateway, KcVerdict, LlmConfig, LlmError, Phase};
use crate::pool::{AlgorithmEntry, ClusterAssignment, Pool, PoolError, Provenance};
use crate::sandbox::{self, FailKind, GuestGenerator, SandboxConfig, SandboxFailure};
use crate::search::{run_search, Hyperparams, SearchConfig, SearchError};
use crate::tensor::Tensor;

/// Number of entries returned by a discovery run.
pub const TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("seed {name} failed: {failure}")]
    Seed { name: String, failure: SandboxFailure },
    #[error("candidate is dead: {0}")]
    Dead(SandboxFailure),
    #[error("llm unavailable at iteration {iteration}; resume from the checkpoint: {source}")]
    Aborted { iteration: usize, source: LlmError },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("io at {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> OrchestratorError {
    OrchestratorError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Search settings used to score a candidate on each training tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSearchConfig {
    pub iters: usize,
    pub samples: usize,
    pub rank_max: usize,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
}

impl Default for EvalSearchConfig {
    fn default() -> Self {
        Self { iters: 30, samples: 50, rank_max: 4, fit: FitConfig::default(), hyperparams: Hyperparams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TnGpsConfig {
    pub iterations: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub m: usize,
    pub n: usize,
    pub c: usize,
    pub lambda: f64,
    pub training_tensors: Vec<PathBuf>,
    pub eval_search: EvalSearchConfig,
    pub llm: LlmConfig,
    pub sandbox: SandboxConfig,
    pub seed: u64,
    /// Directory overriding the built-in prompt templates.
    pub templates_dir: Option<PathBuf>,
}

impl Default for TnGpsConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            alpha1: 100.0,
            alpha2: 100.0,
            m: 2,
            n: 1,
            c: 5,
            lambda: 5.0,
            training_tensors: Vec::new(),
            eval_search: EvalSearchConfig::default(),
            llm: LlmConfig::default(),
            sandbox: SandboxConfig::default(),
            seed: 0,
            templates_dir: None,
        }
    }
}

impl TnGpsConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.into()));
        if self.iterations == 0 || self.m == 0 || self.n == 0 || self.c == 0 {
            return bad("iterations, m, n and c must be >= 1");
        }
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return bad("alpha1 and alpha2 must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if self.training_tensors.is_empty() {
            return bad("at least one training tensor is required");
        }
        let e = &self.eval_search;
        if e.iters == 0 || e.samples == 0 || e.rank_max == 0 {
            return bad("eval_search iters, samples and rank_max must be >= 1");
        }
        self.eval_search.fit.validate().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        self.sandbox.vet_policy().validate().map_err(OrchestratorError::Config)
    }

    /// Search configuration used for training tensor `index`.
    pub fn search_config(&self, index: usize) -> SearchConfig {
        let e = &self.eval_search;
        let mut cfg = SearchConfig::new(e.iters, e.samples, self.lambda, e.rank_max);
        cfg.seed = self.seed.wrapping_add(index as u64);
        cfg.fit = e.fit.clone();
        cfg.hyperparams = e.hyperparams.clone();
        cfg
    }

    pub fn load_tensors(&self) -> Result<Vec<Tensor>, OrchestratorError> {
        self.training_tensors.iter().map(|p| format::load(p).map_err(|e| io_err(p, e))).collect()
    }
}

/// How a candidate is executed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Executor {
    Native(NativeGenerator),
    Guest,
}

pub fn executor_for(source: &str, sandbox: &SandboxConfig) -> Executor {
    match listings::identify(source) {
        Some(g) if sandbox.native_listings => Executor::Native(g),
        _ => Executor::Guest,
    }
}

pub fn vet(source: &str, sandbox: &SandboxConfig) -> Result<(), SandboxFailure> {
    match executor_for(source, sandbox) {
        Executor::Native(g) => sandbox::vet_native(g),
        Executor::Guest => sandbox::vet_candidate(source, &sandbox.vet_policy()),
    }
}

fn search_failure(err: SearchError, guest: Option<&GuestGenerator>) -> SandboxFailure {
    if let Some(f) = guest.and_then(GuestGenerator::last_failure) {
        return f.clone();
    }
    let kind = match err {
        SearchError::Contract(ref m) if m.contains("outside") => FailKind::OutOfRange,
        SearchError::Contract(_) => FailKind::SchemaViolation,
        _ => FailKind::Crash,
    };
    SandboxFailure { kind, reason: err.to_string() }
}

fn search_once(
    source: &str,
    x: &Tensor,
    cfg: &SearchConfig,
    sandbox: &SandboxConfig,
) -> Result<f64, SandboxFailure> {
    match executor_for(source, sandbox) {
        Executor::Native(mut g) => {
            run_search(x, cfg, &mut g).map(|r| r.best_report.f_value).map_err(|e| search_failure(e, None))
        }
        Executor::Guest => {
            let mut g = GuestGenerator::new("candidate", source, sandbox.run_policy());
            match run_search(x, cfg, &mut g) {
                Ok(r) => Ok(r.best_report.f_value),
                Err(e) => Err(search_failure(e, Some(&g))),
            }
        }
    }
}

/// Mean over the training tensors of the best objective found by a search
/// driven by `source`.
pub fn score_with(source: &str, tensors: &[Tensor], cfg: &TnGpsConfig) -> Result<f64, SandboxFailure> {
    let bests: Vec<f64> = tensors
        .par_iter()
        .enumerate()
        .map(|(i, x)| search_once(source, x, &cfg.search_config(i), &cfg.sandbox))
        .collect::<Result<_, _>>()?;
    Ok(bests.iter().sum::<f64>() / bests.len() as f64)
}

/// [`score_with`] over the configured training tensor files.
pub fn score_candidate(source: &str, cfg: &TnGpsConfig) -> Result<f64, OrchestratorError> {
    let tensors = cfg.load_tensors()?;
    score_with(source, &tensors, cfg).map_err(OrchestratorError::Dead)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub iteration: usize,
    pub phase: String,
    pub candidate_id: Option<String>,
    pub outcome: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub completed_iterations: usize,
    pub llm_counters: Option<BTreeMap<Phase, usize>>,
    pub best_per_iteration: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub top: Vec<AlgorithmEntry>,
    pub pool: Pool,
    /// Best pool score after seeding and after each iteration.
    pub best_per_iteration: Vec<f64>,
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn pool(&self) -> PathBuf {
        self.root.join("pool")
    }

    fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    fn log(&self, event: LogEvent) -> Result<(), OrchestratorError> {
        let path = self.root.join("run_log.jsonl");
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))
    }

    fn event(&self, iteration: usize, phase: &str, id: Option<&str>, outcome: impl Into<String>) -> Result<(), OrchestratorError> {
        self.log(LogEvent {
            iteration,
            phase: phase.into(),
            candidate_id: id.map(str::to_string),
            outcome: outcome.into(),
        })
    }

    fn raw(&self, iteration: usize, name: &str, text: &str) -> Result<(), OrchestratorError> {
        let dir = self.root.join("raw");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join(format!("{iteration:03}-{name}.txt"));
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    fn save(&self, pool: &Pool, checkpoint: &Checkpoint) -> Result<(), OrchestratorError> {
        pool.save(&self.pool())?;
        let path = self.checkpoint();
        let text = serde_json::to_string_pretty(checkpoint).expect("checkpoint serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

struct Candidate {
    id: String,
    source: String,
    provenance: Provenance,
}

/// Runs discovery from `seeds` (name, source) and writes all artefacts
/// under `out_dir`. An existing checkpoint there is resumed.
pub fn run_tngps(
    seeds: &[(String, String)],
    cfg: &TnGpsConfig,
    gateway: &Gateway,
    out_dir: &Path,
) -> Result<RunOutcome, OrchestratorError> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(OrchestratorError::Config("at least one seed algorithm is required".into()));
    }
    let tensors = cfg.load_tensors()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let dir = RunDir { root: out_dir.to_path_buf() };

    let (mut pool, mut checkpoint) = if dir.checkpoint().is_file() {
        let path = dir.checkpoint();
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
        if let Some(c) = &checkpoint.llm_counters {
            gateway.client.transport().restore_counters(c);
        }
        log::info!("resuming after iteration {}", checkpoint.completed_iterations);
        (Pool::load(&dir.pool(), cfg.c)?, checkpoint)
    } else {
        let pool = seed_pool(seeds, &tensors, cfg, &dir)?;
        let checkpoint = Checkpoint {
            completed_iterations: 0,
            llm_counters: gateway.client.transport().counters(),
            best_per_iteration: pool.best_score().into_iter().collect(),
        };
        dir.save(&pool, &checkpoint)?;
        (pool, checkpoint)
    };

    for iteration in checkpoint.completed_iterations + 1..=cfg.iterations {
        match run_iteration(iteration, &mut pool, &tensors, cfg, gateway, &dir) {
            Ok(()) => {}
            Err(OrchestratorError::Llm(source @ LlmError::Exhausted { .. })) => {
                dir.event(iteration, "abort", None, source.to_string())?;
                return Err(OrchestratorError::Aborted { iteration, source });
            }
            Err(e) => return Err(e),
        }
        checkpoint.completed_iterations = iteration;
        checkpoint.llm_counters = gateway.client.transport().counters();
        checkpoint.best_per_iteration.push(pool.best_score().expect("seeded pool has scores"));
        dir.save(&pool, &checkpoint)?;
    }

    let eligible = pool.entries().iter().filter(|e| e.provenance != Provenance::Seed).count();
    let top = pool.top_k(TOP_K.min(eligible), true)?.into_iter().cloned().collect();
    Ok(RunOutcome { top, pool, best_per_iteration: checkpoint.best_per_iteration })
}

fn seed_pool(
    seeds: &[(String, String)],
    tensors: &[Tensor],
    cfg: &TnGpsConfig,
    dir: &RunDir,
) -> Result<Pool, OrchestratorError> {
    let mut pool = Pool::new(cfg.c.max(seeds.len()));
    for (k, (name, source)) in seeds.iter().enumerate() {
        let id = format!("000-{k:03}-{name}");
        let failed = |failure| OrchestratorError::Seed { name: name.clone(), failure };
        vet(source, &cfg.sandbox).map_err(failed)?;
        let score = score_with(source, tensors, cfg).map_err(failed)?;
        let entry = AlgorithmEntry {
            id: id.clone(),
            source: source.clone(),
            score: Some(score),
            cluster_id: None,
            provenance: Provenance::Seed,
            created_iteration: 0,
        };
        pool.insert_entry(entry, ClusterAssignment::New)?;
        dir.event(0, "seed", Some(&id), format!("score {score}"))?;
    }
    if pool.max_clusters() > cfg.c {
        log::warn!("{} seeds exceed c = {}; the cluster cap is raised to match", seeds.len(), cfg.c);
    }
    Ok(pool)
}

fn run_iteration(
    iteration: usize,
    pool: &mut Pool,
    tensors: &[Tensor],
    cfg: &TnGpsConfig,
    gateway: &Gateway,
    dir: &RunDir,
) -> Result<(), OrchestratorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iteration as u64);

    let m = cfg.m.min(pool.len());
    let selected: Vec<(String, f64)> = pool
        .idea_dropout(m, cfg.alpha1, cfg.alpha2, &mut rng)?
        .into_iter()
        .map(|e| (e.source.clone(), e.score.expect("pool entries are scored")))
        .collect();
    dir.event(iteration, "ID", None, format!("selected {}", selected.len()))?;

    let mut candidates: Vec<Candidate> = Vec::new();
    match gateway.kr_generate(&selected, cfg.n) {
        Ok(generated) => {
            dir.raw(iteration, "kr", &generated.raw)?;
            dir.event(iteration, "KR", None, format!("{} of {} candidates", generated.candidates.len(), generated.requested))?;
            for (k, source) in generated.candidates.iter().enumerate() {
                let id = format!("{iteration:03}-{k:03}-ii");
                let refined = gateway.ii_refine(source)?;
                dir.raw(iteration, &format!("ii-{k:03}"), &refined.raw)?;
                let outcome = if refined.passthrough { "passthrough" } else { "refined" };
                dir.event(iteration, "II", Some(&id), outcome)?;
                candidates.push(Candidate { id, source: refined.source, provenance: Provenance::Ii });
            }
        }
        Err(LlmError::Extract(e)) => dir.event(iteration, "KR", None, format!("no candidates: {e}"))?,
        Err(e) => return Err(e.into()),
    }

    if pool.has_room() {
        let centroids: Vec<String> = pool.centroids().into_iter().map(|(_, e)| e.source.clone()).collect();
        match gateway.di_generate(&centroids, 1) {
            Ok(generated) => {
                dir.raw(iteration, "di", &generated.raw)?;
                for (k, source) in generated.candidates.into_iter().enumerate() {
                    let id = format!("{iteration:03}-{:03}-di", cfg.n + k);
                    dir.event(iteration, "DI", Some(&id), "generated")?;
                    candidates.push(Candidate { id, source, provenance: Provenance::Di });
                }
            }
            Err(LlmError::Extract(e)) => dir.event(iteration, "DI", None, format!("no candidates: {e}"))?,
            Err(e) => return Err(e.into()),
        }
    }

    let mut scored: Vec<(Candidate, f64)> = Vec::new();
    for cand in candidates {
        if let Err(f) = vet(&cand.source, &cfg.sandbox) {
            dir.event(iteration, "vet", Some(&cand.id), format!("dead: {f}"))?;
            continue;
        }
        dir.event(iteration, "vet", Some(&cand.id), "pass")?;
        match score_with(&cand.source, tensors, cfg) {
            Ok(score) => {
                dir.event(iteration, "score", Some(&cand.id), format!("score {score}"))?;
                scored.push((cand, score));
            }
            Err(f) => dir.event(iteration, "score", Some(&cand.id), format!("dead: {f}"))?,
        }
    }

    let mut inserted = 0;
    for (cand, score) in scored {
        let assignment = if cand.provenance == Provenance::Di && pool.has_room() {
            ClusterAssignment::New
        } else {
            let centroids: Vec<(usize, String)> =
                pool.centroids().into_iter().map(|(c, e)| (c, e.source.clone())).collect();
            match gateway.kc_classify(&cand.source, &centroids, pool.has_room())? {
                KcVerdict::Existing(c) | KcVerdict::Fallback(c) => ClusterAssignment::Existing(c),
                KcVerdict::New => ClusterAssignment::New,
            }
        };
        let entry = AlgorithmEntry {
            id: cand.id.clone(),
            source: cand.source,
            score: Some(score),
            cluster_id: None,
            provenance: cand.provenance,
            created_iteration: iteration,
        };
        let cluster = pool.insert_entry(entry, assignment)?;
        inserted += 1;
        dir.event(iteration, "KC", Some(&cand.id), format!("cluster {cluster}"))?;
    }
    if inserted == 0 {
        dir.event(iteration, "pool", None, "barren")?;
    }
    Ok(())
}
