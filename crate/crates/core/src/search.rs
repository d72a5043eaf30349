//! The sampling-evaluation loop.
//!
//! Iteration 1 evaluates the initial population. Every later iteration `i`
//! asks the generator for `m` new gene vectors conditioned on the full
//! history, evaluates them and updates the best structure.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decompose::{objective, FitConfig, FitError, ObjectiveConfig, ObjectiveReport};
use crate::tensor::{gene_len, Tensor, TensorError, TnStructure};

/// Flat upper-triangular encoding of a bond matrix.
pub type Genes = Vec<usize>;

/// Probability that an initial gene is 2 instead of 1.
pub const INIT_RANK_TWO_PROBABILITY: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("generator contract violated: {0}")]
    Contract(String),
    #[error("generator {name} needs {what}")]
    MissingState { name: String, what: &'static str },
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Named scalar hyperparameters handed to generators.
///
/// Values are JSON scalars so the same map can be forwarded verbatim to
/// guest scripts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyperparams(pub BTreeMap<String, Value>);

impl Hyperparams {
    pub fn with_upper_bound(code_upperbound: usize) -> Self {
        let mut map = BTreeMap::new();
        map.insert("code_upperbound".to_string(), Value::from(code_upperbound));
        Self(map)
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn f64_or(&self, key: &str, default: f64) -> f64 {
        match self.0.get(key) {
            Some(Value::Bool(b)) => f64::from(u8::from(*b)),
            Some(v) => v.as_f64().unwrap_or(default),
            None => default,
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> usize {
        self.0
            .get(key)
            .and_then(|v| v.as_u64().or_else(|| v.as_f64().map(|f| f as u64)))
            .map_or(default, |v| v as usize)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> bool {
        match self.0.get(key) {
            Some(Value::Bool(b)) => *b,
            Some(v) => v.as_f64().map_or(default, |f| f != 0.0),
            None => default,
        }
    }

    pub fn code_upperbound(&self) -> usize {
        self.usize_or("code_upperbound", 1).max(1)
    }
}

/// History of one search run, as seen by generators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub history_populations: BTreeMap<usize, Vec<Genes>>,
    pub fitness_scores: BTreeMap<usize, Vec<f64>>,
    pub best_individual: Option<Genes>,
    pub best_score: Option<f64>,
    pub current_iteration: usize,
}

impl SearchState {
    pub fn new() -> Self {
        Self { current_iteration: 1, ..Self::default() }
    }

    pub fn record(&mut self, iteration: usize, population: Vec<Genes>, scores: Vec<f64>) {
        debug_assert_eq!(population.len(), scores.len());
        for (genes, &score) in population.iter().zip(&scores) {
            if self.best_score.is_none_or(|b| score < b) {
                self.best_score = Some(score);
                self.best_individual = Some(genes.clone());
            }
        }
        self.history_populations.insert(iteration, population);
        self.fitness_scores.insert(iteration, scores);
    }

    /// All recorded individuals and scores, in iteration order.
    pub fn flattened(&self) -> (Vec<&Genes>, Vec<f64>) {
        let population = self.history_populations.values().flatten().collect();
        let scores = self.fitness_scores.values().flatten().copied().collect();
        (population, scores)
    }

    /// Population and scores of iteration `current_iteration - 1`.
    pub fn previous(&self) -> Option<(&[Genes], &[f64])> {
        let key = self.current_iteration.checked_sub(1)?;
        let pop = self.history_populations.get(&key)?;
        let scores = self.fitness_scores.get(&key)?;
        (!pop.is_empty()).then_some((pop.as_slice(), scores.as_slice()))
    }

    pub fn sample_count(&self) -> usize {
        self.history_populations.values().map(Vec::len).sum()
    }
}

/// Everything a generator call receives besides the RNG.
#[derive(Debug, Clone, Copy)]
pub struct GenerateRequest<'a> {
    pub state: &'a SearchState,
    pub count: usize,
    pub max_iterations: usize,
    pub gene_len: usize,
    pub hyperparams: &'a Hyperparams,
}

/// A sampling generator: proposes the next batch of structures.
pub trait Generator {
    fn name(&self) -> String;

    fn generate(
        &mut self,
        req: &GenerateRequest<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Genes>, SearchError>;
}

/// Checks count, length and bounds of a generator batch.
pub fn validate_batch(
    batch: &[Genes],
    count: usize,
    gene_len: usize,
    code_upperbound: usize,
) -> Result<(), String> {
    if batch.len() != count {
        return Err(format!("expected {count} individuals, got {}", batch.len()));
    }
    for (k, genes) in batch.iter().enumerate() {
        if genes.len() != gene_len {
            return Err(format!("individual {k} has {} genes, expected {gene_len}", genes.len()));
        }
        if let Some(&g) = genes.iter().find(|&&g| g < 1 || g > code_upperbound) {
            return Err(format!("individual {k} has gene {g} outside [1, {code_upperbound}]"));
        }
    }
    Ok(())
}

/// Initial population: each gene is 1, or 2 with the given probability.
pub fn init_population<R: Rng + ?Sized>(
    n: usize,
    gene_len: usize,
    probability: f64,
    rng: &mut R,
) -> Vec<Genes> {
    (0..n)
        .map(|_| {
            (0..gene_len).map(|_| if rng.random::<f64>() < probability { 2 } else { 1 }).collect()
        })
        .collect()
}

/// [`init_population`] with the default probability and a fresh seeded RNG.
pub fn init_population_seeded(n: usize, gene_len: usize, seed: u64) -> Vec<Genes> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_population(n, gene_len, INIT_RANK_TWO_PROBABILITY, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: usize,
    pub samples_per_iter: usize,
    pub lambda: f64,
    pub rank_upper_bound: usize,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitConfig,
    /// Extra generator hyperparameters; `code_upperbound` is always set from
    /// `rank_upper_bound`.
    #[serde(default)]
    pub hyperparams: Hyperparams,
    /// Overrides the random initial population (evaluated as iteration 1).
    #[serde(default)]
    pub initial_population: Option<Vec<Genes>>,
}

impl SearchConfig {
    pub fn new(iterations: usize, samples_per_iter: usize, lambda: f64, rank_upper_bound: usize) -> Self {
        Self {
            iterations,
            samples_per_iter,
            lambda,
            rank_upper_bound,
            seed: 0,
            fit: FitConfig::default(),
            hyperparams: Hyperparams::default(),
            initial_population: None,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let mut hp = self.hyperparams.clone();
        hp.set("code_upperbound", self.rank_upper_bound);
        hp
    }

    fn validate(&self) -> Result<(), SearchError> {
        if self.iterations == 0 || self.samples_per_iter == 0 {
            return Err(SearchError::Config("iterations and samples must be >= 1".into()));
        }
        if self.rank_upper_bound == 0 {
            return Err(SearchError::Config("rank upper bound must be >= 1".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(SearchError::Config("lambda must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample_index: usize,
    pub genes: Genes,
    pub f_value: f64,
    pub rse: f64,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_structure: TnStructure,
    pub best_report: ObjectiveReport,
    pub trace: Vec<TraceRecord>,
    /// Best objective after each iteration.
    pub best_per_iteration: Vec<f64>,
    pub state: SearchState,
}

impl SearchResult {
    /// 1-based index of the first sample that reached the final best value.
    pub fn samples_to_best(&self) -> usize {
        let best = self.best_report.f_value;
        self.trace
            .iter()
            .find(|r| r.f_value == best)
            .map_or(self.trace.len(), |r| r.sample_index)
    }

    pub fn write_trace_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for record in &self.trace {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sample_index,genes,f_value,rse,params")?;
        for r in &self.trace {
            let genes: Vec<String> = r.genes.iter().map(usize::to_string).collect();
            writeln!(w, "{},{},{},{},{}", r.sample_index, genes.join(" "), r.f_value, r.rse, r.params)?;
        }
        Ok(())
    }
}

/// Fit seed for one structure: depends only on the run seed and the genes, so
/// a structure gets the same score wherever it is sampled.
fn structure_seed(seed: u64, genes: &[usize]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for &g in genes {
        h.update((g as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Objective evaluator with a per-run cache keyed by gene vector.
pub struct Evaluator<'a> {
    x: &'a Tensor,
    mode_dims: Vec<usize>,
    cfg: ObjectiveConfig,
    cache: HashMap<Genes, ObjectiveReport>,
}

impl<'a> Evaluator<'a> {
    pub fn new(x: &'a Tensor, lambda: f64, rank_upper_bound: usize, fit: FitConfig) -> Self {
        Self {
            x,
            mode_dims: x.shape().to_vec(),
            cfg: ObjectiveConfig { lambda, rank_upper_bound, fit },
            cache: HashMap::new(),
        }
    }

    pub fn structure(&self, genes: &[usize]) -> Result<TnStructure, TensorError> {
        TnStructure::bounded(self.mode_dims.clone(), genes.to_vec(), self.cfg.rank_upper_bound)
    }

    /// Evaluates a batch; duplicates and previously seen structures are
    /// fitted once.
    pub fn eval_batch(&mut self, batch: &[Genes]) -> Result<Vec<ObjectiveReport>, SearchError> {
        let mut pending: Vec<&Genes> = Vec::new();
        for genes in batch {
            if !self.cache.contains_key(genes) && !pending.contains(&genes) {
                pending.push(genes);
            }
        }
        let fitted: Vec<(Genes, ObjectiveReport)> = pending
            .par_iter()
            .map(|genes| {
                let s = self.structure(genes)?;
                let mut cfg = self.cfg.clone();
                cfg.fit.seed = structure_seed(self.cfg.fit.seed, genes);
                let report = objective(self.x, &s, &cfg)?;
                Ok(((*genes).clone(), report))
            })
            .collect::<Result<_, SearchError>>()?;
        self.cache.extend(fitted);
        Ok(batch.iter().map(|g| self.cache[g].clone()).collect())
    }
}

/// Runs the sampling-evaluation loop with the given generator.
pub fn run_search(
    x: &Tensor,
    cfg: &SearchConfig,
    generator: &mut dyn Generator,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let order = x.order();
    if order < 2 {
        return Err(TensorError::OrderTooSmall(order).into());
    }
    let len = gene_len(order);
    let m = cfg.samples_per_iter;
    let hp = cfg.hyperparams();
    let upper = hp.code_upperbound();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evaluator = Evaluator::new(x, cfg.lambda, cfg.rank_upper_bound, cfg.fit.clone());
    let mut state = SearchState::new();
    let mut trace = Vec::with_capacity(cfg.iterations * m);
    let mut best_per_iteration = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(Genes, ObjectiveReport)> = None;

    for iteration in 1..=cfg.iterations {
        state.current_iteration = iteration;
        let batch = if iteration == 1 {
            match &cfg.initial_population {
                Some(pop) => pop.clone(),
                None => init_population(m, len, INIT_RANK_TWO_PROBABILITY, &mut rng),
            }
        } else {
            let req = GenerateRequest {
                state: &state,
                count: m,
                max_iterations: cfg.iterations,
                gene_len: len,
                hyperparams: &hp,
            };
            let mut call_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            generator.generate(&req, &mut call_rng)?
        };
        validate_batch(&batch, m, len, upper)
            .map_err(|e| SearchError::Contract(format!("{} at iteration {iteration}: {e}", generator.name())))?;

        let reports = evaluator.eval_batch(&batch)?;
        for (genes, report) in batch.iter().zip(&reports) {
            trace.push(TraceRecord {
                sample_index: trace.len() + 1,
                genes: genes.clone(),
                f_value: report.f_value,
                rse: report.rse,
                params: report.params,
            });
            if best.as_ref().is_none_or(|(_, b)| report.f_value < b.f_value) {
                best = Some((genes.clone(), report.clone()));
            }
        }
        let scores = reports.iter().map(|r| r.f_value).collect();
        state.record(iteration, batch, scores);
        best_per_iteration.push(best.as_ref().map(|(_, r)| r.f_value).expect("non-empty batch"));
    }

    let (genes, best_report) = best.expect("at least one evaluation");
    Ok(SearchResult {
        best_structure: evaluator.structure(&genes)?,
        best_report,
        trace,
        best_per_iteration,
        state,
    })
}
