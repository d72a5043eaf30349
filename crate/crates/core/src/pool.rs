//! The idea pool: scored candidate algorithms grouped into clusters, with
//! rank-based roulette selection.
//!
//! A cluster's centroid is its lowest-scoring (best) member. Every entry is
//! persisted as `<dir>/<id>/algorithm.txt` plus `<dir>/<id>/meta.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPS: f64 = 1e-6;
const MIN_WEIGHT: f64 = 0.01;
const MAX_DROPOUT_DRAWS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("requested {requested} items but only {available} are available")]
    Insufficient { requested: usize, available: usize },
    #[error("cluster cap of {0} reached")]
    CapReached(usize),
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("entry {0} has no finite score")]
    Unscored(String),
    #[error("duplicate entry id {0}")]
    DuplicateId(String),
    #[error("invalid roulette parameters: {0}")]
    Params(String),
    #[error("io at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad metadata in {path}: {message}")]
    Meta { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "seed")]
    Seed,
    #[serde(rename = "KR")]
    Kr,
    #[serde(rename = "II")]
    Ii,
    #[serde(rename = "DI")]
    Di,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmEntry {
    pub id: String,
    pub source: String,
    pub score: Option<f64>,
    pub cluster_id: Option<usize>,
    pub provenance: Provenance,
    pub created_iteration: usize,
}

impl AlgorithmEntry {
    fn finite_score(&self) -> Option<f64> {
        self.score.filter(|s| s.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterAssignment {
    Existing(usize),
    New,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouletteParams {
    pub alpha: f64,
    pub eps: f64,
}

impl RouletteParams {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, eps: DEFAULT_EPS }
    }

    fn validate(&self) -> Result<(), PoolError> {
        if !(self.alpha > 0.0) || !(self.eps > 0.0) {
            return Err(PoolError::Params(format!("alpha={} eps={}", self.alpha, self.eps)));
        }
        Ok(())
    }

    /// Unnormalised weight of rank `k` (1 = best): `max(0.01, ln(alpha / (eps + k)))`.
    pub fn weight(&self, k: usize) -> f64 {
        (self.alpha / (self.eps + k as f64)).ln().max(MIN_WEIGHT)
    }
}

/// Draws `count` items without replacement from a list ranked best-first.
///
/// At each draw the weights of the items still in play are renormalised.
pub fn roulette_select<T: Clone, R: Rng + ?Sized>(
    ranked: &[T],
    params: RouletteParams,
    count: usize,
    rng: &mut R,
) -> Result<Vec<T>, PoolError> {
    let picks = roulette_indices(ranked.len(), params, count, rng)?;
    Ok(picks.into_iter().map(|i| ranked[i].clone()).collect())
}

/// Index form of [`roulette_select`].
pub fn roulette_indices<R: Rng + ?Sized>(
    len: usize,
    params: RouletteParams,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>, PoolError> {
    params.validate()?;
    if count > len {
        return Err(PoolError::Insufficient { requested: count, available: len });
    }
    let mut remaining: Vec<(usize, f64)> = (0..len).map(|i| (i, params.weight(i + 1))).collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = remaining.len() - 1;
        for (pos, (_, w)) in remaining.iter().enumerate() {
            if target < *w {
                chosen = pos;
                break;
            }
            target -= w;
        }
        out.push(remaining.remove(chosen).0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    score: Option<f64>,
    cluster_id: Option<usize>,
    provenance: Provenance,
    created_iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    entries: Vec<AlgorithmEntry>,
    clusters: BTreeMap<usize, Vec<String>>,
    max_clusters: usize,
}

impl Pool {
    pub fn new(max_clusters: usize) -> Self {
        Self { entries: Vec::new(), clusters: BTreeMap::new(), max_clusters: max_clusters.max(1) }
    }

    pub fn entries(&self) -> &[AlgorithmEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_clusters(&self) -> usize {
        self.max_clusters
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn has_room(&self) -> bool {
        self.clusters.len() < self.max_clusters
    }

    pub fn get(&self, id: &str) -> Option<&AlgorithmEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Members of a cluster, best first.
    pub fn members(&self, cluster_id: usize) -> Vec<&AlgorithmEntry> {
        let mut members: Vec<&AlgorithmEntry> = self
            .clusters
            .get(&cluster_id)
            .map(|ids| ids.iter().filter_map(|id| self.get(id)).collect())
            .unwrap_or_default();
        members.sort_by(|a, b| score_key(a).total_cmp(&score_key(b)));
        members
    }

    pub fn centroid(&self, cluster_id: usize) -> Option<&AlgorithmEntry> {
        self.members(cluster_id).into_iter().next()
    }

    /// `(cluster_id, centroid)` pairs ordered by centroid score, best first.
    pub fn centroids(&self) -> Vec<(usize, &AlgorithmEntry)> {
        let mut out: Vec<(usize, &AlgorithmEntry)> =
            self.clusters.keys().filter_map(|&c| self.centroid(c).map(|e| (c, e))).collect();
        out.sort_by(|a, b| score_key(a.1).total_cmp(&score_key(b.1)).then(a.0.cmp(&b.0)));
        out
    }

    pub fn best_score(&self) -> Option<f64> {
        self.entries.iter().filter_map(AlgorithmEntry::finite_score).min_by(f64::total_cmp)
    }

    /// Adds a scored entry and returns the cluster it joined.
    pub fn insert_entry(
        &mut self,
        mut entry: AlgorithmEntry,
        assignment: ClusterAssignment,
    ) -> Result<usize, PoolError> {
        if entry.finite_score().is_none() {
            return Err(PoolError::Unscored(entry.id));
        }
        if self.get(&entry.id).is_some() {
            return Err(PoolError::DuplicateId(entry.id));
        }
        let cluster = match assignment {
            ClusterAssignment::Existing(c) if self.clusters.contains_key(&c) => c,
            ClusterAssignment::Existing(c) => return Err(PoolError::UnknownCluster(c)),
            ClusterAssignment::New if self.has_room() => {
                self.clusters.keys().next_back().map_or(0, |&c| c + 1)
            }
            ClusterAssignment::New => return Err(PoolError::CapReached(self.max_clusters)),
        };
        entry.cluster_id = Some(cluster);
        self.clusters.entry(cluster).or_default().push(entry.id.clone());
        self.entries.push(entry);
        Ok(cluster)
    }

    /// The `k` best entries, optionally ignoring seeds.
    pub fn top_k(&self, k: usize, exclude_seeds: bool) -> Result<Vec<&AlgorithmEntry>, PoolError> {
        let mut eligible: Vec<&AlgorithmEntry> = self
            .entries
            .iter()
            .filter(|e| e.finite_score().is_some())
            .filter(|e| !(exclude_seeds && e.provenance == Provenance::Seed))
            .collect();
        if eligible.len() < k {
            return Err(PoolError::Insufficient { requested: k, available: eligible.len() });
        }
        eligible.sort_by(|a, b| score_key(a).total_cmp(&score_key(b)));
        eligible.truncate(k);
        Ok(eligible)
    }

    /// Bi-level roulette: pick a cluster by centroid rank, then a member by
    /// rank within it, until `m` distinct entries are chosen.
    pub fn idea_dropout<R: Rng + ?Sized>(
        &self,
        m: usize,
        alpha1: f64,
        alpha2: f64,
        rng: &mut R,
    ) -> Result<Vec<&AlgorithmEntry>, PoolError> {
        let scored = self.entries.iter().filter(|e| e.finite_score().is_some()).count();
        if m > scored {
            return Err(PoolError::Insufficient { requested: m, available: scored });
        }
        let level1 = RouletteParams::new(alpha1);
        let level2 = RouletteParams::new(alpha2);
        let centroids = self.centroids();
        let mut chosen: Vec<&AlgorithmEntry> = Vec::with_capacity(m);
        let mut draws = 0;
        while chosen.len() < m {
            draws += 1;
            if draws > MAX_DROPOUT_DRAWS {
                return Err(PoolError::Insufficient { requested: m, available: chosen.len() });
            }
            let cluster = centroids[roulette_indices(centroids.len(), level1, 1, rng)?[0]].0;
            let members = self.members(cluster);
            let pick = members[roulette_indices(members.len(), level2, 1, rng)?[0]];
            if !chosen.iter().any(|e| e.id == pick.id) {
                chosen.push(pick);
            }
        }
        Ok(chosen)
    }

    /// Writes every entry under `dir`, replacing entries with the same id.
    pub fn save(&self, dir: &Path) -> Result<(), PoolError> {
        for entry in &self.entries {
            let entry_dir = dir.join(&entry.id);
            fs::create_dir_all(&entry_dir).map_err(|e| io_err(&entry_dir, e))?;
            let src = entry_dir.join("algorithm.txt");
            fs::write(&src, &entry.source).map_err(|e| io_err(&src, e))?;
            let meta = Meta {
                score: entry.score,
                cluster_id: entry.cluster_id,
                provenance: entry.provenance,
                created_iteration: entry.created_iteration,
            };
            let meta_path = entry_dir.join("meta.json");
            let mut text = serde_json::to_string_pretty(&meta).expect("meta serialises");
            text.push('\n');
            fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))?;
        }
        Ok(())
    }

    /// Rebuilds a pool from `dir`. Entries are ordered by id.
    pub fn load(dir: &Path, max_clusters: usize) -> Result<Self, PoolError> {
        let mut ids: Vec<String> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(Result::ok)
            .filter(|d| d.path().join("meta.json").is_file())
            .map(|d| d.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        let mut pool = Pool::new(max_clusters);
        for id in ids {
            let entry_dir = dir.join(&id);
            let meta_path = entry_dir.join("meta.json");
            let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
            let meta: Meta = serde_json::from_str(&text).map_err(|e| PoolError::Meta {
                path: meta_path.display().to_string(),
                message: e.to_string(),
            })?;
            let src = entry_dir.join("algorithm.txt");
            let source = fs::read_to_string(&src).map_err(|e| io_err(&src, e))?;
            let cluster = meta.cluster_id.ok_or_else(|| PoolError::Meta {
                path: meta_path.display().to_string(),
                message: "missing cluster_id".into(),
            })?;
            pool.entries.push(AlgorithmEntry {
                id: id.clone(),
                source,
                score: meta.score,
                cluster_id: Some(cluster),
                provenance: meta.provenance,
                created_iteration: meta.created_iteration,
            });
            pool.clusters.entry(cluster).or_default().push(id);
        }
        if pool.clusters.len() > pool.max_clusters {
            return Err(PoolError::CapReached(pool.max_clusters));
        }
        Ok(pool)
    }
}

fn score_key(e: &AlgorithmEntry) -> f64 {
    e.finite_score().unwrap_or(f64::INFINITY)
}

fn io_err(path: &Path, source: io::Error) -> PoolError {
    PoolError::Io { path: path.display().to_string(), source }
}
