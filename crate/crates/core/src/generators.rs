//! Native sampling generators.
//!
//! Each generator mirrors a reference Python listing, with every random draw
//! routed through the seeded RNG passed to the call. Hyperparameter keys and
//! defaults match the listings, so the same map can drive either the native
//! or the guest-executed version.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::search::{GenerateRequest, Generator, Genes, Hyperparams, SearchError, SearchState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NativeGenerator {
    Tnga,
    Tnls,
    /// Reference GREEDY listing whose body is the TNLS perturbation.
    GreedyAsTnls,
    Greedy,
    Ho1,
    Ho2,
    Ho3,
    /// Tournament/uniform-crossover/boundary-mutation GA found when
    /// ablating discovery phases.
    AblationComponents,
    /// Best-influenced GA found when ablating the interface description.
    AblationInterface,
}

impl NativeGenerator {
    pub const ALL: [NativeGenerator; 9] = [
        Self::Tnga,
        Self::Tnls,
        Self::GreedyAsTnls,
        Self::Greedy,
        Self::Ho1,
        Self::Ho2,
        Self::Ho3,
        Self::AblationComponents,
        Self::AblationInterface,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tnga => "tnga",
            Self::Tnls => "tnls",
            Self::GreedyAsTnls => "greedy_tnls",
            Self::Greedy => "greedy",
            Self::Ho1 => "ho1",
            Self::Ho2 => "ho2",
            Self::Ho3 => "ho3",
            Self::AblationComponents => "ablation_components",
            Self::AblationInterface => "ablation_interface",
        }
    }

    pub fn generate_batch(
        self,
        req: &GenerateRequest<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Genes>, SearchError> {
        let (state, m, hp) = (req.state, req.count, req.hyperparams);
        match self {
            Self::Tnga => generate_tnga(state, m, hp, rng),
            Self::Tnls | Self::GreedyAsTnls => generate_tnls(state, m, hp, rng),
            Self::Greedy => generate_greedy(state, m, hp, rng),
            Self::Ho1 => Ok(generate_ho1(state, m, req.max_iterations, req.gene_len, hp, rng)),
            Self::Ho2 => Ok(generate_ho2(state, m, req.gene_len, hp, rng)),
            Self::Ho3 => Ok(generate_ho3(state, m, req.gene_len, hp, rng)),
            Self::AblationComponents => generate_ablation_components(state, m, hp, rng),
            Self::AblationInterface => generate_ablation_interface(state, m, hp, rng),
        }
    }
}

impl fmt::Display for NativeGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NativeGenerator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown generator {s:?}"))
    }
}

impl Generator for NativeGenerator {
    fn name(&self) -> String {
        self.as_str().to_string()
    }

    fn generate(
        &mut self,
        req: &GenerateRequest<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Genes>, SearchError> {
        self.generate_batch(req, rng)
    }
}

fn missing(name: &str, what: &'static str) -> SearchError {
    SearchError::MissingState { name: name.to_string(), what }
}

fn random_individual(len: usize, upper: usize, rng: &mut ChaCha8Rng) -> Genes {
    (0..len).map(|_| rng.random_range(1..=upper)).collect()
}

/// Round half to even, then clip into `[1, upper]`.
fn round_clip(v: f64, upper: usize) -> usize {
    v.round_ties_even().clamp(1.0, upper as f64) as usize
}

/// Index of the lowest score among `candidates` (first one on ties).
fn argmin_among(candidates: &[usize], scores: &[f64]) -> usize {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if scores[c] < scores[best] {
            best = c;
        }
    }
    best
}

/// Indices sorted by ascending score, ties by position.
fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Parent weight of elite rank `k` (0-based): `max(ln(alpha / (0.01 + beta k)), 0.01)`.
pub fn tnga_rank_weight(k: usize, alpha: f64, beta: f64) -> f64 {
    (alpha / (0.01 + beta * k as f64)).ln().max(0.01)
}

/// Elite-truncated weighted crossover followed by per-gene mutation to a
/// different value.
pub fn generate_tnga(
    state: &SearchState,
    m: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Genes>, SearchError> {
    let (pop, scores) = state.previous().ok_or_else(|| missing("tnga", "a previous iteration"))?;
    let upper = hp.code_upperbound();
    let elite_pct = hp.f64_or("elite_percentage", 0.9);
    let alpha = hp.f64_or("alpha", 100.0);
    let beta = hp.f64_or("beta", 5.0);
    let mutation_rate = hp.f64_or("mutation_rate", 0.25);

    let elite_num = ((pop.len() as f64 * elite_pct) as usize).max(1);
    let elite: Vec<&Genes> = argsort(scores).into_iter().take(elite_num).map(|i| &pop[i]).collect();
    let weights: Vec<f64> = (0..elite.len()).map(|k| tnga_rank_weight(k, alpha, beta)).collect();
    let picker = WeightedIndex::new(&weights).expect("weights are positive");

    let mut out: Vec<Genes> = Vec::with_capacity(m);
    for _ in 0..m / 2 {
        let mut female = elite[picker.sample(rng)].clone();
        let mut male = elite[picker.sample(rng)].clone();
        let mut idx: Vec<usize> = (0..male.len()).collect();
        idx.shuffle(rng);
        for &i in &idx[..male.len() / 2] {
            std::mem::swap(&mut female[i], &mut male[i]);
        }
        out.push(male);
        out.push(female);
    }
    if !m.is_multiple_of(2) {
        // m == 1 has no crossover pair to copy from; shuffle a drawn parent
        let mut extra = match out.last() {
            Some(last) => last.clone(),
            None => elite[picker.sample(rng)].clone(),
        };
        extra.shuffle(rng);
        out.push(extra);
    }
    for individual in &mut out {
        let mask: Vec<bool> = (0..individual.len()).map(|_| rng.random::<f64>() < mutation_rate).collect();
        for (gene, flip) in individual.iter_mut().zip(mask) {
            if flip && upper > 1 {
                let mut choices: Vec<usize> = (1..=upper).filter(|&v| v != *gene).collect();
                choices.shuffle(rng);
                *gene = choices[0];
            }
        }
    }
    Ok(out)
}

/// Noise scale of the local-search perturbation at iteration `i`.
pub fn tnls_noise_std(i: usize, decay: f64, floor: f64) -> f64 {
    let v = decay.powi(i as i32 - 2);
    if v < floor {
        floor
    } else {
        v
    }
}

/// Gaussian perturbation of the best individual, rounded and clipped.
pub fn generate_tnls(
    state: &SearchState,
    m: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Genes>, SearchError> {
    let best = state.best_individual.as_ref().ok_or_else(|| missing("tnls", "a best individual"))?;
    let upper = hp.code_upperbound();
    let std = tnls_noise_std(
        state.current_iteration,
        hp.f64_or("decay_rate", 0.99),
        hp.f64_or("variance_LB", 0.3),
    );
    Ok((0..m)
        .map(|_| {
            best.iter()
                .map(|&g| round_clip(g as f64 + rng.sample::<f64, _>(StandardNormal) * std, upper))
                .collect()
        })
        .collect())
}

/// All single-gene +-1 neighbours of `best` within `[1, upper]`.
pub fn greedy_neighbourhood(best: &[usize], upper: usize) -> Vec<Genes> {
    let mut out = Vec::new();
    for (j, &g) in best.iter().enumerate() {
        if g > 1 {
            let mut n = best.to_vec();
            n[j] = g - 1;
            out.push(n);
        }
        if g < upper {
            let mut n = best.to_vec();
            n[j] = g + 1;
            out.push(n);
        }
    }
    out
}

/// Single-edge rank increments and decrements around the best individual.
///
/// The neighbourhood is visited in a shuffled order; when it has fewer than
/// `m` members the rest of the batch is drawn from it at random.
pub fn generate_greedy(
    state: &SearchState,
    m: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Genes>, SearchError> {
    let best = state.best_individual.as_ref().ok_or_else(|| missing("greedy", "a best individual"))?;
    let mut neighbours = greedy_neighbourhood(best, hp.code_upperbound());
    if neighbours.is_empty() {
        return Ok(vec![best.clone(); m]);
    }
    neighbours.shuffle(rng);
    let mut out: Vec<Genes> = neighbours.iter().take(m).cloned().collect();
    while out.len() < m {
        out.push(neighbours[rng.random_range(0..neighbours.len())].clone());
    }
    Ok(out)
}

/// Mutation scaling of Ho-1: `factor^(1 + (max_iter - i) / max_iter)`.
pub fn ho1_mutation_scaling(i: usize, max_iter: usize, factor: f64) -> f64 {
    factor.powf(1.0 + (max_iter as f64 - i as f64) / max_iter as f64)
}

/// Ho-1: elitism plus tournament crossover over the whole history, with a
/// mutation count that grows as the run progresses.
pub fn generate_ho1(
    state: &SearchState,
    m: usize,
    max_iter: usize,
    gene_len: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Vec<Genes> {
    let upper = hp.code_upperbound();
    let mutation_rate = hp.f64_or("mutation_rate", 0.15);
    let crossover_rate = hp.f64_or("crossover_rate", 0.7);
    let elitism_count = hp.usize_or("elitism_count", 1);
    let scaling_factor = hp.f64_or("mutation_scaling_factor", 0.9);
    let tournament_factor = hp.f64_or("tournament_size_factor", 0.15);

    let (pop, scores) = state.flattened();
    let tournament = |rng: &mut ChaCha8Rng| -> Genes {
        let size = ((pop.len() as f64 * tournament_factor) as usize).max(2).min(pop.len());
        let picked = index::sample(rng, pop.len(), size).into_vec();
        pop[argmin_among(&picked, &scores)].clone()
    };

    let mut out: Vec<Genes> = Vec::with_capacity(m);
    if !pop.is_empty() {
        out.extend(argsort(&scores).into_iter().take(elitism_count.min(m)).map(|i| pop[i].clone()));
    }
    let len = state.best_individual.as_ref().map_or(gene_len, Vec::len);
    while out.len() < m {
        if pop.is_empty() {
            out.push(random_individual(len, upper, rng));
            continue;
        }
        let p1 = tournament(rng);
        let p2 = tournament(rng);
        let n = p1.len();
        let crossed = index::sample(rng, n, (n as f64 * crossover_rate) as usize).into_vec();
        let mut child: Genes = (0..n).map(|i| if crossed.contains(&i) { p2[i] } else { p1[i] }).collect();
        let scaling = ho1_mutation_scaling(state.current_iteration, max_iter, scaling_factor);
        let count = ((n as f64 * scaling * mutation_rate) as usize).max(1).min(n);
        for i in index::sample(rng, n, count) {
            child[i] = rng.random_range(1..=upper);
        }
        out.push(child);
    }
    out
}

/// Noise scale of Ho-2 at iteration `i`: `max(decay^(i-1), floor)`.
pub fn ho2_variance(i: usize, decay: f64, floor: f64) -> f64 {
    decay.powi(i as i32 - 1).max(floor)
}

/// Ho-2: tournament crossover with a bounded mutation count and decaying
/// Gaussian diversity injection.
pub fn generate_ho2(
    state: &SearchState,
    m: usize,
    gene_len: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Vec<Genes> {
    let upper = hp.code_upperbound();
    let mutation_rate = hp.f64_or("mutation_rate", 0.1);
    let elitism = hp.bool_or("elitism", true);
    let diversity_factor = hp.f64_or("diversity_factor", 0.05);
    let tournament_factor = hp.f64_or("tournament_size_factor", 0.2);
    let elite_boost = hp.f64_or("elite_diversity_boost", 2.0);
    let random_chance = hp.f64_or("random_individual_chance", 0.05);
    let max_mutation = hp.usize_or("max_mutation", 3);
    let variance = ho2_variance(
        state.current_iteration,
        hp.f64_or("variance_decay", 0.98),
        hp.f64_or("variance_min", 0.1),
    );

    let mutate = |mut ind: Genes, rng: &mut ChaCha8Rng| -> Genes {
        let n = ind.len();
        for i in index::sample(rng, n, n.min(max_mutation)) {
            if rng.random::<f64>() < mutation_rate {
                ind[i] = rng.random_range(1..=upper);
            }
        }
        ind
    };
    let diversify = |ind: &[usize], boost: f64, rng: &mut ChaCha8Rng| -> Genes {
        ind.iter()
            .map(|&g| round_clip(g as f64 + rng.sample::<f64, _>(StandardNormal) * variance * boost, upper))
            .collect()
    };

    let (pop, scores) = state.flattened();
    let select = |rng: &mut ChaCha8Rng| -> Genes {
        let size = ((pop.len() as f64 * tournament_factor) as usize).clamp(1, pop.len());
        let picked = index::sample(rng, pop.len(), size).into_vec();
        pop[argmin_among(&picked, &scores)].clone()
    };
    let len = state.best_individual.as_ref().map_or(gene_len, Vec::len);

    (0..m)
        .map(|_| {
            if rng.random::<f64>() < random_chance {
                return random_individual(len, upper, rng);
            }
            if let Some(best) = state.best_individual.as_ref().filter(|_| elitism) {
                if rng.random::<f64>() < diversity_factor {
                    let boosted = diversify(best, elite_boost, rng);
                    return mutate(boosted, rng);
                }
            }
            if pop.is_empty() {
                return random_individual(len, upper, rng);
            }
            let p1 = select(rng);
            let p2 = select(rng);
            let child: Genes =
                p1.iter().zip(&p2).map(|(&a, &b)| if rng.random::<f64>() < 0.5 { a } else { b }).collect();
            let child = mutate(child, rng);
            diversify(&child, 1.0, rng)
        })
        .collect()
}

/// Ho-3: the best individual crossed with a full-population tournament
/// winner, then per-gene mutation.
pub fn generate_ho3(
    state: &SearchState,
    m: usize,
    gene_len: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Vec<Genes> {
    let upper = hp.code_upperbound();
    let mutation_rate = hp.f64_or("mutation_rate", 0.2);
    let crossover_rate = hp.f64_or("crossover_rate", 0.5);
    let pressure = hp.f64_or("selection_pressure", 2.0);
    let elitism = hp.bool_or("elitism", true);

    let (pop, scores) = state.flattened();
    let select = |rng: &mut ChaCha8Rng| -> Genes {
        let size = pop.len().min((pop.len() as f64 * pressure) as usize).max(1);
        let picked = index::sample(rng, pop.len(), size).into_vec();
        pop[argmin_among(&picked, &scores)].clone()
    };
    let len = state.best_individual.as_ref().map_or(gene_len, Vec::len);

    (0..m)
        .map(|_| {
            if pop.is_empty() {
                return random_individual(len, upper, rng);
            }
            let p1 = match state.best_individual.as_ref().filter(|_| elitism) {
                Some(best) => best.clone(),
                None => select(rng),
            };
            let p2 = select(rng);
            let mut child = p1;
            for (c, &b) in child.iter_mut().zip(&p2) {
                if rng.random::<f64>() < crossover_rate {
                    *c = b;
                }
            }
            for c in child.iter_mut() {
                if rng.random::<f64>() < mutation_rate {
                    *c = rng.random_range(1..=upper);
                }
            }
            child
        })
        .collect()
}

pub fn generate_ablation_components(
    state: &SearchState,
    m: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Genes>, SearchError> {
    let (pop, scores) =
        state.previous().ok_or_else(|| missing("ablation_components", "a previous iteration"))?;
    let tournament_size = hp.usize_or("tournament_size", 3).max(2);
    let crossover_rate = hp.f64_or("crossover_rate", 0.7);
    let mutation_rate = hp.f64_or("mutation_rate", 0.05);
    let upper = hp.code_upperbound();
    let elitism_count = hp.usize_or("elitism_count", 1);

    let mut out: Vec<Genes> = argsort(scores).into_iter().take(elitism_count).map(|i| pop[i].clone()).collect();
    let crossover = |a: &Genes, b: &Genes, rng: &mut ChaCha8Rng| -> Genes {
        a.iter().zip(b).map(|(&x, &y)| if rng.random::<f64>() < crossover_rate { x } else { y }).collect()
    };
    let boundary = |mut ind: Genes, rng: &mut ChaCha8Rng| -> Genes {
        for g in ind.iter_mut() {
            if rng.random::<f64>() < mutation_rate {
                *g = if rng.random::<f64>() < 0.5 { 1 } else { upper };
            }
        }
        ind
    };
    while out.len() < m {
        let parents: Vec<&Genes> = (0..tournament_size)
            .map(|_| {
                let participants: Vec<usize> =
                    (0..tournament_size).map(|_| rng.random_range(0..pop.len())).collect();
                &pop[argmin_among(&participants, scores)]
            })
            .collect();
        let c1 = crossover(parents[0], parents[1], rng);
        let c2 = crossover(parents[1], parents[0], rng);
        let c1 = boundary(c1, rng);
        let c2 = boundary(c2, rng);
        out.push(c1);
        out.push(c2);
    }
    out.truncate(m);
    Ok(out)
}

pub fn generate_ablation_interface(
    state: &SearchState,
    m: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Genes>, SearchError> {
    let (pop, scores) =
        state.previous().ok_or_else(|| missing("ablation_interface", "a previous iteration"))?;
    let upper = hp.code_upperbound();
    let mutation_rate = hp.f64_or("mutation_rate", 0.1);
    let tournament_size = hp.usize_or("tournament_size", 5).max(1);
    let elitism_rate = hp.f64_or("elitism_rate", 0.1);
    let crossover_rate = hp.f64_or("crossover_rate", 0.9);
    let diversity_factor = hp.f64_or("diversity_factor", 0.1);
    let best_influence = hp.f64_or("best_individual_influence", 0.05);

    let elite_count = ((elitism_rate * m as f64) as usize).min(m);
    let elites: Vec<Genes> = argsort(scores).into_iter().take(elite_count).map(|i| pop[i].clone()).collect();
    let tournament = |rng: &mut ChaCha8Rng| -> &Genes {
        let contestants: Vec<usize> = (0..tournament_size).map(|_| rng.random_range(0..pop.len())).collect();
        &pop[argmin_among(&contestants, scores)]
    };

    let mut out: Vec<Genes> = Vec::with_capacity(m);
    while out.len() < m - elite_count {
        let p1 = tournament(rng);
        let p2 = tournament(rng);
        let mut child = p1.clone();
        if rng.random::<f64>() < crossover_rate {
            for i in 0..child.len() {
                if rng.random::<f64>() < best_influence {
                    child[i] = state.best_individual.as_ref().map_or(p1[i], |b| b[i]);
                } else if rng.random::<f64>() < 0.5 {
                    child[i] = p1[i];
                } else {
                    child[i] = p2[i];
                }
            }
        }
        let hits: Vec<usize> = (0..child.len()).filter(|_| rng.random::<f64>() < mutation_rate).collect();
        for i in hits {
            child[i] = rng.random_range(1..=upper);
        }
        out.push(child);
    }
    for ind in out.iter_mut() {
        if rng.random::<f64>() < diversity_factor {
            let at = rng.random_range(0..ind.len());
            ind[at] = rng.random_range(1..=upper);
        }
    }
    out.extend(elites);
    for ind in out.iter_mut() {
        for g in ind.iter_mut() {
            *g = (*g).clamp(1, upper);
        }
    }
    Ok(out)
}
