//! Fitting core tensors to a data tensor for a fixed structure, and the
//! penalised objective built on top of the fit.
//!
//! The fit minimises the relative squared error with Adam. Gradients come
//! from reverse-mode differentiation of the node-ordered pairwise
//! contraction, so one step costs roughly three full contractions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Labeled;
use crate::tensor::{
    complexity_phi, labeled_core, log10_compression_ratio, param_count, CoreSet, Tensor,
    TensorError, TnStructure,
};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Steps per window of the relative-improvement stopping rule.
pub const STOP_WINDOW: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at step {step}: {loss}")]
    NonFinite { step: usize, loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub init_std: f64,
    pub max_steps: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, init_std: 0.1, max_steps: 2000, rel_tol: 1e-6, seed: 0 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.learning_rate > 0.0) {
            return Err(FitError::Config("learning_rate must be positive".into()));
        }
        if !(self.init_std >= 0.0) {
            return Err(FitError::Config("init_std must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(FitError::Config("max_steps must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(FitError::Config("rel_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub rank_upper_bound: usize,
    pub fit: FitConfig,
}

/// Components of one objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub f_value: f64,
    pub phi: f64,
    pub rse_squared: f64,
    pub rse: f64,
    pub params: usize,
    pub log10_cr: f64,
    pub steps: usize,
}

/// Draws every core element i.i.d. from `N(0, init_std^2)`.
pub fn init_cores(s: &TnStructure, cfg: &FitConfig) -> CoreSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cores = (0..s.order())
        .map(|n| {
            Tensor::random_normal(s.core_shape(n), cfg.init_std, &mut rng)
                .expect("structure shapes are valid")
        })
        .collect();
    CoreSet::new(cores)
}

/// Relative squared error of the network against `x` and its gradient with
/// respect to every core (same layout as the cores).
pub fn loss_and_gradient(
    x: &Tensor,
    cores: &CoreSet,
    s: &TnStructure,
) -> Result<(f64, Vec<Vec<f64>>), TensorError> {
    cores.check(s)?;
    if x.shape() != s.mode_dims() {
        return Err(TensorError::ShapeMismatch {
            left: x.shape().to_vec(),
            right: s.mode_dims().to_vec(),
        });
    }
    let norm = x.frobenius_norm_sq();
    if norm == 0.0 {
        return Err(TensorError::ZeroReference);
    }
    let order = s.order();
    let leaves: Vec<Labeled> = (0..order).map(|n| labeled_core(s, cores, n)).collect();

    let mut prefixes = Vec::with_capacity(order);
    prefixes.push(leaves[0].clone());
    for leaf in &leaves[1..] {
        let next = prefixes.last().expect("non-empty").contract(leaf);
        prefixes.push(next);
    }
    let physical: Vec<usize> = (0..order).collect();
    let y = prefixes[order - 1].permuted(&physical);

    let scale = 2.0 / norm;
    let mut loss = 0.0;
    let residual: Vec<f64> = y
        .data
        .iter()
        .zip(x.data())
        .map(|(yv, xv)| {
            let r = yv - xv;
            loss += r * r;
            scale * r
        })
        .collect();
    loss /= norm;

    let mut upstream = Labeled::new(physical, s.mode_dims().to_vec(), residual)
        .permuted(&prefixes[order - 1].labels);
    let mut grads = vec![Vec::new(); order];
    for k in (1..order).rev() {
        let left = &prefixes[k - 1];
        let leaf = &leaves[k];
        grads[k] = upstream.contract(left).permuted(&leaf.labels).data;
        upstream = upstream.contract(leaf).permuted(&left.labels);
    }
    grads[0] = upstream.data;
    Ok((loss, grads))
}

struct Adam {
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    learning_rate: f64,
}

impl Adam {
    fn new(cores: &CoreSet, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = cores.cores.iter().map(|c| vec![0.0; c.len()]).collect();
        Self { step: 0, first: zeros.clone(), second: zeros, learning_rate }
    }

    fn update(&mut self, cores: &mut CoreSet, grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (n, core) in cores.cores.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[n], &mut self.second[n]);
            for (i, p) in core.data_mut().iter_mut().enumerate() {
                let g = grads[n][i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub cores: CoreSet,
    pub rse_squared: f64,
    pub steps: usize,
}

/// Fits the cores of `s` to `x` with Adam on the relative squared error.
///
/// Stops after `max_steps` updates, or earlier once the loss improved by
/// less than `rel_tol` (relative) over the last [`STOP_WINDOW`] steps.
pub fn fit(x: &Tensor, s: &TnStructure, cfg: &FitConfig) -> Result<FitOutcome, FitError> {
    cfg.validate()?;
    let mut cores = init_cores(s, cfg);
    let mut adam = Adam::new(&cores, cfg.learning_rate);
    let mut window_start = f64::INFINITY;
    let mut steps = 0;
    while steps < cfg.max_steps {
        let (loss, grads) = loss_and_gradient(x, &cores, s)?;
        if !loss.is_finite() {
            return Err(FitError::NonFinite { step: steps, loss });
        }
        if loss == 0.0 {
            break;
        }
        if steps % STOP_WINDOW == 0 {
            if steps > 0 && (window_start - loss) / window_start < cfg.rel_tol {
                break;
            }
            window_start = loss;
        }
        adam.update(&mut cores, &grads);
        steps += 1;
    }
    let (loss, _) = loss_and_gradient(x, &cores, s)?;
    if !loss.is_finite() {
        return Err(FitError::NonFinite { step: steps, loss });
    }
    Ok(FitOutcome { cores, rse_squared: loss, steps })
}

/// `phi(A) + lambda * rse^2` for one structure, with all components.
pub fn objective(
    x: &Tensor,
    s: &TnStructure,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveReport, FitError> {
    if !(cfg.lambda > 0.0) || !cfg.lambda.is_finite() {
        return Err(FitError::Config(format!("lambda must be positive, got {}", cfg.lambda)));
    }
    let outcome = fit(x, s, &cfg.fit)?;
    let elements = x.len();
    let phi = complexity_phi(s, elements);
    Ok(ObjectiveReport {
        f_value: phi + cfg.lambda * outcome.rse_squared,
        phi,
        rse_squared: outcome.rse_squared,
        rse: outcome.rse_squared.sqrt(),
        params: param_count(s),
        log10_cr: log10_compression_ratio(s, elements),
        steps: outcome.steps,
    })
}
