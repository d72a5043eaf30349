mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tngps_core::decompose::{fit, init_cores, loss_and_gradient, FitConfig};
use tngps_core::generators::{ho1_mutation_scaling, NativeGenerator};
use tngps_core::orchestrator::run_tngps;
use tngps_core::pool::{roulette_indices, Provenance, RouletteParams};
use tngps_core::search::{run_search, validate_batch, GenerateRequest, Hyperparams, SearchConfig, SearchState};
use tngps_core::tensor::{contract, contract_bruteforce, gene_len, CoreSet, Tensor, TnStructure, BRUTEFORCE_CAP};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn random_structure(rng: &mut ChaCha8Rng, max_order: usize, max_dim: usize, max_bond: usize) -> TnStructure {
    let order = rng.random_range(2..=max_order);
    let dims = (0..order).map(|_| rng.random_range(1..=max_dim)).collect();
    let genes = (0..gene_len(order)).map(|_| rng.random_range(1..=max_bond)).collect();
    TnStructure::new(dims, genes).unwrap()
}

/// Element count times bond-tuple count, the inner-loop size of the bruteforce.
fn bruteforce_work(s: &TnStructure) -> usize {
    s.element_count() * s.genes().iter().product::<usize>()
}

fn contraction_oracle() -> Outcome {
    const WORK_CAP: usize = 1_000_000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut redrawn, mut largest_order) = (0.0f64, 0, 0);
    for k in 0..200 {
        let s = loop {
            let s = random_structure(&mut rng, 5, 4, 3);
            if bruteforce_work(&s) <= WORK_CAP {
                break s;
            }
            redrawn += 1;
        };
        largest_order = largest_order.max(s.order());
        let cores = init_cores(&s, &FitConfig { init_std: 1.0, seed: k, ..FitConfig::default() });
        let fast = contract(&cores, &s).map_err(|e| e.to_string())?;
        let slow = contract_bruteforce(&cores, &s, BRUTEFORCE_CAP).map_err(|e| e.to_string())?;
        let err = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    ensure(worst < 1e-10, || format!("max abs error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "200 networks up to order {largest_order}, max abs error {worst:.1e}, {redrawn} oversized draws replaced, {:.2?}",
        start.elapsed()
    ))
}

fn gradient_check() -> Outcome {
    const STEP: f64 = 1e-5;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let s = random_structure(&mut rng, 4, 3, 2);
        let x = Tensor::random_normal(s.mode_dims().to_vec(), 1.0, &mut rng).map_err(|e| e.to_string())?;
        let mut cores = init_cores(&s, &FitConfig { init_std: 0.5, seed: 100 + k, ..FitConfig::default() });
        let (_, analytic) = loss_and_gradient(&x, &cores, &s).map_err(|e| e.to_string())?;
        let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for n in 0..cores.cores.len() {
            for i in 0..cores.cores[n].len() {
                let numeric = central_difference(&x, &mut cores, &s, n, i, STEP)?;
                let a = analytic[n][i];
                diff += (a - numeric).powi(2);
                norm_a += a * a;
                norm_n += numeric * numeric;
            }
        }
        let scale = f64::max(norm_a, norm_n).sqrt();
        let rel = if scale == 0.0 { 0.0 } else { diff.sqrt() / scale };
        worst = worst.max(rel);
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("50 instances, worst relative error {worst:.1e}, {:.2?}", start.elapsed()))
}

fn central_difference(
    x: &Tensor,
    cores: &mut CoreSet,
    s: &TnStructure,
    n: usize,
    i: usize,
    step: f64,
) -> Result<f64, String> {
    let orig = cores.cores[n].data()[i];
    cores.cores[n].data_mut()[i] = orig + step;
    let (up, _) = loss_and_gradient(x, cores, s).map_err(|e| e.to_string())?;
    cores.cores[n].data_mut()[i] = orig - step;
    let (down, _) = loss_and_gradient(x, cores, s).map_err(|e| e.to_string())?;
    cores.cores[n].data_mut()[i] = orig;
    Ok((up - down) / (2.0 * step))
}

const PLANTED: [usize; 6] = [2, 1, 2, 2, 1, 2];

fn recovery() -> Outcome {
    let start = Instant::now();
    let x = common::planted(&PLANTED, 3);
    let s = TnStructure::new(vec![3; 4], PLANTED.to_vec()).unwrap();
    let cfg = FitConfig { max_steps: 2000, seed: 1, ..FitConfig::default() };
    let out = fit(&x, &s, &cfg).map_err(|e| e.to_string())?;
    ensure(out.rse_squared <= 1e-2, || format!("rse_squared {:e}", out.rse_squared))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("rse_squared {:.2e} after {} steps, {:.2?}", out.rse_squared, out.steps, start.elapsed()))
}

fn search_improvement() -> Outcome {
    let start = Instant::now();
    let x = common::planted(&PLANTED, 3);
    let algos = [
        NativeGenerator::Tnga,
        NativeGenerator::Tnls,
        NativeGenerator::Greedy,
        NativeGenerator::Ho1,
        NativeGenerator::Ho2,
        NativeGenerator::Ho3,
    ];
    let mut improving = Vec::new();
    let mut details = Vec::new();
    for g in algos {
        let mut strict = 0;
        for seed in 0..5 {
            let mut cfg = SearchConfig::new(10, 50, 5.0, 3);
            cfg.seed = seed;
            cfg.fit = FitConfig { learning_rate: 0.01, max_steps: 300, ..FitConfig::default() };
            let res = run_search(&x, &cfg, &mut { g }).map_err(|e| format!("{g} seed {seed}: {e}"))?;
            let initial = res.trace[..50].iter().map(|r| r.f_value).fold(f64::INFINITY, f64::min);
            let last = res.trace.iter().map(|r| r.f_value).fold(f64::INFINITY, f64::min);
            ensure(last <= initial, || format!("{g} seed {seed} ended above its initial best"))?;
            if last < initial {
                strict += 1;
            }
        }
        details.push(format!("{g} {strict}/5"));
        if strict == 5 {
            improving.push(g);
        }
    }
    ensure(improving.len() >= 4, || format!("strict on every seed for {} of 6 ({})", improving.len(), details.join(", ")))?;
    Ok(format!(
        "strict on every seed for {} of 6 ({}), {:.2?}",
        improving.len(),
        details.join(", "),
        start.elapsed()
    ))
}

fn selection_frequencies() -> Outcome {
    const DRAWS: usize = 100_000;
    let expected = [4.605, 3.912, 3.507, 3.219, 2.996];
    let params = RouletteParams::new(100.0);
    for (k, w) in expected.iter().enumerate() {
        ensure((params.weight(k + 1) - w).abs() < 1e-3, || format!("weight of rank {} is {}", k + 1, params.weight(k + 1)))?;
    }
    let total: f64 = (1..=5).map(|k| params.weight(k)).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut counts = [0usize; 5];
    for _ in 0..DRAWS {
        let pick = roulette_indices(5, params, 1, &mut rng).map_err(|e| e.to_string())?;
        counts[pick[0]] += 1;
    }
    let mut worst_z = 0.0f64;
    for (k, &c) in counts.iter().enumerate() {
        let p = params.weight(k + 1) / total;
        let sigma = (DRAWS as f64 * p * (1.0 - p)).sqrt();
        let z = (c as f64 - DRAWS as f64 * p).abs() / sigma;
        worst_z = worst_z.max(z);
    }
    ensure(worst_z <= 3.0, || format!("counts {counts:?}, worst deviation {worst_z:.2} sigma"))?;
    Ok(format!("counts {counts:?}, worst deviation {worst_z:.2} sigma"))
}

fn random_state(rng: &mut ChaCha8Rng, len: usize, upper: usize) -> SearchState {
    let mut state = SearchState::new();
    let iters = rng.random_range(1..=4);
    for it in 1..=iters {
        let size = rng.random_range(1..=10);
        let pop = (0..size).map(|_| (0..len).map(|_| rng.random_range(1..=upper)).collect()).collect();
        let scores = (0..size).map(|_| rng.random::<f64>() * 10.0).collect();
        state.record(it, pop, scores);
    }
    state.current_iteration = iters + 1;
    state
}

fn generator_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..100 {
        let len = gene_len(rng.random_range(3..=6));
        let upper = rng.random_range(2..=6);
        let count = rng.random_range(1..=12);
        let state = random_state(&mut rng, len, upper);
        let hp = Hyperparams::with_upper_bound(upper);
        let max_iterations = state.current_iteration + rng.random_range(0..=20);
        let req = GenerateRequest { state: &state, count, max_iterations, gene_len: len, hyperparams: &hp };
        for g in NativeGenerator::ALL {
            let out = g
                .generate_batch(&req, &mut ChaCha8Rng::seed_from_u64(case))
                .map_err(|e| format!("{g} case {case}: {e}"))?;
            validate_batch(&out, count, len, upper).map_err(|e| format!("{g} case {case}: {e}"))?;
        }
    }
    let scaling = ho1_mutation_scaling(1, 30, 0.9);
    let target = 0.9f64.powf(59.0 / 30.0);
    ensure((scaling - target).abs() < 1e-12, || format!("Ho-1 scaling {scaling} vs {target}"))?;
    Ok(format!("{} generators x 100 states, Ho-1 scaling {scaling:.6}", NativeGenerator::ALL.len()))
}

fn mock_end_to_end() -> Outcome {
    let start = Instant::now();
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = common::mock_config(data.path(), 3);
    cfg.sandbox.worker = vec!["/nonexistent/guest-worker".into()];
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_tngps(&common::seeds(), &cfg, &common::mock_gateway(), a.path()).map_err(|e| e.to_string())?;
    let second = run_tngps(&common::seeds(), &cfg, &common::mock_gateway(), b.path()).map_err(|e| e.to_string())?;

    let pool = &first.pool;
    ensure(pool.len() > 3, || format!("pool has {} entries", pool.len()))?;
    ensure(pool.cluster_count() <= 5, || format!("{} clusters", pool.cluster_count()))?;
    ensure(!first.top.is_empty() && first.top.len() <= 3, || format!("top has {} entries", first.top.len()))?;
    ensure(first.top.iter().all(|e| e.provenance != Provenance::Seed), || "a seed is in the top 3".into())?;
    let log = common::events(a.path());
    ensure(!log.iter().any(|e| e.outcome.starts_with("dead")), || "a candidate needed the guest worker".into())?;
    ensure(
        common::snapshot(a.path()) == common::snapshot(b.path())
            && common::events(b.path()) == log
            && first.top == second.top
            && fs::read(a.path().join("checkpoint.json")).ok() == fs::read(b.path().join("checkpoint.json")).ok(),
        || "rerun differs".into(),
    )?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "pool {} entries in {} clusters, top {:?}, rerun identical, {:.2?}",
        pool.len(),
        pool.cluster_count(),
        first.top.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
        start.elapsed()
    ))
}

fn prompt_golden_files() -> Outcome {
    let cases = common::golden_prompts();
    for (name, actual) in &cases {
        let path = common::golden_path(name);
        let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(*actual == expected, || format!("{name} differs from its golden file"))?;
        if name.starts_with("di") {
            ensure(!actual.contains("Score:"), || format!("{name} contains a score"))?;
        }
    }
    Ok(format!("{} prompts byte-identical, DI prompts carry no scores", cases.len()))
}

fn main() -> ExitCode {
    let checks: [Check; 8] = [
        ("contraction oracle", contraction_oracle),
        ("gradient check", gradient_check),
        ("recovery", recovery),
        ("search improvement", search_improvement),
        ("selection distribution", selection_frequencies),
        ("generator contracts", generator_contracts),
        ("mock end-to-end", mock_end_to_end),
        ("prompt golden files", prompt_golden_files),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
