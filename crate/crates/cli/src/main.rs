//! `tngps`: tensorize images, run structure searches, run discovery and
//! build report tables.

mod report;
mod tensorize;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tngps_core::decompose::{objective, FitConfig, ObjectiveConfig};
use tngps_core::format;
use tngps_core::generators::NativeGenerator;
use tngps_core::listings::listing;
use tngps_core::llm::Gateway;
use tngps_core::orchestrator::{run_tngps, OrchestratorError, TnGpsConfig};
use tngps_core::sandbox::{vet_candidate, GuestGenerator, SandboxPolicy};
use tngps_core::search::{run_search, Generator, SearchConfig};
use tngps_core::tensor::TnStructure;

use crate::report::{RunRow, ROW_FILE, TRACE_FILE};

const EXIT_SANDBOX: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "tngps", version, about = "Tensor-network structure search and generator discovery")]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an image to a (4,)x8 grayscale tensor file.
    Tensorize { image: PathBuf, out: PathBuf },
    /// Run a structure search on one tensor.
    Search(SearchArgs),
    /// Run generator discovery from a JSON configuration.
    Discover(DiscoverArgs),
    /// Fit one structure and print its objective.
    Eval(EvalArgs),
    /// Build curve and aggregate tables from search run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = FitConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = FitConfig::default().max_steps)]
    max_steps: usize,
}

impl FitArgs {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig { learning_rate: self.learning_rate, max_steps: self.max_steps, seed, ..FitConfig::default() }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// tnga, tnls, greedy, ho1, ho2, ho3 or guest:<path>
    #[arg(long)]
    algo: String,
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    rank_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    /// Guest worker command, split on whitespace.
    #[arg(long)]
    worker: Option<String>,
    /// Guest wall-clock limit per call, seconds.
    #[arg(long)]
    timeout: Option<u64>,
}

#[derive(Args)]
struct DiscoverArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed algorithm as name=path; defaults to the tnga, tnls and greedy
    /// reference listings.
    #[arg(long = "seed-algo")]
    seed_algos: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// Gene vector, comma separated.
    #[arg(long)]
    genes: String,
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    #[arg(long)]
    rank_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitArgs,
}

/// Error tagged with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_RUNTIME, error }
}

fn sandbox(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_SANDBOX, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let result = match cli.command {
        Command::Tensorize { image, out } => tensorize::tensorize_image(&image, &out).map_err(runtime),
        Command::Search(args) => cmd_search(&args),
        Command::Discover(args) => cmd_discover(&args),
        Command::Eval(args) => cmd_eval(&args).map_err(runtime),
        Command::Report { runs, out } => cmd_report(&runs, &out).map_err(runtime),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn worker_command(worker: Option<&str>) -> Vec<String> {
    let from_env = std::env::var("TNGPS_WORKER").ok();
    match worker.map(str::to_string).or(from_env) {
        Some(cmd) => cmd.split_whitespace().map(str::to_string).collect(),
        None => SandboxPolicy::run().worker,
    }
}

fn cmd_search(args: &SearchArgs) -> Result<(), Failure> {
    let x = format::load(&args.tensor).with_context(|| format!("loading {}", args.tensor.display())).map_err(runtime)?;
    let mut cfg = SearchConfig::new(args.iters, args.samples, args.lambda, args.rank_max);
    cfg.seed = args.seed;
    cfg.fit = args.fit.config(args.seed);

    let algo = args.algo.as_str();
    let (name, result, guest) = if let Some(path) = algo.strip_prefix("guest:") {
        let source = fs::read_to_string(path).with_context(|| format!("reading {path}")).map_err(runtime)?;
        let worker = worker_command(args.worker.as_deref());
        let mut vet_policy = SandboxPolicy { worker: worker.clone(), ..SandboxPolicy::vet() };
        let mut run_policy = SandboxPolicy { worker, ..SandboxPolicy::run() };
        if let Some(t) = args.timeout {
            vet_policy.wall_clock_timeout_seconds = t;
            run_policy.wall_clock_timeout_seconds = t;
        }
        vet_candidate(&source, &vet_policy).map_err(|f| sandbox(anyhow!("vet failed for {path}: {f}")))?;
        let mut g = GuestGenerator::new(algo, source, run_policy);
        let result = run_search(&x, &cfg, &mut g);
        let failed = g.last_failure().cloned();
        (algo.to_string(), result, failed)
    } else {
        let mut g: NativeGenerator = algo.parse().map_err(|e: String| runtime(anyhow!(e)))?;
        (g.name(), run_search(&x, &cfg, &mut g), None)
    };
    let res = match (result, guest) {
        (Ok(r), _) => r,
        (Err(e), Some(f)) => return Err(sandbox(anyhow!("{e} ({f})"))),
        (Err(e), None) => return Err(runtime(e.into())),
    };

    fs::create_dir_all(&args.out).map_err(|e| runtime(e.into()))?;
    let write = |file: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<(), Failure> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| runtime(e.into()))?;
        fs::write(args.out.join(file), buf).map_err(|e| runtime(e.into()))
    };
    write(TRACE_FILE, &|b| res.write_trace_jsonl(b))?;
    write("trace.csv", &|b| res.write_trace_csv(b))?;
    let row = RunRow {
        tensor_id: args.tensor.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        algorithm: name,
        f_value: res.best_report.f_value,
        rse: res.best_report.rse,
        log10_cr: res.best_report.log10_cr,
        samples_to_best: res.samples_to_best(),
        total_samples: res.trace.len(),
        best_genes: res.best_structure.genes().to_vec(),
    };
    let text = serde_json::to_string_pretty(&row).expect("row serializes");
    fs::write(args.out.join(ROW_FILE), text + "\n").map_err(|e| runtime(e.into()))?;
    println!("{}", serde_json::to_string(&row).expect("row serializes"));
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_discover_config(path: &Path) -> Result<TnGpsConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: TnGpsConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.training_tensors = cfg.training_tensors.iter().map(|p| resolve(base, p)).collect();
    cfg.llm.mock_dir = cfg.llm.mock_dir.as_deref().map(|p| resolve(base, p));
    cfg.templates_dir = cfg.templates_dir.as_deref().map(|p| resolve(base, p));
    Ok(cfg)
}

fn seed_algorithms(specs: &[String]) -> Result<Vec<(String, String)>> {
    if specs.is_empty() {
        return Ok([NativeGenerator::Tnga, NativeGenerator::Tnls, NativeGenerator::Greedy]
            .into_iter()
            .map(|g| (g.as_str().to_string(), listing(g).to_string()))
            .collect());
    }
    specs
        .iter()
        .map(|arg| {
            let (name, path) = arg.split_once('=').ok_or_else(|| anyhow!("seed {arg:?} is not name=path"))?;
            let source = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            Ok((name.to_string(), source))
        })
        .collect()
}

fn cmd_discover(args: &DiscoverArgs) -> Result<(), Failure> {
    let cfg = load_discover_config(&args.config).map_err(runtime)?;
    let seeds = seed_algorithms(&args.seed_algos).map_err(runtime)?;
    let gateway = Gateway::from_config(&cfg.llm, cfg.templates_dir.as_deref()).map_err(|e| runtime(e.into()))?;
    let outcome = run_tngps(&seeds, &cfg, &gateway, &args.out).map_err(|e| match e {
        OrchestratorError::Seed { .. } | OrchestratorError::Dead(_) => sandbox(e.into()),
        e => runtime(e.into()),
    })?;
    for entry in &outcome.top {
        println!(
            "{}\t{}\t{:?}\tcluster {}",
            entry.id,
            entry.score.unwrap_or(f64::NAN),
            entry.provenance,
            entry.cluster_id.unwrap_or(0)
        );
    }
    Ok(())
}

fn parse_genes(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().with_context(|| format!("bad gene {t:?}")))
        .collect()
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let x = format::load(&args.tensor).with_context(|| format!("loading {}", args.tensor.display()))?;
    let genes = parse_genes(&args.genes)?;
    let upper = args.rank_max.unwrap_or_else(|| genes.iter().copied().max().unwrap_or(1));
    let s = TnStructure::bounded(x.shape().to_vec(), genes, upper)?;
    let cfg = ObjectiveConfig { lambda: args.lambda, rank_upper_bound: upper, fit: args.fit.config(args.seed) };
    let report = objective(&x, &s, &cfg)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    if runs.is_empty() {
        bail!("no run directories given");
    }
    for a in report::write_report(runs, out)? {
        println!("{}\t{} runs\tlog10_cr {:.4}\trse {:.4}", a.algorithm, a.runs, a.mean_log10_cr, a.mean_rse);
    }
    Ok(())
}
