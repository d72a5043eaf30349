use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use tngps_core::format;
use tngps_core::tensor::Tensor;

fn tngps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tngps")).args(args).output().expect("binary runs")
}

fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn small_tensor(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let data: Vec<f64> = (0..81).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 97.0).collect();
    let path = dir.join(name);
    format::save(&path, &Tensor::new(vec![3, 3, 3, 3], data).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tensorize_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("white.png");
    RgbImage::from_pixel(300, 200, Rgb([255, 255, 255])).save(&img).unwrap();
    let (a, b) = (dir.path().join("a.tnss"), dir.path().join("b.tnss"));
    assert!(tngps(&["tensorize", s(&img), s(&a)]).status.success());
    assert!(tngps(&["tensorize", s(&img), s(&b)]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let t = format::load(&a).unwrap();
    assert_eq!(t.shape(), &[4; 8]);
    assert!(t.data().iter().all(|&v| v == 1.0));

    fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
    let out = tngps(&["tensorize", s(&dir.path().join("broken.png")), s(&a)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn search_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let x = small_tensor(dir.path(), "x.tnss", 1);
    let run = dir.path().join("run");
    let out = tngps(&[
        "search", "--tensor", s(&x), "--algo", "ho2", "--lambda", "5", "--iters", "20", "--samples", "100",
        "--rank-max", "4", "--max-steps", "3", "--out", s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(run.join("trace.jsonl")).unwrap().lines().count(), 2000);

    let one = dir.path().join("one");
    let out = tngps(&["search", "--tensor", s(&x), "--algo", "tnga", "--iters", "1", "--samples", "1", "--out", s(&one), "--max-steps", "3"]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(one.join("trace.jsonl")).unwrap().lines().count(), 1);
    let row: serde_json::Value = serde_json::from_str(&fs::read_to_string(one.join("report.json")).unwrap()).unwrap();
    assert_eq!(row["samples_to_best"], 1);

    let again = dir.path().join("again");
    tngps(&["search", "--tensor", s(&x), "--algo", "tnga", "--iters", "1", "--samples", "1", "--out", s(&again), "--max-steps", "3"]);
    assert_eq!(fs::read(one.join("trace.jsonl")).unwrap(), fs::read(again.join("trace.jsonl")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let x = small_tensor(dir.path(), "x.tnss", 1);
    let out_dir = dir.path().join("o");
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "def GenerateSample(:\n").unwrap();
    let guest = format!("guest:{}", bad.display());
    let worker = format!("python3 {}", core_fixtures().join("stub_runner.py").display());
    let out = tngps(&["search", "--tensor", s(&x), "--algo", &guest, "--worker", &worker, "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = tngps(&["search", "--tensor", s(&x), "--algo", "nope", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(tngps(&["search", "--bogus"]).status.code(), Some(2));
    assert_eq!(tngps(&[]).status.code(), Some(2));
}

#[test]
fn guest_search_runs_through_the_worker() {
    let dir = tempfile::tempdir().unwrap();
    let x = small_tensor(dir.path(), "x.tnss", 2);
    let ho3 = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/listings/ho3.py");
    let worker = format!("python3 {}", core_fixtures().join("stub_runner.py").display());
    let run = dir.path().join("g");
    let out = tngps(&[
        "search", "--tensor", s(&x), "--algo", &format!("guest:{}", ho3.display()), "--worker", &worker,
        "--iters", "3", "--samples", "4", "--max-steps", "5", "--out", s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(run.join("trace.jsonl")).unwrap().lines().count(), 12);
}

#[test]
fn eval_prints_the_objective() {
    let dir = tempfile::tempdir().unwrap();
    let x = small_tensor(dir.path(), "x.tnss", 3);
    let out = tngps(&["eval", "--tensor", s(&x), "--genes", "2,1,1,2,1,1", "--max-steps", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // bonds (0,1)=2 and (1,2)=2: cores hold 3*2 + 3*2*2 + 3*2 + 3 values
    let params = 3 * 2 + 3 * 2 * 2 + 3 * 2 + 3;
    assert_eq!(v["params"], params);
    assert!(v["f_value"].as_f64().unwrap() > 0.0);
}

#[test]
fn report_averages_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (k, seed) in [(0, 1u64), (1, 2)] {
        let x = small_tensor(dir.path(), &format!("t{k}.tnss"), seed);
        let run = dir.path().join(format!("r{k}"));
        let out = tngps(&["search", "--tensor", s(&x), "--algo", "tnls", "--iters", "3", "--samples", "4", "--max-steps", "20", "--out", s(&run)]);
        assert!(out.status.success());
        runs.push(run);
    }
    let rep = dir.path().join("rep");
    let out = tngps(&["report", s(&runs[0]), s(&runs[1]), "--out", s(&rep)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rows: Vec<serde_json::Value> =
        runs.iter().map(|r| serde_json::from_str(&fs::read_to_string(r.join("report.json")).unwrap()).unwrap()).collect();
    let agg = fs::read_to_string(rep.join("aggregate.csv")).unwrap();
    let fields: Vec<&str> = agg.lines().nth(1).unwrap().split(',').collect();
    let mean_cr = (rows[0]["log10_cr"].as_f64().unwrap() + rows[1]["log10_cr"].as_f64().unwrap()) / 2.0;
    assert!((fields[2].parse::<f64>().unwrap() - mean_cr).abs() < 1e-12);

    let curve: Vec<f64> = fs::read_to_string(rep.join("curves.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(curve.len(), 12);
    assert!(curve.windows(2).all(|w| w[1] <= w[0]));

    assert_eq!(tngps(&["report", "--out", s(&rep)]).status.code(), Some(2));
}

#[test]
fn discover_with_mock_llm() {
    let dir = tempfile::tempdir().unwrap();
    let x = small_tensor(dir.path(), "train.tnss", 4);
    let config = serde_json::json!({
        "iterations": 2, "alpha1": 100.0, "alpha2": 100.0, "m": 2, "n": 1, "c": 5, "lambda": 5.0,
        "training_tensors": [x.file_name().unwrap().to_str().unwrap()],
        "eval_search": {"iters": 2, "samples": 3, "rank_max": 3, "fit": {"max_steps": 30, "learning_rate": 0.01}},
        "llm": {"model": "mock", "temperature": 0.7, "mock_dir": core_fixtures().join("mock_llm"), "backoff_ms": 0},
        "sandbox": {"worker": ["python3", core_fixtures().join("stub_runner.py")]},
        "seed": 3
    });
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out_dir = dir.path().join("disc");
    let out = tngps(&["discover", "--config", s(&cfg_path), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!((1..=3).contains(&stdout.lines().count()), "{stdout}");
    assert!(out_dir.join("checkpoint.json").is_file());
    assert!(out_dir.join("run_log.jsonl").is_file());
}
