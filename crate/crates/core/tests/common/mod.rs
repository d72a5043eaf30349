#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tngps_core::decompose::{init_cores, FitConfig};
use tngps_core::format;
use tngps_core::generators::NativeGenerator;
use tngps_core::listings::listing;
use tngps_core::llm::{Gateway, LlmClient, MockTransport, PromptTemplates};
use tngps_core::orchestrator::{EvalSearchConfig, LogEvent, TnGpsConfig};
use tngps_core::tensor::{contract, Tensor, TnStructure};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn stub_worker() -> Vec<String> {
    vec!["python3".into(), fixtures().join("stub_runner.py").display().to_string()]
}

/// Order-4 tensor with an exact TN representation of the given structure.
pub fn planted(genes: &[usize], seed: u64) -> Tensor {
    let s = TnStructure::new(vec![3, 3, 3, 3], genes.to_vec()).unwrap();
    let cfg = FitConfig { init_std: 0.5, seed, ..FitConfig::default() };
    contract(&init_cores(&s, &cfg), &s).unwrap()
}

pub fn write_training_tensors(dir: &Path) -> Vec<PathBuf> {
    let specs: [(&[usize], u64); 2] = [(&[2, 1, 1, 2, 1, 1], 1), (&[1, 2, 1, 1, 2, 1], 2)];
    specs
        .iter()
        .enumerate()
        .map(|(k, (genes, seed))| {
            let path = dir.join(format!("train-{k}.tnss"));
            format::save(&path, &planted(genes, *seed)).unwrap();
            path
        })
        .collect()
}

pub fn mock_config(dir: &Path, iterations: usize) -> TnGpsConfig {
    let mut cfg = TnGpsConfig {
        iterations,
        m: 2,
        n: 1,
        c: 5,
        training_tensors: write_training_tensors(dir),
        eval_search: EvalSearchConfig {
            iters: 3,
            samples: 4,
            rank_max: 3,
            fit: FitConfig { max_steps: 200, learning_rate: 0.01, ..FitConfig::default() },
            ..EvalSearchConfig::default()
        },
        seed: 7,
        ..TnGpsConfig::default()
    };
    cfg.llm.mock_dir = Some(fixtures().join("mock_llm"));
    cfg.llm.backoff_ms = 0;
    cfg.sandbox.worker = stub_worker();
    cfg
}

pub fn mock_gateway() -> Gateway {
    let transport = MockTransport::new(fixtures().join("mock_llm"));
    Gateway::new(LlmClient::new(Box::new(transport), 0, std::time::Duration::ZERO), PromptTemplates::default())
}

pub fn seeds() -> Vec<(String, String)> {
    [NativeGenerator::Tnga, NativeGenerator::Tnls, NativeGenerator::Greedy]
        .into_iter()
        .map(|g| (g.as_str().to_string(), listing(g).to_string()))
        .collect()
}

/// Prompt cases checked against `tests/golden/<name>`.
pub fn golden_prompts() -> Vec<(&'static str, String)> {
    use tngps_core::llm::{build_prompt, Phase, PromptAlgorithm, PromptExtras};
    let t = PromptTemplates::default();
    let src = |g: NativeGenerator| listing(g).to_string();
    let one = PromptExtras { count: 1, ..Default::default() };
    let kr = [
        PromptAlgorithm::new(src(NativeGenerator::Ho2), Some(0.412345)),
        PromptAlgorithm::new(src(NativeGenerator::Tnls), Some(0.5)),
    ];
    let ii = [PromptAlgorithm::new(src(NativeGenerator::Ho3), None)];
    let di = [
        PromptAlgorithm::new(src(NativeGenerator::Tnga), None),
        PromptAlgorithm::new(src(NativeGenerator::Greedy), None),
    ];
    let kc = [
        PromptAlgorithm::new(src(NativeGenerator::Greedy), None),
        PromptAlgorithm::new(src(NativeGenerator::Tnga), None),
    ];
    let kc_open = PromptExtras {
        count: 1,
        candidate: Some(src(NativeGenerator::Ho1)),
        cluster_ids: vec![2, 0],
        allow_new_cluster: true,
    };
    let kc_closed = PromptExtras { allow_new_cluster: false, ..kc_open.clone() };
    vec![
        ("kr.txt", build_prompt(&t, Phase::Kr, &kr, &one).unwrap()),
        ("ii.txt", build_prompt(&t, Phase::Ii, &ii, &PromptExtras::default()).unwrap()),
        ("di.txt", build_prompt(&t, Phase::Di, &di, &one).unwrap()),
        ("di_empty.txt", build_prompt(&t, Phase::Di, &[], &one).unwrap()),
        ("kc.txt", build_prompt(&t, Phase::Kc, &kc, &kc_open).unwrap()),
        ("kc_full.txt", build_prompt(&t, Phase::Kc, &kc, &kc_closed).unwrap()),
    ]
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Pool files of a run directory keyed by `<id>/<file>`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir.join("pool")).unwrap() {
        let entry = entry.unwrap();
        for file in ["algorithm.txt", "meta.json"] {
            let key = format!("{}/{file}", entry.file_name().to_string_lossy());
            out.insert(key, fs::read_to_string(entry.path().join(file)).unwrap());
        }
    }
    out
}

pub fn events(dir: &Path) -> Vec<LogEvent> {
    fs::read_to_string(dir.join("run_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
