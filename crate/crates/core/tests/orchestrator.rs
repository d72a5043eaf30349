mod common;

use std::fs;
use std::time::Duration;

use tngps_core::generators::NativeGenerator;
use tngps_core::listings::listing;
use tngps_core::llm::{Gateway, LlmClient, Phase, PromptTemplates, Transport, TransportError};
use tngps_core::orchestrator::{run_tngps, score_with, Checkpoint, OrchestratorError, TnGpsConfig};
use tngps_core::pool::{Pool, Provenance};

#[test]
fn mock_run_grows_the_pool_deterministically() {
    let data = tempfile::tempdir().unwrap();
    let cfg = common::mock_config(data.path(), 3);
    let a = tempfile::tempdir().unwrap();
    let out = run_tngps(&common::seeds(), &cfg, &common::mock_gateway(), a.path()).unwrap();

    let pool = &out.pool;
    assert!(pool.len() > 3 && pool.len() <= 3 + 3 * 2, "{}", pool.len());
    assert!(pool.cluster_count() <= cfg.c);
    assert_eq!(out.best_per_iteration.len(), 4);
    assert!(out.best_per_iteration.windows(2).all(|w| w[1] <= w[0]));
    assert!(!out.top.is_empty() && out.top.len() <= 3);
    assert!(out.top.iter().all(|e| e.provenance != Provenance::Seed));
    assert!(out.top.windows(2).all(|w| w[0].score <= w[1].score));

    let ho1 = pool.entries().iter().find(|e| e.id == "001-000-ii").unwrap();
    let tensors = cfg.load_tensors().unwrap();
    assert_eq!(ho1.score.unwrap(), score_with(listing(NativeGenerator::Ho1), &tensors, &cfg).unwrap());

    let log = common::events(a.path());
    assert!(log.iter().any(|e| e.phase == "II" && e.outcome == "passthrough"));
    assert!(log.iter().any(|e| e.phase == "DI" && e.outcome.starts_with("no candidates")));

    let b = tempfile::tempdir().unwrap();
    let again = run_tngps(&common::seeds(), &cfg, &common::mock_gateway(), b.path()).unwrap();
    assert_eq!(common::snapshot(a.path()), common::snapshot(b.path()));
    assert_eq!(out.top, again.top);
    assert_eq!(common::events(a.path()), common::events(b.path()));
    assert_eq!(Pool::load(&a.path().join("pool"), cfg.c).unwrap(), out.pool);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let data = tempfile::tempdir().unwrap();
    let full_cfg = common::mock_config(data.path(), 3);
    let full = tempfile::tempdir().unwrap();
    run_tngps(&common::seeds(), &full_cfg, &common::mock_gateway(), full.path()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = TnGpsConfig { iterations: 1, ..full_cfg.clone() };
    run_tngps(&common::seeds(), &first, &common::mock_gateway(), split.path()).unwrap();
    let cp: Checkpoint = serde_json::from_str(&fs::read_to_string(split.path().join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(cp.completed_iterations, 1);
    run_tngps(&common::seeds(), &full_cfg, &common::mock_gateway(), split.path()).unwrap();
    assert_eq!(common::snapshot(full.path()), common::snapshot(split.path()));
}

struct Down;

impl Transport for Down {
    fn send(&self, _: Phase, _: &str) -> Result<String, TransportError> {
        Err(TransportError::Transient("connection refused".into()))
    }
}

#[test]
fn transport_exhaustion_checkpoints_and_aborts() {
    let data = tempfile::tempdir().unwrap();
    let cfg = common::mock_config(data.path(), 2);
    let gw = Gateway::new(LlmClient::new(Box::new(Down), 1, Duration::ZERO), PromptTemplates::default());
    let out = tempfile::tempdir().unwrap();
    let err = run_tngps(&common::seeds(), &cfg, &gw, out.path()).unwrap_err();
    assert!(matches!(err, OrchestratorError::Aborted { iteration: 1, .. }), "{err}");
    let cp: Checkpoint = serde_json::from_str(&fs::read_to_string(out.path().join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(cp.completed_iterations, 0);
    assert_eq!(Pool::load(&out.path().join("pool"), cfg.c).unwrap().len(), 3);
}

#[test]
fn dead_candidates_never_enter_the_pool() {
    let data = tempfile::tempdir().unwrap();
    let mut cfg = common::mock_config(data.path(), 1);
    cfg.sandbox.native_listings = false;
    cfg.sandbox.worker = vec!["false".into()];
    let out = tempfile::tempdir().unwrap();
    let err = run_tngps(&common::seeds(), &cfg, &common::mock_gateway(), out.path()).unwrap_err();
    assert!(matches!(err, OrchestratorError::Seed { .. }), "{err}");

    // Seeds run natively; every LLM candidate goes to a worker that fails.
    let mut cfg = common::mock_config(data.path(), 1);
    cfg.sandbox.worker = vec!["false".into()];
    let mock = tempfile::tempdir().unwrap();
    fs::write(mock.path().join("kr-1.txt"), "```python\ndef GenerateSample(history_populations,fitness_scores,best_individual,new_individuals_numbers,current_iteration, maximum_iteration,hyperparameters):\n    return []\n```\n").unwrap();
    fs::write(mock.path().join("ii-1.txt"), "no change").unwrap();
    fs::write(mock.path().join("di-1.txt"), "nothing new").unwrap();
    let gw = Gateway::new(
        LlmClient::new(Box::new(tngps_core::llm::MockTransport::new(mock.path())), 0, Duration::ZERO),
        PromptTemplates::default(),
    );
    let res = run_tngps(&common::seeds(), &cfg, &gw, out.path()).unwrap();
    assert_eq!(res.pool.len(), 3);
    assert!(res.top.is_empty());
    let log = common::events(out.path());
    assert!(log.iter().any(|e| e.phase == "vet" && e.outcome.starts_with("dead: crash")));
    assert!(log.iter().any(|e| e.outcome == "barren"));
}
