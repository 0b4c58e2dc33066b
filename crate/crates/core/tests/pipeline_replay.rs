//! Record a pipeline run against the keyword backend, then replay it offline.

mod common;

use std::fs;
use std::sync::Arc;

use common::{topic_fixture, write_pipeline_inputs, KeywordBackend};
use pubrank_core::clients::{FixtureMode, FixtureStore, ServiceClient};
use pubrank_core::pipeline::{run_pipeline, PipelineConfig, Services, MANIFEST_NAME};

fn record(config: &PipelineConfig, dim: usize) -> pubrank_core::pipeline::PipelineOutput {
    let store = Arc::new(FixtureStore::record(
        config.paths.fixtures.clone().unwrap(),
        Arc::new(KeywordBackend::new(dim)),
    ));
    let client = Arc::new(ServiceClient::new(store.clone()));
    let services = Services::with_client(client, Some(store), config, dim).unwrap();
    run_pipeline(config, Some(services)).unwrap()
}

#[test]
fn replay_is_offline_and_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fx = topic_fixture(120, 6, 4, 3);
    let cfg_path = write_pipeline_inputs(dir.path(), &fx, 32, 5, "record");
    let mut config = PipelineConfig::load(&cfg_path).unwrap();
    config.k.retrieve = 100;
    let recorded = record(&config, 32);
    assert_eq!(recorded.manifest.fixture_mode, Some(FixtureMode::Record));
    assert!(!recorded.manifest.fixture_digests.is_empty());

    config.provider.fixture_mode = Some(FixtureMode::Replay);
    let first = run_pipeline(&config, None).unwrap();
    let manifest_a = fs::read(config.paths.out_dir.join(MANIFEST_NAME)).unwrap();
    let fused_a = fs::read(config.paths.out_dir.join("fused.jsonl")).unwrap();
    let second = run_pipeline(&config, None).unwrap();
    assert_eq!(manifest_a, fs::read(config.paths.out_dir.join(MANIFEST_NAME)).unwrap());
    assert_eq!(fused_a, fs::read(config.paths.out_dir.join("fused.jsonl")).unwrap());
    assert_eq!(first.manifest, second.manifest);
    assert_eq!(first.fused, recorded.fused);
    assert_eq!(first.manifest.fixture_digests, recorded.manifest.fixture_digests);

    let report = first.report.unwrap();
    assert!(report.fused.map_at10 >= report.retrieval.map_at10);
    assert!(report.llm.map_at10 >= report.crossencoder.map_at10);
    assert_eq!(report.fused.questions, 6);
    assert!(config.paths.out_dir.join("audit/q000.json").exists());
}

#[test]
fn missing_fixture_is_an_upstream_failure() {
    let dir = tempfile::tempdir().unwrap();
    let fx = topic_fixture(60, 2, 3, 4);
    let cfg_path = write_pipeline_inputs(dir.path(), &fx, 16, 1, "replay");
    let config = PipelineConfig::load(&cfg_path).unwrap();
    let err = run_pipeline(&config, None).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn cross_k_above_listwise_limit_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = topic_fixture(40, 1, 2, 4);
    let cfg_path = write_pipeline_inputs(dir.path(), &fx, 16, 1, "replay");
    let mut config = PipelineConfig::load(&cfg_path).unwrap();
    config.k.cross = 31;
    assert_eq!(run_pipeline(&config, None).unwrap_err().exit_code(), 1);
}
