//! Corpus-level runs over generated samples: the static engine against
//! the generator oracle, and the model engines against scripted stubs.

mod common;

use common::{completion, StubServer};
use psdeob_core::harness::{run_corpus, EngineKind, RunOptions};
use psdeob_core::llm::{LlmClient, LlmConfig};
use psdeob_core::synth::{write_corpus, Techniques};

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "psdeob-corpus-{tag}-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn client_for(stub: &StubServer) -> LlmClient {
    let mut config = LlmConfig::new(stub.endpoint.clone(), "stub-model");
    config.backoff_ms = 10;
    config.max_chars = 64_000;
    LlmClient::new(config)
}

#[test]
fn static_engine_recovers_synthetic_corpus_fully() {
    let dir = temp_dir("static");
    write_corpus(&dir, 10, 11, Techniques::all()).unwrap();
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions::default(),
        None,
    )
    .unwrap();
    assert_eq!(report.url_accuracy, 1.0);
    assert_eq!(report.domain_accuracy, 1.0);
    assert_eq!(report.hallucinated_domain_count, 0);
    assert_eq!(report.refusal_count, 0);
    assert_eq!(report.sample_count, 10);
}

#[test]
fn parallel_and_serial_runs_agree() {
    let dir = temp_dir("par");
    write_corpus(&dir, 12, 23, Techniques::all()).unwrap();
    let serial = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            jobs: 1,
            ..RunOptions::default()
        },
        None,
    )
    .unwrap();
    let parallel = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            jobs: 4,
            ..RunOptions::default()
        },
        None,
    )
    .unwrap();
    assert_eq!(serial.url_accuracy, parallel.url_accuracy);
    assert_eq!(serial.domain_accuracy, parallel.domain_accuracy);
    assert_eq!(
        serial.hallucinated_domain_count,
        parallel.hallucinated_domain_count
    );
    let ids_serial: Vec<&String> = serial.per_sample.iter().map(|s| &s.sample_id).collect();
    let ids_parallel: Vec<&String> =
        parallel.per_sample.iter().map(|s| &s.sample_id).collect();
    assert_eq!(ids_serial, ids_parallel);
}

#[test]
fn llm_engine_with_empty_answers_scores_zero() {
    let dir = temp_dir("llm-empty");
    write_corpus(&dir, 4, 5, Techniques::all()).unwrap();
    let stub = StubServer::start(vec![(200, completion("[]"))]);
    let client = client_for(&stub);
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            engine: EngineKind::Llm,
            ..RunOptions::default()
        },
        Some(&client),
    )
    .unwrap();
    assert_eq!(report.url_accuracy, 0.0);
    assert_eq!(report.refusal_count, 0);
    assert_eq!(stub.request_count(), 4);
}

#[test]
fn refusals_are_counted_per_sample() {
    let dir = temp_dir("llm-refuse");
    write_corpus(&dir, 5, 7, Techniques::all()).unwrap();
    let stub = StubServer::start(vec![(
        200,
        completion("I'm sorry, I cannot extract URLs from this Powershell code"),
    )]);
    let client = client_for(&stub);
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            engine: EngineKind::Llm,
            ..RunOptions::default()
        },
        Some(&client),
    )
    .unwrap();
    assert_eq!(report.refusal_count, 5);
    assert_eq!(report.url_accuracy, 0.0);
}

#[test]
fn fallback_mode_skips_llm_when_static_succeeds() {
    let dir = temp_dir("fallback");
    write_corpus(&dir, 6, 31, Techniques::all()).unwrap();
    let stub = StubServer::start(vec![(200, completion("[]"))]);
    let client = client_for(&stub);
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            engine: EngineKind::StaticThenLlm,
            ..RunOptions::default()
        },
        Some(&client),
    )
    .unwrap();
    // static recovery is total on synthetic samples, so the model is
    // never consulted
    assert_eq!(report.url_accuracy, 1.0);
    assert_eq!(stub.request_count(), 0);
}

#[test]
fn fallback_mode_still_emits_static_results_on_refusal() {
    let dir = temp_dir("fallback-refuse");
    // a corpus the static engine cannot crack: the URL hides behind an
    // unsupported construct, so static extraction is empty
    std::fs::write(
        dir.join("opaque.ps1"),
        "$x = Invoke-Expression $blob | Out-String\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("truth.jsonl"),
        "{\"sample_id\":\"opaque\",\"script_path\":\"opaque.ps1\",\"urls\":[\"http://x.example/p/\"]}\n",
    )
    .unwrap();
    let stub = StubServer::start(vec![(
        200,
        completion("I'm designed solely to process and generate text, so I'm unable to assist you with that."),
    )]);
    let client = client_for(&stub);
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            engine: EngineKind::StaticThenLlm,
            ..RunOptions::default()
        },
        Some(&client),
    )
    .unwrap();
    assert_eq!(report.refusal_count, 1);
    // no hallucinations invented on refusal
    assert_eq!(report.hallucinated_domain_count, 0);
    assert_eq!(report.per_sample.len(), 1);
}

#[test]
fn unreadable_sample_is_reported_not_fatal() {
    let dir = temp_dir("missing");
    std::fs::write(
        dir.join("truth.jsonl"),
        "{\"sample_id\":\"gone\",\"script_path\":\"missing.ps1\",\"urls\":[\"http://x.example/p/\"]}\n",
    )
    .unwrap();
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions::default(),
        None,
    )
    .unwrap();
    assert_eq!(report.sample_count, 1);
    assert!(report.per_sample[0].error.is_some());
    assert_eq!(report.url_accuracy, 0.0);
}
