//! Transport-level tests against a scripted stub server: retry
//! behaviour, auth failures, temperature pinning and the multi-round
//! flow for oversized inputs.

mod common;

use common::{completion, StubServer};
use psdeob_core::llm::{
    deobfuscate_via_llm, ChatMessage, LlmAnswer, LlmClient, LlmConfig, LlmError, PromptStyle,
};

fn client_for(stub: &StubServer) -> LlmClient {
    let mut config = LlmConfig::new(stub.endpoint.clone(), "stub-model");
    config.retries = 2;
    config.backoff_ms = 10;
    config.timeout_s = 5;
    LlmClient::new(config)
}

fn any_messages() -> Vec<ChatMessage> {
    vec![ChatMessage::user("hello")]
}

#[test]
fn echoes_assistant_text() {
    let stub = StubServer::start(vec![(200, completion("{\"urls\":[]}"))]);
    let client = client_for(&stub);
    let raw = client.complete(&any_messages()).unwrap();
    assert_eq!(raw, "{\"urls\":[]}");
}

#[test]
fn request_bodies_carry_temperature_zero() {
    let stub = StubServer::start(vec![(200, completion("[]"))]);
    let client = client_for(&stub);
    client.complete(&any_messages()).unwrap();
    let captured = stub.requests.lock().unwrap();
    assert_eq!(captured.len(), 1);
    assert_eq!(captured[0]["temperature"], serde_json::json!(0.0));
    assert_eq!(captured[0]["model"], serde_json::json!("stub-model"));
    assert_eq!(captured[0]["messages"][0]["content"], serde_json::json!("hello"));
}

#[test]
fn retries_transient_errors_then_succeeds() {
    let stub = StubServer::start(vec![
        (500, "boom".to_string()),
        (500, "boom".to_string()),
        (200, completion("ok")),
    ]);
    let client = client_for(&stub);
    let raw = client.complete(&any_messages()).unwrap();
    assert_eq!(raw, "ok");
    assert_eq!(stub.request_count(), 3);
}

#[test]
fn auth_errors_fail_immediately_without_retry() {
    let stub = StubServer::start(vec![(401, "denied".to_string())]);
    let client = client_for(&stub);
    match client.complete(&any_messages()) {
        Err(LlmError::Auth(401)) => {}
        other => panic!("expected auth error, got {other:?}"),
    }
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn persistent_rate_limit_surfaces_after_retries() {
    let stub = StubServer::start(vec![(429, "slow down".to_string())]);
    let client = client_for(&stub);
    match client.complete(&any_messages()) {
        Err(LlmError::RateLimited) => {}
        other => panic!("expected rate limit, got {other:?}"),
    }
    assert_eq!(stub.request_count(), 3); // initial + 2 retries
}

#[test]
fn oversized_input_runs_three_rounds() {
    let stub = StubServer::start(vec![
        (200, completion("```\n$a=1 # cleaned\n```")),
        (200, completion("```\n$u='http://a.example/x'\n```")),
        (200, completion("[\"http://a.example/x\"]")),
    ]);
    let mut config = LlmConfig::new(stub.endpoint.clone(), "stub-model");
    config.max_chars = 1200; // force chunking for a ~2k script
    config.backoff_ms = 10;
    let client = LlmClient::new(config);

    let big_code = "$x=1;".repeat(400);
    let answer = deobfuscate_via_llm(&client, &big_code, PromptStyle::SystemUser).unwrap();
    assert_eq!(
        answer,
        LlmAnswer::UrlList(vec!["http://a.example/x".to_string()])
    );
    let captured = stub.requests.lock().unwrap();
    assert_eq!(captured.len(), 3);
    let content = |i: usize| {
        captured[i]["messages"]
            .as_array()
            .unwrap()
            .last()
            .unwrap()["content"]
            .as_str()
            .unwrap()
            .to_string()
    };
    assert!(content(0).starts_with("Remove all comments"));
    assert!(content(1).starts_with("Replace the variable names"));
    assert!(content(2).starts_with("Simplify the attached powershell code"));
}

#[test]
fn refusal_during_chunking_propagates() {
    let stub = StubServer::start(vec![(
        200,
        completion("I'm designed solely to process and generate text, so I'm unable to assist you with that."),
    )]);
    let mut config = LlmConfig::new(stub.endpoint.clone(), "stub-model");
    config.max_chars = 600;
    config.backoff_ms = 10;
    let client = LlmClient::new(config);
    let big_code = "$x=1;".repeat(200);
    match deobfuscate_via_llm(&client, &big_code, PromptStyle::SystemUser) {
        Ok(LlmAnswer::Refusal(_)) => {}
        other => panic!("expected refusal, got {other:?}"),
    }
}
