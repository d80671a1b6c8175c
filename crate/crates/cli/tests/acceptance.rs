//! Acceptance suite: one test per release criterion, each printing a
//! single PASS line with the measured numbers. Run with
//! `cargo test -p psdeob-cli --test acceptance -- --nocapture`.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{completion, StubServer};
use psdeob_core::cti::{cti_from_llm, CtiSource};
use psdeob_core::eval::{fold_expr, run_script, Environment, Value};
use psdeob_core::extract::{extract_urls, ExtractionResult, Provenance};
use psdeob_core::harness::{
    aggregate, run_corpus, score_sample, EngineKind, GroundTruthEntry, MatchOptions, RunOptions,
};
use psdeob_core::lexer::tokenize;
use psdeob_core::llm::{
    self, build_cti_prompt, build_deobf_prompt, classify_refusal, render_messages, ChatMessage,
    LlmClient, LlmConfig, PromptStyle,
};
use psdeob_core::parser::parse_expression;
use psdeob_core::pipeline::deobfuscate_source;
use psdeob_core::synth::{generate_synthetic_sample, write_corpus, Rng, Techniques};

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .canonicalize()
        .unwrap()
}

fn golden_script() -> String {
    std::fs::read_to_string(core_fixture("emotet_dropper.ps1")).unwrap()
}

fn golden_urls() -> Vec<String> {
    std::fs::read_to_string(core_fixture("golden_urls.txt"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "psdeob-acc-{tag}-{}",
        std::process::id()
    ));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stub_client(stub: &StubServer) -> LlmClient {
    let mut config = LlmConfig::new(stub.endpoint.clone(), "stub-model");
    config.backoff_ms = 10;
    config.max_chars = 64_000;
    LlmClient::new(config)
}

#[test]
fn acceptance_01_golden_sample_equivalence() {
    let script = golden_script();
    let started = Instant::now();
    let output = deobfuscate_source(script.as_bytes()).unwrap();
    let elapsed = started.elapsed();
    assert_eq!(output.extraction.urls, golden_urls());
    assert!(
        output
            .extraction
            .urls
            .contains(&"https://paasologrp.com/parseopmlo/5/".to_string())
    );
    assert!(
        output
            .extraction
            .urls
            .contains(&"http://chess-pgn.com/win-raid/l6T5/".to_string())
    );
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!(
        "criterion 1 (golden-sample equivalence): PASS — 8/8 URLs exact in {elapsed:?}"
    );
}

#[test]
fn acceptance_02_round_trip_oracle_500_samples() {
    let dir = temp_dir("roundtrip500");
    let started = Instant::now();
    write_corpus(&dir, 500, 1, Techniques::all()).unwrap();
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            jobs: 4,
            ..RunOptions::default()
        },
        None,
    )
    .unwrap();
    let elapsed = started.elapsed();
    assert_eq!(report.sample_count, 500);
    assert_eq!(report.url_accuracy, 1.0, "urls missed");
    assert_eq!(report.hallucinated_domain_count, 0);
    assert!(
        elapsed < Duration::from_secs(30),
        "round trip took {elapsed:?}"
    );
    println!(
        "criterion 2 (round-trip oracle): PASS — 500 samples, url_accuracy 1.0, 0 hallucinations in {elapsed:?}"
    );
}

#[test]
fn acceptance_03_fold_differential_suite() {
    #[derive(serde::Deserialize)]
    struct FoldCase {
        expr: String,
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        list: Option<Vec<String>>,
    }
    let cases: Vec<FoldCase> = serde_json::from_str(
        &std::fs::read_to_string(core_fixture("fold_cases.json")).unwrap(),
    )
    .unwrap();
    assert!(cases.len() >= 50, "need at least 50 fixtures");
    for case in &cases {
        let expr = parse_expression(&tokenize(&case.expr).unwrap()).unwrap();
        let folded = fold_expr(&expr, &mut Environment::new());
        let expected = match (&case.text, &case.list) {
            (Some(t), None) => Value::Text(t.clone()),
            (None, Some(l)) => Value::TextList(l.clone()),
            _ => panic!("fixture {:?} has no expectation", case.expr),
        };
        assert_eq!(folded, expected, "expr: {}", case.expr);
    }
    println!(
        "criterion 3 (fold differential suite): PASS — {} fixtures byte-exact",
        cases.len()
    );
}

#[test]
fn acceptance_04_metric_self_check() {
    // 6956 correct of 10000 truth URLs across 1000 samples
    let mut scores = Vec::with_capacity(1000);
    for i in 0..1000usize {
        let urls: Vec<String> = (0..10)
            .map(|k| format!("http://host{i}.example/p{k}/"))
            .collect();
        let truth = GroundTruthEntry {
            sample_id: format!("s{i}"),
            script_path: format!("s{i}.ps1"),
            urls: urls.clone(),
        };
        let keep = if i < 956 { 7 } else { 6 };
        let extracted =
            ExtractionResult::from_candidates(urls.iter().take(keep), Provenance::Static);
        scores.push(score_sample(&extracted, &truth, MatchOptions::default()));
    }
    let report = aggregate(scores).unwrap();
    let tp: usize = report
        .per_sample
        .iter()
        .map(|s| s.true_positive_urls.len())
        .sum();
    assert_eq!(tp, 6956);
    assert_eq!(report.url_accuracy, 6956.0 / 10000.0);
    assert_eq!(report.url_accuracy, 0.6956);
    println!("criterion 4 (metric self-check): PASS — 6956/10000 reports exactly 0.6956");
}

#[test]
fn acceptance_05_prompt_fidelity_and_temperature() {
    // byte-identical rendering against the committed golden files
    let su = render_messages(&build_deobf_prompt("$a=1", PromptStyle::SystemUser, 24_000).unwrap());
    let is = render_messages(&build_deobf_prompt("$a=1", PromptStyle::InstSys, 24_000).unwrap());
    let cti = render_messages(&build_cti_prompt("$a=1", 24_000).unwrap());
    assert_eq!(
        su,
        std::fs::read_to_string(core_fixture("prompts/deobf_system_user.golden.txt")).unwrap()
    );
    assert_eq!(
        is,
        std::fs::read_to_string(core_fixture("prompts/deobf_inst_sys.golden.txt")).unwrap()
    );
    assert_eq!(
        cti,
        std::fs::read_to_string(core_fixture("prompts/cti_system_user.golden.txt")).unwrap()
    );

    // stub-captured request bodies carry temperature 0
    let stub = StubServer::start(vec![(200, completion("[]"))]);
    let client = stub_client(&stub);
    client
        .complete(&[ChatMessage::user("probe")])
        .unwrap();
    let captured = stub.requests.lock().unwrap();
    assert_eq!(captured[0]["temperature"], serde_json::json!(0.0));
    println!(
        "criterion 5 (prompt fidelity): PASS — 3 golden files byte-identical, temperature 0 on the wire"
    );
}

#[test]
fn acceptance_06_refusal_handling() {
    const GPT4_REFUSAL: &str = "I'm sorry, I cannot extract URLs from this Powershell code as it appears to be obfuscated and possibly malicious. As a language model, I prioritise ethical and safe utilisation of technology.";
    const GEMINI_REFUSAL: &str = "I'm designed solely to process and generate text, so I'm unable to assist you with that.";
    let patterns = LlmConfig::new("http://unused.example", "m").refusal_patterns;
    assert!(classify_refusal(GPT4_REFUSAL, &patterns));
    assert!(classify_refusal(GEMINI_REFUSAL, &patterns));

    // a corpus the static engine cannot crack, so the model is always
    // consulted; it refuses every sample
    let dir = temp_dir("refusals");
    let mut truth_lines = String::new();
    for i in 0..10 {
        let name = format!("opaque{i}.ps1");
        std::fs::write(
            dir.join(&name),
            format!("$x{i} = Invoke-Expression $blob{i} | Out-String\n"),
        )
        .unwrap();
        truth_lines.push_str(&format!(
            "{{\"sample_id\":\"s{i}\",\"script_path\":\"{name}\",\"urls\":[\"http://t{i}.example/p/\"]}}\n"
        ));
    }
    std::fs::write(dir.join("truth.jsonl"), truth_lines).unwrap();

    let stub = StubServer::start(vec![
        (200, completion(GPT4_REFUSAL)),
        (200, completion(GEMINI_REFUSAL)),
    ]);
    let client = stub_client(&stub);
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
    assert_eq!(report.refusal_count, 10);
    assert_eq!(report.hallucinated_domain_count, 0);

    // fallback mode still completes and emits (static) results
    let report_fb = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            engine: EngineKind::StaticThenLlm,
            ..RunOptions::default()
        },
        Some(&client),
    )
    .unwrap();
    assert_eq!(report_fb.refusal_count, 10);
    assert_eq!(report_fb.per_sample.len(), 10);
    for sample in &report_fb.per_sample {
        assert_eq!(sample.extracted.provenance, Provenance::Static);
    }
    println!(
        "criterion 6 (refusal handling): PASS — 10/10 refusals classified, fallback still emits static results"
    );
}

#[test]
fn acceptance_07_cti_schema_round_trip() {
    let golden_json = std::fs::read_to_string(core_fixture("cti_golden.json")).unwrap();
    let stub = StubServer::start(vec![(200, completion(&golden_json))]);
    let client = stub_client(&stub);
    let script = golden_script();
    let deob = deobfuscate_source(script.as_bytes()).unwrap().deob;
    let report = cti_from_llm(&script, &client, &deob).unwrap();
    assert_eq!(report.extensions.source, CtiSource::Llm);

    let expected: serde_json::Value = serde_json::from_str(&golden_json).unwrap();
    let actual = serde_json::to_value(&report).unwrap();
    assert_eq!(actual["description"], expected["description"]);
    assert_eq!(
        actual["mitre_attack_methods"],
        expected["mitre_attack_methods"]
    );
    // key-set compatibility: every method object is exactly {ID, name}
    for method in actual["mitre_attack_methods"].as_array().unwrap() {
        let keys: Vec<&String> = method.as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["ID", "name"]);
    }
    println!(
        "criterion 7 (cti schema): PASS — description + 4 methods round-trip equal to the reference JSON"
    );
}

#[test]
fn acceptance_08_safety_no_network_no_writes() {
    // corpus on read-only storage, process working directory read-only:
    // the static engine must complete without touching either
    let dir = temp_dir("safety");
    write_corpus(&dir, 500, 1, Techniques::all()).unwrap();

    let requests_before = llm::total_http_requests();
    let report = run_corpus(
        &dir,
        &dir.join("truth.jsonl"),
        &RunOptions {
            jobs: 4,
            ..RunOptions::default()
        },
        None,
    )
    .unwrap();
    assert_eq!(report.url_accuracy, 1.0);
    assert_eq!(
        llm::total_http_requests(),
        requests_before,
        "static run performed HTTP requests"
    );

    // reinforce through the binary: read-only cwd, stdout-only output
    use std::os::unix::fs::PermissionsExt as _;
    let ro_cwd = temp_dir("safety-cwd");
    std::fs::set_permissions(&ro_cwd, std::fs::Permissions::from_mode(0o555)).unwrap();
    let truth = dir.join("truth.jsonl");
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_psdeob"));
    cmd.current_dir(&ro_cwd)
        .args([
            "evaluate",
            "--input",
            dir.to_str().unwrap(),
            "--truth",
            truth.to_str().unwrap(),
            "--jobs",
            "4",
        ])
        .stdout(std::process::Stdio::null());
    // when user namespaces are available (and the binary is executable
    // inside one), additionally drop the network
    let unshare_works = std::process::Command::new("unshare")
        .args(["-r", "-n", env!("CARGO_BIN_EXE_psdeob"), "--version"])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false);
    let status = if unshare_works {
        let mut wrapped = std::process::Command::new("unshare");
        wrapped
            .args(["-r", "-n", env!("CARGO_BIN_EXE_psdeob")])
            .args([
                "evaluate",
                "--input",
                dir.to_str().unwrap(),
                "--truth",
                truth.to_str().unwrap(),
                "--jobs",
                "4",
            ])
            .current_dir(&ro_cwd)
            .stdout(std::process::Stdio::null());
        wrapped.status().unwrap()
    } else {
        cmd.status().unwrap()
    };
    std::fs::set_permissions(&ro_cwd, std::fs::Permissions::from_mode(0o755)).unwrap();
    assert!(status.success(), "static run failed under denial harness");
    println!(
        "criterion 8 (safety): PASS — 500-sample run with zero HTTP requests, read-only cwd{}",
        if unshare_works {
            ", network namespace dropped"
        } else {
            ""
        }
    );
}

#[test]
fn acceptance_09_render_idempotence() {
    // golden fixture
    let output = deobfuscate_source(golden_script().as_bytes()).unwrap();
    let second = run_script(&output.deob.residual);
    assert_eq!(output.deob.rendered, second.rendered);
    assert_eq!(extract_urls(&second).urls, golden_urls());

    // synthetic fixtures
    let mut checked = 0;
    for seed in 1..=50u64 {
        let mut rng = Rng::new(seed.wrapping_mul(0x9E37_79B9));
        let urls = psdeob_core::synth::random_urls(&mut rng);
        let (script, _) = generate_synthetic_sample(&urls, seed, Techniques::all());
        let first = deobfuscate_source(script.as_bytes()).unwrap().deob;
        let second = run_script(&first.residual);
        assert_eq!(first.rendered, second.rendered, "seed {seed}");
        checked += 1;
    }
    println!(
        "criterion 9 (idempotence): PASS — golden + {checked} synthetic fixtures are render fixed points"
    );
}
