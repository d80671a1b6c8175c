//! `psdeob` — pipeline driver for the static deobfuscator: per-file
//! deobfuscation and extraction, corpus evaluation, CTI reports and
//! synthetic-corpus generation.
//!
//! JSON results go to stdout; human summaries go to stderr so the tool
//! composes in pipelines.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psdeob_core::cti;
use psdeob_core::harness::{self, EngineKind, MatchOptions, RunOptions};
use psdeob_core::llm::{self, LlmClient, LlmConfig, PromptStyle};
use psdeob_core::pipeline;
use psdeob_core::synth::{write_corpus, Techniques};

// exit codes by failure class
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_LLM_TRANSPORT: u8 = 3;
const EXIT_BAD_TRUTH: u8 = 4;

#[derive(Parser)]
#[command(
    name = "psdeob",
    about = "Static deobfuscation and IOC extraction for obfuscated PowerShell droppers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Extraction engine: static, llm or static-then-llm
    #[arg(long, default_value = "static")]
    engine: String,
    /// JSON config for the chat-completion client
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Prompt framing: system-user or inst-sys
    #[arg(long, default_value = "system-user")]
    prompt_style: String,
}

impl EngineArgs {
    fn engine_kind(&self) -> Result<EngineKind, String> {
        EngineKind::parse(&self.engine).ok_or_else(|| format!("unknown engine `{}`", self.engine))
    }

    fn prompt_style(&self) -> Result<PromptStyle, String> {
        PromptStyle::parse(&self.prompt_style)
            .ok_or_else(|| format!("unknown prompt style `{}`", self.prompt_style))
    }

    fn client(&self) -> Result<Option<LlmClient>, String> {
        let kind = self.engine_kind()?;
        if kind == EngineKind::Static {
            return Ok(None);
        }
        let config = match &self.llm_config {
            Some(path) => LlmConfig::from_file(path).map_err(|e| e.to_string())?,
            None => {
                let endpoint = std::env::var(llm::ENDPOINT_ENV)
                    .map_err(|_| "llm engine requires --llm-config or PSDEOB_ENDPOINT".to_string())?;
                LlmConfig::new(endpoint, "default")
            }
        };
        Ok(Some(LlmClient::new(config)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Deobfuscate one script and print the rendered script plus
    /// extraction as JSON
    Deobfuscate {
        /// Input script (raw or base64); `-` reads stdin
        #[arg(long)]
        input: PathBuf,
        /// Output path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Extract URLs/domains from one script as JSON
    Extract {
        #[arg(long)]
        input: PathBuf,
        /// Output path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Score extraction accuracy over a corpus against ground truth
    Evaluate {
        /// Directory of script files
        #[arg(long)]
        input: PathBuf,
        /// Ground truth JSONL (sample_id, script_path, urls)
        #[arg(long)]
        truth: PathBuf,
        /// Report output path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional CSV of per-sample rows
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Strip trailing slashes when matching URLs
        #[arg(long)]
        lenient: bool,
        /// Fold a leading www. when matching domains
        #[arg(long)]
        fold_www: bool,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Produce a threat-intelligence JSON report for one script
    Cti {
        #[arg(long)]
        input: PathBuf,
        /// Technique rule table (defaults to the bundled one)
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Output path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Generate a synthetic obfuscated corpus with ground truth
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of samples
        #[arg(long)]
        count: usize,
        /// Generator seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated techniques, `all` or `none`
        #[arg(long, default_value = "all")]
        techniques: String,
    },
}

fn read_input(path: &PathBuf) -> Result<Vec<u8>, String> {
    let raw = if path.as_os_str() == "-" {
        use std::io::Read as _;
        let mut buf = Vec::new();
        std::io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| e.to_string())?;
        buf
    } else {
        std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?
    };
    if raw.is_empty() {
        return Err(format!("{}: input is empty", path.display()));
    }
    Ok(raw)
}

fn fail(code: u8, message: impl AsRef<str>) -> ExitCode {
    eprintln!("psdeob: {}", message.as_ref());
    ExitCode::from(code)
}

fn emit(doc: &serde_json::Value, out: Option<&PathBuf>) -> ExitCode {
    let json = serde_json::to_string_pretty(doc).expect("document serializes");
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, json) {
                return fail(EXIT_BAD_INPUT, format!("{}: {e}", path.display()));
            }
            ExitCode::SUCCESS
        }
        None => {
            println!("{json}");
            ExitCode::SUCCESS
        }
    }
}

fn run_single(
    input: &PathBuf,
    engine: &EngineArgs,
    with_render: bool,
) -> Result<serde_json::Value, (u8, String)> {
    let raw = read_input(input).map_err(|e| (EXIT_BAD_INPUT, e))?;
    let kind = engine.engine_kind().map_err(|e| (EXIT_BAD_INPUT, e))?;
    let output = pipeline::deobfuscate_source(&raw)
        .map_err(|e| (EXIT_BAD_INPUT, format!("{}: {e}", input.display())))?;

    let mut extraction = output.extraction.clone();
    if kind != EngineKind::Static && (kind == EngineKind::Llm || extraction.urls.is_empty()) {
        let client = engine
            .client()
            .map_err(|e| (EXIT_BAD_INPUT, e))?
            .expect("non-static engine has a client");
        let style = engine.prompt_style().map_err(|e| (EXIT_BAD_INPUT, e))?;
        match llm::deobfuscate_via_llm(&client, &output.source.decoded, style) {
            Ok(llm::LlmAnswer::UrlList(urls)) => {
                extraction = psdeob_core::extract::extraction_from_llm_urls(&urls);
            }
            Ok(llm::LlmAnswer::LongestString(kk)) => {
                extraction.longest_string.get_or_insert(kk);
            }
            Ok(_) => {}
            Err(e) => {
                if kind == EngineKind::Llm {
                    return Err((EXIT_LLM_TRANSPORT, e.to_string()));
                }
                // fallback mode: keep the static result, note the failure
                eprintln!("psdeob: llm fallback failed, keeping static result: {e}");
            }
        }
    }

    let mut doc = serde_json::json!({ "extraction": extraction });
    if with_render {
        doc["rendered"] = serde_json::Value::String(output.deob.rendered.clone());
        doc["read_of_unbound"] =
            serde_json::Value::from(output.deob.folded_env.read_of_unbound);
    }
    Ok(doc)
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    input: PathBuf,
    truth: PathBuf,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
    jobs: usize,
    lenient: bool,
    fold_www: bool,
    engine: EngineArgs,
) -> ExitCode {
    let kind = match engine.engine_kind() {
        Ok(kind) => kind,
        Err(e) => return fail(EXIT_BAD_INPUT, e),
    };
    let style = match engine.prompt_style() {
        Ok(style) => style,
        Err(e) => return fail(EXIT_BAD_INPUT, e),
    };
    let client = match engine.client() {
        Ok(client) => client,
        Err(e) => return fail(EXIT_BAD_INPUT, e),
    };
    let options = RunOptions {
        engine: kind,
        match_options: MatchOptions { lenient, fold_www },
        jobs,
        prompt_style: style,
    };
    let report = match harness::run_corpus(&input, &truth, &options, client.as_ref()) {
        Ok(report) => report,
        Err(e @ harness::HarnessError::Io { .. }) => return fail(EXIT_BAD_INPUT, e.to_string()),
        Err(e) => return fail(EXIT_BAD_TRUTH, e.to_string()),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(csv_path) = csv {
        let mut rows = String::from(
            "sample_id,truth_urls,tp_urls,missed_urls,tp_domains,hallucinated_domains,refused\n",
        );
        for s in &report.per_sample {
            rows.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.sample_id,
                s.truth_url_count,
                s.true_positive_urls.len(),
                s.missed_urls.len(),
                s.true_positive_domains.len(),
                s.hallucinated_domains.len(),
                s.refused
            ));
        }
        if let Err(e) = std::fs::write(&csv_path, rows) {
            return fail(EXIT_BAD_INPUT, format!("{}: {e}", csv_path.display()));
        }
    }
    match &out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &json) {
                return fail(EXIT_BAD_INPUT, format!("{}: {e}", path.display()));
            }
        }
        None => println!("{json}"),
    }
    eprintln!(
        "url {:.1}% domain {:.1}% halluc {} refusals {}",
        report.url_accuracy * 100.0,
        report.domain_accuracy * 100.0,
        report.hallucinated_domain_count,
        report.refusal_count
    );
    ExitCode::SUCCESS
}

fn cmd_cti(
    input: PathBuf,
    rules: Option<PathBuf>,
    out: Option<PathBuf>,
    engine: EngineArgs,
) -> ExitCode {
    let raw = match read_input(&input) {
        Ok(raw) => raw,
        Err(e) => return fail(EXIT_BAD_INPUT, e),
    };
    let kind = match engine.engine_kind() {
        Ok(kind) => kind,
        Err(e) => return fail(EXIT_BAD_INPUT, e),
    };
    let output = match pipeline::deobfuscate_source(&raw) {
        Ok(output) => output,
        Err(e) => return fail(EXIT_BAD_INPUT, format!("{}: {e}", input.display())),
    };
    let rule_table = match &rules {
        Some(path) => match cti::load_rules(path) {
            Ok(rules) => rules,
            Err(e) => return fail(EXIT_BAD_INPUT, e.to_string()),
        },
        None => cti::default_rules(),
    };
    let report = if kind == EngineKind::Static {
        cti::cti_heuristic_with_rules(&output.deob, &rule_table)
    } else {
        let client = match engine.client() {
            Ok(Some(client)) => client,
            Ok(None) => unreachable!("non-static engine has a client"),
            Err(e) => return fail(EXIT_BAD_INPUT, e),
        };
        match cti::cti_from_llm(&output.source.decoded, &client, &output.deob) {
            Ok(report) => report,
            Err(e) => {
                if kind == EngineKind::Llm {
                    return fail(EXIT_LLM_TRANSPORT, e.to_string());
                }
                cti::cti_heuristic_with_rules(&output.deob, &rule_table)
            }
        }
    };
    emit(
        &serde_json::to_value(&report).expect("report serializes"),
        out.as_ref(),
    )
}

fn cmd_synth(out: PathBuf, count: usize, seed: u64, techniques: String) -> ExitCode {
    let techniques = match Techniques::from_csv(&techniques) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_BAD_INPUT, e),
    };
    match write_corpus(&out, count, seed, techniques) {
        Ok(entries) => {
            eprintln!(
                "wrote {} samples + truth.jsonl to {}",
                entries.len(),
                out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_BAD_INPUT, format!("{}: {e}", out.display())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Deobfuscate { input, out, engine } => {
            match run_single(&input, &engine, true) {
                Ok(doc) => emit(&doc, out.as_ref()),
                Err((code, message)) => fail(code, message),
            }
        }
        Command::Extract { input, out, engine } => {
            match run_single(&input, &engine, false) {
                Ok(doc) => emit(&doc, out.as_ref()),
                Err((code, message)) => fail(code, message),
            }
        }
        Command::Evaluate {
            input,
            truth,
            out,
            csv,
            jobs,
            lenient,
            fold_www,
            engine,
        } => cmd_evaluate(input, truth, out, csv, jobs, lenient, fold_www, engine),
        Command::Cti {
            input,
            rules,
            out,
            engine,
        } => cmd_cti(input, rules, out, engine),
        Command::Synth {
            out,
            count,
            seed,
            techniques,
        } => cmd_synth(out, count, seed, techniques),
    }
}
