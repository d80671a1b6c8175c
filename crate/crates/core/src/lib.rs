//! Static deobfuscation engine and IOC-extraction toolkit for
//! obfuscated PowerShell droppers, with a chat-completion fallback path
//! and a corpus evaluation harness.
//!
//! The static engine lexes a PowerShell subset, parses it into a small
//! statement/expression tree, folds the constant string machinery the
//! obfuscators rely on, removes dead code, and extracts download URLs
//! from the folded bindings. Everything effectful stays residual: the
//! engine never executes, downloads or writes anything.

pub mod cti;
pub mod eval;
pub mod extract;
pub mod harness;
pub mod lexer;
pub mod llm;
pub mod parser;
pub mod pipeline;
pub mod synth;

pub use eval::{run_script, DeobResult, Environment, Value};
pub use extract::{extract_urls, url_to_domain, validate_url, ExtractionResult, Provenance};
pub use harness::{
    aggregate, load_ground_truth, run_corpus, score_sample, EngineKind, EvalReport,
    GroundTruthEntry, MatchOptions, PerSampleScore, RunOptions,
};
pub use lexer::{decode_input, normalize_identifier, strip_comments, tokenize, SourceText};
pub use llm::{
    build_cti_prompt, build_deobf_prompt, classify_refusal, parse_json_response, ChatMessage,
    LlmAnswer, LlmClient, LlmConfig, PromptStyle,
};
pub use parser::{parse_expression, parse_script, Expr, ScriptAst, Stmt};
pub use pipeline::{deobfuscate_source, PipelineOutput};
pub use synth::{generate_synthetic_sample, write_corpus, Techniques};
