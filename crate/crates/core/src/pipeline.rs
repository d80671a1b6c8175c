//! The end-to-end static chain: decode → strip comments → tokenize →
//! parse → run → extract.

use crate::eval::{run_script, DeobResult};
use crate::extract::{extract_urls, ExtractionResult};
use crate::lexer::{self, LexError, SourceText};
use crate::parser::{self, ScriptAst, Stmt};

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub source: SourceText,
    pub deob: DeobResult,
    pub extraction: ExtractionResult,
}

/// Run the full static chain over raw script bytes.
///
/// Only undecodable input errors; a script the tokenizer or parser
/// cannot digest degrades to a fully-residual render with an empty
/// extraction.
pub fn deobfuscate_source(raw: &[u8]) -> Result<PipelineOutput, LexError> {
    let source = lexer::decode_input(raw)?;
    let stripped = lexer::strip_comments(&source.decoded);
    let ast = match lexer::tokenize(&stripped) {
        Ok(tokens) => parser::parse_script(&tokens, &stripped),
        Err(_) => ScriptAst {
            statements: vec![Stmt::Unknown {
                span: lexer::Span {
                    start: 0,
                    end: stripped.len(),
                },
            }],
            source: stripped.clone(),
        },
    };
    let deob = run_script(&ast);
    let extraction = extract_urls(&deob);
    Ok(PipelineOutput {
        source,
        deob,
        extraction,
    })
}
