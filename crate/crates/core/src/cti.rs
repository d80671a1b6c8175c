//! Cyber-threat-intelligence report generation: a description plus
//! MITRE ATT&CK technique list, either from the model or from a static
//! rule table over the deobfuscation result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::DeobResult;
use crate::extract::{extract_urls, ExtractionResult};
use crate::llm::{self, ExpectedAnswer, LlmAnswer, LlmClient};
use crate::parser::{Expr, Stmt};

#[derive(Debug, Error)]
pub enum CtiError {
    #[error(transparent)]
    Llm(#[from] llm::LlmError),
    #[error("rule table error: {0}")]
    Rules(String),
}

/// One ATT&CK technique entry, serialized with the exact `ID`/`name`
/// key pair downstream consumers expect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitreMethod {
    #[serde(rename = "ID")]
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtiSource {
    Llm,
    Heuristic,
}

/// Extensions live under their own top-level key so the base document
/// keeps the plain description + methods schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtiExtensions {
    pub iocs: ExtractionResult,
    pub source: CtiSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtiReport {
    pub description: String,
    pub mitre_attack_methods: Vec<MitreMethod>,
    pub extensions: CtiExtensions,
}

/// A technique rule: emit (`id`, `name`) when the named evidence
/// predicate holds. The table ships as a data file so analysts can
/// extend it without code changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TechniqueRule {
    pub id: String,
    pub name: String,
    pub predicate: String,
    pub summary: String,
}

const DEFAULT_RULES: &str = include_str!("../data/cti_rules.json");

pub fn default_rules() -> Vec<TechniqueRule> {
    serde_json::from_str(DEFAULT_RULES).expect("bundled rule table parses")
}

pub fn load_rules(path: &std::path::Path) -> Result<Vec<TechniqueRule>, CtiError> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| CtiError::Rules(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&data).map_err(|e| CtiError::Rules(e.to_string()))
}

fn expr_calls_download(expr: &Expr) -> bool {
    match expr {
        Expr::MethodCall {
            receiver,
            method,
            args,
        } => {
            method == "downloadfile"
                || method == "downloadstring"
                || method == "downloaddata"
                || expr_calls_download(receiver)
                || args
                    .as_ref()
                    .is_some_and(|a| a.iter().any(expr_calls_download))
        }
        Expr::StaticCall { receiver, args, .. } => {
            expr_calls_download(receiver)
                || args
                    .as_ref()
                    .is_some_and(|a| a.iter().any(expr_calls_download))
        }
        Expr::CmdletCall { name, args, .. } => {
            expr_calls_download(name) || args.iter().any(expr_calls_download)
        }
        Expr::Concat(l, r) => expr_calls_download(l) || expr_calls_download(r),
        Expr::FormatOp { template, args } => {
            expr_calls_download(template) || args.iter().any(expr_calls_download)
        }
        Expr::Paren(inner) | Expr::CharCast(inner) => expr_calls_download(inner),
        Expr::TypeCast { inner, .. } => {
            inner.as_ref().is_some_and(|i| expr_calls_download(i))
        }
        Expr::ArrayLit(items) => items.iter().any(expr_calls_download),
        Expr::Compare { lhs, rhs, .. } => {
            expr_calls_download(lhs) || expr_calls_download(rhs)
        }
        _ => false,
    }
}

fn stmt_calls_download(stmt: &Stmt) -> bool {
    match stmt {
        Stmt::Assign { rhs, .. } => expr_calls_download(rhs),
        Stmt::ExprStmt { expr, .. } => expr_calls_download(expr),
        Stmt::SetItem { target, value, .. } => {
            expr_calls_download(target) || expr_calls_download(value)
        }
        Stmt::ForEach {
            iterable, body, ..
        } => expr_calls_download(iterable) || body.iter().any(stmt_calls_download),
        Stmt::If { cond, body, .. } => {
            expr_calls_download(cond) || body.iter().any(stmt_calls_download)
        }
        Stmt::TryCatch { body, handler, .. } => {
            body.iter().any(stmt_calls_download) || handler.iter().any(stmt_calls_download)
        }
        Stmt::Break { .. } => false,
        Stmt::Unknown { .. } => false,
    }
}

fn predicate_holds(name: &str, result: &DeobResult) -> bool {
    match name {
        "script-present" => {
            !result.residual.statements.is_empty() || !result.folded_env.is_empty()
        }
        "obfuscation-folds" => result.folded_env.transforms > 0,
        "downloads-payload" => result.residual.statements.iter().any(stmt_calls_download),
        _ => false,
    }
}

/// Rule-table report from folded evidence only. Delivery-context
/// techniques (phishing) are deliberately absent: the script text alone
/// cannot evidence them, only a model's background knowledge can.
pub fn cti_heuristic_with_rules(result: &DeobResult, rules: &[TechniqueRule]) -> CtiReport {
    let mut methods = Vec::new();
    let mut sentences = Vec::new();
    for rule in rules {
        if predicate_holds(&rule.predicate, result)
            && !methods.iter().any(|m: &MitreMethod| m.id == rule.id)
        {
            methods.push(MitreMethod {
                id: rule.id.clone(),
                name: rule.name.clone(),
            });
            sentences.push(rule.summary.clone());
        }
    }
    CtiReport {
        description: sentences.join(" "),
        mitre_attack_methods: methods,
        extensions: CtiExtensions {
            iocs: extract_urls(result),
            source: CtiSource::Heuristic,
        },
    }
}

pub fn cti_heuristic(result: &DeobResult) -> CtiReport {
    cti_heuristic_with_rules(result, &default_rules())
}

/// Model-backed report. Malformed or refused answers fall back to the
/// heuristic; transport errors propagate.
pub fn cti_from_llm(
    code: &str,
    client: &LlmClient,
    deob: &DeobResult,
) -> Result<CtiReport, CtiError> {
    let messages = llm::build_cti_prompt(code, client.config.max_chars)?;
    let raw = client.complete(&messages)?;
    let answer = llm::parse_json_response(&raw, ExpectedAnswer::Cti, &client.config.refusal_patterns);
    match answer {
        LlmAnswer::Cti(payload) => {
            let mut methods: Vec<MitreMethod> = Vec::new();
            for (id, name) in payload.methods {
                if !methods.iter().any(|m| m.id == id) {
                    methods.push(MitreMethod { id, name });
                }
            }
            Ok(CtiReport {
                description: payload.description,
                mitre_attack_methods: methods,
                extensions: CtiExtensions {
                    iocs: extract_urls(deob),
                    source: CtiSource::Llm,
                },
            })
        }
        _ => Ok(cti_heuristic(deob)),
    }
}
