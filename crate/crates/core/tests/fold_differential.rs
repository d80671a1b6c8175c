//! Differential fold suite: every fixture expression must evaluate to
//! the committed expected value, byte for byte.
//!
//! The expected values in fixtures/fold_cases.json were pre-computed
//! once against PowerShell string semantics (see
//! python/fold_reference.py) and are frozen; the engine is checked
//! against them, never the other way around. Split results reflect the
//! documented empty-segment drop.

use psdeob_core::eval::{fold_expr, Environment, Value};
use psdeob_core::lexer::tokenize;
use psdeob_core::parser::parse_expression;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct FoldCase {
    expr: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    list: Option<Vec<String>>,
}

fn load_cases() -> Vec<FoldCase> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/fold_cases.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn suite_has_enough_coverage() {
    assert!(load_cases().len() >= 50);
}

#[test]
fn every_fixture_folds_to_its_frozen_value() {
    let cases = load_cases();
    let mut failures = Vec::new();
    for case in &cases {
        let tokens = match tokenize(&case.expr) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("{}: lex error {e}", case.expr));
                continue;
            }
        };
        let expr = match parse_expression(&tokens) {
            Ok(e) => e,
            Err(e) => {
                failures.push(format!("{}: parse error {e}", case.expr));
                continue;
            }
        };
        let mut env = Environment::new();
        let folded = fold_expr(&expr, &mut env);
        let ok = match (&case.text, &case.list) {
            (Some(expected), None) => folded == Value::Text(expected.clone()),
            (None, Some(expected)) => folded == Value::TextList(expected.clone()),
            _ => false,
        };
        if !ok {
            failures.push(format!(
                "{}: folded to {folded:?}, expected text={:?} list={:?}",
                case.expr, case.text, case.list
            ));
        }
    }
    assert!(
        failures.is_empty(),
        "{} of {} fixtures failed:\n{}",
        failures.len(),
        cases.len(),
        failures.join("\n")
    );
}
