//! Constant folding, dead-code elimination and rendering of a
//! normalized deobfuscated script.
//!
//! The evaluator executes straight-line assignments, folding constant
//! string machinery (concatenation, `-F` formatting, `.replace`,
//! `.split`, `[char]` casts) into an environment. It performs no I/O,
//! spawns nothing and touches no network: anything effectful folds to
//! [`Value::Unknown`] and is left in the residual script.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::lexer::{self, Span};
use crate::parser::{self, Expr, Invoker, ScriptAst, Stmt};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("format placeholder {{{index}}} exceeds argument count {arg_count}")]
    FormatIndexError { index: usize, arg_count: usize },
    #[error("split separator folded to empty text")]
    SplitSeparatorError,
    #[error("char code {0} is outside the valid range")]
    CharRangeError(i64),
}

/// A folded constant. `Unknown` is the non-value: anything the engine
/// cannot prove constant, including every effectful call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Text(String),
    Number(i64),
    TextList(Vec<String>),
    /// Canonical (lowercase) .NET type name.
    TypeName(String),
    Unknown,
}

impl Value {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// String coercion used by concatenation and call arguments.
    fn coerce_text(&self) -> Option<String> {
        match self {
            Value::Text(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }
}

/// Variable bindings with case-insensitive lookup.
///
/// Reading a name that was never bound yields empty text (PowerShell's
/// default for undefined variables) and bumps `read_of_unbound`.
#[derive(Debug, Default, Clone)]
pub struct Environment {
    bindings: HashMap<String, Value>,
    order: Vec<String>,
    pub read_of_unbound: u64,
    /// Count of string-assembly transforms folded (concatenations,
    /// format substitutions, replaces, splits, char casts); evidence of
    /// obfuscation for downstream reporting.
    pub transforms: u64,
}

impl Environment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: &str, value: Value) {
        let key = lexer::normalize_identifier(name);
        if !self.bindings.contains_key(&key) {
            self.order.push(key.clone());
        }
        self.bindings.insert(key, value);
    }

    pub fn lookup(&mut self, name: &str) -> Value {
        let key = lexer::normalize_identifier(name);
        match self.bindings.get(&key) {
            Some(v) => v.clone(),
            None => {
                self.read_of_unbound += 1;
                Value::Text(String::new())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.bindings.get(&lexer::normalize_identifier(name))
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    /// Bindings in first-bind order.
    pub fn iter_in_order(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.order
            .iter()
            .filter_map(|k| self.bindings.get(k).map(|v| (k.as_str(), v)))
    }
}

/// Replace each `{k}` in `template` with `args[k]`, preserving literal
/// text between placeholders.
pub fn eval_format(template: &str, args: &[String]) -> Result<String, EvalError> {
    let chars: Vec<char> = template.chars().collect();
    let mut out = String::with_capacity(template.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '{' {
            let mut j = i + 1;
            let mut digits = String::new();
            while j < chars.len() && chars[j].is_ascii_digit() {
                digits.push(chars[j]);
                j += 1;
            }
            if !digits.is_empty() && j < chars.len() && chars[j] == '}' {
                let index: usize = digits.parse().map_err(|_| EvalError::FormatIndexError {
                    index: usize::MAX,
                    arg_count: args.len(),
                })?;
                let arg = args.get(index).ok_or(EvalError::FormatIndexError {
                    index,
                    arg_count: args.len(),
                })?;
                out.push_str(arg);
                i = j + 1;
                continue;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    Ok(out)
}

/// Case-sensitive, non-overlapping, left-to-right replacement
/// (.NET `String.Replace`).
pub fn eval_replace(subject: &str, needle: &str, replacement: &str) -> String {
    debug_assert!(!needle.is_empty());
    subject.replace(needle, replacement)
}

/// Partition `subject` on every occurrence of `separator`, dropping
/// empty segments so separators at the edges never produce empty IOC
/// candidates.
pub fn eval_split(subject: &str, separator: &str) -> Result<Vec<String>, EvalError> {
    if separator.is_empty() {
        return Err(EvalError::SplitSeparatorError);
    }
    Ok(subject
        .split(separator)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

/// Single-character text for a code point.
pub fn eval_charcast(code: i64) -> Result<String, EvalError> {
    if !(0..=0x10FFFF).contains(&code) {
        return Err(EvalError::CharRangeError(code));
    }
    char::from_u32(code as u32)
        .map(String::from)
        .ok_or(EvalError::CharRangeError(code))
}

/// Is this `(get-variable NAME).value`? The one cmdlet the folder
/// understands, because the corpus uses it as an obfuscated variable
/// read.
fn get_variable_read(receiver: &Expr, method: &str, args: &Option<Vec<Expr>>) -> Option<String> {
    if method != "value" || args.is_some() {
        return None;
    }
    let call = match receiver {
        Expr::Paren(inner) => inner.as_ref(),
        other => other,
    };
    if let Expr::CmdletCall { name, args, .. } = call {
        if let Expr::Bareword(word) | Expr::StringLit(word) = name.as_ref() {
            if lexer::normalize_identifier(word) == "get-variable" && args.len() == 1 {
                if let Expr::Bareword(var) | Expr::StringLit(var) = &args[0] {
                    return Some(lexer::normalize_identifier(var));
                }
            }
        }
    }
    None
}

/// Recursively fold an expression under `env`. Never raises: any
/// subexpression outside the foldable subset yields `Unknown`, which
/// propagates so no partially invented string can escape.
pub fn fold_expr(expr: &Expr, env: &mut Environment) -> Value {
    match expr {
        Expr::StringLit(s) => Value::Text(s.clone()),
        Expr::Bareword(s) => Value::Text(s.clone()),
        Expr::Number(n) => Value::Number(*n),
        Expr::VarRef(name) => env.lookup(name),
        Expr::Paren(inner) => fold_expr(inner, env),
        Expr::Concat(lhs, rhs) => {
            let l = fold_expr(lhs, env);
            let r = fold_expr(rhs, env);
            match (&l, &r) {
                (Value::Number(a), Value::Number(b)) => match a.checked_add(*b) {
                    Some(sum) => {
                        env.transforms += 1;
                        Value::Number(sum)
                    }
                    None => Value::Unknown,
                },
                _ => match (l.coerce_text(), r.coerce_text()) {
                    (Some(a), Some(b)) => {
                        env.transforms += 1;
                        Value::Text(a + &b)
                    }
                    _ => Value::Unknown,
                },
            }
        }
        Expr::FormatOp { template, args } => {
            let tpl = match fold_expr(template, env).coerce_text() {
                Some(t) => t,
                None => return Value::Unknown,
            };
            let mut folded = Vec::with_capacity(args.len());
            for arg in args {
                match fold_expr(arg, env).coerce_text() {
                    Some(t) => folded.push(t),
                    None => return Value::Unknown,
                }
            }
            match eval_format(&tpl, &folded) {
                Ok(text) => {
                    env.transforms += 1;
                    Value::Text(text)
                }
                Err(_) => Value::Unknown,
            }
        }
        Expr::CharCast(inner) => match fold_expr(inner, env) {
            Value::Number(code) => match eval_charcast(code) {
                Ok(text) => {
                    env.transforms += 1;
                    Value::Text(text)
                }
                Err(_) => Value::Unknown,
            },
            _ => Value::Unknown,
        },
        Expr::TypeCast { type_name, inner } => match inner {
            None => Value::TypeName(type_name.clone()),
            Some(operand) => {
                let v = fold_expr(operand, env);
                match type_name.as_str() {
                    "string" => match v.coerce_text() {
                        Some(t) => Value::Text(t),
                        None => Value::Unknown,
                    },
                    "type" => match v {
                        Value::Text(t) => Value::TypeName(t.to_lowercase()),
                        _ => Value::Unknown,
                    },
                    "int" | "long" | "byte" => match v {
                        Value::Number(n) => Value::Number(n),
                        _ => Value::Unknown,
                    },
                    _ => Value::Unknown,
                }
            }
        },
        Expr::MethodCall {
            receiver,
            method,
            args,
        } => {
            if let Some(var) = get_variable_read(receiver, method, args) {
                return env.lookup(&var);
            }
            let recv = fold_expr(receiver, env);
            match (&recv, method.as_str(), args) {
                (Value::Text(subject), "replace", Some(a)) if a.len() == 2 => {
                    let needle = fold_expr(&a[0], env).coerce_text();
                    let replacement = fold_expr(&a[1], env).coerce_text();
                    match (needle, replacement) {
                        (Some(n), Some(r)) if !n.is_empty() => {
                            env.transforms += 1;
                            Value::Text(eval_replace(subject, &n, &r))
                        }
                        _ => Value::Unknown,
                    }
                }
                (Value::Text(subject), "split", Some(a)) if a.len() == 1 => {
                    match fold_expr(&a[0], env).coerce_text() {
                        Some(sep) => match eval_split(subject, &sep) {
                            Ok(parts) => {
                                env.transforms += 1;
                                Value::TextList(parts)
                            }
                            Err(_) => Value::Unknown,
                        },
                        None => Value::Unknown,
                    }
                }
                (Value::Text(_) | Value::Number(_), "tostring", Some(a)) if a.is_empty() => {
                    match recv.coerce_text() {
                        Some(t) => Value::Text(t),
                        None => Value::Unknown,
                    }
                }
                (Value::Text(subject), "length", None) => {
                    Value::Number(subject.chars().count() as i64)
                }
                _ => Value::Unknown,
            }
        }
        Expr::ArrayLit(items) => {
            let mut parts = Vec::with_capacity(items.len());
            for item in items {
                match fold_expr(item, env).coerce_text() {
                    Some(t) => parts.push(t),
                    None => return Value::Unknown,
                }
            }
            Value::TextList(parts)
        }
        // comparisons are parsed but never decided, effectful calls
        // never fold
        Expr::Compare { .. }
        | Expr::StaticCall { .. }
        | Expr::CmdletCall { .. }
        | Expr::Unknown(_) => Value::Unknown,
    }
}

/// Result of running the partial evaluator over a script.
#[derive(Debug, Clone)]
pub struct DeobResult {
    pub folded_env: Environment,
    pub residual: ScriptAst,
    pub rendered: String,
    /// Every folded text value, in binding/fold order, duplicates
    /// removed keeping the earliest occurrence.
    pub string_pool: Vec<String>,
}

// ── execution + rendering ──────────────────────────────────────────────

/// Render tree node for one statement, produced while executing.
enum RNode {
    ConstAssign { name: String, value: Value },
    Residual { text: String, refs: Vec<String> },
    ForEach {
        var: String,
        iter_text: String,
        iter_refs: Vec<String>,
        body: Vec<RNode>,
    },
    If {
        cond_text: String,
        cond_refs: Vec<String>,
        body: Vec<RNode>,
    },
    Try {
        body: Vec<RNode>,
        handler: Vec<RNode>,
    },
    Break,
}

struct Runner<'a> {
    env: Environment,
    pool: Vec<String>,
    pool_seen: HashSet<String>,
    source: &'a str,
}

impl<'a> Runner<'a> {
    fn new(source: &'a str) -> Self {
        Runner {
            env: Environment::new(),
            pool: Vec::new(),
            pool_seen: HashSet::new(),
            source,
        }
    }

    fn pool_add_value(&mut self, value: &Value) {
        match value {
            Value::Text(t) if !t.is_empty() => {
                if self.pool_seen.insert(t.clone()) {
                    self.pool.push(t.clone());
                }
            }
            Value::TextList(items) => {
                for t in items {
                    if !t.is_empty() && self.pool_seen.insert(t.clone()) {
                        self.pool.push(t.clone());
                    }
                }
            }
            _ => {}
        }
    }

    fn exec_block(&mut self, stmts: &[Stmt]) -> Vec<RNode> {
        let mut out = Vec::new();
        for stmt in stmts {
            out.push(self.exec_stmt(stmt));
            // statements after an unconditional break never run
            if matches!(stmt, Stmt::Break { .. }) {
                break;
            }
        }
        out
    }

    fn exec_stmt(&mut self, stmt: &Stmt) -> RNode {
        match stmt {
            Stmt::Assign { name, rhs, .. } => self.exec_binding(name, rhs),
            Stmt::SetItem { target, value, .. } => {
                // set-item "variable:NAME" is an assignment in disguise
                let target_val = fold_expr(target, &mut self.env);
                if let Some(text) = target_val.as_text() {
                    let lowered = text.to_lowercase();
                    if let Some(var) = lowered.strip_prefix("variable:") {
                        let var = var.to_string();
                        return self.exec_binding(&var, value);
                    }
                }
                let (mut text, mut refs) = self.render_expr(target);
                let (vtext, vrefs) = self.render_expr(value);
                text.push_str(" = ");
                text.push_str(&vtext);
                refs.extend(vrefs);
                RNode::Residual { text, refs }
            }
            Stmt::ExprStmt { expr, .. } => {
                let folded = fold_expr(expr, &mut self.env);
                self.pool_add_value(&folded);
                let (text, refs) = self.render_expr(expr);
                RNode::Residual { text, refs }
            }
            Stmt::ForEach {
                var,
                iterable,
                body,
                ..
            } => {
                let iter_val = fold_expr(iterable, &mut self.env);
                self.pool_add_value(&iter_val);
                let (iter_text, iter_refs) = self.render_expr(iterable);
                // the loop variable is opaque: bodies are scanned for
                // folds, never iterated
                self.env.bind(var, Value::Unknown);
                let body_nodes = self.exec_block(body);
                RNode::ForEach {
                    var: var.clone(),
                    iter_text,
                    iter_refs,
                    body: body_nodes,
                }
            }
            Stmt::If { cond, body, .. } => {
                let (cond_text, cond_refs) = self.render_expr(cond);
                let body_nodes = self.exec_block(body);
                RNode::If {
                    cond_text,
                    cond_refs,
                    body: body_nodes,
                }
            }
            Stmt::TryCatch { body, handler, .. } => {
                let body_nodes = self.exec_block(body);
                let handler_nodes = self.exec_block(handler);
                RNode::Try {
                    body: body_nodes,
                    handler: handler_nodes,
                }
            }
            Stmt::Break { .. } => RNode::Break,
            Stmt::Unknown { span } => {
                let text = self.slice(*span).trim().to_string();
                let refs = scan_variable_names(&text);
                RNode::Residual { text, refs }
            }
        }
    }

    fn exec_binding(&mut self, name: &str, rhs: &Expr) -> RNode {
        let value = fold_expr(rhs, &mut self.env);
        if value != Value::Unknown {
            self.pool_add_value(&value);
            self.env.bind(name, value.clone());
            return RNode::ConstAssign {
                name: lexer::normalize_identifier(name),
                value,
            };
        }
        self.env.bind(name, Value::Unknown);
        let (text, refs) = self.render_expr(rhs);
        RNode::Residual {
            text: format!("${} = {}", lexer::normalize_identifier(name), text),
            refs,
        }
    }

    fn slice(&self, span: Span) -> &str {
        self.source.get(span.start..span.end).unwrap_or("")
    }

    /// Render an expression with folded constants substituted inline.
    /// Bare variable references are kept by name so that live constant
    /// bindings stay readable assignments instead of being inlined at
    /// every use.
    fn render_expr(&mut self, expr: &Expr) -> (String, Vec<String>) {
        let mut text = String::new();
        let mut refs = Vec::new();
        self.render_into(expr, &mut text, &mut refs);
        (text, refs)
    }

    fn render_into(&mut self, expr: &Expr, out: &mut String, refs: &mut Vec<String>) {
        // bare variable references and barewords render as themselves;
        // everything else that folds is substituted by its constant
        if !matches!(expr, Expr::VarRef(_) | Expr::Bareword(_)) {
            let folded = fold_expr(expr, &mut self.env);
            if folded != Value::Unknown {
                self.pool_add_value(&folded);
                out.push_str(&render_value(&folded));
                return;
            }
        }
        match expr {
            Expr::VarRef(name) => {
                refs.push(name.clone());
                out.push('$');
                out.push_str(name);
            }
            Expr::StringLit(s) => out.push_str(&quote_text(s)),
            Expr::Bareword(w) => out.push_str(w),
            Expr::Number(n) => out.push_str(&n.to_string()),
            Expr::Concat(l, r) => {
                self.render_into(l, out, refs);
                out.push_str(" + ");
                self.render_into(r, out, refs);
            }
            Expr::FormatOp { template, args } => {
                out.push('(');
                self.render_into(template, out, refs);
                out.push_str(" -f ");
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.render_into(arg, out, refs);
                }
                out.push(')');
            }
            Expr::CharCast(inner) => {
                out.push_str("[char]");
                self.render_into(inner, out, refs);
            }
            Expr::TypeCast { type_name, inner } => {
                out.push('[');
                out.push_str(type_name);
                out.push(']');
                if let Some(inner) = inner {
                    self.render_into(inner, out, refs);
                }
            }
            Expr::MethodCall {
                receiver,
                method,
                args,
            } => {
                self.render_into(receiver, out, refs);
                out.push('.');
                out.push_str(method);
                if let Some(args) = args {
                    out.push('(');
                    for (i, arg) in args.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        self.render_into(arg, out, refs);
                    }
                    out.push(')');
                }
            }
            Expr::StaticCall {
                receiver,
                member,
                args,
            } => {
                self.render_into(receiver, out, refs);
                out.push_str("::");
                out.push_str(member);
                if let Some(args) = args {
                    out.push('(');
                    for (i, arg) in args.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        self.render_into(arg, out, refs);
                    }
                    out.push(')');
                }
            }
            Expr::CmdletCall {
                name,
                args,
                invoker,
            } => {
                let folded_name = fold_expr(name, &mut self.env);
                match folded_name.as_text() {
                    Some(text) if is_bareword_safe(text) => out.push_str(text),
                    Some(text) => {
                        out.push_str("& ");
                        out.push_str(&quote_text(text));
                    }
                    None => {
                        match invoker {
                            Invoker::Amp => out.push_str("& "),
                            Invoker::Dot => out.push_str(". "),
                            Invoker::Bare => {}
                        }
                        self.render_into(name, out, refs);
                    }
                }
                for arg in args {
                    out.push(' ');
                    self.render_into(arg, out, refs);
                }
            }
            Expr::Paren(inner) => {
                out.push('(');
                self.render_into(inner, out, refs);
                out.push(')');
            }
            Expr::ArrayLit(items) => {
                out.push_str("@(");
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.render_into(item, out, refs);
                }
                out.push(')');
            }
            Expr::Compare { op, lhs, rhs } => {
                self.render_into(lhs, out, refs);
                out.push(' ');
                out.push_str(op);
                out.push(' ');
                self.render_into(rhs, out, refs);
            }
            Expr::Unknown(span) => out.push_str(self.slice(*span)),
        }
    }
}

fn is_bareword_safe(text: &str) -> bool {
    !text.is_empty()
        && text.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && text
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Single-quote PowerShell string literal, doubling embedded quotes.
fn quote_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('\'');
    for c in text.chars() {
        if c == '\'' {
            out.push('\'');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

fn render_value(value: &Value) -> String {
    match value {
        Value::Text(t) => quote_text(t),
        Value::Number(n) => n.to_string(),
        Value::TypeName(name) => format!("[{name}]"),
        Value::TextList(items) => {
            let mut out = String::from("@(");
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&quote_text(item));
            }
            out.push(')');
            out
        }
        Value::Unknown => String::new(),
    }
}

/// Find `$name` references in a verbatim (unparsed) slice.
fn scan_variable_names(text: &str) -> Vec<String> {
    let mut refs = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '$' {
            let mut name = String::new();
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                name.push(chars[j]);
                j += 1;
            }
            if !name.is_empty() {
                refs.push(name.to_lowercase());
            }
            i = j;
        } else {
            i += 1;
        }
    }
    refs
}

/// Backward liveness pass: a constant assignment survives only if a
/// later surviving statement still names its variable.
fn mark_live(nodes: &mut Vec<RNode>, needed: &mut HashSet<String>) {
    let mut keep = vec![true; nodes.len()];
    for (i, node) in nodes.iter_mut().enumerate().rev() {
        match node {
            RNode::ConstAssign { name, .. } => {
                if needed.contains(name) {
                    needed.remove(name);
                } else {
                    keep[i] = false;
                }
            }
            RNode::Residual { refs, .. } => {
                needed.extend(refs.iter().cloned());
            }
            RNode::ForEach {
                iter_refs, body, ..
            } => {
                mark_live(body, needed);
                needed.extend(iter_refs.iter().cloned());
            }
            RNode::If {
                cond_refs, body, ..
            } => {
                mark_live(body, needed);
                needed.extend(cond_refs.iter().cloned());
            }
            RNode::Try { body, handler } => {
                mark_live(handler, needed);
                mark_live(body, needed);
            }
            RNode::Break => {}
        }
    }
    let mut it = keep.into_iter();
    nodes.retain(|_| it.next().unwrap());
}

fn assemble_inline(nodes: &[RNode]) -> String {
    let mut parts = Vec::new();
    for node in nodes {
        parts.push(assemble_node(node));
    }
    parts.join("; ")
}

fn assemble_node(node: &RNode) -> String {
    match node {
        RNode::ConstAssign { name, value } => {
            format!("${} = {}", name, render_value(value))
        }
        RNode::Residual { text, .. } => text.clone(),
        RNode::ForEach {
            var,
            iter_text,
            body,
            ..
        } => format!(
            "foreach (${} in {}) {{ {} }}",
            var,
            iter_text,
            assemble_inline(body)
        ),
        RNode::If {
            cond_text, body, ..
        } => format!("if ({}) {{ {} }}", cond_text, assemble_inline(body)),
        RNode::Try { body, handler } => {
            let handler_text = assemble_inline(handler);
            if handler_text.is_empty() {
                format!("try {{ {} }} catch {{ }}", assemble_inline(body))
            } else {
                format!(
                    "try {{ {} }} catch {{ {} }}",
                    assemble_inline(body),
                    handler_text
                )
            }
        }
        RNode::Break => "break".to_string(),
    }
}

fn assemble_top_level(nodes: &[RNode]) -> String {
    let mut out = String::new();
    for node in nodes {
        let line = assemble_node(node);
        if line.is_empty() {
            continue;
        }
        out.push_str(&line);
        match node {
            RNode::ForEach { .. } | RNode::If { .. } | RNode::Try { .. } => {}
            _ => out.push(';'),
        }
        out.push('\n');
    }
    out
}

/// Execute a parsed script: fold constant assignments into an
/// environment, drop dead code, and render the normalized script.
/// Performs no file, network, process or registry operations on any
/// input.
pub fn run_script(ast: &ScriptAst) -> DeobResult {
    let mut runner = Runner::new(&ast.source);
    let mut nodes = runner.exec_block(&ast.statements);
    let mut needed = HashSet::new();
    mark_live(&mut nodes, &mut needed);
    let rendered = assemble_top_level(&nodes);
    let residual = reparse(&rendered);
    DeobResult {
        folded_env: runner.env,
        residual,
        rendered,
        string_pool: runner.pool,
    }
}

fn reparse(rendered: &str) -> ScriptAst {
    match lexer::tokenize(rendered) {
        Ok(tokens) => parser::parse_script(&tokens, rendered),
        Err(_) => ScriptAst {
            statements: Vec::new(),
            source: rendered.to_string(),
        },
    }
}

/// Dead-code elimination as a standalone pass: re-runs the evaluator
/// and returns the residual tree.
pub fn eliminate_dead_code(ast: &ScriptAst) -> ScriptAst {
    run_script(ast).residual
}

/// The rendered normalized script.
pub fn render_deobfuscated(result: &DeobResult) -> String {
    result.rendered.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexer::tokenize;
    use crate::parser::parse_script;

    fn run(src: &str) -> DeobResult {
        let toks = tokenize(src).unwrap();
        run_script(&parse_script(&toks, src))
    }

    fn fold_src(src: &str) -> Value {
        let toks = tokenize(src).unwrap();
        let expr = parser::parse_expression(&toks).unwrap();
        fold_expr(&expr, &mut Environment::new())
    }

    #[test]
    fn format_scrambled_type_name() {
        let args: Vec<String> = ["Y", ".D", "sYS", "tEm.Io", "or", "IRECT"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            eval_format("{2}{3}{1}{5}{4}{0}", &args).unwrap(),
            "sYStEm.Io.DIRECTorY"
        );
    }

    #[test]
    fn format_service_point_manager() {
        let args: Vec<String> =
            ["t.Ser", "TeM.nE", "S", "aN", "Ys", "In", "vicepo", "aGeR", "Tm"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        assert_eq!(
            eval_format("{2}{4}{1}{0}{6}{5}{8}{3}{7}", &args).unwrap(),
            "SYsTeM.nEt.ServicepoInTmaNaGeR"
        );
    }

    #[test]
    fn format_identity_and_error() {
        assert_eq!(eval_format("{0}", &["x".to_string()]).unwrap(), "x");
        assert_eq!(
            eval_format("{1}", &["x".to_string()]),
            Err(EvalError::FormatIndexError {
                index: 1,
                arg_count: 1
            })
        );
    }

    #[test]
    fn replace_examples() {
        assert_eq!(
            eval_replace("UjmQyj9bw1UjmA5vuovnUjm", "Ujm", "\\"),
            "\\Qyj9bw1\\A5vuovn\\"
        );
        assert_eq!(eval_replace("abc", "x", "y"), "abc");
        assert_eq!(eval_replace("=PO32=PO32", "=PO32", "/"), "//");
    }

    #[test]
    fn split_examples() {
        assert_eq!(eval_split("a@b@c", "@").unwrap(), vec!["a", "b", "c"]);
        assert_eq!(eval_split("@x@", "@").unwrap(), vec!["x"]);
        assert_eq!(eval_split("x", ""), Err(EvalError::SplitSeparatorError));
    }

    #[test]
    fn charcast_examples() {
        assert_eq!(eval_charcast(64).unwrap(), "@");
        assert_eq!(eval_charcast(92).unwrap(), "\\");
        assert_eq!(eval_charcast(97).unwrap(), "a");
        assert_eq!(eval_charcast(-1), Err(EvalError::CharRangeError(-1)));
        assert_eq!(
            eval_charcast(0x110000),
            Err(EvalError::CharRangeError(0x110000))
        );
    }

    #[test]
    fn fold_concat_under_empty_env() {
        assert_eq!(fold_src("('T'+('ls1'+'2'))"), Value::Text("Tls12".into()));
    }

    #[test]
    fn unbound_reads_fold_to_empty_and_count() {
        let toks = tokenize("$never_assigned").unwrap();
        let expr = parser::parse_expression(&toks).unwrap();
        let mut env = Environment::new();
        assert_eq!(fold_expr(&expr, &mut env), Value::Text(String::new()));
        assert_eq!(env.read_of_unbound, 1);
    }

    #[test]
    fn effectful_calls_never_fold() {
        assert_eq!(fold_src("$wc.\"DoW`NloAd`FiLE\"($u, $p)"), Value::Unknown);
    }

    #[test]
    fn unknown_propagates_through_concat() {
        assert_eq!(fold_src("'a' + $wc.\"download\"()"), Value::Unknown);
    }

    #[test]
    fn split_char_recovered_from_unbound_vars() {
        let result = run("$Uu71e21=$Os0uzdf + [char](64) + $D44dakn;$l=('a@b').\"split\"($Uu71e21);foreach ($x in $l){try{$w.\"d\"($x)}catch{}}");
        assert_eq!(
            result.folded_env.get("uu71e21"),
            Some(&Value::Text("@".into()))
        );
        assert_eq!(
            result.folded_env.get("l"),
            Some(&Value::TextList(vec!["a".into(), "b".into()]))
        );
    }

    #[test]
    fn empty_script_runs_to_empty_result() {
        let result = run("");
        assert!(result.folded_env.is_empty());
        assert!(result.rendered.is_empty());
        assert!(result.residual.statements.is_empty());
    }

    #[test]
    fn unknown_statement_rendered_verbatim() {
        let result = run("@@@@");
        assert_eq!(result.rendered.trim_end_matches([';', '\n']), "@@@@");
    }

    #[test]
    fn unread_constant_is_removed() {
        let result = run("$a='x'");
        assert_eq!(result.rendered, "");
    }

    #[test]
    fn read_variable_survives() {
        let result = run("$a='x'; echo $a");
        assert_eq!(result.rendered, "$a = 'x';\necho $a;\n");
    }

    #[test]
    fn statement_after_break_is_removed() {
        let result = run("foreach ($x in $l){break;$Smcjwv7=('E'+'d2'+('j6'+'od'))}");
        assert!(!result.rendered.contains("smcjwv7"));
        assert!(result.rendered.contains("break"));
    }

    #[test]
    fn binding_folded_through_later_constant_is_dead() {
        // $w is only read by an assignment that folds completely, so
        // the rendered output inlines it and $w's own line disappears
        let result = run("$w=('R'+'c');$p=$w+('.e'+'xe');echo $p");
        assert_eq!(result.rendered, "$p = 'Rc.exe';\necho $p;\n");
    }

    #[test]
    fn dead_code_pass_and_render_accessor() {
        let src = "$a='x';$b=('ht'+'tp');echo $b";
        let toks = tokenize(src).unwrap();
        let ast = parse_script(&toks, src);
        let residual = eliminate_dead_code(&ast);
        assert_eq!(residual.statements.len(), 2, "unread $a must be gone");
        let result = run_script(&ast);
        assert_eq!(render_deobfuscated(&result), result.rendered);
    }

    #[test]
    fn non_ascii_strings_render_and_reparse() {
        let result = run("$a=('λ'+'β');echo $a");
        assert_eq!(result.folded_env.get("a"), Some(&Value::Text("λβ".into())));
        assert!(result.rendered.contains("'λβ'"));
        let second = run_script(&result.residual);
        assert_eq!(result.rendered, second.rendered);
    }

    #[test]
    fn environment_is_case_insensitive() {
        let result = run("$AbC='x';echo $aBc");
        assert_eq!(result.folded_env.get("abc"), Some(&Value::Text("x".into())));
        assert!(result.rendered.contains("$abc = 'x';"));
    }
}
