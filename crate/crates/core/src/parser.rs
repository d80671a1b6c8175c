//! Recursive-descent parser for the obfuscation grammar used by the
//! dropper corpus.
//!
//! Parsing never aborts a whole script: a statement that does not fit
//! the subset degrades to [`Stmt::Unknown`] covering its source span,
//! and later passes re-emit that slice verbatim.

use crate::lexer::{normalize_identifier, Span, Token, TokenKind};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

/// How a command was invoked: plain bareword, `.` call operator or `&`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invoker {
    Bare,
    Dot,
    Amp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    StringLit(String),
    /// Unquoted word used as a command name or argument.
    Bareword(String),
    Number(i64),
    /// Variable reference; the name is canonical (lowercase, no ticks).
    VarRef(String),
    Concat(Box<Expr>, Box<Expr>),
    FormatOp {
        template: Box<Expr>,
        args: Vec<Expr>,
    },
    CharCast(Box<Expr>),
    /// `[name]` with an optional cast operand; `inner: None` is a bare
    /// type literal.
    TypeCast {
        type_name: String,
        inner: Option<Box<Expr>>,
    },
    /// `recv.member` (args `None`) or `recv.member(...)`; the member
    /// name is canonical.
    MethodCall {
        receiver: Box<Expr>,
        method: String,
        args: Option<Vec<Expr>>,
    },
    /// `recv::member` or `recv::member(...)`.
    StaticCall {
        receiver: Box<Expr>,
        member: String,
        args: Option<Vec<Expr>>,
    },
    CmdletCall {
        name: Box<Expr>,
        args: Vec<Expr>,
        invoker: Invoker,
    },
    Paren(Box<Expr>),
    ArrayLit(Vec<Expr>),
    Compare {
        op: String,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Unknown(Span),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Assign {
        name: String,
        rhs: Expr,
        span: Span,
    },
    ExprStmt {
        expr: Expr,
        span: Span,
    },
    ForEach {
        var: String,
        iterable: Expr,
        body: Vec<Stmt>,
        span: Span,
    },
    If {
        cond: Expr,
        body: Vec<Stmt>,
        span: Span,
    },
    TryCatch {
        body: Vec<Stmt>,
        handler: Vec<Stmt>,
        span: Span,
    },
    Break {
        span: Span,
    },
    /// `set-item <path> <value>` or `recv::member = value`; the runner
    /// decides whether the target is a variable path.
    SetItem {
        target: Expr,
        value: Expr,
        span: Span,
    },
    Unknown {
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Assign { span, .. }
            | Stmt::ExprStmt { span, .. }
            | Stmt::ForEach { span, .. }
            | Stmt::If { span, .. }
            | Stmt::TryCatch { span, .. }
            | Stmt::Break { span }
            | Stmt::SetItem { span, .. }
            | Stmt::Unknown { span } => *span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptAst {
    pub statements: Vec<Stmt>,
    pub source: String,
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn new(toks: &'a [Token]) -> Self {
        Parser { toks, pos: 0 }
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Token> {
        self.toks.get(self.pos + ahead)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn offset(&self) -> usize {
        self.peek().map_or_else(
            || self.toks.last().map_or(0, |t| t.span.end),
            |t| t.span.start,
        )
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(t) if t.kind == TokenKind::Newline) {
            self.pos += 1;
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Some(t) if t.kind == TokenKind::Newline || t.kind == TokenKind::Semicolon)
        {
            self.pos += 1;
        }
    }

    fn is_op(&self, text: &str) -> bool {
        matches!(self.peek(), Some(t) if t.kind == TokenKind::Operator && t.text == text)
    }

    fn eat_op(&mut self, text: &str) -> bool {
        if self.is_op(text) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn is_paren(&self, text: &str) -> bool {
        matches!(self.peek(), Some(t) if t.kind == TokenKind::Paren && t.text == text)
    }

    fn expect_paren(&mut self, text: &str) -> PResult<()> {
        if self.is_paren(text) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{text}`"))
        }
    }

    fn is_keyword(&self, word: &str) -> bool {
        matches!(self.peek(), Some(t) if t.kind == TokenKind::Keyword
            && normalize_identifier(&t.text) == word)
    }

    fn is_brace(&self, text: &str) -> bool {
        matches!(self.peek(), Some(t) if t.kind == TokenKind::Brace && t.text == text)
    }

    fn at_statement_end(&self) -> bool {
        match self.peek() {
            None => true,
            Some(t) => matches!(
                t.kind,
                TokenKind::Semicolon | TokenKind::Newline
            ) || (t.kind == TokenKind::Brace && t.text == "}"),
        }
    }

    // ── statements ─────────────────────────────────────────────────────

    fn parse_block(&mut self) -> PResult<Vec<Stmt>> {
        if !self.is_brace("{") {
            return self.err("expected `{`");
        }
        self.pos += 1;
        let mut stmts = Vec::new();
        loop {
            self.skip_separators();
            if self.is_brace("}") {
                self.pos += 1;
                return Ok(stmts);
            }
            if self.peek().is_none() {
                return self.err("unterminated block");
            }
            stmts.push(self.parse_statement_contained());
        }
    }

    /// Parse one statement, degrading to `Stmt::Unknown` on failure.
    fn parse_statement_contained(&mut self) -> Stmt {
        let start_pos = self.pos;
        match self.parse_statement() {
            Ok(stmt) => {
                // a well-formed simple statement must stop at a
                // separator; block statements self-terminate at `}`
                let is_block = matches!(
                    stmt,
                    Stmt::ForEach { .. } | Stmt::If { .. } | Stmt::TryCatch { .. }
                );
                if is_block || self.at_statement_end() {
                    stmt
                } else {
                    self.recover(start_pos)
                }
            }
            Err(_) => self.recover(start_pos),
        }
    }

    /// Skip to the next statement boundary at this nesting level and
    /// produce an Unknown statement covering the skipped tokens.
    fn recover(&mut self, start_pos: usize) -> Stmt {
        self.pos = start_pos;
        let mut paren_depth = 0i32;
        let mut brace_depth = 0i32;
        let span_start = self.toks[start_pos].span.start;
        let mut span_end = self.toks[start_pos].span.end;
        while let Some(t) = self.peek() {
            match t.kind {
                TokenKind::Paren => {
                    paren_depth += if t.text == ")" { -1 } else { 1 };
                }
                TokenKind::Brace => {
                    if t.text == "{" {
                        brace_depth += 1;
                    } else {
                        brace_depth -= 1;
                        if brace_depth < 0 {
                            // end of enclosing block
                            break;
                        }
                    }
                }
                TokenKind::Semicolon | TokenKind::Newline
                    if paren_depth <= 0 && brace_depth <= 0 =>
                {
                    break;
                }
                _ => {}
            }
            span_end = t.span.end;
            self.pos += 1;
        }
        Stmt::Unknown {
            span: Span {
                start: span_start,
                end: span_end,
            },
        }
    }

    fn parse_statement(&mut self) -> PResult<Stmt> {
        let start = self.offset();
        if self.is_keyword("foreach") {
            return self.parse_foreach(start);
        }
        if self.is_keyword("if") {
            return self.parse_if(start);
        }
        if self.is_keyword("try") {
            return self.parse_try(start);
        }
        if self.is_keyword("break") {
            self.pos += 1;
            return Ok(Stmt::Break {
                span: Span {
                    start,
                    end: self.prev_end(start),
                },
            });
        }
        let expr = self.parse_command_or_expr()?;
        if self.eat_op("=") {
            let value = self.parse_command_or_expr()?;
            let span = Span {
                start,
                end: self.prev_end(start),
            };
            return match expr {
                Expr::VarRef(name) => Ok(Stmt::Assign {
                    name,
                    rhs: value,
                    span,
                }),
                Expr::StaticCall { .. } | Expr::MethodCall { .. } => Ok(Stmt::SetItem {
                    target: expr,
                    value,
                    span,
                }),
                _ => self.err("left side of `=` is not assignable"),
            };
        }
        let span = Span {
            start,
            end: self.prev_end(start),
        };
        // set-item with a computed path is an assignment in disguise
        if let Expr::CmdletCall { name, args, .. } = &expr {
            if let Expr::Bareword(word) = name.as_ref() {
                if normalize_identifier(word) == "set-item" && args.len() == 2 {
                    return Ok(Stmt::SetItem {
                        target: args[0].clone(),
                        value: args[1].clone(),
                        span,
                    });
                }
            }
        }
        Ok(Stmt::ExprStmt { expr, span })
    }

    fn prev_end(&self, fallback: usize) -> usize {
        if self.pos == 0 {
            fallback
        } else {
            self.toks[self.pos - 1].span.end
        }
    }

    fn parse_foreach(&mut self, start: usize) -> PResult<Stmt> {
        self.pos += 1; // foreach
        self.expect_paren("(")?;
        self.skip_newlines();
        let var = match self.bump() {
            Some(t) if t.kind == TokenKind::Variable => normalize_identifier(&t.text),
            _ => return self.err("expected loop variable"),
        };
        if !self.is_keyword("in") {
            return self.err("expected `in`");
        }
        self.pos += 1;
        let iterable = self.parse_command_or_expr()?;
        self.expect_paren(")")?;
        self.skip_newlines();
        let body = self.parse_block()?;
        Ok(Stmt::ForEach {
            var,
            iterable,
            body,
            span: Span {
                start,
                end: self.prev_end(start),
            },
        })
    }

    fn parse_if(&mut self, start: usize) -> PResult<Stmt> {
        self.pos += 1; // if
        self.expect_paren("(")?;
        self.skip_newlines();
        let cond = self.parse_command_or_expr()?;
        self.skip_newlines();
        self.expect_paren(")")?;
        self.skip_newlines();
        let body = self.parse_block()?;
        Ok(Stmt::If {
            cond,
            body,
            span: Span {
                start,
                end: self.prev_end(start),
            },
        })
    }

    fn parse_try(&mut self, start: usize) -> PResult<Stmt> {
        self.pos += 1; // try
        self.skip_newlines();
        let body = self.parse_block()?;
        self.skip_newlines();
        if !self.is_keyword("catch") {
            return self.err("expected `catch`");
        }
        self.pos += 1;
        self.skip_newlines();
        let handler = self.parse_block()?;
        Ok(Stmt::TryCatch {
            body,
            handler,
            span: Span {
                start,
                end: self.prev_end(start),
            },
        })
    }

    // ── expressions ────────────────────────────────────────────────────

    /// An expression, or a command invocation where one is permitted
    /// (statement position, assignment right side, inside parentheses).
    fn parse_command_or_expr(&mut self) -> PResult<Expr> {
        self.skip_newlines();
        match self.peek() {
            Some(t) if t.kind == TokenKind::CmdletName => {
                let name = Expr::Bareword(t.text.clone());
                self.pos += 1;
                let args = self.parse_command_args()?;
                Ok(Expr::CmdletCall {
                    name: Box::new(name),
                    args,
                    invoker: Invoker::Bare,
                })
            }
            Some(t)
                if t.kind == TokenKind::Operator
                    && (t.text == "&" || t.text == ".")
                    && self.starts_command_name(1) =>
            {
                let invoker = if t.text == "&" {
                    Invoker::Amp
                } else {
                    Invoker::Dot
                };
                self.pos += 1;
                let name = self.parse_command_name()?;
                let args = self.parse_command_args()?;
                Ok(Expr::CmdletCall {
                    name: Box::new(name),
                    args,
                    invoker,
                })
            }
            _ => self.parse_expr(),
        }
    }

    fn starts_command_name(&self, ahead: usize) -> bool {
        matches!(
            self.peek_at(ahead),
            Some(t) if (t.kind == TokenKind::Paren && t.text == "(")
                || t.kind == TokenKind::StringLit
                || t.kind == TokenKind::CmdletName
                || t.kind == TokenKind::MemberAccess
                || t.kind == TokenKind::Variable
        )
    }

    fn parse_command_name(&mut self) -> PResult<Expr> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Paren && t.text == "(" => self.parse_paren_group(),
            Some(t) if t.kind == TokenKind::StringLit => {
                let e = Expr::StringLit(t.text.clone());
                self.pos += 1;
                Ok(e)
            }
            // after `.` the lexer tags a word as a member access
            Some(t) if t.kind == TokenKind::CmdletName || t.kind == TokenKind::MemberAccess => {
                let e = Expr::Bareword(t.text.clone());
                self.pos += 1;
                Ok(e)
            }
            Some(t) if t.kind == TokenKind::Variable => {
                let e = Expr::VarRef(normalize_identifier(&t.text));
                self.pos += 1;
                Ok(e)
            }
            _ => self.err("expected command name"),
        }
    }

    fn parse_command_args(&mut self) -> PResult<Vec<Expr>> {
        let mut args = Vec::new();
        loop {
            match self.peek() {
                None => break,
                Some(t) => match t.kind {
                    TokenKind::Semicolon | TokenKind::Newline => break,
                    TokenKind::Brace => break,
                    TokenKind::Paren if t.text == ")" => break,
                    TokenKind::Operator if t.text == "|" || t.text == "=" => break,
                    TokenKind::Operator
                        if t.text.starts_with('-') && t.text.len() > 1 =>
                    {
                        break
                    }
                    TokenKind::FormatOperator => break,
                    _ => args.push(self.parse_postfix()?),
                },
            }
        }
        Ok(args)
    }

    fn parse_expr(&mut self) -> PResult<Expr> {
        self.parse_compare()
    }

    fn parse_compare(&mut self) -> PResult<Expr> {
        let mut lhs = self.parse_format()?;
        loop {
            let op = match self.peek() {
                Some(t)
                    if t.kind == TokenKind::Operator
                        && matches!(t.text.as_str(), "-ge" | "-le" | "-gt" | "-lt" | "-eq" | "-ne") =>
                {
                    t.text.clone()
                }
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_format()?;
            lhs = Expr::Compare {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_format(&mut self) -> PResult<Expr> {
        let template = self.parse_add()?;
        if matches!(self.peek(), Some(t) if t.kind == TokenKind::FormatOperator) {
            self.pos += 1;
            let mut args = vec![self.parse_add()?];
            while self.eat_op(",") {
                args.push(self.parse_add()?);
            }
            return Ok(Expr::FormatOp {
                template: Box::new(template),
                args,
            });
        }
        Ok(template)
    }

    fn parse_add(&mut self) -> PResult<Expr> {
        let mut lhs = self.parse_postfix()?;
        while self.eat_op("+") {
            self.skip_newlines();
            let rhs = self.parse_postfix()?;
            lhs = Expr::Concat(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_postfix(&mut self) -> PResult<Expr> {
        let mut expr = self.parse_primary()?;
        loop {
            if self.is_op(".") || self.is_op("::") {
                let is_static = self.peek().map(|t| t.text == "::").unwrap_or(false);
                self.pos += 1;
                let member = match self.bump() {
                    Some(t) if t.kind == TokenKind::MemberAccess => normalize_identifier(&t.text),
                    _ => return self.err("expected member name"),
                };
                let args = if self.is_paren("(") {
                    Some(self.parse_method_args()?)
                } else {
                    None
                };
                expr = if is_static {
                    Expr::StaticCall {
                        receiver: Box::new(expr),
                        member,
                        args,
                    }
                } else {
                    Expr::MethodCall {
                        receiver: Box::new(expr),
                        method: member,
                        args,
                    }
                };
            } else {
                return Ok(expr);
            }
        }
    }

    fn parse_method_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_paren("(")?;
        self.skip_newlines();
        if self.is_paren(")") {
            self.pos += 1;
            return Ok(Vec::new());
        }
        let mut args = vec![self.parse_expr()?];
        while self.eat_op(",") {
            self.skip_newlines();
            args.push(self.parse_expr()?);
        }
        self.skip_newlines();
        self.expect_paren(")")?;
        Ok(args)
    }

    fn parse_paren_group(&mut self) -> PResult<Expr> {
        self.expect_paren("(")?;
        self.skip_newlines();
        let inner = self.parse_command_or_expr()?;
        self.skip_newlines();
        self.expect_paren(")")?;
        Ok(Expr::Paren(Box::new(inner)))
    }

    /// Operand of a `[type]` cast: tight-binding primaries only, so
    /// `[string][char]92 + $x` casts 92, not the whole sum.
    fn parse_cast_operand(&mut self) -> PResult<Expr> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Paren && t.text == "(" => self.parse_paren_group(),
            Some(t) if t.kind == TokenKind::TypeLiteral => self.parse_type_expr(),
            Some(t) if t.kind == TokenKind::Number => self.parse_primary(),
            Some(t) if t.kind == TokenKind::StringLit => self.parse_primary(),
            Some(t) if t.kind == TokenKind::Variable => self.parse_primary(),
            _ => self.err("expected cast operand"),
        }
    }

    fn starts_cast_operand(&self) -> bool {
        matches!(
            self.peek(),
            Some(t) if (t.kind == TokenKind::Paren && t.text == "(")
                || t.kind == TokenKind::TypeLiteral
                || t.kind == TokenKind::Number
                || t.kind == TokenKind::StringLit
                || t.kind == TokenKind::Variable
        )
    }

    fn parse_type_expr(&mut self) -> PResult<Expr> {
        let name = match self.bump() {
            Some(t) if t.kind == TokenKind::TypeLiteral => normalize_identifier(&t.text),
            _ => return self.err("expected type literal"),
        };
        if self.starts_cast_operand() {
            let operand = self.parse_cast_operand()?;
            if name == "char" {
                return Ok(Expr::CharCast(Box::new(operand)));
            }
            return Ok(Expr::TypeCast {
                type_name: name,
                inner: Some(Box::new(operand)),
            });
        }
        Ok(Expr::TypeCast {
            type_name: name,
            inner: None,
        })
    }

    fn parse_primary(&mut self) -> PResult<Expr> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(t) => match t.kind {
                TokenKind::StringLit => {
                    let e = Expr::StringLit(t.text.clone());
                    self.pos += 1;
                    Ok(e)
                }
                TokenKind::Number => {
                    let parsed = t.text.parse::<i64>().map_err(|_| ParseError {
                        offset: t.span.start,
                        message: "integer literal out of range".into(),
                    })?;
                    self.pos += 1;
                    Ok(Expr::Number(parsed))
                }
                TokenKind::Variable => {
                    let e = Expr::VarRef(normalize_identifier(&t.text));
                    self.pos += 1;
                    Ok(e)
                }
                TokenKind::TypeLiteral => self.parse_type_expr(),
                TokenKind::Paren if t.text == "(" => self.parse_paren_group(),
                TokenKind::Paren if t.text == "@(" => {
                    self.pos += 1;
                    self.skip_newlines();
                    let mut items = Vec::new();
                    if !self.is_paren(")") {
                        items.push(self.parse_expr()?);
                        while self.eat_op(",") {
                            self.skip_newlines();
                            items.push(self.parse_expr()?);
                        }
                        self.skip_newlines();
                    }
                    self.expect_paren(")")?;
                    Ok(Expr::ArrayLit(items))
                }
                TokenKind::CmdletName => {
                    let e = Expr::Bareword(t.text.clone());
                    self.pos += 1;
                    Ok(e)
                }
                TokenKind::Operator if t.text == "&" || t.text == "." => {
                    if self.starts_command_name(1) {
                        let invoker = if t.text == "&" {
                            Invoker::Amp
                        } else {
                            Invoker::Dot
                        };
                        self.pos += 1;
                        let name = self.parse_command_name()?;
                        let args = self.parse_command_args()?;
                        Ok(Expr::CmdletCall {
                            name: Box::new(name),
                            args,
                            invoker,
                        })
                    } else {
                        self.err("unexpected operator")
                    }
                }
                _ => self.err(format!("unexpected token `{}`", t.text)),
            },
        }
    }
}

/// Parse a token stream into statements. Individual statements that do
/// not fit the grammar degrade to `Stmt::Unknown`; the script as a whole
/// always parses.
pub fn parse_script(tokens: &[Token], source: &str) -> ScriptAst {
    let mut parser = Parser::new(tokens);
    let mut statements = Vec::new();
    loop {
        parser.skip_separators();
        if parser.peek().is_none() {
            break;
        }
        if parser.is_brace("}") {
            // stray closing brace: cover it as unknown and continue
            let span = parser.peek().unwrap().span;
            parser.pos += 1;
            statements.push(Stmt::Unknown { span });
            continue;
        }
        statements.push(parser.parse_statement_contained());
    }
    ScriptAst {
        statements,
        source: source.to_string(),
    }
}

/// Parse a token stream that must form exactly one expression.
pub fn parse_expression(tokens: &[Token]) -> Result<Expr, ParseError> {
    let mut parser = Parser::new(tokens);
    parser.skip_newlines();
    let expr = parser.parse_command_or_expr()?;
    parser.skip_newlines();
    if parser.peek().is_some() {
        return parser.err("trailing tokens after expression");
    }
    Ok(expr)
}
