//! Input decoding, comment stripping and tokenization for the supported
//! PowerShell subset.
//!
//! Dropper payloads arrive either as plain text or base64-encoded (the
//! `-EncodedCommand` convention mandates UTF-16LE). Tokenization removes
//! backtick mangling from identifiers and member names so every
//! downstream consumer sees canonical spellings.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexError {
    #[error("input is not decodable as base64/UTF-16LE, base64/UTF-8 or plain UTF-8")]
    UndecodableInput,
    #[error("unterminated string literal starting at offset {offset}")]
    UnterminatedString { offset: usize },
}

/// How the raw input bytes were interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    PlainUtf8,
    Base64Utf16Le,
    Base64Utf8,
}

/// Raw input together with its decoded text form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceText {
    pub raw: Vec<u8>,
    pub decoded: String,
    pub encoding: Encoding,
}

const BASE64_ALPHABET_MIN_RATIO: f64 = 0.95;
/// Decoded candidates must be mostly printable ASCII to be accepted;
/// scripts in this corpus are ASCII-heavy, so this rejects the garbage
/// produced by decoding text that merely happened to look like base64.
const PLAUSIBLE_ASCII_RATIO: f64 = 0.85;

fn looks_like_base64(text: &str) -> bool {
    let significant: Vec<char> = text.chars().filter(|c| !c.is_ascii_whitespace()).collect();
    if significant.is_empty() || !significant.len().is_multiple_of(4) {
        return false;
    }
    let in_alphabet = significant
        .iter()
        .filter(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '='))
        .count();
    in_alphabet as f64 >= significant.len() as f64 * BASE64_ALPHABET_MIN_RATIO
}

fn plausible_script(text: &str) -> bool {
    if text.is_empty() {
        return false;
    }
    let printable = text
        .chars()
        .filter(|c| c.is_ascii_graphic() || c.is_ascii_whitespace())
        .count();
    printable as f64 >= text.chars().count() as f64 * PLAUSIBLE_ASCII_RATIO
}

fn decode_utf16le(bytes: &[u8]) -> Option<String> {
    if !bytes.len().is_multiple_of(2) {
        return None;
    }
    let units: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|p| u16::from_le_bytes([p[0], p[1]]))
        .collect();
    let mut out = String::with_capacity(units.len());
    for unit in char::decode_utf16(units) {
        out.push(unit.ok()?);
    }
    Some(out.trim_start_matches('\u{feff}').to_string())
}

/// Decode raw script bytes, auto-detecting base64 wrapping.
///
/// Base64 is attempted when nearly every non-whitespace character is in
/// the base64 alphabet and the length is a multiple of four; raw
/// PowerShell contains `$`, quotes and braces, which fails that check
/// immediately. On successful base64 decode, UTF-16LE is tried before
/// UTF-8 because `-EncodedCommand` mandates UTF-16LE.
pub fn decode_input(raw: &[u8]) -> Result<SourceText, LexError> {
    if raw.is_empty() {
        return Err(LexError::UndecodableInput);
    }
    if let Ok(text) = std::str::from_utf8(raw) {
        if looks_like_base64(text) {
            let compact: String = text.chars().filter(|c| !c.is_ascii_whitespace()).collect();
            use base64::Engine as _;
            if let Ok(bytes) = base64::engine::general_purpose::STANDARD.decode(&compact) {
                if let Some(decoded) = decode_utf16le(&bytes) {
                    if plausible_script(&decoded) {
                        return Ok(SourceText {
                            raw: raw.to_vec(),
                            decoded,
                            encoding: Encoding::Base64Utf16Le,
                        });
                    }
                }
                if let Ok(decoded) = std::str::from_utf8(&bytes) {
                    if plausible_script(decoded) {
                        return Ok(SourceText {
                            raw: raw.to_vec(),
                            decoded: decoded.trim_start_matches('\u{feff}').to_string(),
                            encoding: Encoding::Base64Utf8,
                        });
                    }
                }
            }
        }
        let decoded = text.trim_start_matches('\u{feff}').to_string();
        if decoded.is_empty() {
            return Err(LexError::UndecodableInput);
        }
        return Ok(SourceText {
            raw: raw.to_vec(),
            decoded,
            encoding: Encoding::PlainUtf8,
        });
    }
    Err(LexError::UndecodableInput)
}

/// Remove `#`-to-end-of-line and `<# ... #>` comments outside string
/// literals. An unterminated block comment is stripped to end of input.
pub fn strip_comments(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\'' => {
                out.push(c);
                i += 1;
                while i < chars.len() {
                    out.push(chars[i]);
                    if chars[i] == '\'' {
                        // doubled quote stays inside the literal
                        if i + 1 < chars.len() && chars[i + 1] == '\'' {
                            out.push(chars[i + 1]);
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    i += 1;
                }
            }
            '"' => {
                out.push(c);
                i += 1;
                while i < chars.len() {
                    if chars[i] == '`' && i + 1 < chars.len() {
                        out.push(chars[i]);
                        out.push(chars[i + 1]);
                        i += 2;
                        continue;
                    }
                    out.push(chars[i]);
                    if chars[i] == '"' {
                        i += 1;
                        break;
                    }
                    i += 1;
                }
            }
            '<' if i + 1 < chars.len() && chars[i + 1] == '#' => {
                i += 2;
                while i < chars.len() {
                    if chars[i] == '#' && i + 1 < chars.len() && chars[i + 1] == '>' {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    StringLit,
    Variable,
    Number,
    Operator,
    MemberAccess,
    TypeLiteral,
    Paren,
    Brace,
    Semicolon,
    Keyword,
    CmdletName,
    FormatOperator,
    Comment,
    Newline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
}

const KEYWORDS: &[&str] = &[
    "foreach", "in", "if", "else", "try", "catch", "finally", "break", "continue", "while",
    "function", "return", "param", "do",
];

/// Word operators recognised after `-`. `-f` is surfaced as the format
/// operator; the comparison operators are parsed but never evaluated.
const WORD_OPERATORS: &[&str] = &[
    "ge", "le", "gt", "lt", "eq", "ne", "and", "or", "not", "replace", "match", "like", "join",
];

/// Lowercase `raw` and delete every backtick. Comparisons of identifiers,
/// member names and cmdlet names all go through this canonical form.
pub fn normalize_identifier(raw: &str) -> String {
    raw.chars()
        .filter(|&c| c != '`')
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_bareword_char(c: char) -> bool {
    is_ident_char(c) || c == '-' || c == '.' || c == '`'
}

struct Lexer {
    chars: Vec<(usize, char)>,
    src_len: usize,
    pos: usize,
    tokens: Vec<Token>,
}

impl Lexer {
    fn new(source: &str) -> Self {
        Lexer {
            chars: source.char_indices().collect(),
            src_len: source.len(),
            pos: 0,
            tokens: Vec::new(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn peek_at(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.src_len, |&(o, _)| o)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn push(&mut self, kind: TokenKind, text: String, start: usize) {
        let end = self.offset();
        self.tokens.push(Token {
            kind,
            text,
            span: Span { start, end },
        });
    }

    /// True when the previous significant token makes the next word a
    /// member name (after `.` or `::`).
    fn after_member_operator(&self) -> bool {
        self.tokens
            .last()
            .map(|t| t.kind == TokenKind::Operator && (t.text == "." || t.text == "::"))
            .unwrap_or(false)
    }

    fn lex_single_quoted(&mut self, start: usize) -> Result<(), LexError> {
        self.bump();
        let mut text = String::new();
        loop {
            match self.bump() {
                Some('\'') => {
                    if self.peek() == Some('\'') {
                        self.bump();
                        text.push('\'');
                        continue;
                    }
                    break;
                }
                Some(c) => text.push(c),
                None => return Err(LexError::UnterminatedString { offset: start }),
            }
        }
        self.finish_string(text, start);
        Ok(())
    }

    fn lex_double_quoted(&mut self, start: usize) -> Result<(), LexError> {
        self.bump();
        let mut text = String::new();
        loop {
            match self.bump() {
                Some('"') => break,
                Some('`') => match self.bump() {
                    // only the escapes seen in the corpus are honoured;
                    // any other pair passes through with the tick dropped
                    Some('n') => text.push('\n'),
                    Some('t') => text.push('\t'),
                    Some('0') => text.push('\0'),
                    Some(c) => text.push(c),
                    None => return Err(LexError::UnterminatedString { offset: start }),
                },
                Some(c) => text.push(c),
                None => return Err(LexError::UnterminatedString { offset: start }),
            }
        }
        self.finish_string(text, start);
        Ok(())
    }

    fn finish_string(&mut self, text: String, start: usize) {
        if self.after_member_operator() {
            let member: String = text.chars().filter(|&c| c != '`').collect();
            self.push(TokenKind::MemberAccess, member, start);
        } else {
            self.push(TokenKind::StringLit, text, start);
        }
    }

    fn lex_variable(&mut self, start: usize) {
        self.bump(); // $
        let mut name = String::new();
        while let Some(c) = self.peek() {
            if is_ident_char(c) {
                name.push(c);
                self.bump();
            } else if c == '`' {
                self.bump();
            } else {
                break;
            }
        }
        self.push(TokenKind::Variable, name, start);
    }

    fn lex_number(&mut self, start: usize) {
        let mut text = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        self.push(TokenKind::Number, text, start);
    }

    fn lex_type_literal(&mut self, start: usize) {
        let entry = self.pos;
        self.bump(); // [
        let mut name = String::new();
        while let Some(c) = self.peek() {
            if c == ']' {
                self.bump();
                self.push(TokenKind::TypeLiteral, name, start);
                return;
            }
            if is_ident_char(c) || c == '.' {
                name.push(c);
                self.bump();
            } else if c == '`' {
                self.bump();
            } else {
                break;
            }
        }
        // not a simple type name; emit `[` alone as an operator and let
        // statement containment deal with the rest
        self.pos = entry + 1;
        self.push(TokenKind::Operator, "[".to_string(), start);
    }

    fn lex_word(&mut self, start: usize) {
        let mut raw = String::new();
        while let Some(c) = self.peek() {
            if is_bareword_char(c) {
                raw.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let text: String = raw.chars().filter(|&c| c != '`').collect();
        if self.after_member_operator() {
            self.push(TokenKind::MemberAccess, text, start);
            return;
        }
        let lowered = text.to_lowercase();
        if KEYWORDS.contains(&lowered.as_str()) {
            self.push(TokenKind::Keyword, text, start);
        } else {
            self.push(TokenKind::CmdletName, text, start);
        }
    }

    fn lex_dash(&mut self, start: usize) {
        self.bump(); // -
        let mut word = String::new();
        let mut ahead = 0;
        while let Some(c) = self.peek_at(ahead) {
            if c.is_ascii_alphabetic() {
                word.push(c);
                ahead += 1;
            } else {
                break;
            }
        }
        let lowered = word.to_lowercase();
        if lowered == "f" {
            for _ in 0..ahead {
                self.bump();
            }
            self.push(TokenKind::FormatOperator, format!("-{word}"), start);
        } else if WORD_OPERATORS.contains(&lowered.as_str()) {
            for _ in 0..ahead {
                self.bump();
            }
            self.push(TokenKind::Operator, format!("-{}", lowered), start);
        } else {
            self.push(TokenKind::Operator, "-".to_string(), start);
        }
    }

    fn run(mut self) -> Result<Vec<Token>, LexError> {
        while let Some(c) = self.peek() {
            let start = self.offset();
            match c {
                ' ' | '\t' | '\r' => {
                    self.bump();
                }
                '\n' => {
                    self.bump();
                    self.push(TokenKind::Newline, "\n".to_string(), start);
                }
                '#' => {
                    // defensive: comments are normally stripped upstream
                    let mut text = String::new();
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        text.push(c);
                        self.bump();
                    }
                    self.push(TokenKind::Comment, text, start);
                }
                '\'' => self.lex_single_quoted(start)?,
                '"' => self.lex_double_quoted(start)?,
                '$' => self.lex_variable(start),
                '0'..='9' => self.lex_number(start),
                '[' => self.lex_type_literal(start),
                '(' | ')' => {
                    self.bump();
                    self.push(TokenKind::Paren, c.to_string(), start);
                }
                '{' | '}' => {
                    self.bump();
                    self.push(TokenKind::Brace, c.to_string(), start);
                }
                ';' => {
                    self.bump();
                    self.push(TokenKind::Semicolon, ";".to_string(), start);
                }
                '@' if self.peek_at(1) == Some('(') => {
                    self.bump();
                    self.bump();
                    self.push(TokenKind::Paren, "@(".to_string(), start);
                }
                ':' if self.peek_at(1) == Some(':') => {
                    self.bump();
                    self.bump();
                    self.push(TokenKind::Operator, "::".to_string(), start);
                }
                '+' | ',' | '=' | '&' | '.' | '*' | '/' | '%' | '|' | '>' | '<' | ']' | '@'
                | ':' | '!' => {
                    // `.` starting a bareword like `.exe` never occurs at
                    // expression position in this subset
                    self.bump();
                    self.push(TokenKind::Operator, c.to_string(), start);
                }
                '-' => self.lex_dash(start),
                '`' => {
                    // stray backtick between tokens: line continuation;
                    // ignore it
                    self.bump();
                }
                c if is_ident_start(c) => self.lex_word(start),
                _ => {
                    self.bump();
                    self.push(TokenKind::Operator, c.to_string(), start);
                }
            }
        }
        Ok(self.tokens)
    }
}

/// Tokenize comment-free script text.
pub fn tokenize(text: &str) -> Result<Vec<Token>, LexError> {
    Lexer::new(text).run()
}

/// Convenience: decode, strip comments and tokenize in one step.
pub fn lex_source(source: &SourceText) -> Result<Vec<Token>, LexError> {
    tokenize(&strip_comments(&source.decoded))
}
